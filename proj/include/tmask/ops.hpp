#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "tmask/tensor.hpp"

namespace tmask {

/// Per-key keep flags (1 = attend, 0 = padded). An empty mask keeps every key.
using KeyMask = std::vector<std::uint8_t>;

namespace kernel {

// C[m×n] (+)= A[m×k] · B[k×n]
template <class Real>
void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const Real* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const Real* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    Real* crow = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      crow[j] = accumulate ? static_cast<Real>(crow[j] + acc[j]) : static_cast<Real>(acc[j]);
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
template <class Real>
void gemm_nt_acc(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
                 std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<double>(arow[p]) * brow[p];
      c[i * n + j] += static_cast<Real>(s);
    }
  }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
template <class Real>
void gemm_tn_acc(std::span<const Real> a, std::span<const Real> b, std::span<Real> c,
                 std::size_t k, std::size_t m, std::size_t n) {
  std::vector<double> acc(m * n, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    const Real* arow = a.data() + r * m;
    const Real* brow = b.data() + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* out = acc.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += av * static_cast<double>(brow[j]);
    }
  }
  for (std::size_t i = 0; i < m * n; ++i) c[i] += static_cast<Real>(acc[i]);
}

/// Row-wise softmax restricted to kept columns. Masked entries are pushed to
/// a large negative surrogate before exponentiation and then set to exactly 0.
template <class Real>
void masked_softmax_rows(std::span<const Real> scores, std::span<Real> out, std::size_t rows,
                         std::size_t cols, std::span<const std::uint8_t> keep) {
  constexpr double kMaskedScore = -1e30;
  std::vector<double> e(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* s = scores.data() + r * cols;
    double mx = kMaskedScore;
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = keep.empty() || keep[j] ? static_cast<double>(s[j]) : kMaskedScore;
      e[j] = v;
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      e[j] = (keep.empty() || keep[j]) ? std::exp(e[j] - mx) : 0.0;
      sum += e[j];
    }
    Real* o = out.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) o[j] = static_cast<Real>(e[j] / sum);
  }
}

// dX = Y ⊙ (dY − rowsum(Y ⊙ dY)), accumulated.
template <class Real>
void softmax_backward_rows(std::span<const Real> y, std::span<const Real> dy, std::span<Real> dx,
                           std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* yr = y.data() + r * cols;
    const Real* gr = dy.data() + r * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += static_cast<double>(yr[j]) * gr[j];
    Real* xr = dx.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      xr[j] += static_cast<Real>(yr[j] * (gr[j] - dot));
    }
  }
}

inline void check_keep(std::span<const std::uint8_t> keep, std::size_t keys) {
  if (keep.empty()) {
    require(keys > 0, ErrorCode::kDegenerateRow, "softmax over zero keys");
    return;
  }
  require(keep.size() == keys, ErrorCode::kDimension,
          "key mask length " + std::to_string(keep.size()) + " != key count " +
              std::to_string(keys));
  require(std::any_of(keep.begin(), keep.end(), [](std::uint8_t k) { return k != 0; }),
          ErrorCode::kDegenerateRow, "every key of the row is masked");
}

}  // namespace kernel

namespace detail {

template <class Real>
void add_into(std::span<Real> dst, std::span<const Real> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class Real>
void require_matrix(const BasicTensor<Real>& t, const char* what) {
  require(t.rank() == 2, ErrorCode::kDimension,
          std::string(what) + " expects a matrix, got " + shape_string(t.shape()));
}

}  // namespace detail

template <class Real>
Var matmul(ComputeTape<Real>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  detail::require_matrix(av, "matmul");
  detail::require_matrix(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  require(bv.dim(0) == k, ErrorCode::kDimension,
          "matmul inner dimensions differ: " + shape_string(av.shape()) + " · " +
              shape_string(bv.shape()));
  BasicTensor<Real> out({m, n});
  kernel::gemm_nn<Real>(av.data(), bv.data(), out.data(), m, k, n, false);
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [a, b, m, k, n](ComputeTape<Real>& t, Var self) {
    const auto dc = t.grad(self);
    if (t.requires_grad(a)) {
      kernel::gemm_nt_acc<Real>(dc, t.value(b).data(), t.grad(a), m, n, k);
    }
    if (t.requires_grad(b)) {
      kernel::gemm_tn_acc<Real>(t.value(a).data(), dc, t.grad(b), m, k, n);
    }
  });
}

template <class Real>
Var add(ComputeTape<Real>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(), ErrorCode::kDimension,
          "add shape mismatch " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
  BasicTensor<Real> out = av;
  detail::add_into<Real>(out.data(), bv.data());
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [a, b](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    if (t.requires_grad(a)) detail::add_into<Real>(t.grad(a), g);
    if (t.requires_grad(b)) detail::add_into<Real>(t.grad(b), g);
  });
}

/// x[m×n] + bias[n] broadcast over rows (the only broadcast supported).
template <class Real>
Var add_row(ComputeTape<Real>& tape, Var x, Var bias) {
  const auto& xv = tape.value(x);
  const auto& bv = tape.value(bias);
  const std::size_t n = xv.cols(), m = xv.rows();
  require(bv.size() == n, ErrorCode::kDimension,
          "row bias length " + std::to_string(bv.size()) + " != " + std::to_string(n));
  BasicTensor<Real> out = xv;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  const bool rg = tape.requires_grad(x) || tape.requires_grad(bias);
  return tape.record(std::move(out), rg, [x, bias, m, n](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    if (t.requires_grad(x)) detail::add_into<Real>(t.grad(x), g);
    if (t.requires_grad(bias)) {
      auto gb = t.grad(bias);
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t r = 0; r < m; ++r) s += g[r * n + j];
        gb[j] += static_cast<Real>(s);
      }
    }
  });
}

template <class Real>
Var scale(ComputeTape<Real>& tape, Var x, Real factor) {
  BasicTensor<Real> out = tape.value(x);
  for (auto& v : out.data()) v *= factor;
  return tape.record(std::move(out), tape.requires_grad(x), [x, factor](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

/// Elementwise product of equal-shape tensors.
template <class Real>
Var mul(ComputeTape<Real>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require(av.shape() == bv.shape(), ErrorCode::kDimension, "mul shape mismatch");
  BasicTensor<Real> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [a, b](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      const auto bd = t.value(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      const auto ad = t.value(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
    }
  });
}

template <class Real>
Var sum(ComputeTape<Real>& tape, Var x) {
  const auto& xv = tape.value(x);
  double s = 0.0;
  for (Real v : xv.data()) s += v;
  BasicTensor<Real> out({1}, {static_cast<Real>(s)});
  return tape.record(std::move(out), tape.requires_grad(x), [x](ComputeTape<Real>& t, Var self) {
    const Real g = t.grad(self)[0];
    for (auto& v : t.grad(x)) v += g;
  });
}

/// Mean over rows: [m×n] -> [1×n].
template <class Real>
Var mean_rows(ComputeTape<Real>& tape, Var x) {
  const auto& xv = tape.value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  require(m > 0, ErrorCode::kDimension, "mean over zero rows");
  BasicTensor<Real> out({1, n});
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < m; ++r) s += xv[r * n + j];
    out[j] = static_cast<Real>(s / static_cast<double>(m));
  }
  return tape.record(std::move(out), tape.requires_grad(x), [x, m, n](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    auto gx = t.grad(x);
    const Real inv = Real(1) / static_cast<Real>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += g[j] * inv;
  });
}

template <class Real>
Var reshape(ComputeTape<Real>& tape, Var x, Shape shape) {
  BasicTensor<Real> out = tape.value(x);
  out.reshape(std::move(shape));
  return tape.record(std::move(out), tape.requires_grad(x), [x](ComputeTape<Real>& t, Var self) {
    detail::add_into<Real>(t.grad(x), t.grad(self));
  });
}

/// Stacks a[m×n] above b[p×n].
template <class Real>
Var concat_rows(ComputeTape<Real>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  const std::size_t n = av.cols();
  require(bv.cols() == n, ErrorCode::kDimension, "concat_rows column mismatch");
  const std::size_t ma = av.rows(), mb = bv.rows();
  std::vector<Real> data(av.data().begin(), av.data().end());
  data.insert(data.end(), bv.data().begin(), bv.data().end());
  BasicTensor<Real> out({ma + mb, n}, std::move(data));
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [a, b, ma, n](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    if (t.requires_grad(a)) detail::add_into<Real>(t.grad(a), g.subspan(0, ma * n));
    if (t.requires_grad(b)) detail::add_into<Real>(t.grad(b), g.subspan(ma * n));
  });
}

template <class Real>
Var slice_rows(ComputeTape<Real>& tape, Var x, std::size_t begin, std::size_t count) {
  const auto& xv = tape.value(x);
  const std::size_t n = xv.cols();
  require(begin + count <= xv.rows() && count > 0, ErrorCode::kDimension, "slice_rows out of range");
  const auto src = xv.data().subspan(begin * n, count * n);
  BasicTensor<Real> out({count, n}, std::vector<Real>(src.begin(), src.end()));
  return tape.record(std::move(out), tape.requires_grad(x), [x, begin, n](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    detail::add_into<Real>(t.grad(x).subspan(begin * n, g.size()), g);
  });
}

template <class Real>
Var slice_cols(ComputeTape<Real>& tape, Var x, std::size_t begin, std::size_t count) {
  const auto& xv = tape.value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  require(begin + count <= n && count > 0, ErrorCode::kDimension, "slice_cols out of range");
  BasicTensor<Real> out({m, count});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = xv[r * n + begin + j];
  return tape.record(std::move(out), tape.requires_grad(x),
                     [x, begin, count, m, n](ComputeTape<Real>& t, Var self) {
                       const auto g = t.grad(self);
                       auto gx = t.grad(x);
                       for (std::size_t r = 0; r < m; ++r)
                         for (std::size_t j = 0; j < count; ++j)
                           gx[r * n + begin + j] += g[r * count + j];
                     });
}

/// Side-by-side concatenation of equal-row blocks.
template <class Real>
Var concat_cols(ComputeTape<Real>& tape, std::span<const Var> parts) {
  require(!parts.empty(), ErrorCode::kDimension, "concat_cols of nothing");
  const std::size_t m = tape.value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool rg = false;
  for (Var p : parts) {
    require(tape.value(p).rows() == m, ErrorCode::kDimension, "concat_cols row mismatch");
    widths.push_back(tape.value(p).cols());
    total += widths.back();
    rg = rg || tape.requires_grad(p);
  }
  BasicTensor<Real> out({m, total});
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = tape.value(parts[k]);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + offset + j] = pv[r * widths[k] + j];
    offset += widths[k];
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return tape.record(std::move(out), rg,
                     [ids = std::move(ids), widths, m, total](ComputeTape<Real>& t, Var self) {
                       const auto g = t.grad(self);
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (t.requires_grad(ids[k])) {
                           auto gp = t.grad(ids[k]);
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               gp[r * widths[k] + j] += g[r * total + off + j];
                         }
                         off += widths[k];
                       }
                     });
}

/// out[r] = table[index[r]]; gradients scatter-add back into the table.
template <class Real>
Var gather_rows(ComputeTape<Real>& tape, Var table, std::vector<std::size_t> index) {
  const auto& tv = tape.value(table);
  const std::size_t n = tv.cols(), rows = tv.rows();
  BasicTensor<Real> out({index.size(), n});
  for (std::size_t r = 0; r < index.size(); ++r) {
    require(index[r] < rows, ErrorCode::kDimension, "gather_rows index out of range");
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(index[r] * n), n,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * n));
  }
  return tape.record(std::move(out), tape.requires_grad(table),
                     [table, index = std::move(index), n](ComputeTape<Real>& t, Var self) {
                       const auto g = t.grad(self);
                       auto gt = t.grad(table);
                       for (std::size_t r = 0; r < index.size(); ++r)
                         for (std::size_t j = 0; j < n; ++j) gt[index[r] * n + j] += g[r * n + j];
                     });
}

/// Row-wise layer normalization with per-column gain and bias.
template <class Real>
Var layer_norm(ComputeTape<Real>& tape, Var x, Var gain, Var bias, double eps = 1e-5) {
  const auto& xv = tape.value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  require(tape.value(gain).size() == n && tape.value(bias).size() == n, ErrorCode::kDimension,
          "layer_norm affine parameters must match the row width");
  const auto& gv = tape.value(gain);
  const auto& bv = tape.value(bias);
  BasicTensor<Real> out({m, n});
  std::vector<double> xhat(m * n), inv_std(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xv[r * n + j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xv[r * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xv[r * n + j] - mean) * inv_std[r];
      out[r * n + j] = static_cast<Real>(xhat[r * n + j] * gv[j] + bv[j]);
    }
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(gain) || tape.requires_grad(bias);
  return tape.record(
      std::move(out), rg,
      [x, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](ComputeTape<Real>& t,
                                                                                 Var self) {
        const auto g = t.grad(self);
        const auto gv = t.value(gain).data();
        if (t.requires_grad(gain) || t.requires_grad(bias)) {
          std::vector<double> dg(n, 0.0), db(n, 0.0);
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t j = 0; j < n; ++j) {
              dg[j] += g[r * n + j] * xhat[r * n + j];
              db[j] += g[r * n + j];
            }
          if (t.requires_grad(gain)) {
            auto gg = t.grad(gain);
            for (std::size_t j = 0; j < n; ++j) gg[j] += static_cast<Real>(dg[j]);
          }
          if (t.requires_grad(bias)) {
            auto gb = t.grad(bias);
            for (std::size_t j = 0; j < n; ++j) gb[j] += static_cast<Real>(db[j]);
          }
        }
        if (t.requires_grad(x)) {
          auto gx = t.grad(x);
          std::vector<double> dxhat(n);
          for (std::size_t r = 0; r < m; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g[r * n + j] * static_cast<double>(gv[j]);
              s1 += dxhat[j];
              s2 += dxhat[j] * xhat[r * n + j];
            }
            const double invn = 1.0 / static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              gx[r * n + j] += static_cast<Real>(
                  inv_std[r] * (dxhat[j] - invn * s1 - xhat[r * n + j] * invn * s2));
            }
          }
        }
      });
}

/// tanh-approximated GELU.
template <class Real>
Var gelu(ComputeTape<Real>& tape, Var x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const auto& xv = tape.value(x);
  BasicTensor<Real> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<Real>(0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v))));
  }
  return tape.record(std::move(out), tape.requires_grad(x), [x](ComputeTape<Real>& t, Var self) {
    const auto g = t.grad(self);
    const auto xd = t.value(x).data();
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xd[i];
      const double u = c * (v + 0.044715 * v * v * v);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * v * v);
      const double d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
      gx[i] += static_cast<Real>(g[i] * d);
    }
  });
}

/// Softmax over the last axis where `keep` (shared by every row) excludes
/// keys. Masked outputs are exactly 0.
template <class Real>
Var masked_softmax(ComputeTape<Real>& tape, Var scores, const KeyMask& keep = {}) {
  const auto& sv = tape.value(scores);
  const std::size_t m = sv.rows(), k = sv.cols();
  kernel::check_keep(keep, k);
  BasicTensor<Real> out(sv.shape());
  kernel::masked_softmax_rows<Real>(sv.data(), out.data(), m, k, keep);
  return tape.record(std::move(out), tape.requires_grad(scores), [scores, m, k](ComputeTape<Real>& t, Var self) {
    kernel::softmax_backward_rows<Real>(t.value(self).data(), t.grad(self), t.grad(scores), m, k);
  });
}

/// Scaled dot-product attention: masked_softmax(q·kᵀ/√d)·v.
template <class Real>
Var attention(ComputeTape<Real>& tape, Var q, Var k, Var v, const KeyMask& keep = {}) {
  const auto& qv = tape.value(q);
  const auto& kv = tape.value(k);
  const auto& vv = tape.value(v);
  const std::size_t m = qv.rows(), d = qv.cols(), keys = kv.rows(), dv = vv.cols();
  require(kv.cols() == d, ErrorCode::kDimension, "attention: query and key head dims differ");
  require(vv.rows() == keys, ErrorCode::kDimension, "attention: key and value counts differ");
  kernel::check_keep(keep, keys);
  const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));

  std::vector<Real> scores(m * keys, Real(0));
  kernel::gemm_nt_acc<Real>(qv.data(), kv.data(), scores, m, d, keys);
  for (auto& s : scores) s *= inv_sqrt;
  std::vector<Real> probs(m * keys);
  kernel::masked_softmax_rows<Real>(scores, probs, m, keys, keep);

  BasicTensor<Real> out({m, dv});
  kernel::gemm_nn<Real>(probs, vv.data(), out.data(), m, keys, dv, false);

  const bool rg = tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v);
  return tape.record(
      std::move(out), rg,
      [q, k, v, m, d, keys, dv, inv_sqrt, probs = std::move(probs)](ComputeTape<Real>& t, Var self) {
        const auto dout = t.grad(self);
        if (t.requires_grad(v)) kernel::gemm_tn_acc<Real>(probs, dout, t.grad(v), m, keys, dv);
        if (!t.requires_grad(q) && !t.requires_grad(k)) return;
        std::vector<Real> dprobs(m * keys, Real(0));
        kernel::gemm_nt_acc<Real>(dout, t.value(v).data(), dprobs, m, dv, keys);
        std::vector<Real> dscores(m * keys, Real(0));
        kernel::softmax_backward_rows<Real>(probs, dprobs, dscores, m, keys);
        for (auto& s : dscores) s *= inv_sqrt;
        if (t.requires_grad(q)) kernel::gemm_nn<Real>(dscores, t.value(k).data(), t.grad(q), m, keys, d, true);
        if (t.requires_grad(k)) kernel::gemm_tn_acc<Real>(dscores, t.value(q).data(), t.grad(k), m, keys, d);
      });
}

/// Mean negative log-likelihood of `labels` under row-wise softmax.
template <class Real>
Var cross_entropy(ComputeTape<Real>& tape, Var logits, std::span<const std::size_t> labels) {
  const auto& lv = tape.value(logits);
  const std::size_t b = lv.rows(), c = lv.cols();
  require(labels.size() == b, ErrorCode::kInput, "cross_entropy: one label per row required");
  std::vector<Real> probs(b * c);
  kernel::masked_softmax_rows<Real>(lv.data(), probs, b, c, {});
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    require(labels[r] < c, ErrorCode::kInput,
            "label " + std::to_string(labels[r]) + " outside [0, " + std::to_string(c) + ")");
    const Real* row = lv.data().data() + r * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    loss += (mx + std::log(s)) - row[labels[r]];
  }
  loss /= static_cast<double>(b);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  BasicTensor<Real> out({1}, {static_cast<Real>(loss)});
  return tape.record(std::move(out), tape.requires_grad(logits),
                     [logits, b, c, probs = std::move(probs), lab = std::move(lab)](ComputeTape<Real>& t, Var self) {
                       const double g = t.grad(self)[0] / static_cast<double>(b);
                       auto gl = t.grad(logits);
                       for (std::size_t r = 0; r < b; ++r)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double target = j == lab[r] ? 1.0 : 0.0;
                           gl[r * c + j] += static_cast<Real>(g * (probs[r * c + j] - target));
                         }
                     });
}

}  // namespace tmask
