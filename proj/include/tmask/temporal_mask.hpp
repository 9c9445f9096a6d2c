#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tmask/error.hpp"
#include "tmask/rng.hpp"
#include "tmask/token_io.hpp"

namespace tmask {

/// How the per-token L1 distance between consecutive frames is scaled.
enum class DiffNorm {
  kSum,      ///< raw L1 sum over embedding dims
  kMeanDim,  ///< L1 sum divided by the embedding dim
};

inline std::string to_string(DiffNorm n) { return n == DiffNorm::kSum ? "sum" : "mean"; }

inline DiffNorm diff_norm_from_string(const std::string& s) {
  if (s == "sum") return DiffNorm::kSum;
  if (s == "mean") return DiffNorm::kMeanDim;
  fail(ErrorCode::kConfig, "unknown difference normalization '" + s + "' (expected sum|mean)");
}

/// d[t][i] = |z_t^(i) - z_{t+1}^(i)|_1 for t in [0, T-1), row-major (T-1)×N.
struct DiffStats {
  std::size_t transitions = 0;
  std::size_t tokens = 0;
  DiffNorm norm = DiffNorm::kMeanDim;
  std::vector<double> values;

  double at(std::size_t t, std::size_t i) const { return values[t * tokens + i]; }
};

inline DiffStats token_differences(const TokenSequence& clip, DiffNorm norm = DiffNorm::kMeanDim) {
  clip.validate();
  require(clip.frames >= 2, ErrorCode::kDimension, "token differences need at least two frames");
  DiffStats out{clip.frames - 1, clip.tokens, norm, {}};
  out.values.resize(out.transitions * out.tokens);
  const double scale = norm == DiffNorm::kMeanDim ? 1.0 / static_cast<double>(clip.dim) : 1.0;
  for (std::size_t t = 0; t + 1 < clip.frames; ++t) {
    for (std::size_t i = 0; i < clip.tokens; ++i) {
      const auto a = clip.token(t, i);
      const auto b = clip.token(t + 1, i);
      double s = 0.0;
      for (std::size_t j = 0; j < clip.dim; ++j)
        s += std::abs(static_cast<double>(a[j]) - static_cast<double>(b[j]));
      out.values[t * clip.tokens + i] = s * scale;
    }
  }
  return out;
}

/// Uniform-bin empirical distribution of difference values over [0, upper].
struct DiffHistogram {
  double upper = 1.0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  std::size_t bin_count() const noexcept { return counts.size(); }
  double bin_width() const { return upper / static_cast<double>(counts.size()); }
  double bin_center(std::size_t b) const { return (static_cast<double>(b) + 0.5) * bin_width(); }
  double bin_lower(std::size_t b) const { return static_cast<double>(b) * bin_width(); }

  std::vector<double> bin_edges() const {
    std::vector<double> edges(counts.size() + 1);
    for (std::size_t b = 0; b <= counts.size(); ++b) edges[b] = static_cast<double>(b) * bin_width();
    return edges;
  }

  std::vector<double> density() const {
    std::vector<double> d(counts.size());
    for (std::size_t b = 0; b < counts.size(); ++b)
      d[b] = static_cast<double>(counts[b]) / static_cast<double>(total);
    return d;
  }

  /// Most populated bin; ties go to the smaller bin.
  std::size_t mode_bin() const {
    return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  double mode() const { return bin_center(mode_bin()); }

  std::size_t bin_of(double v) const {
    if (v <= 0.0) return 0;
    const auto b = static_cast<std::size_t>(v / bin_width());
    return std::min(b, counts.size() - 1);
  }

  void add(double v) {
    ++counts[bin_of(v)];
    ++total;
  }
};

/// Histogram over [0, upper]; values above `upper` land in the last bin.
inline DiffHistogram build_histogram(std::span<const double> values, std::size_t bin_count, double upper) {
  require(!values.empty(), ErrorCode::kInput, "cannot build a histogram from no values");
  require(bin_count >= 1, ErrorCode::kConfig, "histogram needs at least one bin");
  DiffHistogram h;
  h.upper = upper > 0.0 ? upper : 1.0;
  h.counts.assign(bin_count, 0);
  for (double v : values) {
    require(v >= 0.0 && std::isfinite(v), ErrorCode::kInput, "difference values must be finite and >= 0");
    h.add(v);
  }
  return h;
}

/// Histogram over [0, max(values)].
inline DiffHistogram build_histogram(std::span<const double> values, std::size_t bin_count = 200) {
  require(!values.empty(), ErrorCode::kInput, "cannot build a histogram from no values");
  return build_histogram(values, bin_count, *std::max_element(values.begin(), values.end()));
}

inline std::vector<double> pool_differences(std::span<const DiffStats> stats) {
  std::vector<double> all;
  for (const auto& s : stats) all.insert(all.end(), s.values.begin(), s.values.end());
  return all;
}

struct ThresholdConfig {
  double delta = 0.10;
  std::size_t bin_count = 200;
  std::size_t sample_budget = 20;

  void validate() const {
    require(delta >= 0.0, ErrorCode::kConfig, "threshold offset delta must be >= 0");
    require(bin_count >= 1, ErrorCode::kConfig, "bin_count must be >= 1");
    require(sample_budget >= 1, ErrorCode::kConfig, "sample_budget must be >= 1");
  }
};

/// τ = mode of the difference distribution + δ.
inline double select_threshold(const DiffHistogram& hist, const ThresholdConfig& cfg) {
  cfg.validate();
  require(hist.total > 0, ErrorCode::kInput, "threshold from an empty histogram");
  return hist.mode() + cfg.delta;
}

/// Keep/drop flag per (frame, token). Frame 0 is always kept.
class TokenMask {
 public:
  TokenMask() = default;
  TokenMask(std::size_t frames, std::size_t tokens)
      : frames_(frames), tokens_(tokens), keep_(frames * tokens, 1) {}

  std::size_t frames() const noexcept { return frames_; }
  std::size_t tokens() const noexcept { return tokens_; }

  bool kept(std::size_t t, std::size_t i) const { return keep_[t * tokens_ + i] != 0; }
  void set(std::size_t t, std::size_t i, bool keep) { keep_[t * tokens_ + i] = keep ? 1 : 0; }

  std::span<const std::uint8_t> flags() const noexcept { return keep_; }

  std::size_t kept_count() const {
    return static_cast<std::size_t>(std::count(keep_.begin(), keep_.end(), std::uint8_t{1}));
  }
  std::size_t dropped_count() const { return keep_.size() - kept_count(); }

  bool subset_of(const TokenMask& other) const {
    if (other.frames_ != frames_ || other.tokens_ != tokens_) return false;
    for (std::size_t k = 0; k < keep_.size(); ++k)
      if (keep_[k] && !other.keep_[k]) return false;
    return true;
  }

  friend bool operator==(const TokenMask&, const TokenMask&) = default;

 private:
  std::size_t frames_ = 0;
  std::size_t tokens_ = 0;
  std::vector<std::uint8_t> keep_;
};

/// Tokens whose difference to the previous frame is below τ are dropped.
inline TokenMask mask_from_differences(const DiffStats& d, double tau) {
  TokenMask mask(d.transitions + 1, d.tokens);
  for (std::size_t t = 1; t <= d.transitions; ++t)
    for (std::size_t i = 0; i < d.tokens; ++i) mask.set(t, i, d.at(t - 1, i) >= tau);
  return mask;
}

inline TokenMask build_mask(const TokenSequence& clip, double tau, DiffNorm norm = DiffNorm::kMeanDim) {
  return mask_from_differences(token_differences(clip, norm), tau);
}

/// Share of dropped positions.
inline double mask_fraction(const TokenMask& mask) {
  const std::size_t total = mask.frames() * mask.tokens();
  return total == 0 ? 0.0 : static_cast<double>(mask.dropped_count()) / static_cast<double>(total);
}

/// Drops round(fraction·T·N) positions uniformly among frames ≥ 1 (capped so
/// frame 0 stays intact).
inline TokenMask random_mask(std::size_t frames, std::size_t tokens, double fraction, Rng& rng) {
  require(fraction >= 0.0 && fraction < 1.0, ErrorCode::kConfig, "random mask fraction must be in [0, 1)");
  TokenMask mask(frames, tokens);
  if (frames < 2) return mask;
  const std::size_t candidates = (frames - 1) * tokens;
  const auto want = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(frames * tokens)));
  const std::size_t drop = std::min(want, candidates);
  std::vector<std::size_t> pool(candidates);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t k = 0; k < drop; ++k) {
    std::swap(pool[k], pool[k + rng.index(candidates - k)]);
    mask.set(1 + pool[k] / tokens, pool[k] % tokens, false);
  }
  return mask;
}

/// KL(p ‖ q) over shared bins, after adding 1e-9 to both densities and
/// renormalizing.
inline double kl_divergence(const DiffHistogram& p, const DiffHistogram& q) {
  require(p.bin_count() == q.bin_count() && p.upper == q.upper, ErrorCode::kInput,
          "KL divergence needs histograms with identical bin edges");
  constexpr double eps = 1e-9;
  auto smoothed = [&](const DiffHistogram& h) {
    auto d = h.density();
    double s = 0.0;
    for (auto& v : d) s += (v += eps);
    for (auto& v : d) v /= s;
    return d;
  };
  const auto pd = smoothed(p);
  const auto qd = smoothed(q);
  double kl = 0.0;
  for (std::size_t b = 0; b < pd.size(); ++b) kl += pd[b] * std::log(pd[b] / qd[b]);
  return std::max(0.0, kl);
}

struct StabilityRow {
  std::size_t size = 0;
  double mean_kl = 0.0;
  double sd_kl = 0.0;
  std::vector<double> per_seed;
};

/// Histogram of `size` randomly chosen videos (without replacement) on the
/// full corpus's bin edges.
inline DiffHistogram subsample_histogram(std::span<const DiffStats> corpus, std::size_t size,
                                         std::uint64_t seed, const DiffHistogram& reference) {
  require(size >= 1 && size <= corpus.size(), ErrorCode::kInput,
          "subsample size " + std::to_string(size) + " exceeds corpus of " + std::to_string(corpus.size()));
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  DiffHistogram h;
  h.upper = reference.upper;
  h.counts.assign(reference.bin_count(), 0);
  for (std::size_t k = 0; k < size; ++k)
    for (double v : corpus[order[k]].values) h.add(v);
  return h;
}

/// KL(full ‖ subsample) for every (size, seed); one row per size with the
/// mean and sample standard deviation across seeds.
inline std::vector<StabilityRow> subsample_stability(std::span<const DiffStats> corpus,
                                                     std::span<const std::size_t> sizes,
                                                     std::span<const std::uint64_t> seeds,
                                                     std::size_t bin_count = 200) {
  require(!corpus.empty(), ErrorCode::kInput, "stability analysis of an empty corpus");
  require(!seeds.empty(), ErrorCode::kInput, "stability analysis needs at least one seed");
  const auto all = pool_differences(corpus);
  const DiffHistogram full = build_histogram(all, bin_count);
  std::vector<StabilityRow> rows;
  for (std::size_t size : sizes) {
    StabilityRow row;
    row.size = size;
    for (std::uint64_t seed : seeds)
      row.per_seed.push_back(kl_divergence(full, subsample_histogram(corpus, size, seed, full)));
    const double n = static_cast<double>(row.per_seed.size());
    row.mean_kl = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) / n;
    if (row.per_seed.size() > 1) {
      double ss = 0.0;
      for (double v : row.per_seed) ss += (v - row.mean_kl) * (v - row.mean_kl);
      row.sd_kl = std::sqrt(ss / (n - 1.0));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tmask
