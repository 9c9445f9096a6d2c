#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tmask/tensor.hpp"

namespace tmask {

template <class Real>
using ScalarFunction = std::function<Var(ComputeTape<Real>&, std::span<const Var> params)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of `f` with central differences, element by
/// element over every tensor in `params`. Relative error per element is
/// |ga − gn| / max(1e-8, |ga| + |gn|).
template <class Real>
GradCheckResult grad_check(const ScalarFunction<Real>& f, std::span<BasicTensor<Real>* const> params,
                           double step = 1e-3) {
  auto evaluate = [&](bool with_grad) {
    ComputeTape<Real> tape;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (auto* p : params) vars.push_back(tape.parameter(*p));
    const Var loss = f(tape, vars);
    const double value = tape.value(loss)[0];
    if (with_grad) tape.backward(loss);
    return value;
  };

  for (auto* p : params) {
    p->set_requires_grad(true);
    p->zero_grad();
  }
  evaluate(true);

  GradCheckResult result;
  for (auto* p : params) {
    const std::vector<Real> analytic(p->grad().begin(), p->grad().end());
    auto data = p->data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real saved = data[i];
      data[i] = static_cast<Real>(saved + step);
      const double plus = evaluate(false);
      data[i] = static_cast<Real>(saved - step);
      const double minus = evaluate(false);
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double ga = analytic[i];
      const double err = std::abs(ga - numeric) / std::max(1e-8, std::abs(ga) + std::abs(numeric));
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace tmask
