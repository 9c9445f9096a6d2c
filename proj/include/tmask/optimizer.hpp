#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "tmask/probes.hpp"

namespace tmask {

/// Cosine decay from `base` to 0 over `total` steps.
inline double cosine_learning_rate(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Adam with decoupled weight decay, applied only to parameters flagged for decay.
template <class Real>
class AdamW {
 public:
  explicit AdamW(const std::vector<ProbeParameter<Real>>& params, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.size(), 0.0);
      v_.emplace_back(p.value.size(), 0.0);
    }
  }

  void step(std::vector<ProbeParameter<Real>>& params, const std::vector<std::vector<Real>>& grads, double lr,
            double weight_decay) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto w = params[k].value.data();
      const auto& g = grads[k];
      auto& m = m_[k];
      auto& v = v_[k];
      const double decay = params[k].decay ? lr * weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * static_cast<double>(g[i]) * g[i];
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        w[i] = static_cast<Real>(w[i] - decay * w[i] - lr * update);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace tmask
