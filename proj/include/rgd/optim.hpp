#pragma once

#include <cmath>

#include "rgd/layers.hpp"

namespace rgd {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay: p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
class AdamW {
 public:
  AdamW(const ModelParams& params, AdamOptions opts)
      : opts_(opts), m_(ParamGrads::zeros_like(params)), v_(ParamGrads::zeros_like(params)) {}

  void step(ModelParams& params, const ParamGrads& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, t_);
    const double c2 = 1.0 - std::pow(opts_.beta2, t_);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      Tensor& p = params[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grads[k][i];
        double& m = m_[k][i];
        double& v = v_[k][i];
        m = opts_.beta1 * m + (1.0 - opts_.beta1) * g;
        v = opts_.beta2 * v + (1.0 - opts_.beta2) * g * g;
        const double update = (m / c1) / (std::sqrt(v / c2) + opts_.eps);
        p[i] -= lr * (update + opts_.weight_decay * p[i]);
      }
    }
  }

  long steps() const { return t_; }

 private:
  AdamOptions opts_;
  ParamGrads m_, v_;
  long t_ = 0;
};

/// Linear anneal from start (iteration 0) to end (last iteration).
inline double linear_lr(double start, double end, long iteration, long iterations) {
  if (iterations <= 1) return start;
  return start + (end - start) * static_cast<double>(iteration) / static_cast<double>(iterations - 1);
}

}  // namespace rgd
