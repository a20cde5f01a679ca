#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgd/numerics.hpp"

namespace rgd {

/// Cumulative signal levels alpha_0..alpha_T (alpha_0 = 1) and fixed reverse variances.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha;   // T + 1 entries
  std::vector<double> sigma2;  // T + 1 entries; sigma2[t] is the variance of step t -> t-1, sigma2[0] unused
};

/// Variance of the posterior q(x_prev | x_t, x_0) between two signal levels.
inline double posterior_variance(double alpha_prev, double alpha_t) {
  if (alpha_t >= 1.0) return 0.0;
  const double beta = 1.0 - alpha_t / alpha_prev;
  return (1.0 - alpha_prev) / (1.0 - alpha_t) * beta;
}

/// Linear per-step rates beta_1..beta_T, alpha_t = prod_{s<=t} (1 - beta_s).
/// The step into t = 0 has zero posterior variance; like the reference DDPM code it is
/// clipped to the variance of the following step so guidance keeps a nonzero scale there.
inline NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_linear_schedule: require 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.alpha.assign(T + 1, 1.0);
  s.sigma2.assign(T + 1, 0.0);
  std::vector<double> beta(T + 1, 0.0);
  for (int t = 1; t <= T; ++t) {
    beta[t] = T == 1 ? beta_end : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alpha[t] = s.alpha[t - 1] * (1.0 - beta[t]);
  }
  for (int t = 1; t <= T; ++t) s.sigma2[t] = posterior_variance(s.alpha[t - 1], s.alpha[t]);
  s.sigma2[1] = T >= 2 ? s.sigma2[2] : beta[1];
  return s;
}

inline void check_timestep(const NoiseSchedule& s, int t, int lo = 0) {
  if (t < lo || t > s.T)
    throw std::out_of_range("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                            std::to_string(s.T) + "]");
}

/// x_t = sqrt(alpha_t) x0 + sqrt(1 - alpha_t) eps.
inline Tensor forward_noising(double alpha_t, const Tensor& x0, const Tensor& eps) {
  if (x0.shape() != eps.shape()) throw std::invalid_argument("forward_noising: eps shape differs from x0");
  const double a = std::sqrt(alpha_t), b = std::sqrt(1.0 - alpha_t);
  Tensor out = Tensor::like(x0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

inline Tensor forward_noising(const NoiseSchedule& s, const Tensor& x0, int t, const Tensor& eps) {
  check_timestep(s, t);
  return forward_noising(s.alpha[t], x0, eps);
}

/// Reverse-step mean between signal levels alpha_t (current) and alpha_prev (target).
inline Tensor posterior_mean(double alpha_prev, double alpha_t, const Tensor& x_t, const Tensor& eps_pred) {
  if (x_t.shape() != eps_pred.shape()) throw std::invalid_argument("posterior_mean: shape mismatch");
  const double scale = std::sqrt(alpha_prev / alpha_t);
  const double noise_coef = alpha_t < 1.0 ? (1.0 - alpha_t / alpha_prev) / std::sqrt(1.0 - alpha_t) : 0.0;
  Tensor out = Tensor::like(x_t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * (x_t[i] - noise_coef * eps_pred[i]);
  return out;
}

inline Tensor posterior_mean(const NoiseSchedule& s, const Tensor& x_t, int t, const Tensor& eps_pred) {
  if (t == 0) throw std::out_of_range("posterior_mean: t = 0 has no reverse step");
  check_timestep(s, t, 1);
  return posterior_mean(s.alpha[t - 1], s.alpha[t], x_t, eps_pred);
}

/// Uniformly strided subset of the trained timesteps.
struct RespacedSchedule {
  NoiseSchedule base;
  std::vector<int> kept;       // kept[0] == 0, strictly increasing, last == T
  std::vector<double> sigma2;  // sigma2[i]: variance of step kept[i] -> kept[i-1]; sigma2[0] unused

  std::size_t steps() const { return kept.size() - 1; }
  double alpha(std::size_t i) const { return base.alpha[kept[i]]; }
};

inline RespacedSchedule respace(const NoiseSchedule& s, int n_steps) {
  if (n_steps < 1 || n_steps > s.T)
    throw std::out_of_range("respace: n_steps must lie in [1, " + std::to_string(s.T) + "]");
  RespacedSchedule r;
  r.base = s;
  for (int k = 0; k <= n_steps; ++k) {
    const int idx = static_cast<int>(std::lround(static_cast<double>(k) * s.T / n_steps));
    if (r.kept.empty() || r.kept.back() != idx) r.kept.push_back(idx);
  }
  r.sigma2.assign(r.kept.size(), 0.0);
  for (std::size_t i = 1; i < r.kept.size(); ++i) r.sigma2[i] = posterior_variance(r.alpha(i - 1), r.alpha(i));
  // Same clipping as the base schedule for the final jump into t = 0.
  r.sigma2[1] = r.kept.size() > 2 ? r.sigma2[2] : s.sigma2[1];
  return r;
}

/// Clean-image estimate (x_t - sqrt(1 - alpha_t) eps) / sqrt(alpha_t).
inline Tensor predict_x0(double alpha_t, const Tensor& x_t, const Tensor& eps_pred) {
  Tensor out = Tensor::like(x_t);
  const double a = std::sqrt(alpha_t), b = std::sqrt(1.0 - alpha_t);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - b * eps_pred[i]) / a;
  return out;
}

}  // namespace rgd
