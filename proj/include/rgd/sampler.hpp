#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include "rgd/nets.hpp"
#include "rgd/schedule.hpp"

namespace rgd {

/// One reverse transition t -> t_prev with the signal levels and variance it uses.
struct StepPair {
  int t = 1, t_prev = 0;
  double alpha_t = 0.0, alpha_prev = 1.0, sigma2 = 0.0;
};

inline StepPair step_pair(const RespacedSchedule& r, std::size_t i) {
  if (i < 1 || i >= r.kept.size()) throw std::out_of_range("step_pair: index outside respaced schedule");
  return {r.kept[i], r.kept[i - 1], r.alpha(i), r.alpha(i - 1), r.sigma2[i]};
}

inline StepPair step_pair(const NoiseSchedule& s, int t) {
  check_timestep(s, t, 1);
  return {t, t - 1, s.alpha[t], s.alpha[t - 1], s.sigma2[t]};
}

inline void check_pair(const StepPair& p) {
  if (!(p.t > p.t_prev && p.t_prev >= 0)) throw std::invalid_argument("reverse step requires t > t_prev >= 0");
}

/// s * sigma^2 * grad log p(y | x_t, t), evaluated at the original timestep index.
template <LogitModel M>
Tensor guidance_shift(const M& classifier, double scale, const StepPair& p, const Tensor& x_t,
                      std::span<const int> y) {
  const std::vector<int> t(x_t.dim(0), p.t);
  Tensor g = input_gradient(classifier, x_t, t, y);
  const double coef = scale * p.sigma2;
  for (double& v : g.storage()) v *= coef;
  return g;
}

struct StepOptions {
  double noise_scale = 1.0;  // 0 gives the deterministic (sigma = 0) test mode
};

/// Mean of p(x_prev | x_t), optionally shifted by classifier guidance.
template <NoisePredictor D, LogitModel M>
Tensor reverse_mean(const D& denoiser, const M* classifier, double scale, const StepPair& p, const Tensor& x_t,
                    std::span<const int> y_denoiser, std::span<const int> y_target, Tensor* eps_out = nullptr) {
  check_pair(p);
  if (scale < 0.0) throw std::invalid_argument("guidance scale must be >= 0");
  if (scale > 0.0 && !classifier) throw std::invalid_argument("guidance scale > 0 requires a classifier");
  const std::vector<int> t(x_t.dim(0), p.t);
  Tensor eps = denoiser.predict(x_t, t, y_denoiser);
  Tensor mean = posterior_mean(p.alpha_prev, p.alpha_t, x_t, eps);
  if (scale > 0.0) {
    const Tensor shift = guidance_shift(*classifier, scale, p, x_t, y_target);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += shift[i];
  }
  if (eps_out) *eps_out = std::move(eps);
  return mean;
}

/// Adds sigma * z per sample (one RNG stream per sample); the step into t = 0 adds no noise
/// and draws nothing.
inline void add_step_noise(Tensor& mean, const StepPair& p, std::span<RngStream> rngs, const StepOptions& opts) {
  if (p.t_prev == 0) return;
  if (rngs.size() != mean.dim(0)) throw std::invalid_argument("one RNG stream per sample required");
  const double sigma = std::sqrt(p.sigma2) * opts.noise_scale;
  for (std::size_t i = 0; i < mean.dim(0); ++i)
    for (double& v : mean.row(i)) v += sigma * rngs[i].normal();
}

template <NoisePredictor D>
Tensor unguided_step(const D& denoiser, const StepPair& p, const Tensor& x_t, std::span<const int> y,
                     std::span<RngStream> rngs, const StepOptions& opts = {}) {
  Tensor x = reverse_mean<D, TimeClassifier>(denoiser, nullptr, 0.0, p, x_t, y, y);
  add_step_noise(x, p, rngs, opts);
  return x;
}

/// Same RNG consumption as unguided_step, so s = 0 reproduces it bit for bit.
template <NoisePredictor D, LogitModel M>
Tensor guided_step(const D& denoiser, const M* classifier, const StepPair& p, const Tensor& x_t,
                   std::span<const int> y, double scale, std::span<RngStream> rngs, const StepOptions& opts = {}) {
  Tensor x = reverse_mean(denoiser, classifier, scale, p, x_t, y, y);
  add_step_noise(x, p, rngs, opts);
  return x;
}

struct GuidanceConfig {
  double scale = 0.0;
  int steps = 40;
  std::uint64_t seed = 0;
  std::size_t batch = 64;
  bool conditional = true;  // false: denoiser receives the null label, guidance alone conditions
  std::size_t trace_points = 0;
  StepOptions step;
};

struct SampleResult {
  Tensor images;                  // [n, c, h, w], clamped to [-1, 1]
  std::vector<Tensor> trace;      // x0 estimates at trace points, each [n, c, h, w]
  std::vector<int> trace_timesteps;
};

/// Ancestral sampling down the respaced index list from x_T ~ N(0, I). Sample i always uses
/// RNG stream i of cfg.seed, so results do not depend on batching.
template <NoisePredictor D, LogitModel M = TimeClassifier>
SampleResult sample(const D& denoiser, const M* classifier, const RespacedSchedule& rs, const GuidanceConfig& cfg,
                    std::span<const int> labels, const Shape& image_shape) {
  if (cfg.scale > 0.0 && !classifier) throw std::invalid_argument("guidance scale > 0 requires a classifier");
  if (labels.empty()) throw std::invalid_argument("sample: no labels requested");
  const std::size_t n = labels.size(), steps = rs.steps();
  Shape full = image_shape;
  full.insert(full.begin(), n);
  SampleResult out{Tensor(full), {}, {}};
  std::vector<std::size_t> trace_at;
  for (std::size_t k = 0; k < cfg.trace_points && steps > 0; ++k)
    trace_at.push_back(steps - (k * steps) / std::max<std::size_t>(cfg.trace_points, 1));
  for (std::size_t i : trace_at) {
    out.trace.push_back(Tensor(full));
    out.trace_timesteps.push_back(rs.kept[i]);
  }
  const std::size_t per = out.images.stride0();
  for (std::size_t b = 0; b < n; b += std::max<std::size_t>(cfg.batch, 1)) {
    const std::size_t e = std::min(n, b + std::max<std::size_t>(cfg.batch, 1));
    Shape bs = full;
    bs[0] = e - b;
    std::vector<RngStream> rngs;
    for (std::size_t i = b; i < e; ++i) rngs.emplace_back(cfg.seed, static_cast<std::uint64_t>(i));
    Tensor x(bs);
    for (std::size_t j = 0; j < rngs.size(); ++j)
      for (double& v : x.row(j)) v = rngs[j].normal();
    const std::vector<int> y(labels.begin() + b, labels.begin() + e);
    const std::vector<int> y_den = cfg.conditional ? y : std::vector<int>(y.size(), kNullLabel);
    for (std::size_t i = steps; i >= 1; --i) {
      const StepPair p = step_pair(rs, i);
      Tensor eps;
      Tensor next = reverse_mean(denoiser, classifier, cfg.scale, p, x, y_den, y, &eps);
      for (std::size_t k = 0; k < trace_at.size(); ++k)
        if (trace_at[k] == i) {
          const Tensor x0 = predict_x0(p.alpha_t, x, eps);
          std::copy(x0.storage().begin(), x0.storage().end(), out.trace[k].data() + b * per);
        }
      add_step_noise(next, p, rngs, cfg.step);
      x = std::move(next);
    }
    for (std::size_t k = 0; k < x.size(); ++k) out.images.data()[b * per + k] = std::clamp(x[k], -1.0, 1.0);
  }
  for (auto& tr : out.trace)
    for (double& v : tr.storage()) v = std::clamp(v, -1.0, 1.0);
  return out;
}

/// Labels 1..C repeated in order until `count` entries.
inline std::vector<int> cycle_labels(std::size_t count, int classes) {
  std::vector<int> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<int>(i % static_cast<std::size_t>(classes)) + 1;
  return out;
}

}  // namespace rgd
