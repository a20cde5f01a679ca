#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rgd/data.hpp"
#include "rgd/nets.hpp"
#include "rgd/optim.hpp"
#include "rgd/schedule.hpp"

namespace rgd {

struct DiffusionTrainConfig {
  long iterations = 2000;
  std::size_t batch = 64;
  double lr_start = 1e-3, lr_end = 1e-4;
  double weight_decay = 0.01;
  double null_prob = 0.1;
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0: only at the end
  DenoiserArch arch;

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("diffusion training needs iterations >= 1");
    if (!(null_prob >= 0.0 && null_prob < 1.0)) throw std::invalid_argument("null-label probability must be in [0, 1)");
    if (batch == 0) throw std::invalid_argument("batch size must be positive");
  }
};

/// One noise-prediction regression batch.
struct DiffusionBatch {
  Tensor x_t, eps;
  std::vector<int> t, y;
  std::size_t null_count = 0;
};

/// Per sample: t ~ U{1..T}, eps ~ N(0, I), label replaced by the null slot with probability null_prob.
inline DiffusionBatch make_diffusion_batch(const NoiseSchedule& s, const Tensor& x0, std::span<const int> y,
                                           double null_prob, const RngStream& rng) {
  const std::size_t n = x0.dim(0), d = x0.stride0();
  DiffusionBatch b{Tensor::like(x0), Tensor::like(x0), std::vector<int>(n), std::vector<int>(y.begin(), y.end())};
  for (std::size_t i = 0; i < n; ++i) {
    RngStream r = rng.fork(i);
    b.t[i] = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(s.T)));
    if (null_prob > 0.0 && r.uniform() < null_prob) {
      b.y[i] = kNullLabel;
      ++b.null_count;
    }
    const double a = std::sqrt(s.alpha[b.t[i]]), c = std::sqrt(1.0 - s.alpha[b.t[i]]);
    for (std::size_t k = 0; k < d; ++k) {
      const double e = r.normal();
      b.eps.row(i)[k] = e;
      b.x_t.row(i)[k] = a * x0.row(i)[k] + c * e;
    }
  }
  return b;
}

/// Mean squared error between predicted and true noise, with its gradient.
inline LossAndGrad mse_loss_and_grad(const Tensor& pred, const Tensor& target) {
  LossAndGrad out{0.0, Tensor::like(pred)};
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double r = pred[i] - target[i];
    out.loss += r * r;
    out.grad[i] = 2.0 * r * inv;
  }
  out.loss *= inv;
  return out;
}

template <NoisePredictor D>
double diffusion_loss(const D& model, const DiffusionBatch& b) {
  return mse_loss_and_grad(model.predict(b.x_t, b.t, b.y), b.eps).loss;
}

template <NoisePredictor D>
double diffusion_loss(const D& model, const NoiseSchedule& s, const Tensor& x0, std::span<const int> y,
                      const RngStream& rng, double null_prob = 0.0) {
  return diffusion_loss(model, make_diffusion_batch(s, x0, y, null_prob, rng));
}

struct TrainLogRow {
  long iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
  double attack_success_rate = -1.0;  // classifier robust mode only
};

inline std::string training_log_csv(const std::vector<TrainLogRow>& rows, bool with_attack) {
  std::ostringstream os;
  os.precision(10);
  os << (with_attack ? "iteration,loss,lr,attack_success_rate\n" : "iteration,loss,lr\n");
  for (const auto& r : rows) {
    os << r.iteration << ',' << r.loss << ',' << r.lr;
    if (with_attack) os << ',' << r.attack_success_rate;
    os << '\n';
  }
  return os.str();
}

inline std::vector<std::size_t> sample_batch_indices(std::size_t dataset_size, std::size_t batch, RngStream& rng) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(dataset_size));
  return idx;
}

struct DiffusionTrainResult {
  DenoiserModel model;
  std::vector<TrainLogRow> log;
  std::size_t null_samples = 0, total_samples = 0;
};

using DenoiserCheckpointFn = std::function<void(long, const DenoiserModel&)>;

inline DiffusionTrainResult train_diffusion(const DiffusionTrainConfig& cfg, const Dataset& data,
                                            const NoiseSchedule& s, const DenoiserCheckpointFn& on_checkpoint = {}) {
  cfg.validate();
  data.validate();
  DenoiserArch arch = cfg.arch;
  arch.image = {int(data.images.dim(1)), int(data.images.dim(2)), int(data.images.dim(3))};
  arch.classes = data.classes;
  arch.timesteps = s.T;
  DiffusionTrainResult res{DenoiserModel(arch, cfg.seed), {}};
  AdamW opt(res.model.params(), {0.9, 0.999, 1e-8, cfg.weight_decay});
  const RngStream root(cfg.seed, 0xD1FF);
  for (long it = 0; it < cfg.iterations; ++it) {
    RngStream r = root.fork(static_cast<std::uint64_t>(it));
    const auto idx = sample_batch_indices(data.size(), cfg.batch, r);
    const DiffusionBatch b = make_diffusion_batch(s, data.gather(idx), data.gather_labels(idx), cfg.null_prob, r.fork(1));
    res.null_samples += b.null_count;
    res.total_samples += b.t.size();
    auto [loss, grads] = res.model.param_gradient(b.x_t, b.t, b.y,
                                                  [&](const Tensor& pred) { return mse_loss_and_grad(pred, b.eps); });
    const double lr = linear_lr(cfg.lr_start, cfg.lr_end, it, cfg.iterations);
    opt.step(res.model.params(), grads, lr);
    res.log.push_back({it, loss, lr});
    if (on_checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations)
      on_checkpoint(it + 1, res.model);
  }
  if (on_checkpoint) on_checkpoint(cfg.iterations, res.model);
  return res;
}

}  // namespace rgd
