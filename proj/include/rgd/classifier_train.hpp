#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rgd/attack.hpp"
#include "rgd/diffusion_train.hpp"

namespace rgd {

enum class ClassifierMode { Vanilla, Robust };

struct ClassifierTrainConfig {
  ClassifierMode mode = ClassifierMode::Vanilla;
  long iterations = 2000;
  std::size_t batch = 64;
  double lr_start = 3e-4, lr_end = 6e-5;
  double weight_decay = 0.05;
  std::optional<ThreatModel> threat;
  std::uint64_t seed = 0;
  bool clean_only = false;  // force t = 0 (judge / feature extractor)
  long eval_every = 0;
  long checkpoint_every = 0;
  ClassifierArch arch;

  void validate() const {
    if (iterations < 1) throw std::invalid_argument("classifier training needs iterations >= 1");
    if (batch == 0) throw std::invalid_argument("batch size must be positive");
    if (lr_end > lr_start) throw std::invalid_argument("lr end must not exceed lr start");
    if (mode == ClassifierMode::Robust && !threat) throw std::invalid_argument("robust mode requires a threat model");
  }
};

struct NoisyBatch {
  Tensor x_t;
  std::vector<int> t;
};

/// Per sample t ~ U{0..T} (or the forced value) and x_t from the forward process.
inline NoisyBatch make_noisy_batch(const NoiseSchedule& s, const Tensor& x0, const RngStream& rng,
                                   std::optional<int> force_t = std::nullopt) {
  const std::size_t n = x0.dim(0), d = x0.stride0();
  NoisyBatch b{Tensor::like(x0), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    RngStream r = rng.fork(i);
    b.t[i] = force_t ? *force_t : static_cast<int>(r.below(static_cast<std::uint64_t>(s.T) + 1));
    const double a = std::sqrt(s.alpha[b.t[i]]), c = std::sqrt(1.0 - s.alpha[b.t[i]]);
    for (std::size_t k = 0; k < d; ++k) b.x_t.row(i)[k] = a * x0.row(i)[k] + c * r.normal();
  }
  return b;
}

struct StepResult {
  double loss = 0.0;
  double attack_success_rate = 0.0;
};

/// Attack applied to noisy inputs before the CE update; a pure data transformation.
using Attacker = std::function<AttackResult(const TimeClassifier&, const Tensor&, std::span<const int>,
                                            std::span<const int>)>;

inline Attacker pgd_attacker(const ThreatModel& tm) {
  return [tm](const TimeClassifier& m, const Tensor& x, std::span<const int> t, std::span<const int> y) {
    return pgd_untargeted(m, x, t, y, tm);
  };
}

/// CE on x_t against the true labels, followed by one optimizer update.
inline StepResult vanilla_step(TimeClassifier& model, AdamW& opt, double lr, const NoiseSchedule& s, const Tensor& x0,
                               std::span<const int> y, const RngStream& rng, std::optional<int> force_t = std::nullopt) {
  const NoisyBatch b = make_noisy_batch(s, x0, rng, force_t);
  auto [loss, grads] = model.param_gradient(b.x_t, b.t, [&](const Tensor& z) { return ce_loss_and_grad(z, y); });
  opt.step(model.params(), grads, lr);
  return {loss, 0.0};
}

/// Noise, attack with the current parameters, then CE of the attacked input against the
/// true label y.
inline StepResult robust_step(TimeClassifier& model, AdamW& opt, double lr, const NoiseSchedule& s, const Tensor& x0,
                              std::span<const int> y, const Attacker& attack, const RngStream& rng,
                              std::optional<int> force_t = std::nullopt) {
  const NoisyBatch b = make_noisy_batch(s, x0, rng, force_t);
  const AttackResult adv = attack(model, b.x_t, b.t, y);
  auto [loss, grads] = model.param_gradient(adv.x, b.t, [&](const Tensor& z) { return ce_loss_and_grad(z, y); });
  opt.step(model.params(), grads, lr);
  return {loss, adv.report.success_rate()};
}

/// Accuracy of argmax predictions on noisy inputs at a fixed timestep.
inline double noisy_accuracy(const TimeClassifier& model, const NoiseSchedule& s, const Dataset& data, int t,
                             std::uint64_t seed) {
  std::size_t correct = 0;
  const std::size_t chunk = 256;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(data.size(), b + chunk); ++i) idx.push_back(i);
    const NoisyBatch nb = make_noisy_batch(s, data.gather(idx), RngStream(seed, 0xACC0 + b), t);
    const auto pred = argmax_rows(model.logits(nb.x_t, nb.t));
    for (std::size_t j = 0; j < idx.size(); ++j) correct += pred[j] == data.labels[idx[j]];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct EvalRow {
  long iteration = 0;
  std::vector<std::pair<int, double>> accuracy;  // (t, accuracy)
};

struct ClassifierTrainResult {
  TimeClassifier model;
  std::vector<TrainLogRow> log;
  std::vector<EvalRow> evals;
};

inline EvalRow evaluate_timesteps(const TimeClassifier& m, const NoiseSchedule& s, const Dataset& val, long it,
                                  std::uint64_t seed) {
  EvalRow row{it, {}};
  for (int t : {0, s.T / 4, s.T / 2, 3 * s.T / 4}) row.accuracy.emplace_back(t, noisy_accuracy(m, s, val, t, seed));
  return row;
}

using ClassifierCheckpointFn = std::function<void(long, const TimeClassifier&)>;

inline ClassifierTrainResult train_classifier(const ClassifierTrainConfig& cfg, const Dataset& data,
                                              const NoiseSchedule& s, const Dataset* val = nullptr,
                                              const ClassifierCheckpointFn& on_checkpoint = {}) {
  cfg.validate();
  data.validate();
  ClassifierArch arch = cfg.arch;
  arch.image = {int(data.images.dim(1)), int(data.images.dim(2)), int(data.images.dim(3))};
  arch.classes = data.classes;
  arch.timesteps = s.T;
  ClassifierTrainResult res{TimeClassifier(arch, cfg.seed), {}, {}};
  AdamW opt(res.model.params(), {0.9, 0.999, 1e-8, cfg.weight_decay});
  const RngStream root(cfg.seed, 0xC7A1);
  const std::optional<int> force_t = cfg.clean_only ? std::optional<int>(0) : std::nullopt;
  const Attacker attack = cfg.mode == ClassifierMode::Robust ? pgd_attacker(*cfg.threat) : Attacker{};
  for (long it = 0; it < cfg.iterations; ++it) {
    RngStream r = root.fork(static_cast<std::uint64_t>(it));
    const auto idx = sample_batch_indices(data.size(), cfg.batch, r);
    const Tensor x0 = data.gather(idx);
    const std::vector<int> y = data.gather_labels(idx);
    const double lr = linear_lr(cfg.lr_start, cfg.lr_end, it, cfg.iterations);
    const StepResult st = cfg.mode == ClassifierMode::Robust
                              ? robust_step(res.model, opt, lr, s, x0, y, attack, r.fork(1), force_t)
                              : vanilla_step(res.model, opt, lr, s, x0, y, r.fork(1), force_t);
    res.log.push_back({it, st.loss, lr, cfg.mode == ClassifierMode::Robust ? st.attack_success_rate : 0.0});
    if (val && cfg.eval_every > 0 && ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.iterations))
      res.evals.push_back(evaluate_timesteps(res.model, s, *val, it + 1, cfg.seed));
    if (on_checkpoint && cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0 && it + 1 < cfg.iterations)
      on_checkpoint(it + 1, res.model);
  }
  if (on_checkpoint) on_checkpoint(cfg.iterations, res.model);
  return res;
}

}  // namespace rgd
