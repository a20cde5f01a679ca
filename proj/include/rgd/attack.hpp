#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rgd/nets.hpp"

namespace rgd {

struct ThreatModel {
  NormKind norm = NormKind::L2;
  double eps = 0.5;
  double step = 0.083;
  int steps = 7;
  bool early_stop = true;
  bool random_start = false;
};

/// Step size set to 2.5 times the radius, divided by the number of steps.
inline double step_size_rule(double eps, int steps) {
  if (steps < 1) throw std::invalid_argument("step_size_rule: need at least one step");
  return 2.5 * eps / steps;
}

/// Trainer default: the explicit 0.083 for the (L2, 0.5, 7 steps) recipe, the 2.5x rule otherwise.
inline double default_step_size(NormKind norm, double eps, int steps) {
  if (norm == NormKind::L2 && eps == 0.5 && steps == 7) return 0.083;
  return step_size_rule(eps, std::max(steps, 1));
}

// Scaling onto the sphere can land a few ulps outside; points that close are treated as
// interior so projection is idempotent.
inline constexpr double kProjectionSlack = 1e-12;

inline void project_inplace(std::span<double> delta, const ThreatModel& tm) {
  if (tm.norm == NormKind::Linf) {
    for (double& v : delta) v = std::clamp(v, -tm.eps, tm.eps);
    return;
  }
  const double n = norm(delta, NormKind::L2);
  if (n > tm.eps * (1.0 + kProjectionSlack)) {
    const double scale = tm.eps / n;
    for (double& v : delta) v *= scale;
  }
}

/// Projects a single perturbation onto the threat ball.
inline Tensor project(const Tensor& delta, const ThreatModel& tm) {
  Tensor out = delta;
  project_inplace(out.values(), tm);
  return out;
}

/// Unit step direction: L2-normalized gradient or its sign.
inline void normalize_direction(std::span<double> g, NormKind kind) {
  if (kind == NormKind::Linf) {
    for (double& v : g) v = (v > 0) - (v < 0);
    return;
  }
  const double n = norm(g, NormKind::L2);
  for (double& v : g) v = n > 0.0 ? v / n : 0.0;
}

struct AttackReport {
  std::vector<int> iterations;   // gradient steps taken per sample
  std::vector<bool> success;     // misclassified at the returned point
  std::vector<double> perturbation_norm;

  double success_rate() const {
    if (success.empty()) return 0.0;
    std::size_t k = 0;
    for (bool s : success) k += s;
    return static_cast<double>(k) / success.size();
  }
};

struct AttackResult {
  Tensor x;
  AttackReport report;
};

namespace detail {

inline Tensor gather_rows(const Tensor& x, std::span<const std::size_t> idx) {
  Shape shape = x.shape();
  shape[0] = idx.size();
  Tensor out(shape);
  for (std::size_t j = 0; j < idx.size(); ++j) std::copy_n(x.row(idx[j]).data(), x.stride0(), out.row(j).data());
  return out;
}

template <class T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(v[i]);
  return out;
}

inline void random_start(Tensor& x, const Tensor& x0, const ThreatModel& tm, RngStream& rng) {
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    auto row = x.row(i);
    for (double& v : row) v = tm.norm == NormKind::Linf ? tm.eps * (2.0 * rng.uniform() - 1.0) : rng.normal();
    if (tm.norm == NormKind::L2) {
      normalize_direction(row, NormKind::L2);
      const double r = tm.eps * std::pow(rng.uniform(), 1.0 / static_cast<double>(row.size()));
      for (double& v : row) v *= r;
    }
    for (std::size_t k = 0; k < row.size(); ++k) row[k] += x0.row(i)[k];
  }
}

/// Shared PGD loop. `seed_for` gives the logit-space seed whose vjp is the ascent direction.
template <LogitModel M>
AttackResult pgd_loop(const M& model, const Tensor& x0, std::span<const int> t, std::span<const int> labels,
                      const ThreatModel& tm, bool untargeted, RngStream* rng) {
  const std::size_t n = x0.dim(0);
  if (t.size() != n || labels.size() != n) throw std::invalid_argument("pgd: batch size mismatch");
  check_labels(labels, n, model.num_classes());
  if (tm.steps < 0) throw std::invalid_argument("pgd: negative iteration count");
  AttackResult out{x0, {std::vector<int>(n, tm.steps), std::vector<bool>(n, false), std::vector<double>(n, 0.0)}};
  if (tm.random_start) {
    if (!rng) throw std::invalid_argument("pgd: random start requires an RNG stream");
    random_start(out.x, x0, tm, *rng);
  }
  const bool stop_early = untargeted && tm.early_stop;
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  for (int it = 0; it <= tm.steps && !active.empty(); ++it) {
    const Tensor xa = gather_rows(out.x, active);
    const std::vector<int> ta = gather(t, active);
    const std::vector<int> ya = gather(labels, active);
    const bool last = it == tm.steps;
    Tensor logits, grad;
    if (last) {
      logits = model.logits(xa, ta);
    } else {
      // Untargeted ascends CE, i.e. descends log p(y); targeted ascends log p(target).
      LogitsAndGrad lg = model.logits_vjp(xa, ta, log_prob_seed(ya));
      logits = std::move(lg.logits);
      grad = std::move(lg.input_grad);
    }
    const std::vector<int> pred = argmax_rows(logits);
    std::vector<std::size_t> still;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const std::size_t i = active[j];
      const bool fooled = pred[j] != labels[i];
      out.report.success[i] = untargeted ? fooled : !fooled;
      if (stop_early && fooled) {
        out.report.iterations[i] = it;
        continue;
      }
      if (last) continue;
      auto g = grad.row(j);
      normalize_direction(g, tm.norm);
      const double sign = untargeted ? -1.0 : 1.0;
      auto xi = out.x.row(i);
      const auto x0i = x0.row(i);
      std::vector<double> delta(xi.size());
      for (std::size_t k = 0; k < xi.size(); ++k) delta[k] = xi[k] + sign * tm.step * g[k] - x0i[k];
      project_inplace(delta, tm);
      for (std::size_t k = 0; k < xi.size(); ++k) xi[k] = x0i[k] + delta[k];
      still.push_back(i);
    }
    active = std::move(still);
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> d(x0.stride0());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = out.x.row(i)[k] - x0.row(i)[k];
    out.report.perturbation_norm[i] = norm(d, tm.norm);
  }
  return out;
}

}  // namespace detail

/// Loss-maximizing PGD against the true labels. With early stopping a sample freezes at the
/// first iterate the model misclassifies.
template <LogitModel M>
AttackResult pgd_untargeted(const M& model, const Tensor& x, std::span<const int> t, std::span<const int> y_true,
                            const ThreatModel& tm, RngStream* rng = nullptr) {
  return detail::pgd_loop(model, x, t, y_true, tm, true, rng);
}

/// Ascends log p(target | x, t) for the full iteration budget. report.success means the
/// target class is predicted at the end.
template <LogitModel M>
AttackResult pgd_targeted(const M& model, const Tensor& x, std::span<const int> t, std::span<const int> y_target,
                          const ThreatModel& tm) {
  ThreatModel no_stop = tm;
  no_stop.early_stop = false;
  no_stop.random_start = false;
  return detail::pgd_loop(model, x, t, y_target, no_stop, false, nullptr);
}

}  // namespace rgd
