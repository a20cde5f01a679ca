#pragma once

#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgd/attack.hpp"
#include "rgd/data.hpp"
#include "rgd/eval.hpp"
#include "rgd/sampler.hpp"

namespace rgd {

// ---- logit shift ----------------------------------------------------------

enum class ShiftKind { Constant, Linear, Radial };

/// g(x) added to every logit: c, a.x or b*||x||^2.
struct LogitShiftSpec {
  ShiftKind kind = ShiftKind::Constant;
  double c = 0.0;
  Tensor a;  // per-image direction for the linear case
  double b = 0.0;

  double value(std::span<const double> x) const {
    switch (kind) {
      case ShiftKind::Constant: return c;
      case ShiftKind::Linear: {
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) s += a[k] * x[k];
        return s;
      }
      case ShiftKind::Radial: {
        double s = 0.0;
        for (double v : x) s += v * v;
        return b * s;
      }
    }
    return 0.0;
  }

  void gradient(std::span<const double> x, std::span<double> out) const {
    for (std::size_t k = 0; k < x.size(); ++k)
      out[k] = kind == ShiftKind::Constant ? 0.0 : kind == ShiftKind::Linear ? a[k] : 2.0 * b * x[k];
  }

  void check(std::size_t pixels) const {
    if (kind == ShiftKind::Linear && a.size() != pixels)
      throw std::invalid_argument("linear logit shift needs one coefficient per pixel");
  }
};

inline ShiftKind parse_shift_kind(const std::string& s) {
  if (s == "constant") return ShiftKind::Constant;
  if (s == "linear") return ShiftKind::Linear;
  if (s == "radial") return ShiftKind::Radial;
  throw std::invalid_argument("unknown shift kind '" + s + "' (constant|linear|radial)");
}

/// h~(x, t) = h(x, t) + g(x) on every class.
template <LogitModel M>
class LogitShift {
 public:
  LogitShift(const M& base, LogitShiftSpec spec) : base_(base), spec_(std::move(spec)) {}

  int num_classes() const { return base_.num_classes(); }

  Tensor logits(const Tensor& x, std::span<const int> t) const {
    Tensor z = base_.logits(x, t);
    shift(x, z);
    return z;
  }

  LogitsAndGrad logits_vjp(const Tensor& x, std::span<const int> t, const OutputSeed& seed) const {
    std::vector<double> seed_sum(x.dim(0), 0.0);
    LogitsAndGrad out = base_.logits_vjp(x, t, [&](const Tensor& z0) {
      Tensor z = z0;
      shift(x, z);
      Tensor s = seed(z);
      for (std::size_t i = 0; i < s.dim(0); ++i)
        for (double v : s.row(i)) seed_sum[i] += v;
      return s;
    });
    shift(x, out.logits);
    std::vector<double> g(x.stride0());
    for (std::size_t i = 0; i < x.dim(0); ++i) {
      spec_.gradient(x.row(i), g);
      auto row = out.input_grad.row(i);
      for (std::size_t k = 0; k < g.size(); ++k) row[k] += seed_sum[i] * g[k];
    }
    return out;
  }

 private:
  void shift(const Tensor& x, Tensor& z) const {
    spec_.check(x.stride0());
    for (std::size_t i = 0; i < z.dim(0); ++i) {
      const double g = spec_.value(x.row(i));
      for (double& v : z.row(i)) v += g;
    }
  }

  const M& base_;
  LogitShiftSpec spec_;
};

struct LogitShiftReport {
  double max_loss_diff = 0.0;
  double argmax_agreement = 0.0;
  double max_raw_gradient_diff = 0.0;      // max |grad z~_y - grad z_y|
  double max_raw_gradient_error = 0.0;     // max |grad z~_y - grad z_y - grad g|
  double max_guidance_gradient_diff = 0.0; // max |grad log p~_y - grad log p_y|

  nlohmann::ordered_json to_json() const {
    return {{"max_loss_diff", max_loss_diff},
            {"argmax_agreement", argmax_agreement},
            {"max_raw_gradient_diff", max_raw_gradient_diff},
            {"max_raw_gradient_error", max_raw_gradient_error},
            {"max_guidance_gradient_diff", max_guidance_gradient_diff}};
  }
};

template <LogitModel M>
LogitShiftReport logit_shift_demo(const M& model, const LogitShiftSpec& spec, const Tensor& x, std::span<const int> y,
                                  int t) {
  const LogitShift<M> shifted(model, spec);
  const std::vector<int> ts(x.dim(0), t);
  const std::vector<int> labels(y.begin(), y.end());
  LogitShiftReport r;

  const LogitsAndGrad raw = model.logits_vjp(x, ts, logit_seed(labels));
  const LogitsAndGrad raw_s = shifted.logits_vjp(x, ts, logit_seed(labels));
  const std::vector<int> p = argmax_rows(raw.logits), ps = argmax_rows(raw_s.logits);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < x.dim(0); ++i) agree += p[i] == ps[i];
  r.argmax_agreement = static_cast<double>(agree) / static_cast<double>(x.dim(0));
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    Tensor a({1, raw.logits.dim(1)}), b({1, raw.logits.dim(1)});
    std::copy_n(raw.logits.row(i).data(), a.size(), a.data());
    std::copy_n(raw_s.logits.row(i).data(), b.size(), b.data());
    const std::span<const int> yi(&labels[i], 1);
    r.max_loss_diff = std::max(r.max_loss_diff, std::abs(ce_loss(b, yi) - ce_loss(a, yi)));
  }

  std::vector<double> g(x.stride0());
  for (std::size_t i = 0; i < x.dim(0); ++i) {
    spec.gradient(x.row(i), g);
    for (std::size_t k = 0; k < g.size(); ++k) {
      const double d = raw_s.input_grad.row(i)[k] - raw.input_grad.row(i)[k];
      r.max_raw_gradient_diff = std::max(r.max_raw_gradient_diff, std::abs(d));
      r.max_raw_gradient_error = std::max(r.max_raw_gradient_error, std::abs(d - g[k]));
    }
  }

  const Tensor guide = input_gradient(model, x, ts, y);
  const Tensor guide_s = input_gradient(shifted, x, ts, y);
  for (std::size_t k = 0; k < guide.size(); ++k)
    r.max_guidance_gradient_diff = std::max(r.max_guidance_gradient_diff, std::abs(guide_s[k] - guide[k]));
  return r;
}

// ---- gradient visualization ----------------------------------------------

struct GradientGrid {
  Tensor grid;                   // [c, rows*h, cols*w] in [0, 1]
  std::vector<Tensor> cells;     // row-major (image, t), each [c, h, w] in [0, 1]
  std::vector<Tensor> raw;       // unnormalized gradients, same order
};

/// Noises image i at each t (stream i of `seed`, forked by t), takes the gradient of
/// log p(y_i | x_t, t), min-max normalizes it and tiles rows = images, cols = timesteps.
inline GradientGrid gradient_viz(const TimeClassifier& model, const NoiseSchedule& s, const Tensor& images,
                                 std::span<const int> labels, std::span<const int> t_list, std::uint64_t seed) {
  if (t_list.empty()) throw std::invalid_argument("gradient_viz: empty timestep list");
  for (int t : t_list) check_timestep(s, t);
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  GradientGrid out{Tensor({c, n * h, t_list.size() * w}), {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < t_list.size(); ++j) {
      RngStream r = RngStream(seed, i).fork(static_cast<std::uint64_t>(t_list[j]));
      Tensor x0({1, c, h, w});
      std::copy_n(images.row(i).data(), x0.size(), x0.data());
      const Tensor eps = gaussian(r, x0.shape());
      const Tensor xt = forward_noising(s, x0, t_list[j], eps);
      const int tt = t_list[j];
      Tensor g = input_gradient(model, xt, std::span<const int>(&tt, 1), labels.subspan(i, 1));
      Tensor cell = minmax_normalize(g).reshaped({c, h, w});
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t yy = 0; yy < h; ++yy)
          for (std::size_t xx = 0; xx < w; ++xx)
            out.grid[(ch * n * h + i * h + yy) * t_list.size() * w + j * w + xx] = cell[(ch * h + yy) * w + xx];
      out.cells.push_back(std::move(cell));
      out.raw.push_back(g.reshaped({c, h, w}));
    }
  }
  return out;
}

/// Pearson correlation between the min-max normalized t = 0 gradient of the true class
/// and the ground-truth shape mask, per image.
inline std::vector<double> mask_correlations(const TimeClassifier& model, const Dataset& data,
                                             std::span<const std::size_t> idx) {
  if (!data.masks) throw std::invalid_argument("mask correlation requires a dataset with masks");
  const Tensor x = data.gather(idx);
  const std::vector<int> y = data.gather_labels(idx);
  const std::vector<int> t(idx.size(), 0);
  const Tensor g = input_gradient(model, x, t, y);
  std::vector<double> out(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    Tensor gj({g.stride0()});
    std::copy_n(g.row(j).data(), gj.size(), gj.data());
    const Tensor nj = minmax_normalize(gj);
    out[j] = correlation(nj.values(), data.masks->row(idx[j]));
  }
  return out;
}

// ---- class maximization ---------------------------------------------------

struct ClassMaxResult {
  Tensor before, after;
  std::vector<int> targets;
  std::vector<double> judge_before, judge_after;  // judge probability of the target class

  double mean_gain() const {
    double s = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) s += judge_after[i] - judge_before[i];
    return targets.empty() ? 0.0 : s / static_cast<double>(targets.size());
  }
};

template <LogitModel J>
std::vector<double> target_probabilities(const J& judge, const Tensor& x, std::span<const int> targets) {
  const std::vector<int> t(x.dim(0), 0);
  const Tensor lp = log_softmax(judge.logits(x, t));
  std::vector<double> out(x.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(lp.row(i)[std::size_t(targets[i] - 1)]);
  return out;
}

/// Targeted PGD at t = 0 towards each target; the judge scores before and after.
template <LogitModel M, LogitModel J>
ClassMaxResult class_maximization(const M& model, const J& judge, const Tensor& images, std::span<const int> targets,
                                  const ThreatModel& tm) {
  const std::vector<int> t(images.dim(0), 0);
  ClassMaxResult r;
  r.before = images;
  r.targets.assign(targets.begin(), targets.end());
  r.after = pgd_targeted(model, images, t, targets, tm).x;
  r.judge_before = target_probabilities(judge, r.before, targets);
  r.judge_after = target_probabilities(judge, r.after, targets);
  return r;
}

/// Side-by-side pairs, one row per image: [c, n*h, 2*w].
inline Tensor pair_grid(const Tensor& before, const Tensor& after) {
  const std::size_t n = before.dim(0), c = before.dim(1), h = before.dim(2), w = before.dim(3);
  Tensor g({c, n * h, 2 * w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t yy = 0; yy < h; ++yy)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const std::size_t src = ((i * c + ch) * h + yy) * w + xx;
          const std::size_t dst = (ch * n * h + i * h + yy) * 2 * w + xx;
          g[dst] = std::clamp(before[src], -1.0, 1.0);
          g[dst + w] = std::clamp(after[src], -1.0, 1.0);
        }
  return g;
}

// ---- scale sweep ----------------------------------------------------------

struct SweepRow {
  double s = 0.0, fid = 0.0, precision = 0.0, recall = 0.0, class_accuracy = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  std::string csv() const {
    std::ostringstream os;
    os.precision(10);
    os << "s,fid,precision,recall,class_accuracy\n";
    for (const auto& r : rows) os << r.s << ',' << r.fid << ',' << r.precision << ',' << r.recall << ',' << r.class_accuracy << '\n';
    return os.str();
  }

  const SweepRow& best_fid() const {
    if (rows.empty()) throw std::logic_error("empty sweep");
    return *std::min_element(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.fid < b.fid; });
  }
};

/// Evaluation inputs shared by every sweep point.
struct EvalBundle {
  const TimeClassifier* extractor = nullptr;
  const TimeClassifier* judge = nullptr;
  FeatureSet real;
  int k = 3;
};

inline void check_ascending(std::span<const double> s_list) {
  if (s_list.empty()) throw std::invalid_argument("scale list is empty");
  for (std::size_t i = 1; i < s_list.size(); ++i)
    if (!(s_list[i] > s_list[i - 1])) throw std::invalid_argument("scale list must be strictly increasing");
}

/// Same seeds and labels at every scale; only s changes between rows.
template <NoisePredictor D>
SweepResult scale_sweep(const D& denoiser, const TimeClassifier* classifier, const RespacedSchedule& rs,
                        std::span<const double> s_list, const GuidanceConfig& base, std::span<const int> labels,
                        const Shape& image_shape, const EvalBundle& bundle) {
  check_ascending(s_list);
  if (!bundle.extractor || !bundle.judge) throw std::invalid_argument("sweep needs an extractor and a judge");
  SweepResult out;
  for (double s : s_list) {
    GuidanceConfig cfg = base;
    cfg.scale = s;
    const SampleResult sr = sample(denoiser, classifier, rs, cfg, labels, image_shape);
    const EvalReport e = evaluate_sets(*bundle.extractor, *bundle.judge, bundle.real, sr.images, labels, bundle.k);
    out.rows.push_back({s, e.fid, e.precision, e.recall, e.class_accuracy});
  }
  return out;
}

/// Number of adjacent pairs moving against the expected direction.
inline int count_inversions(std::span<const double> v, bool non_decreasing) {
  int n = 0;
  for (std::size_t i = 1; i < v.size(); ++i) n += non_decreasing ? v[i] < v[i - 1] : v[i] > v[i - 1];
  return n;
}

}  // namespace rgd
