#pragma once

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rgd/analysis.hpp"
#include "rgd/classifier_train.hpp"
#include "rgd/config.hpp"
#include "rgd/diffusion_train.hpp"
#include "rgd/eval.hpp"
#include "rgd/sampler.hpp"

namespace rgd::cli {

namespace fs = std::filesystem;

/// Raised for bad invocations that slip past argument parsing; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- config -> typed settings ---------------------------------------------

inline NoiseSchedule schedule_from(const ExperimentConfig& c) {
  return make_linear_schedule(static_cast<int>(c.integer("schedule.T")), c.real("schedule.beta_start"),
                              c.real("schedule.beta_end"));
}

inline NormKind parse_norm(const std::string& s) {
  if (s == "l2") return NormKind::L2;
  if (s == "linf") return NormKind::Linf;
  throw ConfigError("attack.norm must be l2 or linf, got " + s);
}

inline ThreatModel threat_from(const ExperimentConfig& c) {
  ThreatModel tm;
  tm.norm = parse_norm(c.str("attack.norm"));
  tm.eps = c.real("attack.eps");
  tm.steps = static_cast<int>(c.integer("attack.steps"));
  tm.step = c.optional_real("attack.step_size").value_or(default_step_size(tm.norm, tm.eps, tm.steps));
  tm.early_stop = c.boolean("attack.early_stop");
  tm.random_start = c.boolean("attack.random_start");
  if (tm.eps < 0.0) throw ConfigError("attack.eps must be >= 0");
  return tm;
}

inline DiffusionTrainConfig diffusion_config_from(const ExperimentConfig& c, std::uint64_t seed) {
  DiffusionTrainConfig d;
  d.iterations = c.integer("diffusion.iterations");
  d.batch = static_cast<std::size_t>(c.integer("diffusion.batch"));
  d.lr_start = c.real("diffusion.lr_start");
  d.lr_end = c.real("diffusion.lr_end");
  d.weight_decay = c.real("diffusion.weight_decay");
  d.null_prob = c.real("diffusion.null_prob");
  d.checkpoint_every = c.integer("diffusion.checkpoint_every");
  d.arch.width1 = static_cast<int>(c.integer("diffusion.width1"));
  d.arch.width2 = static_cast<int>(c.integer("diffusion.width2"));
  d.arch.width3 = static_cast<int>(c.integer("diffusion.width3"));
  d.arch.embed_dim = static_cast<int>(c.integer("diffusion.embed"));
  d.seed = seed;
  return d;
}

inline ClassifierTrainConfig classifier_config_from(const ExperimentConfig& c, ClassifierMode mode, std::uint64_t seed) {
  ClassifierTrainConfig k;
  k.mode = mode;
  k.iterations = c.integer("classifier.iterations");
  k.batch = static_cast<std::size_t>(c.integer("classifier.batch"));
  k.lr_start = c.real("classifier.lr_start");
  k.lr_end = c.real("classifier.lr_end");
  k.weight_decay = c.real("classifier.weight_decay");
  k.clean_only = c.boolean("classifier.clean_only");
  k.eval_every = c.integer("classifier.eval_every");
  k.checkpoint_every = c.integer("classifier.checkpoint_every");
  k.arch.width1 = static_cast<int>(c.integer("classifier.width1"));
  k.arch.width2 = static_cast<int>(c.integer("classifier.width2"));
  k.arch.embed_dim = static_cast<int>(c.integer("classifier.embed"));
  if (mode == ClassifierMode::Robust) k.threat = threat_from(c);
  k.seed = seed;
  return k;
}

inline GuidanceConfig guidance_from(const ExperimentConfig& c, std::uint64_t seed) {
  GuidanceConfig g;
  g.scale = c.real("guidance.scale");
  g.steps = static_cast<int>(c.integer("sample.steps"));
  g.batch = static_cast<std::size_t>(c.integer("guidance.batch"));
  g.conditional = c.boolean("guidance.conditional");
  g.seed = seed;
  return g;
}

// ---- file helpers ---------------------------------------------------------

inline TimeClassifier load_classifier(const fs::path& p) { return TimeClassifier::from_params(load_params(p)); }
inline DenoiserModel load_denoiser(const fs::path& p) { return DenoiserModel::from_params(load_params(p)); }

/// DIR/<split> when it exists, DIR otherwise.
inline fs::path split_dir(const fs::path& dir, const std::string& split) {
  return fs::exists(dir / split / "images.idx") ? dir / split : dir;
}

inline fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out.replace_extension();
  out += suffix;
  return out;
}

inline void write_text(const fs::path& p, const std::string& s) { write_file_atomic(p, s); }

inline std::string json_text(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

/// Tiles [n, c, h, w] into a [c, rows*h, cols*w] image.
inline Tensor tile(const Tensor& x, std::size_t cols) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  cols = std::max<std::size_t>(1, std::min(cols, n));
  const std::size_t rows = (n + cols - 1) / cols;
  Tensor g({c, rows * h, cols * w}, -1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t yy = 0; yy < h; ++yy)
        for (std::size_t xx = 0; xx < w; ++xx)
          g[(ch * rows * h + (i / cols) * h + yy) * cols * w + (i % cols) * w + xx] = x[((i * c + ch) * h + yy) * w + xx];
  return g;
}

inline Tensor first_n(const Tensor& x, std::size_t n) {
  n = std::min(n, x.dim(0));
  Shape s = x.shape();
  s[0] = n;
  Tensor out(s);
  std::copy_n(x.data(), out.size(), out.data());
  return out;
}

inline std::string sample_name(std::size_t i) {
  std::ostringstream os;
  os << "sample_" << std::setw(5) << std::setfill('0') << i << ".pgm";
  return os.str();
}

// ---- options --------------------------------------------------------------

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::string mode = "vanilla";
  std::string data, out, log;
  std::string denoiser, classifier, extractor, judge, guide;
  std::string real, gen;
  std::string label = "all";
  std::optional<double> scale;
  std::optional<int> steps, count, k;
  int trace = 0;
  int t = 0;
  std::string shift = "constant";
  double coef = 1.0;
  std::string scales, timesteps;
  std::string report;
};

struct Context {
  ExperimentConfig cfg;
  const Options& o;
  std::ostream& out;
  std::ostream& err;
};

// ---- commands -------------------------------------------------------------

inline void cmd_gen_data(Context& c) {
  const int size = static_cast<int>(c.cfg.integer("data.size"));
  const auto train = generate_shapes_toy(static_cast<std::size_t>(c.cfg.integer("data.per_class")), size,
                                         RngStream(c.o.seed, 1), "train");
  const auto val = generate_shapes_toy(static_cast<std::size_t>(c.cfg.integer("data.val_per_class")), size,
                                       RngStream(c.o.seed, 2), "val");
  save_dataset(train, fs::path(c.o.out) / "train");
  save_dataset(val, fs::path(c.o.out) / "val");
  write_image(tile(first_n(train.images, 32), 8), fs::path(c.o.out) / "preview.pgm");
  c.out << "wrote " << train.size() << " train and " << val.size() << " val images to " << c.o.out << "\n";
}

inline void cmd_train_diffusion(Context& c) {
  const Dataset data = load_image_dir(split_dir(c.o.data, "train"));
  const NoiseSchedule s = schedule_from(c.cfg);
  const DiffusionTrainConfig dc = diffusion_config_from(c.cfg, c.o.seed);
  const fs::path out = c.o.out;
  const auto res = train_diffusion(dc, data, s, [&](long it, const DenoiserModel& m) {
    save_params(m.params(), it == dc.iterations ? out : with_suffix(out, ".iter" + std::to_string(it) + ".ckpt"));
  });
  write_text(c.o.log.empty() ? with_suffix(out, ".log.csv") : fs::path(c.o.log), training_log_csv(res.log, false));
  c.out << "final loss " << res.log.back().loss << "; null-label fraction "
        << static_cast<double>(res.null_samples) / static_cast<double>(res.total_samples) << "\n";
}

inline void cmd_train_classifier(Context& c) {
  if (c.o.mode != "vanilla" && c.o.mode != "robust") throw UsageError("--mode must be vanilla or robust");
  const ClassifierMode mode = c.o.mode == "robust" ? ClassifierMode::Robust : ClassifierMode::Vanilla;
  const Dataset data = load_image_dir(split_dir(c.o.data, "train"));
  std::optional<Dataset> val;
  if (fs::exists(fs::path(c.o.data) / "val" / "images.idx")) val = load_image_dir(fs::path(c.o.data) / "val");
  const NoiseSchedule s = schedule_from(c.cfg);
  const ClassifierTrainConfig kc = classifier_config_from(c.cfg, mode, c.o.seed);
  const fs::path out = c.o.out;
  const auto res = train_classifier(kc, data, s, val ? &*val : nullptr, [&](long it, const TimeClassifier& m) {
    save_params(m.params(), it == kc.iterations ? out : with_suffix(out, ".iter" + std::to_string(it) + ".ckpt"));
  });
  write_text(c.o.log.empty() ? with_suffix(out, ".log.csv") : fs::path(c.o.log),
             training_log_csv(res.log, mode == ClassifierMode::Robust));
  if (!res.evals.empty()) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& e : res.evals) {
      nlohmann::ordered_json row = {{"iteration", e.iteration}};
      for (const auto& [t, acc] : e.accuracy) row["accuracy_t" + std::to_string(t)] = acc;
      j.push_back(row);
    }
    write_text(with_suffix(out, ".eval.json"), json_text(j));
    const auto& last = res.evals.back();
    for (const auto& [t, acc] : last.accuracy) c.out << "val accuracy t=" << t << ": " << acc << "\n";
  }
  c.out << "final loss " << res.log.back().loss << "\n";
}

inline std::vector<int> requested_labels(const std::string& label, std::size_t count, int classes) {
  if (label == "all") return cycle_labels(count, classes);
  int y = 0;
  try {
    std::size_t used = 0;
    y = std::stoi(label, &used);
    if (used != label.size()) throw std::invalid_argument(label);
  } catch (const std::exception&) {
    throw UsageError("--label must be an integer class or 'all'");
  }
  if (y < 1 || y > classes) throw UsageError("--label outside 1.." + std::to_string(classes));
  return std::vector<int>(count, y);
}

inline void cmd_sample(Context& c) {
  const DenoiserModel den = load_denoiser(c.o.denoiser);
  std::optional<TimeClassifier> clf;
  if (!c.o.classifier.empty()) clf = load_classifier(c.o.classifier);
  GuidanceConfig g = guidance_from(c.cfg, c.o.seed);
  if (c.o.scale) g.scale = *c.o.scale;
  if (c.o.steps) g.steps = *c.o.steps;
  if (g.scale > 0.0 && !clf) throw UsageError("--scale > 0 needs --classifier");
  g.trace_points = static_cast<std::size_t>(std::max(0, c.o.trace));
  const std::size_t count = static_cast<std::size_t>(c.o.count.value_or(static_cast<int>(c.cfg.integer("eval.count"))));
  const auto& a = den.arch();
  const auto labels = requested_labels(c.o.label, count, a.classes);
  const NoiseSchedule s = schedule_from(c.cfg);
  if (s.T != a.timesteps) throw ConfigError("schedule.T does not match the denoiser checkpoint");
  const RespacedSchedule rs = respace(s, g.steps);
  const SampleResult r = sample(den, clf ? &*clf : nullptr, rs, g, labels,
                                {std::size_t(a.image.channels), std::size_t(a.image.height), std::size_t(a.image.width)});
  const fs::path out = c.o.out;
  write_file_atomic(out / "images.idx", encode_idx_images(r.images));
  write_file_atomic(out / "labels.idx", encode_idx_labels(labels));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Tensor img({r.images.dim(1), r.images.dim(2), r.images.dim(3)});
    std::copy_n(r.images.row(i).data(), img.size(), img.data());
    write_image(img, out / sample_name(i));
  }
  write_image(tile(first_n(r.images, 64), 8), out / "grid.pgm");
  for (std::size_t k = 0; k < r.trace.size(); ++k) {
    std::ostringstream name;
    name << "step" << std::setw(3) << std::setfill('0') << k << "_t" << r.trace_timesteps[k] << ".pgm";
    write_image(tile(first_n(r.trace[k], 64), 8), out / "trace" / name.str());
  }
  c.out << "wrote " << labels.size() << " samples (s=" << g.scale << ", steps=" << g.steps << ") to " << c.o.out << "\n";
}

inline int eval_k(const Context& c) { return c.o.k.value_or(static_cast<int>(c.cfg.integer("eval.k"))); }

inline void cmd_evaluate(Context& c) {
  const TimeClassifier extractor = load_classifier(c.o.extractor);
  const TimeClassifier judge = load_classifier(c.o.judge);
  if (!c.o.guide.empty())
    require_distinct_models(params_id(load_params(c.o.guide)), params_id(extractor.params()), params_id(judge.params()));
  const Dataset real = load_image_dir(split_dir(c.o.real, "val"));
  const Dataset gen = load_image_dir(c.o.gen);
  const FeatureSet rf = extract_features(extractor, real.images, "real");
  const EvalReport r = evaluate_sets(extractor, judge, rf, gen.images, gen.labels, eval_k(c));
  const std::string text = json_text(r.to_json());
  if (!c.o.out.empty()) write_text(c.o.out, text);
  c.out << text;
}

inline std::vector<double> parse_reals(const std::string& list, const std::string& what) {
  ExperimentConfig tmp;
  tmp.set(what + "=" + list);
  return tmp.reals(what);
}

inline void cmd_sweep(Context& c) {
  const DenoiserModel den = load_denoiser(c.o.denoiser);
  const TimeClassifier guide = load_classifier(c.o.classifier);
  const TimeClassifier extractor = load_classifier(c.o.extractor);
  const TimeClassifier judge = load_classifier(c.o.judge);
  require_distinct_models(params_id(guide.params()), params_id(extractor.params()), params_id(judge.params()));
  const std::vector<double> scales =
      c.o.scales.empty() ? c.cfg.reals("sweep.scales") : parse_reals(c.o.scales, "--scales");
  GuidanceConfig g = guidance_from(c.cfg, c.o.seed);
  if (c.o.steps) g.steps = *c.o.steps;
  const std::size_t count = static_cast<std::size_t>(c.o.count.value_or(static_cast<int>(c.cfg.integer("eval.count"))));
  const auto& a = den.arch();
  const NoiseSchedule s = schedule_from(c.cfg);
  if (s.T != a.timesteps) throw ConfigError("schedule.T does not match the denoiser checkpoint");
  const Dataset real = load_image_dir(split_dir(c.o.real, "val"));
  EvalBundle bundle{&extractor, &judge, extract_features(extractor, real.images, "real"), eval_k(c)};
  const SweepResult r = scale_sweep(den, &guide, respace(s, g.steps), scales, g, cycle_labels(count, a.classes),
                                    {std::size_t(a.image.channels), std::size_t(a.image.height), std::size_t(a.image.width)},
                                    bundle);
  if (!c.o.out.empty()) write_text(c.o.out, r.csv());
  c.out << r.csv();
}

/// First `count` images taking classes in turn.
inline std::vector<std::size_t> pick_images(const Dataset& d, std::size_t count) {
  const std::size_t per = (count + std::size_t(d.classes) - 1) / std::size_t(d.classes);
  const auto by_class = d.balanced_indices(per);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < per && out.size() < count; ++j)
    for (int k = 0; k < d.classes && out.size() < count; ++k)
      if (std::size_t(k) * per + j < by_class.size()) out.push_back(by_class[std::size_t(k) * per + j]);
  return out;
}

inline void cmd_gradviz(Context& c) {
  const TimeClassifier model = load_classifier(c.o.classifier);
  const Dataset data = load_image_dir(split_dir(c.o.data, "val"));
  const NoiseSchedule s = schedule_from(c.cfg);
  const std::vector<int> ts =
      c.o.timesteps.empty() ? c.cfg.integers("gradviz.timesteps") : [&] {
        std::vector<int> v;
        for (double x : parse_reals(c.o.timesteps, "--timesteps")) v.push_back(static_cast<int>(x));
        return v;
      }();
  const auto idx = pick_images(data, static_cast<std::size_t>(c.o.count.value_or(8)));
  const GradientGrid g = gradient_viz(model, s, data.gather(idx), data.gather_labels(idx), ts, c.o.seed);
  write_image(g.grid, c.o.out, PixelRange::Unit);
  nlohmann::ordered_json rep = {{"images", idx.size()}, {"timesteps", ts}};
  if (data.masks) {
    const auto corr = mask_correlations(model, data, idx);
    rep["mask_correlation_t0"] = corr;
    double mean = 0.0;
    for (double v : corr) mean += v;
    rep["mean_mask_correlation_t0"] = mean / static_cast<double>(corr.size());
  }
  if (!c.o.report.empty()) write_text(c.o.report, json_text(rep));
  c.out << json_text(rep);
}

inline void cmd_classmax(Context& c) {
  const TimeClassifier model = load_classifier(c.o.classifier);
  const TimeClassifier judge = load_classifier(c.o.judge);
  require_distinct_models(params_id(model.params()), params_id(judge.params()), params_id(judge.params()));
  const Dataset data = load_image_dir(split_dir(c.o.data, "val"));
  const auto idx = pick_images(data, static_cast<std::size_t>(c.o.count.value_or(8)));
  std::vector<int> targets;
  for (int y : data.gather_labels(idx)) targets.push_back(y % data.classes + 1);
  ThreatModel tm;
  tm.norm = NormKind::L2;
  tm.eps = c.cfg.real("classmax.eps");
  tm.steps = static_cast<int>(c.cfg.integer("classmax.steps"));
  tm.step = step_size_rule(tm.eps, tm.steps);
  tm.early_stop = false;
  const ClassMaxResult r = class_maximization(model, judge, data.gather(idx), targets, tm);
  const fs::path out = c.o.out;
  write_image(pair_grid(r.before, r.after), out / "pairs.pgm");
  nlohmann::ordered_json rep = {{"targets", r.targets},
                                {"judge_before", r.judge_before},
                                {"judge_after", r.judge_after},
                                {"mean_gain", r.mean_gain()}};
  write_text(out / "report.json", json_text(rep));
  c.out << json_text(rep);
}

inline void cmd_logit_shift(Context& c) {
  const TimeClassifier model = load_classifier(c.o.classifier);
  const auto& a = model.arch();
  const std::size_t n = static_cast<std::size_t>(c.o.count.value_or(16));
  const Shape shape{n, std::size_t(a.image.channels), std::size_t(a.image.height), std::size_t(a.image.width)};
  RngStream rng(c.o.seed, 0x51F7);
  Tensor x = gaussian(rng, shape);
  LogitShiftSpec spec;
  spec.kind = parse_shift_kind(c.o.shift);
  spec.c = c.o.coef;
  spec.b = c.o.coef;
  if (spec.kind == ShiftKind::Linear) spec.a = c.o.coef * gaussian(rng, {x.stride0()});
  const auto labels = cycle_labels(n, a.classes);
  const LogitShiftReport r = logit_shift_demo(model, spec, x, labels, c.o.t);
  nlohmann::ordered_json j = r.to_json();
  j["shift"] = c.o.shift;
  j["coef"] = c.o.coef;
  j["t"] = c.o.t;
  j["count"] = n;
  const std::string text = json_text(j);
  if (!c.o.out.empty()) write_text(c.o.out, text);
  c.out << text;
}

// ---- entry point -----------------------------------------------------------

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options o;
  CLI::App app{"Classifier-guided diffusion with robust time-dependent classifiers", "rgd"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", o.config, "config file (key = value)");
  app.add_option("--set", o.sets, "override a config key, key=value (repeatable)")->expected(1)->take_all();

  auto seed = [&](CLI::App* s) { s->add_option("--seed", o.seed, "RNG seed")->required(); };

  auto* gen = app.add_subcommand("gen-data", "generate the ShapesToy train/val splits");
  seed(gen);
  gen->add_option("--out", o.out, "output directory")->required();

  auto* td = app.add_subcommand("train-diffusion", "train the conditional denoiser");
  seed(td);
  td->add_option("--data", o.data, "dataset directory")->required();
  td->add_option("--out", o.out, "checkpoint path")->required();
  td->add_option("--log", o.log, "training log CSV");

  auto* tc = app.add_subcommand("train-classifier", "train a time-dependent classifier");
  seed(tc);
  tc->add_option("--mode", o.mode, "vanilla or robust")->check(CLI::IsMember({"vanilla", "robust"}));
  tc->add_option("--data", o.data, "dataset directory")->required();
  tc->add_option("--out", o.out, "checkpoint path")->required();
  tc->add_option("--log", o.log, "training log CSV");

  auto* sa = app.add_subcommand("sample", "draw samples, optionally classifier guided");
  seed(sa);
  sa->add_option("--denoiser", o.denoiser, "denoiser checkpoint")->required();
  sa->add_option("--classifier", o.classifier, "guidance classifier checkpoint");
  sa->add_option("--label", o.label, "class 1..C or 'all'");
  sa->add_option("--scale", o.scale, "guidance scale");
  sa->add_option("--steps", o.steps, "respaced sampling steps");
  sa->add_option("--count", o.count, "number of samples");
  sa->add_option("--trace", o.trace, "number of x0-estimate snapshots");
  sa->add_option("--out", o.out, "output directory")->required();

  auto* ev = app.add_subcommand("evaluate", "FID / precision / recall / class accuracy");
  ev->add_option("--real", o.real, "real image directory")->required();
  ev->add_option("--gen", o.gen, "generated image directory")->required();
  ev->add_option("--extractor", o.extractor, "feature extractor checkpoint")->required();
  ev->add_option("--judge", o.judge, "judge classifier checkpoint")->required();
  ev->add_option("--guide", o.guide, "guidance classifier (checked to differ)");
  ev->add_option("--k", o.k, "nearest neighbour for precision/recall");
  ev->add_option("--out", o.out, "report JSON path");

  auto* gv = app.add_subcommand("gradviz", "input-gradient grids");
  seed(gv);
  gv->add_option("--classifier", o.classifier, "classifier checkpoint")->required();
  gv->add_option("--data", o.data, "dataset directory")->required();
  gv->add_option("--count", o.count, "number of images");
  gv->add_option("--timesteps", o.timesteps, "comma separated timesteps");
  gv->add_option("--out", o.out, "grid image path")->required();
  gv->add_option("--report", o.report, "JSON report path");

  auto* cm = app.add_subcommand("classmax", "targeted large-radius PGD at t = 0");
  cm->add_option("--classifier", o.classifier, "classifier checkpoint")->required();
  cm->add_option("--judge", o.judge, "judge classifier checkpoint")->required();
  cm->add_option("--data", o.data, "dataset directory")->required();
  cm->add_option("--count", o.count, "number of images");
  cm->add_option("--out", o.out, "output directory")->required();

  auto* ls = app.add_subcommand("logit-shift-demo", "logit shift invariance report");
  seed(ls);
  ls->add_option("--classifier", o.classifier, "classifier checkpoint")->required();
  ls->add_option("--g", o.shift, "constant, linear or radial")->check(CLI::IsMember({"constant", "linear", "radial"}));
  ls->add_option("--coef", o.coef, "shift coefficient");
  ls->add_option("--t", o.t, "timestep");
  ls->add_option("--count", o.count, "batch size");
  ls->add_option("--out", o.out, "report JSON path");

  auto* sw = app.add_subcommand("sweep", "guidance-scale sweep");
  seed(sw);
  sw->add_option("--denoiser", o.denoiser, "denoiser checkpoint")->required();
  sw->add_option("--classifier", o.classifier, "guidance classifier checkpoint")->required();
  sw->add_option("--extractor", o.extractor, "feature extractor checkpoint")->required();
  sw->add_option("--judge", o.judge, "judge classifier checkpoint")->required();
  sw->add_option("--real", o.real, "real image directory")->required();
  sw->add_option("--scales", o.scales, "comma separated scales");
  sw->add_option("--steps", o.steps, "respaced sampling steps");
  sw->add_option("--count", o.count, "samples per scale");
  sw->add_option("--k", o.k, "nearest neighbour for precision/recall");
  sw->add_option("--out", o.out, "CSV path");

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  const bool stochastic = !ev->parsed() && !cm->parsed();
  try {
    ExperimentConfig cfg;
    if (!o.config.empty()) cfg = ExperimentConfig::load(o.config);
    for (const auto& s : o.sets) cfg.set(s);
    cfg.warn_unknown(err);
    Context ctx{std::move(cfg), o, out, err};
    out << "# resolved config\n" << ctx.cfg.dump();
    if (stochastic) out << "# seed = " << o.seed << "\n";
    if (gen->parsed()) cmd_gen_data(ctx);
    else if (td->parsed()) cmd_train_diffusion(ctx);
    else if (tc->parsed()) cmd_train_classifier(ctx);
    else if (sa->parsed()) cmd_sample(ctx);
    else if (ev->parsed()) cmd_evaluate(ctx);
    else if (gv->parsed()) cmd_gradviz(ctx);
    else if (cm->parsed()) cmd_classmax(ctx);
    else if (ls->parsed()) cmd_logit_shift(ctx);
    else if (sw->parsed()) cmd_sweep(ctx);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace rgd::cli
