#pragma once

#include <concepts>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rgd/layers.hpp"
#include "rgd/parallel.hpp"

namespace rgd {

/// Class labels are 1..C; the denoiser reserves 0 for its unconditional slot.
inline constexpr int kNullLabel = 0;
inline constexpr std::size_t kShardSize = 8;

struct LogitsAndGrad {
  Tensor logits;      // [N x C]
  Tensor input_grad;  // shape of x
};

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  // d loss / d model output
};

/// Maps a batch of model outputs to the upstream gradient for a vector-Jacobian product.
using OutputSeed = std::function<Tensor(const Tensor&)>;
using LossFn = std::function<LossAndGrad(const Tensor&)>;

/// Anything that scores a batch x [N, C, H, W] at timesteps t and can pull gradients back to x.
template <class M>
concept LogitModel = requires(const M& m, const Tensor& x, std::span<const int> t, const OutputSeed& seed) {
  { m.num_classes() } -> std::convertible_to<int>;
  { m.logits(x, t) } -> std::same_as<Tensor>;
  { m.logits_vjp(x, t, seed) } -> std::same_as<LogitsAndGrad>;
};

template <class M>
concept NoisePredictor = requires(const M& m, const Tensor& x, std::span<const int> t, std::span<const int> y) {
  { m.predict(x, t, y) } -> std::same_as<Tensor>;
};

// ---------------------------------------------------------------------------
// Architecture descriptors: "kind=classifier;channels=1;..." key/value strings.

inline std::map<std::string, std::string> parse_descriptor(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("bad architecture descriptor entry: " + item);
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  return kv;
}

inline int descriptor_int(const std::map<std::string, std::string>& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw std::invalid_argument("architecture descriptor missing '" + key + "'");
  return std::stoi(it->second);
}

struct ImageGeometry {
  int channels = 1, height = 16, width = 16;
  Shape shape() const { return {std::size_t(channels), std::size_t(height), std::size_t(width)}; }
  std::size_t pixels() const { return std::size_t(channels) * height * width; }
  bool operator==(const ImageGeometry&) const = default;
};

inline void check_batch(const Tensor& x, std::span<const int> t, const ImageGeometry& g, int timesteps,
                        const char* who) {
  if (x.rank() != 4 || x.dim(1) != std::size_t(g.channels) || x.dim(2) != std::size_t(g.height) ||
      x.dim(3) != std::size_t(g.width))
    throw std::invalid_argument(std::string(who) + ": input shape " + shape_string(x.shape()) +
                                " does not match image [N," + std::to_string(g.channels) + "," +
                                std::to_string(g.height) + "," + std::to_string(g.width) + "]");
  if (t.size() != x.dim(0)) throw std::invalid_argument(std::string(who) + ": one timestep per sample required");
  for (int ti : t)
    if (ti < 0 || ti > timesteps)
      throw std::out_of_range(std::string(who) + ": timestep " + std::to_string(ti) + " outside [0, " +
                              std::to_string(timesteps) + "]");
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy.

inline Vec log_softmax(const Eigen::Ref<const Vec>& z) {
  const double m = z.maxCoeff();
  const double lse = m + std::log((z.array() - m).exp().sum());
  return z.array() - lse;
}

inline Tensor log_softmax(const Tensor& logits) {
  Tensor out = logits;
  const auto c = static_cast<Eigen::Index>(logits.dim(1));
  for (std::size_t i = 0; i < logits.dim(0); ++i)
    VecMap(out.row(i).data(), c) = log_softmax(ConstVecMap(logits.row(i).data(), c));
  return out;
}

inline void check_labels(std::span<const int> labels, std::size_t n, int classes) {
  if (labels.size() != n) throw std::invalid_argument("label count does not match batch");
  for (int y : labels)
    if (y < 1 || y > classes)
      throw std::out_of_range("label " + std::to_string(y) + " outside 1.." + std::to_string(classes));
}

/// Mean over the batch of -log softmax(z)_y, with its gradient w.r.t. the logits.
inline LossAndGrad ce_loss_and_grad(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0);
  const auto c = static_cast<Eigen::Index>(logits.dim(1));
  check_labels(labels, n, static_cast<int>(c));
  LossAndGrad out{0.0, Tensor::like(logits)};
  for (std::size_t i = 0; i < n; ++i) {
    const Vec lp = log_softmax(ConstVecMap(logits.row(i).data(), c));
    out.loss -= lp[labels[i] - 1];
    VecMap g(out.grad.row(i).data(), c);
    g = lp.array().exp() / static_cast<double>(n);
    g[labels[i] - 1] -= 1.0 / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);
  return out;
}

inline double ce_loss(const Tensor& logits, std::span<const int> labels) {
  return ce_loss_and_grad(logits, labels).loss;
}

inline std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto r = logits.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()) + 1;
  }
  return out;
}

/// Seed for d/dx log p(y|x): onehot(y) - softmax(z), per row.
inline OutputSeed log_prob_seed(std::vector<int> labels) {
  return [labels = std::move(labels)](const Tensor& logits) {
    const auto c = static_cast<Eigen::Index>(logits.dim(1));
    check_labels(labels, logits.dim(0), static_cast<int>(c));
    Tensor g = Tensor::like(logits);
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
      VecMap gi(g.row(i).data(), c);
      gi = -log_softmax(ConstVecMap(logits.row(i).data(), c)).array().exp();
      gi[labels[i] - 1] += 1.0;
    }
    return g;
  };
}

/// Seed selecting one raw logit per row.
inline OutputSeed logit_seed(std::vector<int> labels) {
  return [labels = std::move(labels)](const Tensor& logits) {
    check_labels(labels, logits.dim(0), static_cast<int>(logits.dim(1)));
    Tensor g = Tensor::like(logits);
    for (std::size_t i = 0; i < logits.dim(0); ++i) g.row(i)[labels[i] - 1] = 1.0;
    return g;
  };
}

/// Gradient of log p(y | x_t, t) with respect to x_t.
template <LogitModel M>
Tensor input_gradient(const M& model, const Tensor& x, std::span<const int> t, std::span<const int> y) {
  return model.logits_vjp(x, t, log_prob_seed({y.begin(), y.end()})).input_grad;
}

inline Mat sample_mat(const Tensor& x, std::size_t i, int channels) {
  return ConstMatMap(x.row(i).data(), channels, static_cast<Eigen::Index>(x.stride0()) / channels);
}

// ---------------------------------------------------------------------------

struct ClassifierArch {
  ImageGeometry image;
  int classes = 4;
  int width1 = 32, width2 = 64;
  int embed_dim = 32;
  int timesteps = 1000;

  std::string descriptor() const {
    std::ostringstream os;
    os << "kind=classifier;channels=" << image.channels << ";height=" << image.height << ";width=" << image.width
       << ";classes=" << classes << ";width1=" << width1 << ";width2=" << width2 << ";embed=" << embed_dim
       << ";timesteps=" << timesteps;
    return os.str();
  }

  static ClassifierArch parse(const std::string& text) {
    const auto kv = parse_descriptor(text);
    if (kv.count("kind") == 0 || kv.at("kind") != "classifier")
      throw std::invalid_argument("descriptor is not a classifier: " + text);
    ClassifierArch a;
    a.image = {descriptor_int(kv, "channels"), descriptor_int(kv, "height"), descriptor_int(kv, "width")};
    a.classes = descriptor_int(kv, "classes");
    a.width1 = descriptor_int(kv, "width1");
    a.width2 = descriptor_int(kv, "width2");
    a.embed_dim = descriptor_int(kv, "embed");
    a.timesteps = descriptor_int(kv, "timesteps");
    return a;
  }
};

/// Time-dependent classifier h(x_t, t): two stride-2 conv blocks, global average pool,
/// linear head. The timestep enters as a projected sinusoidal embedding added to the
/// first hidden pre-activation.
class TimeClassifier {
 public:
  struct Tape {
    Vec embed;
    Mat cols1, pre1, cols2, pre2;
    Vec pooled;
  };

  TimeClassifier(const ClassifierArch& arch, std::uint64_t seed) : arch_(arch) {
    build();
    RngStream rng(seed, 0xC1A55);
    init_fan_in(params_, time_.weight, arch_.embed_dim, 1.0, rng);
    init_fan_in(params_, conv1_.weight, conv1_.fan_in(), std::sqrt(2.0), rng);
    init_fan_in(params_, conv2_.weight, conv2_.fan_in(), std::sqrt(2.0), rng);
    init_fan_in(params_, head_.weight, arch_.width2, 1.0, rng);
  }

  /// Rebuilds from stored parameters; names and shapes must match the descriptor.
  static TimeClassifier from_params(ModelParams stored) {
    TimeClassifier m(ClassifierArch::parse(stored.descriptor));
    m.adopt(std::move(stored));
    return m;
  }

  const ClassifierArch& arch() const { return arch_; }
  int num_classes() const { return arch_.classes; }
  int feature_dim() const { return arch_.width2; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  Tensor forward(const Tensor& x, std::span<const int> t, std::vector<Tape>* tapes = nullptr) const {
    check_batch(x, t, arch_.image, arch_.timesteps, "classifier");
    const std::size_t n = x.dim(0);
    Tensor logits({n, std::size_t(arch_.classes)});
    if (tapes) tapes->assign(n, {});
    for_each_shard(n, kShardSize, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        Tape local;
        Tape& tape = tapes ? (*tapes)[i] : local;
        VecMap(logits.row(i).data(), arch_.classes) = head_.forward(params_, trunk(x, i, t[i], tape));
      }
    });
    return logits;
  }

  Tensor logits(const Tensor& x, std::span<const int> t) const { return forward(x, t); }

  /// Pulls d(loss)/d(logits) back through the recorded tapes. Parameter gradients are
  /// accumulated per fixed shard and reduced in shard order.
  Tensor backward(const std::vector<Tape>& tapes, const Tensor& dlogits, ParamGrads* grads, bool want_input) const {
    const std::size_t n = tapes.size();
    Tensor dx = want_input ? Tensor({n, std::size_t(arch_.image.channels), std::size_t(arch_.image.height),
                                     std::size_t(arch_.image.width)})
                           : Tensor();
    std::vector<ParamGrads> partial(grads ? shard_count(n, kShardSize) : 0);
    for_each_shard(n, kShardSize, [&](std::size_t s, std::size_t b, std::size_t e) {
      ParamGrads* g = nullptr;
      if (grads) {
        partial[s] = ParamGrads::zeros_like(params_);
        g = &partial[s];
      }
      for (std::size_t i = b; i < e; ++i) {
        const Mat d = backward_sample(tapes[i], ConstVecMap(dlogits.row(i).data(), arch_.classes), g, want_input);
        if (want_input) std::copy(d.data(), d.data() + d.size(), dx.row(i).data());
      }
    });
    for (const auto& p : partial) grads->add(p);
    return dx;
  }

  LogitsAndGrad logits_vjp(const Tensor& x, std::span<const int> t, const OutputSeed& seed) const {
    std::vector<Tape> tapes;
    LogitsAndGrad out;
    out.logits = forward(x, t, &tapes);
    out.input_grad = backward(tapes, seed(out.logits), nullptr, true);
    return out;
  }

  /// Loss value and exact parameter gradients for a scalar loss of the logits.
  std::pair<double, ParamGrads> param_gradient(const Tensor& x, std::span<const int> t, const LossFn& loss) const {
    std::vector<Tape> tapes;
    const Tensor z = forward(x, t, &tapes);
    const LossAndGrad lg = loss(z);
    ParamGrads grads = ParamGrads::zeros_like(params_);
    backward(tapes, lg.grad, &grads, false);
    return {lg.loss, std::move(grads)};
  }

  /// Pooled penultimate activations at t = 0, [N x feature_dim].
  Tensor features(const Tensor& x) const {
    const std::vector<int> t(x.rank() ? x.dim(0) : 0, 0);
    check_batch(x, t, arch_.image, arch_.timesteps, "classifier features");
    Tensor out({x.dim(0), std::size_t(arch_.width2)});
    for_each_shard(x.dim(0), kShardSize, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        Tape tape;
        VecMap(out.row(i).data(), arch_.width2) = trunk(x, i, 0, tape);
      }
    });
    return out;
  }

 private:
  explicit TimeClassifier(const ClassifierArch& arch) : arch_(arch) { build(); }

  void build() {
    params_ = {};
    params_.descriptor = arch_.descriptor();
    time_ = Linear::create(params_, "time_proj", arch_.embed_dim, arch_.width1);
    conv1_ = Conv2d::create(params_, "conv1", arch_.image.channels, arch_.width1, 2);
    conv2_ = Conv2d::create(params_, "conv2", arch_.width1, arch_.width2, 2);
    head_ = Linear::create(params_, "head", arch_.width2, arch_.classes);
    e0_ = {arch_.image.height, arch_.image.width};
    e1_ = conv1_.output_extent(e0_);
  }

  void adopt(ModelParams stored) {
    if (stored.tensors.size() != params_.tensors.size())
      throw std::invalid_argument("classifier checkpoint has wrong tensor count");
    for (std::size_t i = 0; i < stored.tensors.size(); ++i)
      if (stored.tensors[i].name != params_.tensors[i].name ||
          stored.tensors[i].value.shape() != params_.tensors[i].value.shape())
        throw std::invalid_argument("classifier checkpoint tensor mismatch at " + stored.tensors[i].name);
    params_ = std::move(stored);
  }

  Vec trunk(const Tensor& x, std::size_t i, int t, Tape& tape) const {
    tape.embed = timestep_embedding(t, arch_.embed_dim);
    const Vec tp = time_.forward(params_, tape.embed);
    tape.pre1 = conv1_.forward(params_, sample_mat(x, i, arch_.image.channels), e0_, tape.cols1);
    tape.pre1.colwise() += tp;
    tape.pre2 = conv2_.forward(params_, silu(tape.pre1), e1_, tape.cols2);
    tape.pooled = silu(tape.pre2).rowwise().mean();
    return tape.pooled;
  }

  Mat backward_sample(const Tape& tape, const Vec& dz, ParamGrads* g, bool want_input) const {
    const Vec dpool = head_.backward(params_, tape.pooled, dz, g);
    Mat d2 = dpool.replicate(1, tape.pre2.cols()) / static_cast<double>(tape.pre2.cols());
    silu_backward(tape.pre2, d2);
    Mat d1 = conv2_.backward(params_, d2, tape.cols2, e1_, g, true);
    silu_backward(tape.pre1, d1);
    time_.backward(params_, tape.embed, d1.rowwise().sum(), g);
    return conv1_.backward(params_, d1, tape.cols1, e0_, g, want_input);
  }

  ClassifierArch arch_;
  ModelParams params_;
  Linear time_, head_;
  Conv2d conv1_, conv2_;
  Extent e0_, e1_;
};

// ---------------------------------------------------------------------------

struct DenoiserArch {
  ImageGeometry image;
  int classes = 4;
  int width1 = 16, width2 = 32, width3 = 32;
  int embed_dim = 32;
  int timesteps = 1000;

  std::string descriptor() const {
    std::ostringstream os;
    os << "kind=denoiser;channels=" << image.channels << ";height=" << image.height << ";width=" << image.width
       << ";classes=" << classes << ";width1=" << width1 << ";width2=" << width2 << ";width3=" << width3
       << ";embed=" << embed_dim << ";timesteps=" << timesteps;
    return os.str();
  }

  static DenoiserArch parse(const std::string& text) {
    const auto kv = parse_descriptor(text);
    if (kv.count("kind") == 0 || kv.at("kind") != "denoiser")
      throw std::invalid_argument("descriptor is not a denoiser: " + text);
    DenoiserArch a;
    a.image = {descriptor_int(kv, "channels"), descriptor_int(kv, "height"), descriptor_int(kv, "width")};
    a.classes = descriptor_int(kv, "classes");
    a.width1 = descriptor_int(kv, "width1");
    a.width2 = descriptor_int(kv, "width2");
    a.width3 = descriptor_int(kv, "width3");
    a.embed_dim = descriptor_int(kv, "embed");
    a.timesteps = descriptor_int(kv, "timesteps");
    return a;
  }
};

/// Class-conditional noise predictor eps(x_t, t, y): three-level encoder/decoder with skip
/// connections. Time and label embeddings are summed into the first hidden pre-activation;
/// label row 0 is the unconditional slot.
class DenoiserModel {
 public:
  struct Tape {
    int label = 0;
    Vec embed;
    Mat cols_in, pre1, cols_d1, pre2, cols_d2, pre3, cols_u2, pre4, cols_u1, pre5, cols_out;
  };

  DenoiserModel(const DenoiserArch& arch, std::uint64_t seed) : arch_(arch) {
    if (arch_.image.height % 4 || arch_.image.width % 4)
      throw std::invalid_argument("denoiser image size must be divisible by 4");
    build();
    RngStream rng(seed, 0xDE015E);
    init_fan_in(params_, time_.weight, arch_.embed_dim, 1.0, rng);
    init_fan_in(params_, label_embed_, 1, 1.0, rng);
    const double relu_gain = std::sqrt(2.0);
    for (const Conv2d* c : {&conv_in_, &down1_, &down2_, &up2_, &up1_})
      init_fan_in(params_, c->weight, c->fan_in(), relu_gain, rng);
    init_fan_in(params_, conv_out_.weight, conv_out_.fan_in(), 1.0, rng);
  }

  static DenoiserModel from_params(ModelParams stored) {
    DenoiserModel m(DenoiserArch::parse(stored.descriptor));
    if (stored.tensors.size() != m.params_.tensors.size())
      throw std::invalid_argument("denoiser checkpoint has wrong tensor count");
    for (std::size_t i = 0; i < stored.tensors.size(); ++i)
      if (stored.tensors[i].name != m.params_.tensors[i].name ||
          stored.tensors[i].value.shape() != m.params_.tensors[i].value.shape())
        throw std::invalid_argument("denoiser checkpoint tensor mismatch at " + stored.tensors[i].name);
    m.params_ = std::move(stored);
    return m;
  }

  const DenoiserArch& arch() const { return arch_; }
  int num_classes() const { return arch_.classes; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  Tensor forward(const Tensor& x, std::span<const int> t, std::span<const int> y,
                 std::vector<Tape>* tapes = nullptr) const {
    check_batch(x, t, arch_.image, arch_.timesteps, "denoiser");
    if (y.size() != x.dim(0)) throw std::invalid_argument("denoiser: one label per sample required");
    for (int yi : y)
      if (yi < kNullLabel || yi > arch_.classes)
        throw std::out_of_range("denoiser: label " + std::to_string(yi) + " outside 0.." +
                                std::to_string(arch_.classes));
    Tensor out = Tensor::like(x);
    if (tapes) tapes->assign(x.dim(0), {});
    for_each_shard(x.dim(0), kShardSize, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        Tape local;
        const Mat o = forward_sample(sample_mat(x, i, arch_.image.channels), t[i], y[i], tapes ? (*tapes)[i] : local);
        std::copy(o.data(), o.data() + o.size(), out.row(i).data());
      }
    });
    return out;
  }

  Tensor predict(const Tensor& x, std::span<const int> t, std::span<const int> y) const { return forward(x, t, y); }

  Tensor backward(const std::vector<Tape>& tapes, const Tensor& dout, ParamGrads* grads, bool want_input) const {
    const std::size_t n = tapes.size();
    Tensor dx = want_input ? Tensor::like(dout) : Tensor();
    std::vector<ParamGrads> partial(grads ? shard_count(n, kShardSize) : 0);
    for_each_shard(n, kShardSize, [&](std::size_t s, std::size_t b, std::size_t e) {
      ParamGrads* g = nullptr;
      if (grads) {
        partial[s] = ParamGrads::zeros_like(params_);
        g = &partial[s];
      }
      for (std::size_t i = b; i < e; ++i) {
        const Mat d = backward_sample(tapes[i], sample_mat(dout, i, arch_.image.channels), g, want_input);
        if (want_input) std::copy(d.data(), d.data() + d.size(), dx.row(i).data());
      }
    });
    for (const auto& p : partial) grads->add(p);
    return dx;
  }

  std::pair<double, ParamGrads> param_gradient(const Tensor& x, std::span<const int> t, std::span<const int> y,
                                               const LossFn& loss) const {
    std::vector<Tape> tapes;
    const Tensor out = forward(x, t, y, &tapes);
    const LossAndGrad lg = loss(out);
    ParamGrads grads = ParamGrads::zeros_like(params_);
    backward(tapes, lg.grad, &grads, false);
    return {lg.loss, std::move(grads)};
  }

  /// Vector-Jacobian product d<seed, eps(x)>/dx, used by gradient checks.
  Tensor input_vjp(const Tensor& x, std::span<const int> t, std::span<const int> y, const Tensor& seed) const {
    std::vector<Tape> tapes;
    forward(x, t, y, &tapes);
    return backward(tapes, seed, nullptr, true);
  }

 private:
  explicit DenoiserModel(const DenoiserArch& arch) : arch_(arch) { build(); }

  void build() {
    params_ = {};
    params_.descriptor = arch_.descriptor();
    const int c = arch_.image.channels, w1 = arch_.width1, w2 = arch_.width2, w3 = arch_.width3;
    time_ = Linear::create(params_, "time_proj", arch_.embed_dim, w1);
    label_embed_ = params_.add("label_embed", {std::size_t(arch_.classes + 1), std::size_t(w1)});
    conv_in_ = Conv2d::create(params_, "conv_in", c, w1, 1);
    down1_ = Conv2d::create(params_, "down1", w1, w2, 2);
    down2_ = Conv2d::create(params_, "down2", w2, w3, 2);
    up2_ = Conv2d::create(params_, "up2", w3 + w2, w2, 1);
    up1_ = Conv2d::create(params_, "up1", w2 + w1, w1, 1);
    conv_out_ = Conv2d::create(params_, "conv_out", w1, c, 1);
    e0_ = {arch_.image.height, arch_.image.width};
    e1_ = {e0_.h / 2, e0_.w / 2};
    e2_ = {e0_.h / 4, e0_.w / 4};
  }

  static Mat stack(const Mat& top, const Mat& bottom) {
    Mat out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
  }

  Mat forward_sample(const Mat& x, int t, int y, Tape& tape) const {
    tape.label = y;
    tape.embed = timestep_embedding(t, arch_.embed_dim);
    const Vec cond = time_.forward(params_, tape.embed) +
                     ConstVecMap(params_[label_embed_].row(std::size_t(y)).data(), arch_.width1);
    tape.pre1 = conv_in_.forward(params_, x, e0_, tape.cols_in);
    tape.pre1.colwise() += cond;
    const Mat h1 = silu(tape.pre1);
    tape.pre2 = down1_.forward(params_, h1, e0_, tape.cols_d1);
    const Mat h2 = silu(tape.pre2);
    tape.pre3 = down2_.forward(params_, h2, e1_, tape.cols_d2);
    tape.pre4 = up2_.forward(params_, stack(upsample2(silu(tape.pre3), e2_), h2), e1_, tape.cols_u2);
    tape.pre5 = up1_.forward(params_, stack(upsample2(silu(tape.pre4), e1_), h1), e0_, tape.cols_u1);
    return conv_out_.forward(params_, silu(tape.pre5), e0_, tape.cols_out);
  }

  Mat backward_sample(const Tape& tape, const Mat& dout, ParamGrads* g, bool want_input) const {
    const int w1 = arch_.width1, w2 = arch_.width2, w3 = arch_.width3;
    Mat d5 = conv_out_.backward(params_, dout, tape.cols_out, e0_, g, true);
    silu_backward(tape.pre5, d5);
    const Mat dcat1 = up1_.backward(params_, d5, tape.cols_u1, e0_, g, true);
    Mat d4 = upsample2_backward(dcat1.topRows(w2), e1_);
    silu_backward(tape.pre4, d4);
    const Mat dcat2 = up2_.backward(params_, d4, tape.cols_u2, e1_, g, true);
    Mat d3 = upsample2_backward(dcat2.topRows(w3), e2_);
    silu_backward(tape.pre3, d3);
    Mat d2 = down2_.backward(params_, d3, tape.cols_d2, e1_, g, true) + dcat2.bottomRows(w2);
    silu_backward(tape.pre2, d2);
    Mat d1 = down1_.backward(params_, d2, tape.cols_d1, e0_, g, true) + dcat1.bottomRows(w1);
    silu_backward(tape.pre1, d1);
    const Vec dcond = d1.rowwise().sum();
    time_.backward(params_, tape.embed, dcond, g);
    if (g) VecMap((*g)[label_embed_].row(std::size_t(tape.label)).data(), w1) += dcond;
    return conv_in_.backward(params_, d1, tape.cols_in, e0_, g, want_input);
  }

  DenoiserArch arch_;
  ModelParams params_;
  Linear time_;
  std::size_t label_embed_ = 0;
  Conv2d conv_in_, down1_, down2_, up2_, up1_, conv_out_;
  Extent e0_, e1_, e2_;
};

}  // namespace rgd
