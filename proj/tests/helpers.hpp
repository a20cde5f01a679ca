#pragma once



#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unistd.h>

#include "rgd/rgd.hpp"

namespace rgd::test {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kFdTol = 1e-5;

/// Central differences of f over every entry of v.
inline std::vector<double> finite_difference(std::vector<double>& v, const std::function<double()>& f,
                                             double h = kFdStep) {
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = f();
    v[i] = keep - h;
    const double down = f();
    v[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(d) / scale;
}

inline Tensor random_tensor(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  RngStream r(seed, 77);
  Tensor t = gaussian(r, s);
  for (double& v : t.storage()) v *= scale;
  return t;
}

inline ClassifierArch tiny_classifier(int channels = 1, int size = 8, int classes = 3, int timesteps = 10) {
  ClassifierArch a;
  a.image = {channels, size, size};
  a.classes = classes;
  a.width1 = 4;
  a.width2 = 6;
  a.embed_dim = 8;
  a.timesteps = timesteps;
  return a;
}

inline DenoiserArch tiny_denoiser(int channels = 1, int size = 8, int classes = 3, int timesteps = 10) {
  DenoiserArch a;
  a.image = {channels, size, size};
  a.classes = classes;
  a.width1 = 3;
  a.width2 = 4;
  a.width3 = 4;
  a.embed_dim = 8;
  a.timesteps = timesteps;
  return a;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("rgd_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Logits z = W x + b on flattened input, independent of t.
struct LinearModel {
  Mat w;  // [C x D]
  Vec b;

  int num_classes() const { return static_cast<int>(w.rows()); }

  Tensor logits(const Tensor& x, std::span<const int>) const {
    Tensor z({x.dim(0), std::size_t(w.rows())});
    for (std::size_t i = 0; i < x.dim(0); ++i)
      VecMap(z.row(i).data(), w.rows()) = w * ConstVecMap(x.row(i).data(), w.cols()) + b;
    return z;
  }

  LogitsAndGrad logits_vjp(const Tensor& x, std::span<const int> t, const OutputSeed& seed) const {
    LogitsAndGrad out{logits(x, t), Tensor::like(x)};
    const Tensor s = seed(out.logits);
    for (std::size_t i = 0; i < x.dim(0); ++i)
      VecMap(out.input_grad.row(i).data(), w.cols()) = w.transpose() * ConstVecMap(s.row(i).data(), w.rows());
    return out;
  }
};

}  // namespace rgd::test
