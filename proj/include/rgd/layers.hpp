#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "rgd/numerics.hpp"

namespace rgd {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<Vec>;
using ConstVecMap = Eigen::Map<const Vec>;

struct NamedTensor {
  std::string name;
  Tensor value;
  bool operator==(const NamedTensor&) const = default;
};

/// Ordered named parameters plus the architecture descriptor they were built from.
struct ModelParams {
  std::string descriptor;
  std::vector<NamedTensor> tensors;

  std::size_t add(std::string name, Shape shape) {
    tensors.push_back({std::move(name), Tensor(std::move(shape))});
    return tensors.size() - 1;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.value.size();
    return n;
  }

  Tensor& operator[](std::size_t i) { return tensors[i].value; }
  const Tensor& operator[](std::size_t i) const { return tensors[i].value; }

  bool operator==(const ModelParams&) const = default;
};

/// Gradient container with exactly the parameter layout.
struct ParamGrads {
  std::vector<Tensor> tensors;

  static ParamGrads zeros_like(const ModelParams& p) {
    ParamGrads g;
    g.tensors.reserve(p.tensors.size());
    for (const auto& t : p.tensors) g.tensors.push_back(Tensor::like(t.value));
    return g;
  }

  Tensor& operator[](std::size_t i) { return tensors[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors[i]; }

  void add(const ParamGrads& other) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      for (std::size_t j = 0; j < tensors[i].size(); ++j) tensors[i][j] += other.tensors[i][j];
  }

  void scale(double c) {
    for (auto& t : tensors)
      for (double& v : t.storage()) v *= c;
  }
};

inline MatMap as_mat(Tensor& t, Eigen::Index rows) {
  return MatMap(t.data(), rows, static_cast<Eigen::Index>(t.size()) / rows);
}
inline ConstMatMap as_mat(const Tensor& t, Eigen::Index rows) {
  return ConstMatMap(t.data(), rows, static_cast<Eigen::Index>(t.size()) / rows);
}

inline double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

inline Mat silu(const Mat& a) {
  return a.unaryExpr([](double v) { return v * sigmoid(v); });
}

/// Multiplies upstream gradient by silu'(a) in place.
inline void silu_backward(const Mat& a, Mat& grad) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double s = sigmoid(a.data()[i]);
    grad.data()[i] *= s * (1.0 + a.data()[i] * (1.0 - s));
  }
}

/// Fixed sinusoidal embedding of a timestep; first half sines, second half cosines.
inline Vec timestep_embedding(int t, int dim) {
  Vec e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

/// Spatial extent of an activation map stored as [channels x (h*w)].
struct Extent {
  int h = 0, w = 0;
  int pixels() const { return h * w; }
  bool operator==(const Extent&) const = default;
};

/// 3x3 convolution, zero padding 1, stride 1 or 2.
struct Conv2d {
  int in_c = 0, out_c = 0, stride = 1;
  std::size_t weight = 0, bias = 0;

  static Conv2d create(ModelParams& p, const std::string& name, int in_c, int out_c, int stride) {
    Conv2d c{in_c, out_c, stride};
    c.weight = p.add(name + ".weight", {std::size_t(out_c), std::size_t(in_c), 3, 3});
    c.bias = p.add(name + ".bias", {std::size_t(out_c)});
    return c;
  }

  int fan_in() const { return in_c * 9; }
  Extent output_extent(Extent in) const { return {(in.h - 1) / stride + 1, (in.w - 1) / stride + 1}; }

  Mat im2col(const Mat& in, Extent e) const {
    const Extent o = output_extent(e);
    Mat cols = Mat::Zero(in_c * 9, o.pixels());
    for (int c = 0; c < in_c; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          double* dst = cols.row(c * 9 + ky * 3 + kx).data();
          const double* src = in.row(c).data();
          for (int oy = 0; oy < o.h; ++oy) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= e.h) continue;
            for (int ox = 0; ox < o.w; ++ox) {
              const int ix = ox * stride + kx - 1;
              if (ix >= 0 && ix < e.w) dst[oy * o.w + ox] = src[iy * e.w + ix];
            }
          }
        }
    return cols;
  }

  Mat col2im(const Mat& cols, Extent e) const {
    const Extent o = output_extent(e);
    Mat in = Mat::Zero(in_c, e.pixels());
    for (int c = 0; c < in_c; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double* src = cols.row(c * 9 + ky * 3 + kx).data();
          double* dst = in.row(c).data();
          for (int oy = 0; oy < o.h; ++oy) {
            const int iy = oy * stride + ky - 1;
            if (iy < 0 || iy >= e.h) continue;
            for (int ox = 0; ox < o.w; ++ox) {
              const int ix = ox * stride + kx - 1;
              if (ix >= 0 && ix < e.w) dst[iy * e.w + ix] += src[oy * o.w + ox];
            }
          }
        }
    return in;
  }

  /// Returns the pre-activation output; `cols` receives the unfolded input for backward.
  Mat forward(const ModelParams& p, const Mat& in, Extent e, Mat& cols) const {
    cols = im2col(in, e);
    Mat out = as_mat(p[weight], out_c) * cols;
    out.colwise() += ConstVecMap(p[bias].data(), out_c);
    return out;
  }

  /// Accumulates parameter gradients (when grads != nullptr); returns input gradient if requested.
  Mat backward(const ModelParams& p, const Mat& dout, const Mat& cols, Extent e, ParamGrads* grads,
               bool want_input) const {
    if (grads) {
      as_mat((*grads)[weight], out_c).noalias() += dout * cols.transpose();
      VecMap(( *grads)[bias].data(), out_c) += dout.rowwise().sum();
    }
    if (!want_input) return {};
    const Mat dcols = as_mat(p[weight], out_c).transpose() * dout;
    return col2im(dcols, e);
  }
};

/// Dense layer y = W x + b.
struct Linear {
  int in = 0, out = 0;
  std::size_t weight = 0, bias = 0;

  static Linear create(ModelParams& p, const std::string& name, int in, int out) {
    Linear l{in, out};
    l.weight = p.add(name + ".weight", {std::size_t(out), std::size_t(in)});
    l.bias = p.add(name + ".bias", {std::size_t(out)});
    return l;
  }

  Vec forward(const ModelParams& p, const Vec& x) const {
    return as_mat(p[weight], out) * x + ConstVecMap(p[bias].data(), out);
  }

  Vec backward(const ModelParams& p, const Vec& x, const Vec& dy, ParamGrads* grads) const {
    if (grads) {
      as_mat((*grads)[weight], out).noalias() += dy * x.transpose();
      VecMap((*grads)[bias].data(), out) += dy;
    }
    return as_mat(p[weight], out).transpose() * dy;
  }
};

/// Nearest-neighbour 2x upsampling of [c x (h*w)].
inline Mat upsample2(const Mat& in, Extent e) {
  Mat out(in.rows(), 4 * e.pixels());
  const int ow = 2 * e.w;
  for (Eigen::Index c = 0; c < in.rows(); ++c)
    for (int y = 0; y < 2 * e.h; ++y)
      for (int x = 0; x < ow; ++x) out(c, y * ow + x) = in(c, (y / 2) * e.w + x / 2);
  return out;
}

inline Mat upsample2_backward(const Mat& dout, Extent e) {
  Mat din = Mat::Zero(dout.rows(), e.pixels());
  const int ow = 2 * e.w;
  for (Eigen::Index c = 0; c < dout.rows(); ++c)
    for (int y = 0; y < 2 * e.h; ++y)
      for (int x = 0; x < ow; ++x) din(c, (y / 2) * e.w + x / 2) += dout(c, y * ow + x);
  return din;
}

/// Fan-in scaled Gaussian weights, zero biases.
inline void init_fan_in(ModelParams& p, std::size_t weight, int fan_in, double gain, RngStream& rng) {
  const double sd = gain / std::sqrt(static_cast<double>(fan_in));
  for (double& v : p[weight].storage()) v = sd * rng.normal();
}

}  // namespace rgd
