#pragma once

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgd/checkpoint.hpp"
#include "rgd/nets.hpp"

namespace rgd {

/// Feature rows [n x d] from one extractor.
struct FeatureSet {
  Mat features;
  std::string provenance = "real";
  std::uint64_t extractor_id = 0;

  Eigen::Index n() const { return features.rows(); }
  Eigen::Index d() const { return features.cols(); }
};

inline FeatureSet extract_features(const TimeClassifier& extractor, const Tensor& images,
                                   const std::string& provenance = "real") {
  for (double v : images.storage())
    if (v < -1.0 || v > 1.0) throw std::invalid_argument("extract_features: images must lie in [-1, 1]");
  const Tensor f = extractor.features(images);
  FeatureSet out;
  out.features = ConstMatMap(f.data(), static_cast<Eigen::Index>(f.dim(0)), static_cast<Eigen::Index>(f.dim(1)));
  out.provenance = provenance;
  out.extractor_id = params_id(extractor.params());
  return out;
}

inline constexpr double kCovarianceShrinkage = 1e-6;

struct GaussianFit {
  Vec mean;
  Mat cov;
};

/// Rows in lexicographic order, so reductions over them do not depend on sample order.
inline Mat canonical_rows(const Mat& x) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index k = 0; k < x.cols(); ++k)
      if (x(a, k) != x(b, k)) return x(a, k) < x(b, k);
    return false;
  });
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < order.size(); ++i) out.row(Eigen::Index(i)) = x.row(order[i]);
  return out;
}

/// Mean and unbiased covariance plus shrinkage * I.
inline GaussianFit fit_gaussian(const Mat& raw) {
  if (raw.rows() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples");
  const Mat x = canonical_rows(raw);
  GaussianFit g;
  g.mean = x.colwise().mean().transpose();
  const Mat centered = x.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  g.cov.diagonal().array() += kCovarianceShrinkage;
  return g;
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues below zero are clipped.
inline Mat sqrt_psd(const Mat& a) {
  const Mat sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  const Vec root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

inline void check_symmetric(const Mat& c, const char* who) {
  if (c.rows() != c.cols()) throw std::invalid_argument(std::string(who) + ": covariance must be square");
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-8)
    throw std::invalid_argument(std::string(who) + ": covariance is not symmetric");
}

/// ||mu1 - mu2||^2 + tr(c1 + c2 - 2 (c1 c2)^{1/2}). The cross term uses the symmetric form
/// tr((c1^{1/2} c2 c1^{1/2})^{1/2}).
inline double frechet_distance(const Vec& mu1, const Mat& cov1, const Vec& mu2, const Mat& cov2) {
  check_symmetric(cov1, "frechet_distance");
  check_symmetric(cov2, "frechet_distance");
  if (mu1.size() != mu2.size() || cov1.rows() != mu1.size() || cov2.rows() != mu2.size())
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  const Mat root1 = sqrt_psd(cov1);
  const Mat inner = root1 * cov2 * root1;
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (mu1 - mu2).squaredNorm() + cov1.trace() + cov2.trace() - 2.0 * cross;
  return std::max(d, 0.0);
}

inline double fid(const FeatureSet& real, const FeatureSet& gen) {
  if (real.n() < 2 || gen.n() < 2) throw std::invalid_argument("fid: need at least 2 samples per set");
  if (real.d() != gen.d()) throw std::invalid_argument("fid: feature dimensions differ");
  const GaussianFit a = fit_gaussian(real.features), b = fit_gaussian(gen.features);
  return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

inline double squared_distance(const Mat& a, Eigen::Index i, const Mat& b, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s;
}

/// Squared distance from each point to its k-th nearest neighbour within the set.
inline std::vector<double> knn_radii2(const Mat& x, int k) {
  std::vector<double> radii(static_cast<std::size_t>(x.rows()));
  std::vector<double> d(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.rows(); ++j) d[std::size_t(j)] = squared_distance(x, i, x, j);
    // Position 0 holds the point itself.
    std::nth_element(d.begin(), d.begin() + k, d.end());
    radii[std::size_t(i)] = d[std::size_t(k)];
  }
  return radii;
}

/// Fraction of `query` rows inside the union of balls around `support` rows.
inline double manifold_coverage(const Mat& support, const std::vector<double>& radii2, const Mat& query) {
  std::size_t inside = 0;
  for (Eigen::Index q = 0; q < query.rows(); ++q)
    for (Eigen::Index s = 0; s < support.rows(); ++s)
      if (squared_distance(query, q, support, s) <= radii2[std::size_t(s)]) {
        ++inside;
        break;
      }
  return static_cast<double>(inside) / static_cast<double>(query.rows());
}

struct PrecisionRecall {
  double precision = 0.0, recall = 0.0;
};

inline PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& gen, int k) {
  if (k < 1 || k >= std::min(real.n(), gen.n()))
    throw std::invalid_argument("precision_recall: k must satisfy 1 <= k < min(n_real, n_gen)");
  return {manifold_coverage(real.features, knn_radii2(real.features, k), gen.features),
          manifold_coverage(gen.features, knn_radii2(gen.features, k), real.features)};
}

/// Fraction of images the judge assigns to `targets` at t = 0.
template <LogitModel M>
double class_accuracy(const M& judge, const Tensor& images, std::span<const int> targets) {
  if (images.rank() == 0 || images.dim(0) == 0) throw std::invalid_argument("class_accuracy: empty image set");
  if (targets.size() != images.dim(0)) throw std::invalid_argument("class_accuracy: one target per image");
  const std::vector<int> t(images.dim(0), 0);
  const auto pred = argmax_rows(judge.logits(images, t));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == targets[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

struct EvalReport {
  double fid = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double class_accuracy = 0.0;
  std::size_t n_real = 0, n_gen = 0;
  int k = 3;

  nlohmann::ordered_json to_json() const {
    return {{"fid", fid}, {"precision", precision}, {"recall", recall}, {"class_accuracy", class_accuracy},
            {"n_real", n_real}, {"n_gen", n_gen}, {"k", k}};
  }
};

/// Guards against judging with the network that guided the samples.
inline void require_distinct_models(std::uint64_t guide_id, std::uint64_t extractor_id, std::uint64_t judge_id) {
  if (guide_id == extractor_id || guide_id == judge_id)
    throw std::invalid_argument("evaluation extractor/judge must differ from the guidance classifier");
}

inline EvalReport evaluate_sets(const TimeClassifier& extractor, const TimeClassifier& judge, const FeatureSet& real,
                                const Tensor& gen_images, std::span<const int> gen_labels, int k) {
  const FeatureSet gen = extract_features(extractor, gen_images, "generated");
  EvalReport r;
  r.fid = fid(real, gen);
  const PrecisionRecall pr = precision_recall(real, gen, k);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.class_accuracy = class_accuracy(judge, gen_images, gen_labels);
  r.n_real = static_cast<std::size_t>(real.n());
  r.n_gen = static_cast<std::size_t>(gen.n());
  r.k = k;
  return r;
}

}  // namespace rgd
