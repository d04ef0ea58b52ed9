#pragma once

#include <Eigen/Dense>

#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "memeforge/feature_types.hpp"
#include "memeforge/hamming_index.hpp"
#include "memeforge/image.hpp"
#include "memeforge/keypoints.hpp"
#include "memeforge/labels.hpp"

namespace memeforge {

// ---------------------------------------------------------------------------
// Radius nearest neighbours

enum class Metric { hamming, cosine_distance, feature_match };

std::string_view to_string(Metric metric);

using Feature = std::variant<PerceptualHash, FeatureVector, DescriptorSet>;

struct LabeledFeature {
  std::string id;
  Feature feature;
  TemplateLabel label;
};

/// Radius nearest-neighbour classifier with open-set rejection: a query with
/// no reference point within the radius is Templateless.
class RadiusModel {
 public:
  struct Neighbor {
    std::size_t index;
    double distance;
  };

  /// Builds the search structure for `metric`: a multi-index over hashes, unit
  /// vectors for cosine, or a descriptor corpus plus the precomputed
  /// reference-to-reference distance matrix for feature matching. The radius
  /// is left unset. Throws EmptyReference, MetricFeatureMismatch, and
  /// InvalidArgument for Templateless reference labels.
  static RadiusModel fit(std::vector<LabeledFeature> reference, Metric metric,
                         MatchParams match = {}, unsigned threads = 0);

  Metric metric() const noexcept { return metric_; }
  const MatchParams& match_params() const noexcept { return match_; }
  std::size_t size() const noexcept { return reference_.size(); }
  const std::vector<LabeledFeature>& reference() const noexcept { return reference_; }

  std::optional<double> radius() const noexcept { return radius_; }
  void set_radius(double r);

  /// Distance from reference point i to its nearest other reference point;
  /// nullopt when it has none (only possible for feature matching, where
  /// dissimilar images have no distance).
  std::vector<std::optional<double>> leave_one_out_distances(unsigned threads = 0) const;

  /// Smallest radius at which every reference point has a neighbour: the
  /// maximum leave-one-out nearest distance. Points without any similar
  /// neighbour cannot be satisfied by a finite radius and are skipped. Sets
  /// and returns the radius. Throws TooFewSamples.
  double calibrate(unsigned threads = 0);

  /// Reference points within `radius` of the query, ascending by index.
  /// `exclude` drops one reference index (leave-one-out queries).
  std::vector<Neighbor> neighbors(const Feature& query, double radius,
                                  std::optional<std::size_t> exclude = std::nullopt) const;

  /// Majority label among neighbours within the radius; ties go to the label
  /// with the smaller minimum distance, then to the smaller template id.
  /// Score is 1 / (1 + minimum distance of the winning label). Throws
  /// RadiusUnset before calibration or set_radius().
  Prediction predict(const Feature& query, std::string image_id,
                     std::optional<std::size_t> exclude = std::nullopt) const;

  /// Method tag written to predictions: rnn:phash, rnn:embedding or rnn:fm.
  std::string method_name() const;

 private:
  RadiusModel() = default;
  void check_feature(const Feature& f) const;

  Metric metric_ = Metric::hamming;
  MatchParams match_;
  std::vector<LabeledFeature> reference_;
  std::optional<double> radius_;
  HashIndex hash_index_;
  std::vector<std::vector<double>> unit_vectors_;
  DescriptorCorpus corpus_;
  SparseDistanceMatrix reference_distances_;
};

/// Vote over neighbours as described for RadiusModel::predict.
Prediction vote(std::span<const RadiusModel::Neighbor> neighbors,
                std::span<const LabeledFeature> reference, std::string image_id, std::string method);

// ---------------------------------------------------------------------------
// Multinomial logistic regression baseline

struct MlrHyper {
  double lr = 0.1;
  int epochs = 50;
  int batch = 64;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct MlrModel {
  std::vector<std::string> classes;  // sorted; row k of weights belongs to classes[k]
  Eigen::MatrixXd weights;           // classes x dim
  Eigen::VectorXd bias;              // classes
  std::vector<double> loss_history;  // full-data objective after each epoch

  std::size_t dim() const noexcept { return static_cast<std::size_t>(weights.cols()); }
  Eigen::VectorXd probabilities(std::span<const double> x) const;
};

/// Zero-initialised model over the sorted distinct labels.
MlrModel init_mlr(std::span<const std::string> labels, std::size_t dim);

/// Mean cross-entropy plus (l2 / 2) * |W|^2 (bias unregularised).
double mlr_objective(const MlrModel& model, std::span<const FeatureVector> features,
                     std::span<const int> targets, double l2);

struct MlrGradient {
  Eigen::MatrixXd weights;
  Eigen::VectorXd bias;
};
MlrGradient mlr_gradient(const MlrModel& model, std::span<const FeatureVector> features,
                         std::span<const int> targets, double l2);

/// Mini-batch gradient descent from zero weights; batches are drawn from a
/// seeded shuffle each epoch. Throws SingleClass, DimensionMismatch and
/// NonFiniteLoss.
MlrModel fit_mlr(std::span<const FeatureVector> features, std::span<const std::string> labels,
                 const MlrHyper& hyper = {});

/// Arg-max class (ties to the smaller class name) with its probability as
/// score. With a threshold, a maximum probability below it is Templateless.
Prediction predict_mlr(const MlrModel& model, const FeatureVector& feature, std::string image_id,
                       std::optional<double> reject_threshold = std::nullopt);

// ---------------------------------------------------------------------------
// Sparse representation classification

inline constexpr int kSparseSide = 16;
inline constexpr int kSparseDim = kSparseSide * kSparseSide;

struct SparseDictionary {
  Eigen::MatrixXd atoms;              // dim x n, unit-norm columns grouped by class
  std::vector<std::string> classes;   // sorted
  std::vector<int> column_class;      // class index of each column
  std::vector<std::string> column_ids;
  double lambda = 0.01;
  double sci_threshold = 0.1;

  int class_count() const noexcept { return static_cast<int>(classes.size()); }
};

/// 16x16 bilinear downsample, mean-centred, unit L2 norm. Throws
/// DegenerateImage for images that are constant after downsampling.
Eigen::VectorXd sparse_column(const GrayImage& img);

struct LabeledColumn {
  std::string id;
  std::string template_id;
  Eigen::VectorXd column;
};

/// Assembles a dictionary from prepared columns: grouped by class (sorted),
/// stable within a class, at most `per_class_cap` per class when set.
/// Columns are renormalised. Throws SingleClass and DimensionMismatch.
SparseDictionary make_dictionary(std::vector<LabeledColumn> columns,
                                 std::optional<int> per_class_cap = std::nullopt,
                                 double lambda = 0.01, double sci_threshold = 0.1);

struct LabeledImage {
  std::string id;
  std::string template_id;
  GrayImage image;
};

SparseDictionary build_dictionary(std::span<const LabeledImage> images,
                                  std::optional<int> per_class_cap = std::nullopt,
                                  double lambda = 0.01, double sci_threshold = 0.1);

/// (1/2)|Ax - y|^2 + lambda |x|_1
double l1_objective(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, const Eigen::VectorXd& x,
                    double lambda);

struct L1Solution {
  Eigen::VectorXd x;
  int iterations = 0;
  double lipschitz = 0.0;
  std::vector<double> objective;  // after each iteration
};

/// Monotone FISTA with step 1/L, L the largest eigenvalue of A^T A from 100
/// power iterations. Stops after max_iter iterations or when an accepted
/// step changes the objective by less than tol relative. Throws NonFinite and
/// DimensionMismatch.
L1Solution solve_l1(const Eigen::MatrixXd& A, const Eigen::VectorXd& y, double lambda,
                    int max_iter = 500, double tol = 1e-6);

/// Sparsity concentration index (K max_k |delta_k(x)|_1 / |x|_1 - 1) / (K - 1).
/// Throws ZeroCoefficients when x is zero and InvalidArgument for K < 2.
double sci(std::span<const double> x, std::span<const int> column_class, int class_count);

/// SCI below the dictionary threshold is Templateless; otherwise the class
/// with the smallest residual |y - A delta_k(x)|. Score is the SCI. A query
/// whose coefficients are all zero is Templateless.
Prediction predict_sparse(const SparseDictionary& dict, const Eigen::VectorXd& query,
                          std::string image_id);
/// Image overload; a degenerate (constant) query is Templateless.
Prediction predict_sparse(const SparseDictionary& dict, const GrayImage& query, std::string image_id);

// ---------------------------------------------------------------------------
// Two-stage composition

template <typename Gate, typename Q>
concept TemplatedGate = requires(const Gate& g, const Q& q) {
  { g(q) } -> std::convertible_to<bool>;
};

template <typename Head, typename Q>
concept TemplateHead = requires(const Head& h, const Q& q) {
  { h(q) } -> std::convertible_to<Prediction>;
};

/// The gate decides whether the query is a meme of a known template at all;
/// rejected queries are Templateless without consulting the head, accepted
/// ones get the head's prediction unchanged.
template <typename Q, TemplatedGate<Q> Gate, TemplateHead<Q> Head>
Prediction predict_gated(const Gate& gate, const Head& head, const Q& query, std::string image_id,
                         std::string method) {
  if (!gate(query)) return Prediction::rejected(std::move(image_id), std::move(method));
  return head(query);
}

}  // namespace memeforge
