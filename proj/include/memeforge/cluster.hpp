#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "memeforge/feature_types.hpp"
#include "memeforge/hamming_index.hpp"
#include "memeforge/labels.hpp"

namespace memeforge {

// ---------------------------------------------------------------------------
// Point sets

/// Indexed points with a distance. neighbors() has a brute-force default;
/// spaces with an index override it.
class MetricSpace {
 public:
  virtual ~MetricSpace() = default;
  virtual std::size_t size() const = 0;
  virtual double distance(std::size_t i, std::size_t j) const = 0;
  /// Every j (i itself included) with distance(i, j) <= eps, ascending.
  virtual std::vector<std::size_t> neighbors(std::size_t i, double eps) const;
};

/// 64-bit hashes under Hamming distance; neighbour queries use the multi-index.
class HammingSpace final : public MetricSpace {
 public:
  explicit HammingSpace(std::vector<PerceptualHash> hashes);
  std::size_t size() const override { return hashes_.size(); }
  double distance(std::size_t i, std::size_t j) const override {
    return hamming(hashes_[i], hashes_[j]);
  }
  std::vector<std::size_t> neighbors(std::size_t i, double eps) const override;
  const std::vector<PerceptualHash>& hashes() const noexcept { return hashes_; }

 private:
  std::vector<PerceptualHash> hashes_;
  HashIndex index_;
};

class EuclideanSpace final : public MetricSpace {
 public:
  explicit EuclideanSpace(std::vector<std::vector<double>> points);
  std::size_t size() const override { return points_.size(); }
  double distance(std::size_t i, std::size_t j) const override;

 private:
  std::vector<std::vector<double>> points_;
};

class CosineSpace final : public MetricSpace {
 public:
  /// Throws ZeroVector and DimensionMismatch.
  explicit CosineSpace(const std::vector<std::vector<double>>& points);
  std::size_t size() const override { return unit_.size(); }
  double distance(std::size_t i, std::size_t j) const override;

 private:
  std::vector<std::vector<double>> unit_;
};

/// Arbitrary distance callback; handy for explicit matrices and rescaling.
class FunctionSpace final : public MetricSpace {
 public:
  FunctionSpace(std::size_t n, std::function<double(std::size_t, std::size_t)> fn)
      : n_(n), fn_(std::move(fn)) {}
  std::size_t size() const override { return n_; }
  double distance(std::size_t i, std::size_t j) const override { return i == j ? 0.0 : fn_(i, j); }

 private:
  std::size_t n_;
  std::function<double(std::size_t, std::size_t)> fn_;
};

// ---------------------------------------------------------------------------
// Clusterings

inline constexpr int kNoise = -1;

struct ClusterInfo {
  std::vector<std::size_t> members;  // ascending point indices
  std::optional<std::size_t> medoid;
  std::optional<TemplateLabel> assigned;
  double support = 0.0;  // fraction of evidence behind `assigned`
};

/// Point -> cluster assignment. Cluster ids are 0..k-1 ordered by smallest
/// member index.
struct Clustering {
  std::vector<std::string> ids;
  std::vector<int> assignment;  // cluster id or kNoise per point
  std::vector<ClusterInfo> clusters;

  std::size_t noise_count() const;
  /// Rebuilds `clusters` from `assignment`, renumbering clusters canonically.
  void normalize();
};

struct DbscanParams {
  double eps = 8.0;
  int min_pts = 5;
};

/// Classic DBSCAN. A point is core when at least min_pts points (itself
/// included) lie within eps. Points are scanned in index order; a border
/// point joins the first cluster that reaches it.
Clustering dbscan(const MetricSpace& space, std::vector<std::string> ids, const DbscanParams& params);

struct HdbscanParams {
  int min_cluster_size = 5;
  int min_samples = 5;
};

struct MstEdge {
  std::size_t a;
  std::size_t b;
  double weight;
};

struct CondensedEdge {
  std::size_t parent;  // cluster node (>= n)
  std::size_t child;   // point (< n) or cluster node (>= n)
  double lambda;       // 1 / distance at which the child leaves the parent
  std::size_t child_size;
};

struct HdbscanResult {
  Clustering clustering;
  std::vector<double> core_distances;
  std::vector<MstEdge> mst;
  std::vector<CondensedEdge> condensed_tree;
  std::map<std::size_t, double> stability;  // per condensed cluster node
  std::vector<std::size_t> selected;        // condensed cluster nodes kept
};

/// Core distance of every point: distance to its min_samples-th nearest
/// neighbour, counting the point itself as the first.
std::vector<double> core_distances(const MetricSpace& space, int min_samples);

/// max(core(a), core(b), d(a, b))
inline double mutual_reachability(const MetricSpace& space, std::span<const double> core,
                                  std::size_t a, std::size_t b) {
  return std::max({core[a], core[b], space.distance(a, b)});
}

/// HDBSCAN: exact Prim MST of the mutual-reachability graph, single-linkage
/// hierarchy, condensed tree, excess-of-mass selection (the root is never a
/// cluster). With fewer than min_cluster_size points everything is noise.
HdbscanResult hdbscan(const MetricSpace& space, std::vector<std::string> ids,
                      const HdbscanParams& params);

/// Member minimising the summed distance to the other members; ties go to the
/// lexicographically smallest id.
std::size_t medoid(const MetricSpace& space, std::span<const std::size_t> members,
                   std::span<const std::string> ids);

/// Fills ClusterInfo::medoid for every cluster.
void compute_medoids(Clustering& clustering, const MetricSpace& space);

/// Each cluster takes the template with the most labeled members (ties by
/// template id); clusters without labeled members are Templateless.
void annotate_majority(Clustering& clustering, const std::map<std::string, TemplateLabel>& labeled);

struct LabeledHash {
  std::string id;
  PerceptualHash hash;
  std::string template_id;
};

/// For each cluster medoid h and template t, p_t is the fraction of t's
/// labeled hashes within delta of h. The cluster takes the arg-max template
/// (ties by id), or Templateless when every p_t is 0. Throws MissingMedoid.
void annotate_medoid(Clustering& clustering, std::span<const PerceptualHash> point_hashes,
                     std::span<const LabeledHash> labeled, int delta);

/// Each query inherits its cluster's assignment; noise and unassigned
/// clusters give Templateless. Throws UnknownId.
std::vector<Prediction> cluster_predict(const Clustering& clustering,
                                        std::span<const std::string> query_ids,
                                        const std::string& method);

// ---------------------------------------------------------------------------
// PCA

struct PcaProjection {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // out_dim x dim, rows ordered by eigenvalue
  Eigen::VectorXd eigenvalues;
  double total_variance = 0.0;
  int requested_dim = 0;
  bool shrunk = false;  // fewer non-zero eigenvalues than requested

  int out_dim() const noexcept { return static_cast<int>(components.rows()); }
};

/// Top components by orthogonal power iteration (at most 200 rounds, tol
/// 1e-9) followed by a Rayleigh-Ritz rotation. The largest-magnitude entry
/// of each component is positive. Throws TooFewSamples and DimensionMismatch.
PcaProjection pca_fit(std::span<const FeatureVector> vectors, int out_dim = 32, std::uint64_t seed = 0);

FeatureVector pca_transform(const PcaProjection& projection, const FeatureVector& v);

}  // namespace memeforge
