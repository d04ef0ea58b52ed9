#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "memeforge/feature_types.hpp"
#include "memeforge/hamming_index.hpp"
#include "memeforge/image.hpp"

namespace memeforge {

/// Keypoint in base-image coordinates. `octave` is the pyramid level it was
/// detected on (0 = full resolution); descriptors are sampled on that level.
struct Keypoint {
  float x = 0.0f;
  float y = 0.0f;
  float angle = 0.0f;  // radians in [0, 2pi), image y axis pointing down
  float score = 0.0f;
  std::uint8_t octave = 0;
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

struct DescriptorSet {
  std::string image_id;
  std::vector<Keypoint> keypoints;
  std::vector<BinaryDescriptor> descriptors;  // parallel to keypoints
  friend bool operator==(const DescriptorSet&, const DescriptorSet&) = default;
};

/// Two images are similar when at least `m` descriptor matches lie within
/// Hamming distance `d`.
struct MatchParams {
  int d = 27;
  int m = 20;
  /// Throws InvalidArgument unless 0 < d <= 256 and m >= 1.
  void validate() const;
};

inline constexpr int kFastThreshold = 20;
inline constexpr int kMaxKeypoints = 500;
inline constexpr int kPyramidLevels = 3;
/// Radius of the intensity-centroid disc and of the BRIEF sampling disc.
inline constexpr int kOrientationRadius = 15;
/// Minimum distance from a keypoint to the border of its pyramid level.
inline constexpr int kPatchRadius = 18;
inline constexpr int kMinImageSide = 48;
inline constexpr int kAngleBins = 30;
inline constexpr std::uint64_t kBriefSeed = 42;

/// FAST-9 corner score at (x, y) of `img`: sum of |circle - centre| over the
/// longest contiguous arc of at least 9 circle pixels that are all brighter
/// than centre + threshold or all darker than centre - threshold. Zero when
/// there is no such arc. Needs 3 pixels of margin.
int fast_score(const GrayImage& img, int x, int y, int threshold);

/// Oriented FAST on a 3-level pyramid (2x2 box downsampling), 3x3 non-maximum
/// suppression, strongest `max_keypoints` kept. Throws ImageTooSmall below
/// 48x48. Equal scores are ordered by octave, then y, then x.
std::vector<Keypoint> detect_oriented_fast(const GrayImage& img, int threshold = kFastThreshold,
                                           int max_keypoints = kMaxKeypoints);

/// Angle of the intensity centroid of the disc around (x, y).
float centroid_angle(const GrayImage& img, int x, int y);

/// Image pyramid used by detection and description; level 0 is `img`.
std::vector<GrayImage> build_pyramid(const GrayImage& img, int levels = kPyramidLevels);

struct PointPair {
  std::array<int, 2> p;
  std::array<int, 2> q;
};

/// The 256 sampling pairs, drawn once from a Gaussian with sigma 31/5 and
/// seed 42, each point inside the radius-15 disc.
const std::array<PointPair, 256>& brief_pattern();

/// Rotated BRIEF: pairs rotated by the keypoint angle quantized to 12 degree
/// steps; bit i is set when the 5x5 box sum at p_i is smaller than at q_i.
/// Throws KeypointOutOfBounds when a keypoint lacks a kPatchRadius margin on
/// its level.
DescriptorSet describe_rbrief(const GrayImage& img, std::span<const Keypoint> keypoints,
                              std::string image_id = {});

struct Match {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  int distance = 0;
  friend bool operator==(const Match&, const Match&) = default;
};

/// Descriptors of many images behind one multi-index, so a query image is
/// matched against every indexed image with one radius search per query
/// descriptor.
class DescriptorCorpus {
 public:
  DescriptorCorpus() = default;
  explicit DescriptorCorpus(std::vector<DescriptorSet> sets);

  std::size_t size() const noexcept { return sets_.size(); }
  const DescriptorSet& set(std::size_t i) const noexcept { return sets_[i]; }
  std::span<const DescriptorSet> sets() const noexcept { return sets_; }

  /// Mutual nearest-neighbour matches within distance d between `query` and
  /// every indexed image, keyed by image index. Images without matches are
  /// absent. Nearest-neighbour ties go to the smaller descriptor index.
  std::map<std::size_t, std::vector<Match>> match(const DescriptorSet& query, int d) const;

 private:
  std::vector<DescriptorSet> sets_;
  std::vector<std::uint32_t> owner_;  // global descriptor -> image
  std::vector<std::uint32_t> first_;  // image -> first global descriptor
  DescriptorIndex index_;
};

/// Mutual nearest-neighbour pairs with distance <= p.d, sorted by index in
/// `a`. Identical to a brute-force mutual-NN matcher.
std::vector<Match> match_descriptors(const DescriptorSet& a, const DescriptorSet& b,
                                     const MatchParams& p);

/// Minimum match distance when there are at least p.m matches, otherwise
/// nullopt (not similar). Expects matches already filtered to <= p.d.
std::optional<int> image_distance(std::span<const Match> matches, const MatchParams& p);

/// Symmetric sparse matrix of derived image distances; the diagonal is 0 and
/// absent pairs are not similar.
class SparseDistanceMatrix {
 public:
  explicit SparseDistanceMatrix(std::size_t n = 0) : n_(n), rows_(n) {}

  std::size_t size() const noexcept { return n_; }
  void set(std::size_t i, std::size_t j, double distance);
  std::optional<double> get(std::size_t i, std::size_t j) const;
  /// Similar neighbours of i, ascending by index.
  const std::map<std::size_t, double>& row(std::size_t i) const { return rows_[i]; }
  std::size_t entry_count() const noexcept;

 private:
  std::size_t n_;
  std::vector<std::map<std::size_t, double>> rows_;
};

SparseDistanceMatrix pairwise_image_distances(std::span<const DescriptorSet> sets,
                                              const MatchParams& p, unsigned threads = 0);

}  // namespace memeforge
