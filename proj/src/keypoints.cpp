#include "memeforge/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "memeforge/error.hpp"
#include "memeforge/parallel.hpp"
#include "memeforge/rng.hpp"

namespace memeforge {

void MatchParams::validate() const {
  if (d <= 0 || d > 256) throw Error(ErrorCode::InvalidArgument, "match distance d must be in (0, 256]");
  if (m < 1) throw Error(ErrorCode::InvalidArgument, "minimum match count m must be >= 1");
}

namespace {

// Bresenham circle of radius 3, clockwise from the top.
constexpr int kCircleX[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
constexpr int kCircleY[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};
constexpr int kArc = 9;

GrayImage downsample2(const GrayImage& img) {
  const int w = img.width() / 2;
  const int h = img.height() / 2;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int sum = img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) + img.at(2 * x, 2 * y + 1) +
                      img.at(2 * x + 1, 2 * y + 1);
      out.at(x, y) = static_cast<std::uint8_t>((sum + 2) / 4);
    }
  }
  return out;
}

bool level_usable(const GrayImage& img) {
  return img.width() > 2 * kPatchRadius && img.height() > 2 * kPatchRadius;
}

float to_base(int level_coord, int octave) {
  const float scale = static_cast<float>(1 << octave);
  return (static_cast<float>(level_coord) + 0.5f) * scale - 0.5f;
}

int to_level(float base_coord, int octave) {
  const float scale = static_cast<float>(1 << octave);
  return static_cast<int>(std::lround((base_coord + 0.5f) / scale - 0.5f));
}

// Summed-area table with one row/column of zero padding.
class BoxSums {
 public:
  explicit BoxSums(const GrayImage& img) : w_(img.width() + 1), sums_((img.width() + 1) * (img.height() + 1), 0) {
    for (int y = 0; y < img.height(); ++y) {
      std::int64_t row = 0;
      for (int x = 0; x < img.width(); ++x) {
        row += img.at(x, y);
        sums_[(y + 1) * w_ + x + 1] = sums_[y * w_ + x + 1] + row;
      }
    }
  }

  // Sum of the 5x5 box centred on (x, y).
  std::int64_t box5(int x, int y) const {
    const int x0 = x - 2, y0 = y - 2, x1 = x + 3, y1 = y + 3;
    return sums_[y1 * w_ + x1] - sums_[y0 * w_ + x1] - sums_[y1 * w_ + x0] + sums_[y0 * w_ + x0];
  }

 private:
  int w_;
  std::vector<std::int64_t> sums_;
};

using RotatedPattern = std::array<PointPair, 256>;

const std::array<RotatedPattern, kAngleBins>& rotated_patterns() {
  static const auto table = [] {
    std::array<RotatedPattern, kAngleBins> t{};
    const auto& base = brief_pattern();
    for (int b = 0; b < kAngleBins; ++b) {
      const double theta = 2.0 * std::numbers::pi * b / kAngleBins;
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      auto rot = [&](const std::array<int, 2>& pt) {
        return std::array<int, 2>{static_cast<int>(std::lround(c * pt[0] - s * pt[1])),
                                  static_cast<int>(std::lround(s * pt[0] + c * pt[1]))};
      };
      for (int i = 0; i < 256; ++i) t[b][i] = PointPair{rot(base[i].p), rot(base[i].q)};
    }
    return t;
  }();
  return table;
}

int angle_bin(float angle) {
  const double step = 2.0 * std::numbers::pi / kAngleBins;
  const long bin = std::lround(static_cast<double>(angle) / step);
  return static_cast<int>(((bin % kAngleBins) + kAngleBins) % kAngleBins);
}

}  // namespace

int fast_score(const GrayImage& img, int x, int y, int threshold) {
  const int centre = img.at(x, y);
  int state[16];
  int diff[16];
  for (int k = 0; k < 16; ++k) {
    const int v = img.at(x + kCircleX[k], y + kCircleY[k]);
    diff[k] = std::abs(v - centre);
    state[k] = v > centre + threshold ? 1 : (v < centre - threshold ? -1 : 0);
  }
  // Longest circular run of one non-zero state.
  int best_len = 0;
  int best_start = 0;
  for (int start = 0; start < 16; ++start) {
    const int s = state[start];
    if (s == 0 || state[(start + 15) % 16] == s) continue;  // not the start of a run
    int len = 1;
    while (len < 16 && state[(start + len) % 16] == s) ++len;
    if (len > best_len) {
      best_len = len;
      best_start = start;
    }
  }
  if (best_len == 0 && state[0] != 0) {
    // Every circle pixel has the same state: no run start exists.
    best_len = 16;
    best_start = 0;
  }
  if (best_len < kArc) return 0;
  int score = 0;
  for (int k = 0; k < best_len; ++k) score += diff[(best_start + k) % 16];
  return score;
}

float centroid_angle(const GrayImage& img, int x, int y) {
  std::int64_t m10 = 0;
  std::int64_t m01 = 0;
  constexpr int r = kOrientationRadius;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy > r * r) continue;
      const int v = img.at(x + dx, y + dy);
      m10 += static_cast<std::int64_t>(dx) * v;
      m01 += static_cast<std::int64_t>(dy) * v;
    }
  }
  double a = std::atan2(static_cast<double>(m01), static_cast<double>(m10));
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  auto angle = static_cast<float>(a);
  if (angle >= static_cast<float>(2.0 * std::numbers::pi)) angle = 0.0f;
  return angle;
}

std::vector<GrayImage> build_pyramid(const GrayImage& img, int levels) {
  std::vector<GrayImage> pyramid{img};
  while (static_cast<int>(pyramid.size()) < levels) {
    const GrayImage& last = pyramid.back();
    if (last.width() < 2 || last.height() < 2) break;
    pyramid.push_back(downsample2(last));
  }
  return pyramid;
}

std::vector<Keypoint> detect_oriented_fast(const GrayImage& img, int threshold, int max_keypoints) {
  if (img.width() < kMinImageSide || img.height() < kMinImageSide) {
    throw Error(ErrorCode::ImageTooSmall, "keypoint detection needs at least " +
                                              std::to_string(kMinImageSide) + "x" +
                                              std::to_string(kMinImageSide) + " pixels");
  }
  const auto pyramid = build_pyramid(img);
  std::vector<Keypoint> found;
  for (std::size_t octave = 0; octave < pyramid.size(); ++octave) {
    const GrayImage& level = pyramid[octave];
    if (!level_usable(level)) break;
    const int w = level.width();
    const int h = level.height();
    std::vector<int> score(static_cast<std::size_t>(w) * h, 0);
    for (int y = kPatchRadius; y < h - kPatchRadius; ++y) {
      for (int x = kPatchRadius; x < w - kPatchRadius; ++x) {
        score[static_cast<std::size_t>(y) * w + x] = fast_score(level, x, y, threshold);
      }
    }
    for (int y = kPatchRadius; y < h - kPatchRadius; ++y) {
      for (int x = kPatchRadius; x < w - kPatchRadius; ++x) {
        const int s = score[static_cast<std::size_t>(y) * w + x];
        if (s == 0) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (score[static_cast<std::size_t>(y + dy) * w + x + dx] > s) {
              is_max = false;
              break;
            }
          }
        }
        if (!is_max) continue;
        const auto oct = static_cast<int>(octave);
        found.push_back(Keypoint{to_base(x, oct), to_base(y, oct), centroid_angle(level, x, y),
                                 static_cast<float>(s), static_cast<std::uint8_t>(octave)});
      }
    }
  }
  std::sort(found.begin(), found.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.octave != b.octave) return a.octave < b.octave;
    if (a.y != b.y) return a.y < b.y;
    return a.x < b.x;
  });
  if (max_keypoints >= 0 && found.size() > static_cast<std::size_t>(max_keypoints)) {
    found.resize(static_cast<std::size_t>(max_keypoints));
  }
  return found;
}

const std::array<PointPair, 256>& brief_pattern() {
  static const auto pattern = [] {
    std::array<PointPair, 256> pairs{};
    Rng rng(kBriefSeed);
    const double sigma = 31.0 / 5.0;
    constexpr int r2 = kOrientationRadius * kOrientationRadius;
    auto draw = [&] {
      for (;;) {
        const int x = static_cast<int>(std::lround(rng.normal(0.0, sigma)));
        const int y = static_cast<int>(std::lround(rng.normal(0.0, sigma)));
        if (x * x + y * y <= r2) return std::array<int, 2>{x, y};
      }
    };
    for (auto& pair : pairs) {
      do {
        pair.p = draw();
        pair.q = draw();
      } while (pair.p == pair.q);
    }
    return pairs;
  }();
  return pattern;
}

DescriptorSet describe_rbrief(const GrayImage& img, std::span<const Keypoint> keypoints,
                              std::string image_id) {
  DescriptorSet out;
  out.image_id = std::move(image_id);
  out.keypoints.assign(keypoints.begin(), keypoints.end());
  out.descriptors.reserve(keypoints.size());
  if (keypoints.empty()) return out;

  int max_octave = 0;
  for (const Keypoint& kp : keypoints) max_octave = std::max<int>(max_octave, kp.octave);
  const auto pyramid = build_pyramid(img, max_octave + 1);
  std::vector<BoxSums> sums;
  sums.reserve(pyramid.size());
  for (const auto& level : pyramid) sums.emplace_back(level);

  const auto& patterns = rotated_patterns();
  for (const Keypoint& kp : keypoints) {
    if (kp.octave >= pyramid.size()) {
      throw Error(ErrorCode::KeypointOutOfBounds, "octave " + std::to_string(kp.octave) +
                                                      " does not exist for this image");
    }
    const GrayImage& level = pyramid[kp.octave];
    const int x = to_level(kp.x, kp.octave);
    const int y = to_level(kp.y, kp.octave);
    if (x < kPatchRadius || y < kPatchRadius || x >= level.width() - kPatchRadius ||
        y >= level.height() - kPatchRadius) {
      throw Error(ErrorCode::KeypointOutOfBounds,
                  "keypoint (" + std::to_string(kp.x) + ", " + std::to_string(kp.y) +
                      ") is closer than " + std::to_string(kPatchRadius) + " pixels to the border");
    }
    const BoxSums& box = sums[kp.octave];
    const RotatedPattern& pattern = patterns[angle_bin(kp.angle)];
    BinaryDescriptor desc;
    for (int i = 0; i < 256; ++i) {
      const auto& pp = pattern[i];
      if (box.box5(x + pp.p[0], y + pp.p[1]) < box.box5(x + pp.q[0], y + pp.q[1])) desc.set_bit(i);
    }
    out.descriptors.push_back(desc);
  }
  return out;
}

DescriptorCorpus::DescriptorCorpus(std::vector<DescriptorSet> sets) : sets_(std::move(sets)) {
  std::vector<DescriptorIndex::Code> codes;
  for (std::size_t i = 0; i < sets_.size(); ++i) {
    if (sets_[i].descriptors.size() != sets_[i].keypoints.size()) {
      throw Error(ErrorCode::InvalidArgument,
                  "descriptor set '" + sets_[i].image_id + "' has mismatched keypoints");
    }
    first_.push_back(static_cast<std::uint32_t>(codes.size()));
    for (const auto& d : sets_[i].descriptors) {
      codes.push_back(d.words);
      owner_.push_back(static_cast<std::uint32_t>(i));
    }
  }
  first_.push_back(static_cast<std::uint32_t>(codes.size()));
  index_ = DescriptorIndex(std::move(codes));
}

std::map<std::size_t, std::vector<Match>> DescriptorCorpus::match(const DescriptorSet& query,
                                                                  int d) const {
  struct Best {
    std::uint32_t other = 0;
    int distance = -1;
  };
  // Best indexed descriptor per (query descriptor, image), and best query
  // descriptor per indexed descriptor. Scanning ids in ascending order with a
  // strict comparison keeps the smaller index on ties.
  std::map<std::size_t, std::map<std::uint32_t, Best>> forward;
  std::map<std::uint32_t, Best> backward;
  for (std::uint32_t qi = 0; qi < query.descriptors.size(); ++qi) {
    for (const auto& hit : index_.within(query.descriptors[qi].words, d)) {
      const std::size_t image = owner_[hit.id];
      Best& fwd = forward[image][qi];
      if (fwd.distance < 0 || hit.distance < fwd.distance) fwd = {hit.id, hit.distance};
      Best& bwd = backward[hit.id];
      if (bwd.distance < 0 || hit.distance < bwd.distance) bwd = {qi, hit.distance};
    }
  }
  std::map<std::size_t, std::vector<Match>> result;
  for (const auto& [image, per_query] : forward) {
    std::vector<Match> matches;
    for (const auto& [qi, best] : per_query) {
      if (backward.at(best.other).other == qi) {
        matches.push_back(Match{qi, best.other - first_[image], best.distance});
      }
    }
    if (!matches.empty()) result.emplace(image, std::move(matches));
  }
  return result;
}

std::vector<Match> match_descriptors(const DescriptorSet& a, const DescriptorSet& b,
                                     const MatchParams& p) {
  p.validate();
  if (a.descriptors.empty() || b.descriptors.empty()) return {};
  DescriptorCorpus corpus({b});
  auto matches = corpus.match(a, p.d);
  if (matches.empty()) return {};
  return std::move(matches.begin()->second);
}

std::optional<int> image_distance(std::span<const Match> matches, const MatchParams& p) {
  if (matches.size() < static_cast<std::size_t>(p.m) || matches.empty()) return std::nullopt;
  int best = matches.front().distance;
  for (const Match& m : matches) best = std::min(best, m.distance);
  return best;
}

void SparseDistanceMatrix::set(std::size_t i, std::size_t j, double distance) {
  if (i >= n_ || j >= n_) throw Error(ErrorCode::InvalidArgument, "matrix index out of range");
  if (i == j) return;
  rows_[i][j] = distance;
  rows_[j][i] = distance;
}

std::optional<double> SparseDistanceMatrix::get(std::size_t i, std::size_t j) const {
  if (i >= n_ || j >= n_) throw Error(ErrorCode::InvalidArgument, "matrix index out of range");
  if (i == j) return 0.0;
  const auto it = rows_[i].find(j);
  if (it == rows_[i].end()) return std::nullopt;
  return it->second;
}

std::size_t SparseDistanceMatrix::entry_count() const noexcept {
  std::size_t total = 0;
  for (const auto& r : rows_) total += r.size();
  return total / 2;
}

SparseDistanceMatrix pairwise_image_distances(std::span<const DescriptorSet> sets,
                                              const MatchParams& p, unsigned threads) {
  p.validate();
  const DescriptorCorpus corpus(std::vector<DescriptorSet>(sets.begin(), sets.end()));
  // Workers only read the corpus; each fills its own row of results.
  std::vector<std::vector<std::pair<std::size_t, int>>> found(sets.size());
  parallel_for(sets.size(), threads, [&](std::size_t i) {
    for (const auto& [j, matches] : corpus.match(sets[i], p.d)) {
      if (j <= i) continue;
      if (const auto dist = image_distance(matches, p)) found[i].emplace_back(j, *dist);
    }
  });
  SparseDistanceMatrix matrix(sets.size());
  for (std::size_t i = 0; i < found.size(); ++i) {
    for (const auto& [j, dist] : found[i]) matrix.set(i, j, dist);
  }
  return matrix;
}

}  // namespace memeforge
