#include "doctest.h"

#include <cmath>
#include <numbers>
#include <set>
#include <tuple>

#include "memeforge/error.hpp"
#include "memeforge/keypoints.hpp"
#include "support.hpp"

using namespace memeforge;

namespace {

constexpr int kCx[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
constexpr int kCy[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};

// Tries every arc explicitly, longest first.
int brute_fast(const GrayImage& img, int x, int y, int t) {
  const int c = img.at(x, y);
  for (int len = 16; len >= 9; --len) {
    for (int start = 0; start < 16; ++start) {
      for (int sign : {1, -1}) {
        bool ok = true;
        int score = 0;
        for (int k = 0; k < len && ok; ++k) {
          const int v = img.at(x + kCx[(start + k) % 16], y + kCy[(start + k) % 16]);
          ok = sign > 0 ? v > c + t : v < c - t;
          score += std::abs(v - c);
        }
        if (ok) return score;
      }
    }
  }
  return 0;
}

GrayImage half(const GrayImage& img) {
  GrayImage out(img.width() / 2, img.height() / 2);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      out.at(x, y) = static_cast<std::uint8_t>(
          (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) + img.at(2 * x, 2 * y + 1) + img.at(2 * x + 1, 2 * y + 1) + 2) / 4);
  return out;
}

double naive_angle(const GrayImage& img, int x, int y) {
  double m10 = 0, m01 = 0;
  for (int dy = -15; dy <= 15; ++dy)
    for (int dx = -15; dx <= 15; ++dx)
      if (dx * dx + dy * dy <= 225) {
        m10 += dx * img.at(x + dx, y + dy);
        m01 += dy * img.at(x + dx, y + dy);
      }
  double a = std::atan2(m01, m10);
  if (a < 0) a += 2 * std::numbers::pi;
  return a;
}

long box5(const GrayImage& img, int x, int y) {
  long s = 0;
  for (int dy = -2; dy <= 2; ++dy)
    for (int dx = -2; dx <= 2; ++dx) s += img.at(x + dx, y + dy);
  return s;
}

BinaryDescriptor naive_brief(const GrayImage& level, int x, int y, float angle) {
  const double step = 2 * std::numbers::pi / 30;
  const long bin = ((std::lround(angle / step) % 30) + 30) % 30;
  const double th = 2.0 * std::numbers::pi * static_cast<double>(bin) / 30;
  auto rot = [&](std::array<int, 2> p) {
    return std::array<int, 2>{static_cast<int>(std::lround(std::cos(th) * p[0] - std::sin(th) * p[1])),
                              static_cast<int>(std::lround(std::sin(th) * p[0] + std::cos(th) * p[1]))};
  };
  BinaryDescriptor d;
  for (int i = 0; i < 256; ++i) {
    const auto p = rot(brief_pattern()[i].p);
    const auto q = rot(brief_pattern()[i].q);
    if (box5(level, x + p[0], y + p[1]) < box5(level, x + q[0], y + q[1])) d.set_bit(i);
  }
  return d;
}

// Mutual nearest neighbours by exhaustive search, first index wins ties.
std::vector<Match> brute_mutual(const DescriptorSet& a, const DescriptorSet& b, int dmax) {
  std::vector<Match> out;
  auto nn = [](const BinaryDescriptor& q, const std::vector<BinaryDescriptor>& pool) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < pool.size(); ++j)
      if (hamming(q, pool[j]) < hamming(q, pool[best])) best = j;
    return best;
  };
  for (std::size_t i = 0; i < a.descriptors.size(); ++i) {
    const std::size_t j = nn(a.descriptors[i], b.descriptors);
    const int d = hamming(a.descriptors[i], b.descriptors[j]);
    if (d <= dmax && nn(b.descriptors[j], a.descriptors) == i)
      out.push_back(Match{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), d});
  }
  return out;
}

BinaryDescriptor random_desc(Rng& rng) {
  BinaryDescriptor d;
  for (auto& w : d.words) w = rng.next();
  return d;
}

BinaryDescriptor flip(BinaryDescriptor d, int bits, Rng& rng) {
  for (int k = 0; k < bits; ++k) {
    const int b = static_cast<int>(rng.below(256));
    d.words[b / 64] ^= std::uint64_t{1} << (b % 64);
  }
  return d;
}

DescriptorSet random_set(std::string id, std::size_t n, Rng& rng) {
  DescriptorSet s;
  s.image_id = std::move(id);
  for (std::size_t i = 0; i < n; ++i) {
    s.keypoints.push_back(Keypoint{static_cast<float>(i), 0, 0, 1, 0});
    s.descriptors.push_back(random_desc(rng));
  }
  return s;
}

// A derived copy: some descriptors lightly perturbed, others fresh.
DescriptorSet relative(const DescriptorSet& base, std::string id, double keep, int noise, Rng& rng) {
  DescriptorSet s = base;
  s.image_id = std::move(id);
  for (auto& d : s.descriptors)
    d = rng.uniform() < keep ? flip(d, static_cast<int>(rng.below(static_cast<std::uint64_t>(noise) + 1)), rng)
                             : random_desc(rng);
  return s;
}

GrayImage rotate180(const GrayImage& img) {
  GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(img.width() - 1 - x, img.height() - 1 - y) = img.at(x, y);
  return out;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("FAST score agrees with exhaustive arc search") {
  Rng rng(30);
  for (int trial = 0; trial < 3; ++trial) {
    const auto img = trial == 0 ? testing::random_gray(60, 60, rng) : testing::blocky_gray(60, 60, rng, 30);
    for (int t : {0, 10, 20, 60})
      for (int y = 3; y < 57; ++y)
        for (int x = 3; x < 57; ++x) REQUIRE(fast_score(img, x, y, t) == brute_fast(img, x, y, t));
  }
}

TEST_CASE("FAST fires on an isolated bright dot with the full circle") {
  GrayImage img(20, 20, 10);
  img.at(10, 10) = 200;
  CHECK(fast_score(img, 10, 10, 20) == 16 * 190);
  CHECK(fast_score(img, 10, 10, 189) == 16 * 190);
  CHECK(fast_score(img, 10, 10, 190) == 0);
  CHECK(fast_score(img, 5, 5, 20) == 0);
}

TEST_CASE("pyramid levels are rounded 2x2 means") {
  Rng rng(31);
  const auto img = testing::random_gray(101, 66, rng);
  const auto pyr = build_pyramid(img, 3);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0] == img);
  CHECK(pyr[1] == half(img));
  CHECK(pyr[2] == half(half(img)));
  CHECK(pyr[2].width() == 25);
}

TEST_CASE("detection equals brute-force scoring with 3x3 suppression on each level") {
  Rng rng(32);
  const auto img = testing::blocky_gray(160, 120, rng, 40);
  const auto kps = detect_oriented_fast(img, 20, -1);

  std::set<std::tuple<int, int, int, int>> expect;  // octave, x, y, score on that level
  const auto pyr = build_pyramid(img, 3);
  for (int o = 0; o < 3; ++o) {
    const auto& L = pyr[o];
    if (L.width() <= 36 || L.height() <= 36) break;
    auto score = [&](int x, int y) {
      if (x < 18 || y < 18 || x >= L.width() - 18 || y >= L.height() - 18) return 0;
      return brute_fast(L, x, y, 20);
    };
    for (int y = 18; y < L.height() - 18; ++y)
      for (int x = 18; x < L.width() - 18; ++x) {
        const int s = score(x, y);
        bool is_max = s > 0;
        for (int dy = -1; dy <= 1 && is_max; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            if (score(x + dx, y + dy) > s) is_max = false;
        if (is_max) expect.insert({o, x, y, s});
      }
  }
  std::set<std::tuple<int, int, int, int>> got;
  for (const auto& k : kps) {
    const int scale = 1 << k.octave;
    const double lx = (k.x + 0.5) / scale - 0.5;
    const double ly = (k.y + 0.5) / scale - 0.5;
    REQUIRE(lx == std::round(lx));
    REQUIRE(ly == std::round(ly));
    got.insert({k.octave, static_cast<int>(lx), static_cast<int>(ly), static_cast<int>(k.score)});
    CHECK(k.angle >= 0.0f);
    CHECK(k.angle < static_cast<float>(2 * std::numbers::pi));
    CHECK(k.angle == doctest::Approx(naive_angle(pyr[k.octave], static_cast<int>(lx), static_cast<int>(ly))).epsilon(1e-5));
  }
  CHECK(got == expect);
  CHECK(expect.size() > 20);

  for (std::size_t i = 1; i < kps.size(); ++i) CHECK(kps[i - 1].score >= kps[i].score);
  const auto capped = detect_oriented_fast(img, 20, 10);
  REQUIRE(capped.size() == std::min<std::size_t>(10, kps.size()));
  for (std::size_t i = 0; i < capped.size(); ++i) CHECK(capped[i] == kps[i]);
}

TEST_CASE("detection rejects small images") {
  CHECK(code_of([] { detect_oriented_fast(GrayImage(47, 200)); }) == ErrorCode::ImageTooSmall);
  CHECK(detect_oriented_fast(GrayImage(48, 48, 7)).empty());
}

TEST_CASE("sampling pattern is fixed and stays inside the disc") {
  const auto& p = brief_pattern();
  for (const auto& pair : p) {
    CHECK(pair.p[0] * pair.p[0] + pair.p[1] * pair.p[1] <= 225);
    CHECK(pair.q[0] * pair.q[0] + pair.q[1] * pair.q[1] <= 225);
    CHECK(pair.p != pair.q);
  }
  CHECK(&brief_pattern() == &p);
}

TEST_CASE("rBRIEF bits equal naive rotated box comparisons") {
  Rng rng(33);
  const auto img = testing::blocky_gray(200, 160, rng, 40);
  auto kps = detect_oriented_fast(img, 20, 200);
  REQUIRE(kps.size() > 30);
  kps.push_back(Keypoint{100, 80, 1.3f, 1, 0});
  kps.push_back(Keypoint{99, 79, 6.27f, 1, 1});
  const auto set = describe_rbrief(img, kps, "img");
  CHECK(set.image_id == "img");
  REQUIRE(set.descriptors.size() == kps.size());
  const auto pyr = build_pyramid(img, 3);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    const auto& k = kps[i];
    const int s = 1 << k.octave;
    const int lx = static_cast<int>(std::lround((k.x + 0.5) / s - 0.5));
    const int ly = static_cast<int>(std::lround((k.y + 0.5) / s - 0.5));
    CHECK(set.descriptors[i] == naive_brief(pyr[k.octave], lx, ly, k.angle));
  }
}

TEST_CASE("descriptors survive a 180 degree rotation") {
  Rng rng(34);
  const auto img = testing::blocky_gray(256, 192, rng, 40);
  const auto rot = rotate180(img);
  const auto a = describe_rbrief(img, detect_oriented_fast(img), "a");
  const auto b = describe_rbrief(rot, detect_oriented_fast(rot), "b");
  REQUIRE(a.descriptors.size() > 50);
  const auto matches = match_descriptors(a, b, MatchParams{});
  int exact = 0;
  for (const auto& m : matches) exact += m.distance == 0;
  CHECK(exact >= static_cast<int>(0.8 * static_cast<double>(a.descriptors.size())));
  CHECK(image_distance(matches, MatchParams{}) == 0);
}

TEST_CASE("describing checks keypoint margins") {
  GrayImage img(100, 100, 9);
  const std::vector<Keypoint> near_edge{Keypoint{17, 50, 0, 1, 0}};
  CHECK(code_of([&] { describe_rbrief(img, near_edge); }) == ErrorCode::KeypointOutOfBounds);
  const std::vector<Keypoint> deep{Keypoint{50, 50, 0, 1, 7}};
  CHECK(code_of([&] { describe_rbrief(img, deep); }) == ErrorCode::KeypointOutOfBounds);
  const std::vector<Keypoint> ok{Keypoint{18, 81, 0, 1, 0}};
  CHECK(describe_rbrief(img, ok).descriptors.size() == 1);
  CHECK(describe_rbrief(img, {}).descriptors.empty());
}

TEST_CASE("indexed matching equals brute-force mutual nearest neighbours") {
  Rng rng(35);
  for (int trial = 0; trial < 6; ++trial) {
    const auto a = random_set("a", 40 + rng.below(200), rng);
    auto b = relative(a, "b", 0.5, 30, rng);
    rng.shuffle(std::span<BinaryDescriptor>(b.descriptors));
    // duplicates exercise the tie rule
    b.descriptors.push_back(b.descriptors[0]);
    b.keypoints.push_back(b.keypoints[0]);
    for (int d : {10, 27, 40, 80}) {
      const MatchParams p{d, 1};
      CHECK(match_descriptors(a, b, p) == brute_mutual(a, b, d));
      CHECK(match_descriptors(b, a, p) == brute_mutual(b, a, d));
    }
  }
  const DescriptorSet empty;
  Rng r2(1);
  CHECK(match_descriptors(empty, random_set("x", 5, r2), MatchParams{}).empty());
}

TEST_CASE("corpus matching agrees with pairwise matching") {
  Rng rng(36);
  std::vector<DescriptorSet> sets;
  const auto root = random_set("r", 150, rng);
  for (int i = 0; i < 8; ++i) sets.push_back(relative(root, "s" + std::to_string(i), 0.3 + 0.08 * i, 25, rng));
  for (int i = 0; i < 4; ++i) sets.push_back(random_set("n" + std::to_string(i), 100, rng));
  const DescriptorCorpus corpus(sets);
  const auto query = relative(root, "q", 0.6, 20, rng);
  const auto all = corpus.match(query, 27);
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto expect = brute_mutual(query, sets[i], 27);
    const auto it = all.find(i);
    if (expect.empty()) {
      CHECK(it == all.end());
    } else {
      REQUIRE(it != all.end());
      CHECK(it->second == expect);
    }
  }
}

TEST_CASE("image distance needs m matches and reports the closest") {
  const MatchParams p{27, 3};
  const std::vector<Match> two{{0, 0, 5}, {1, 1, 9}};
  CHECK_FALSE(image_distance(two, p).has_value());
  const std::vector<Match> three{{0, 0, 5}, {1, 1, 9}, {2, 2, 4}};
  CHECK(image_distance(three, p) == 4);
  CHECK_FALSE(image_distance({}, MatchParams{27, 1}).has_value());
  CHECK_THROWS_AS(MatchParams({0, 1}).validate(), Error);
  CHECK_THROWS_AS(MatchParams({257, 1}).validate(), Error);
  CHECK_THROWS_AS(MatchParams({10, 0}).validate(), Error);
}

TEST_CASE("pairwise distances are symmetric and agree with the brute-force rule") {
  Rng rng(37);
  std::vector<DescriptorSet> sets;
  const auto root = random_set("r", 120, rng);
  for (int i = 0; i < 6; ++i) sets.push_back(relative(root, "s" + std::to_string(i), 0.1 + 0.15 * i, 20, rng));
  for (int i = 0; i < 3; ++i) sets.push_back(random_set("n" + std::to_string(i), 80, rng));
  const MatchParams p{27, 20};
  for (unsigned threads : {1u, 4u}) {
    const auto m = pairwise_image_distances(sets, p, threads);
    for (std::size_t i = 0; i < sets.size(); ++i)
      for (std::size_t j = 0; j < sets.size(); ++j) {
        if (i == j) {
          CHECK(m.get(i, j) == 0.0);
          continue;
        }
        const auto matches = brute_mutual(sets[i], sets[j], p.d);
        std::optional<double> expect;
        if (matches.size() >= 20) {
          int best = 256;
          for (const auto& x : matches) best = std::min(best, x.distance);
          expect = best;
        }
        CHECK(m.get(i, j) == expect);
        CHECK(m.get(i, j) == m.get(j, i));
      }
  }
  SparseDistanceMatrix small(3);
  small.set(0, 2, 4.0);
  CHECK(small.entry_count() == 1);
  CHECK(small.row(2).at(0) == 4.0);
  CHECK_THROWS_AS(small.get(0, 3), Error);
}
