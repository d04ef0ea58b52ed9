#include "memeforge/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "memeforge/error.hpp"

namespace memeforge {

std::string_view to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::rgb_hist: return "rgb_hist";
    case FeatureKind::gray_hist: return "gray_hist";
    case FeatureKind::lbp_hist: return "lbp_hist";
    case FeatureKind::embedding: return "embedding";
    case FeatureKind::baseline_concat: return "baseline_concat";
    case FeatureKind::reduced: return "reduced";
  }
  return "unknown";
}

int hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(a.size() * 64) + " vs " +
                                               std::to_string(b.size() * 64) + " bits");
  }
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::popcount(a[i] ^ b[i]);
  return d;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
  return cosine_similarity(std::span<const double>(a.values), std::span<const double>(b.values));
}

namespace {

void check_bins(int bins) {
  if (bins <= 0 || bins > 256 || 256 % bins != 0) {
    throw Error(ErrorCode::BadBinCount, std::to_string(bins) + " does not divide 256");
  }
}

void l1_normalize(std::vector<double>& v) {
  double total = 0.0;
  for (double x : v) total += x;
  if (total > 0.0) {
    for (double& x : v) x /= total;
  }
}

}  // namespace

FeatureVector rgb_histogram(const RgbImage& img, int bins_per_channel) {
  check_bins(bins_per_channel);
  const int shift = std::countr_zero(static_cast<unsigned>(256 / bins_per_channel));
  std::vector<double> counts(3 * static_cast<std::size_t>(bins_per_channel), 0.0);
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); i += 3) {
    counts[px[i] >> shift] += 1.0;
    counts[bins_per_channel + (px[i + 1] >> shift)] += 1.0;
    counts[2 * bins_per_channel + (px[i + 2] >> shift)] += 1.0;
  }
  l1_normalize(counts);
  return FeatureVector{FeatureKind::rgb_hist, std::move(counts)};
}

FeatureVector gray_histogram(const GrayImage& img, int bins) {
  check_bins(bins);
  const int shift = std::countr_zero(static_cast<unsigned>(256 / bins));
  std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
  for (std::uint8_t v : img.pixels()) counts[v >> shift] += 1.0;
  l1_normalize(counts);
  return FeatureVector{FeatureKind::gray_hist, std::move(counts)};
}

std::uint8_t lbp_code(const GrayImage& img, int x, int y) {
  static constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  const std::uint8_t centre = img.at(x, y);
  unsigned code = 0;
  for (int k = 0; k < 8; ++k) {
    if (img.at(x + kDx[k], y + kDy[k]) >= centre) code |= 1u << k;
  }
  return static_cast<std::uint8_t>(code);
}

FeatureVector lbp_histogram(const GrayImage& img) {
  if (img.width() < 3 || img.height() < 3) {
    throw Error(ErrorCode::ImageTooSmall, "LBP needs at least 3x3 pixels");
  }
  std::vector<double> counts(kLbpBins, 0.0);
  for (int y = 1; y + 1 < img.height(); ++y) {
    for (int x = 1; x + 1 < img.width(); ++x) counts[lbp_code(img, x, y)] += 1.0;
  }
  l1_normalize(counts);
  return FeatureVector{FeatureKind::lbp_hist, std::move(counts)};
}

namespace {

constexpr int kHashInput = 32;
constexpr int kHashBlock = 8;

// basis[u][x] = alpha(u) * cos(pi * (2x + 1) * u / (2N)), orthonormal DCT-II rows.
const std::array<std::array<double, kHashInput>, kHashBlock>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, kHashInput>, kHashBlock> b{};
    for (int u = 0; u < kHashBlock; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / kHashInput) : std::sqrt(2.0 / kHashInput);
      for (int x = 0; x < kHashInput; ++x) {
        b[u][x] = alpha * std::cos(std::numbers::pi * (2 * x + 1) * u / (2.0 * kHashInput));
      }
    }
    return b;
  }();
  return basis;
}

}  // namespace

std::array<double, 64> phash_coefficients(const GrayImage& img) {
  const GrayImage small = resize_bilinear(img, kHashInput, kHashInput);

  // Integer sum makes the mean exact (a dyadic rational), so centred samples
  // of an image and of its brightness-shifted copy are identical doubles.
  long sum = 0;
  for (std::uint8_t v : small.pixels()) sum += v;
  const double mean = static_cast<double>(sum) / (kHashInput * kHashInput);
  std::array<double, kHashInput * kHashInput> centred{};
  for (int i = 0; i < kHashInput * kHashInput; ++i) centred[i] = small.pixels()[i] - mean;

  const auto& basis = dct_basis();
  // Transform along x for every row, then along y for the kept frequencies.
  std::array<std::array<double, kHashBlock>, kHashInput> rows{};
  for (int y = 0; y < kHashInput; ++y) {
    for (int v = 0; v < kHashBlock; ++v) {
      double acc = 0.0;
      for (int x = 0; x < kHashInput; ++x) acc += basis[v][x] * centred[y * kHashInput + x];
      rows[y][v] = acc;
    }
  }
  std::array<double, 64> block{};
  for (int u = 0; u < kHashBlock; ++u) {
    for (int v = 0; v < kHashBlock; ++v) {
      double acc = 0.0;
      for (int y = 0; y < kHashInput; ++y) acc += basis[u][y] * rows[y][v];
      block[u * kHashBlock + v] = acc;
    }
  }
  block[0] = 0.0;
  return block;
}

PerceptualHash phash(const GrayImage& img) {
  const auto block = phash_coefficients(img);
  auto sorted = block;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[31] + sorted[32]);
  PerceptualHash h;
  for (int i = 0; i < 64; ++i) {
    if (block[i] > median) h.bits |= std::uint64_t{1} << i;
  }
  return h;
}

FeatureVector concat_baseline(const FeatureVector& rgb, const FeatureVector& gray,
                              const FeatureVector& lbp) {
  if (rgb.kind != FeatureKind::rgb_hist || gray.kind != FeatureKind::gray_hist ||
      lbp.kind != FeatureKind::lbp_hist) {
    throw Error(ErrorCode::KindMismatch, "baseline expects rgb_hist, gray_hist and lbp_hist parts");
  }
  FeatureVector out{FeatureKind::baseline_concat, {}};
  out.values.reserve(rgb.dim() + gray.dim() + lbp.dim());
  out.values.insert(out.values.end(), rgb.values.begin(), rgb.values.end());
  out.values.insert(out.values.end(), gray.values.begin(), gray.values.end());
  out.values.insert(out.values.end(), lbp.values.begin(), lbp.values.end());
  return out;
}

FeatureVector baseline_features(const RgbImage& img) {
  const GrayImage gray = to_gray(img);
  return concat_baseline(rgb_histogram(img), gray_histogram(gray), lbp_histogram(gray));
}

}  // namespace memeforge
