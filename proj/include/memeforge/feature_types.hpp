#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace memeforge {

enum class FeatureKind { rgb_hist, gray_hist, lbp_hist, embedding, baseline_concat, reduced };

std::string_view to_string(FeatureKind kind);

/// Dense real feature tagged with what produced it.
struct FeatureVector {
  FeatureKind kind = FeatureKind::embedding;
  std::vector<double> values;

  std::size_t dim() const noexcept { return values.size(); }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// 64-bit DCT fingerprint. Bit i corresponds to coefficient i of the 8x8
/// low-frequency block in row-major order.
struct PerceptualHash {
  std::uint64_t bits = 0;
  friend auto operator<=>(const PerceptualHash&, const PerceptualHash&) = default;
};

/// 256-bit binary keypoint descriptor, bit i stored in words[i / 64] at bit i % 64.
struct BinaryDescriptor {
  std::array<std::uint64_t, 4> words{};
  friend bool operator==(const BinaryDescriptor&, const BinaryDescriptor&) = default;

  bool bit(int i) const noexcept { return (words[i >> 6] >> (i & 63)) & 1u; }
  void set_bit(int i) noexcept { words[i >> 6] |= std::uint64_t{1} << (i & 63); }
};

inline int hamming(PerceptualHash a, PerceptualHash b) noexcept {
  return std::popcount(a.bits ^ b.bits);
}

inline int hamming(const BinaryDescriptor& a, const BinaryDescriptor& b) noexcept {
  return std::popcount(a.words[0] ^ b.words[0]) + std::popcount(a.words[1] ^ b.words[1]) +
         std::popcount(a.words[2] ^ b.words[2]) + std::popcount(a.words[3] ^ b.words[3]);
}

/// Hamming distance between equal-length bit strings packed into words.
/// Throws LengthMismatch when the word counts differ.
int hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

/// dot(a, b) / (|a| |b|). Throws DimensionMismatch or ZeroVector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(const FeatureVector& a, const FeatureVector& b);

/// 1 - cosine similarity; the distance used by cosine radius classification.
inline double cosine_distance(const FeatureVector& a, const FeatureVector& b) {
  return 1.0 - cosine_similarity(a, b);
}

}  // namespace memeforge
