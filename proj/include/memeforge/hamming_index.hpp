#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace memeforge {

/// Exact radius search over fixed-length binary codes (multi-index hashing).
///
/// Codes are cut into 16-bit bands, each band indexed in a direct-addressed
/// table. Two codes within distance r of each other must agree to within
/// floor(r / bands) bits on at least one band (pigeonhole), so probing every
/// band key within that radius finds a superset of the answer, which is then
/// verified with the full distance. Results are exactly those of a linear
/// scan. 64-bit hashes use 4 bands, 256-bit descriptors use 16.
template <std::size_t Words>
class MultiIndexHamming {
 public:
  using Code = std::array<std::uint64_t, Words>;
  static constexpr int kBandBits = 16;
  static constexpr int kBands = static_cast<int>(Words) * 64 / kBandBits;
  static constexpr std::size_t kBuckets = std::size_t{1} << kBandBits;

  struct Hit {
    std::uint32_t id;
    int distance;
    friend bool operator==(const Hit&, const Hit&) = default;
  };

  MultiIndexHamming() = default;

  explicit MultiIndexHamming(std::vector<Code> codes) : codes_(std::move(codes)) {
    const std::size_t n = codes_.size();
    offsets_.assign(static_cast<std::size_t>(kBands) * (kBuckets + 1), 0);
    ids_.resize(static_cast<std::size_t>(kBands) * n);
    for (int b = 0; b < kBands; ++b) {
      std::uint32_t* off = &offsets_[static_cast<std::size_t>(b) * (kBuckets + 1)];
      for (const Code& c : codes_) ++off[band_key(c, b) + 1];
      for (std::size_t k = 0; k < kBuckets; ++k) off[k + 1] += off[k];
      std::vector<std::uint32_t> cursor(off, off + kBuckets);
      std::uint32_t* slots = &ids_[static_cast<std::size_t>(b) * n];
      for (std::size_t i = 0; i < n; ++i) {
        slots[cursor[band_key(codes_[i], b)]++] = static_cast<std::uint32_t>(i);
      }
    }
  }

  std::size_t size() const noexcept { return codes_.size(); }
  const Code& code(std::size_t i) const noexcept { return codes_[i]; }
  std::span<const Code> codes() const noexcept { return codes_; }

  static int distance(const Code& a, const Code& b) noexcept {
    int d = 0;
    for (std::size_t w = 0; w < Words; ++w) d += std::popcount(a[w] ^ b[w]);
    return d;
  }

  /// Every indexed code within `radius` of `query`, ascending by id.
  std::vector<Hit> within(const Code& query, int radius) const {
    std::vector<Hit> hits;
    if (radius < 0 || codes_.empty()) return hits;
    const int band_radius = radius / kBands;
    if (probe_count(band_radius) * kBands >= codes_.size()) {
      for (std::size_t i = 0; i < codes_.size(); ++i) {
        const int d = distance(query, codes_[i]);
        if (d <= radius) hits.push_back({static_cast<std::uint32_t>(i), d});
      }
      return hits;
    }
    std::vector<std::uint32_t> candidates;
    const std::size_t n = codes_.size();
    for (int b = 0; b < kBands; ++b) {
      const std::uint32_t* off = &offsets_[static_cast<std::size_t>(b) * (kBuckets + 1)];
      const std::uint32_t* slots = &ids_[static_cast<std::size_t>(b) * n];
      for_each_key_within(band_key(query, b), band_radius, [&](std::uint32_t key) {
        candidates.insert(candidates.end(), slots + off[key], slots + off[key + 1]);
      });
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (std::uint32_t id : candidates) {
      const int d = distance(query, codes_[id]);
      if (d <= radius) hits.push_back({id, d});
    }
    return hits;
  }

 private:
  static std::uint32_t band_key(const Code& c, int band) noexcept {
    const int word = band * kBandBits / 64;
    const int shift = band * kBandBits % 64;
    return static_cast<std::uint32_t>((c[word] >> shift) & (kBuckets - 1));
  }

  static std::size_t probe_count(int r) noexcept {
    std::size_t total = 0;
    std::size_t choose = 1;
    for (int i = 0; i <= std::min(r, kBandBits); ++i) {
      total += choose;
      choose = choose * static_cast<std::size_t>(kBandBits - i) / static_cast<std::size_t>(i + 1);
    }
    return total;
  }

  template <typename Fn>
  static void for_each_key_within(std::uint32_t key, int r, Fn&& fn) {
    fn(key);
    flip_from(key, 0, std::min(r, kBandBits), fn);
  }

  template <typename Fn>
  static void flip_from(std::uint32_t key, int first_bit, int remaining, Fn& fn) {
    if (remaining == 0) return;
    for (int bit = first_bit; bit < kBandBits; ++bit) {
      const std::uint32_t flipped = key ^ (1u << bit);
      fn(flipped);
      flip_from(flipped, bit + 1, remaining - 1, fn);
    }
  }

  std::vector<Code> codes_;
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint32_t> ids_;
};

using HashIndex = MultiIndexHamming<1>;
using DescriptorIndex = MultiIndexHamming<4>;

}  // namespace memeforge
