#pragma once

#include "memeforge/feature_types.hpp"
#include "memeforge/image.hpp"

namespace memeforge {

inline constexpr int kDefaultRgbBins = 32;
inline constexpr int kDefaultGrayBins = 64;
inline constexpr int kLbpBins = 256;
inline constexpr int kBaselineDim = 3 * kDefaultRgbBins + kDefaultGrayBins + kLbpBins;

/// Per-channel histograms concatenated R|G|B, L1-normalized over all three.
/// `bins_per_channel` must divide 256 (BadBinCount otherwise).
FeatureVector rgb_histogram(const RgbImage& img, int bins_per_channel = kDefaultRgbBins);

FeatureVector gray_histogram(const GrayImage& img, int bins = kDefaultGrayBins);

/// Radius-1 LBP codes over interior pixels. Neighbours are visited clockwise
/// starting east (E, SE, S, SW, W, NW, N, NE) and packed E = bit 0; a bit is
/// set when the neighbour is >= the centre. Needs at least 3x3 pixels.
FeatureVector lbp_histogram(const GrayImage& img);

/// Code of the single interior pixel at (x, y); exposed for testing.
std::uint8_t lbp_code(const GrayImage& img, int x, int y);

/// 64-bit DCT hash:
///  1. bilinear resize to 32x32,
///  2. orthonormal 2-D DCT-II, keeping the 8x8 lowest frequencies,
///  3. DC coefficient set to 0,
///  4. bit i = coefficient i > median of the 64 values (strict).
/// The resized block is mean-centred before the transform. That only changes
/// the DC term, which step 3 discards anyway, but makes the hash of an image
/// shifted by a constant bit-identical.
PerceptualHash phash(const GrayImage& img);

/// The 8x8 low-frequency block (DC zeroed) that phash() thresholds, row-major
/// with the row index the vertical frequency.
std::array<double, 64> phash_coefficients(const GrayImage& img);

/// rgb | gray | lbp in that order. Throws KindMismatch when a part has the
/// wrong kind.
FeatureVector concat_baseline(const FeatureVector& rgb, const FeatureVector& gray,
                              const FeatureVector& lbp);

/// Baseline feature straight from an RGB image with default bin counts.
FeatureVector baseline_features(const RgbImage& img);

}  // namespace memeforge
