#include "memeforge/image.hpp"

#include <algorithm>
#include <string>

#include "memeforge/error.hpp"

namespace memeforge {

template <int Channels>
Image<Channels>::Image(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  }
  pixels_.assign(static_cast<std::size_t>(width) * height * Channels, fill);
}

template <int Channels>
Image<Channels>::Image(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "image dimensions must be positive");
  }
  if (pixels_.size() != static_cast<std::size_t>(width) * height * Channels) {
    throw Error(ErrorCode::InvalidArgument,
                "pixel buffer holds " + std::to_string(pixels_.size()) + " samples, expected " +
                    std::to_string(static_cast<std::size_t>(width) * height * Channels));
  }
}

std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept {
  return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

GrayImage to_gray(const RgbImage& rgb) {
  GrayImage out(rgb.width(), rgb.height());
  const auto src = rgb.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] = luma(src[3 * i], src[3 * i + 1], src[3 * i + 2]);
  }
  return out;
}

namespace {

constexpr int kWeightBits = 11;
constexpr std::int64_t kWeightOne = 1 << kWeightBits;

struct Tap {
  int lo;
  int hi;
  std::int64_t w_hi;  // weight of `hi`; `lo` gets kWeightOne - w_hi
};

// Source coordinate for destination index d is (d + 0.5) * src / dst - 0.5,
// evaluated exactly as the fraction ((2d + 1) * src - dst) / (2 * dst).
std::vector<Tap> make_taps(int src, int dst) {
  std::vector<Tap> taps(dst);
  const std::int64_t den = 2 * static_cast<std::int64_t>(dst);
  for (int d = 0; d < dst; ++d) {
    std::int64_t num = (2 * static_cast<std::int64_t>(d) + 1) * src - dst;
    if (num < 0) num = 0;
    int lo = static_cast<int>(num / den);
    std::int64_t frac = num % den;
    if (lo >= src - 1) {
      lo = src - 1;
      frac = 0;
    }
    const std::int64_t w = (frac * kWeightOne + den / 2) / den;
    taps[d] = Tap{lo, std::min(lo + 1, src - 1), w};
  }
  return taps;
}

}  // namespace

template <int Channels>
Image<Channels> resize_bilinear(const Image<Channels>& src, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw Error(ErrorCode::InvalidArgument, "target size must be positive");
  }
  if (src.empty()) throw Error(ErrorCode::InvalidArgument, "cannot resize an empty image");
  if (src.width() == width && src.height() == height) return src;

  const auto xs = make_taps(src.width(), width);
  const auto ys = make_taps(src.height(), height);
  Image<Channels> out(width, height);
  constexpr std::int64_t kHalf = std::int64_t{1} << (2 * kWeightBits - 1);
  for (int y = 0; y < height; ++y) {
    const Tap& ty = ys[y];
    for (int x = 0; x < width; ++x) {
      const Tap& tx = xs[x];
      for (int c = 0; c < Channels; ++c) {
        const std::int64_t top = (kWeightOne - tx.w_hi) * src.at(tx.lo, ty.lo, c) +
                                 tx.w_hi * src.at(tx.hi, ty.lo, c);
        const std::int64_t bottom = (kWeightOne - tx.w_hi) * src.at(tx.lo, ty.hi, c) +
                                    tx.w_hi * src.at(tx.hi, ty.hi, c);
        const std::int64_t v = (kWeightOne - ty.w_hi) * top + ty.w_hi * bottom;
        out.at(x, y, c) = static_cast<std::uint8_t>((v + kHalf) >> (2 * kWeightBits));
      }
    }
  }
  return out;
}

template class Image<1>;
template class Image<3>;
template Image<1> resize_bilinear(const Image<1>&, int, int);
template Image<3> resize_bilinear(const Image<3>&, int, int);

}  // namespace memeforge
