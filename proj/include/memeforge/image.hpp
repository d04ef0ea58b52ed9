#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace memeforge {

/// 8-bit row-major raster with `Channels` interleaved samples per pixel.
template <int Channels>
class Image {
 public:
  static constexpr int kChannels = Channels;

  Image() = default;
  Image(int width, int height, std::uint8_t fill = 0);
  Image(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t at(int x, int y, int c = 0) const noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
  }
  std::uint8_t& at(int x, int y, int c = 0) noexcept {
    return pixels_[(static_cast<std::size_t>(y) * width_ + x) * Channels + c];
  }

  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

using GrayImage = Image<1>;
using RgbImage = Image<3>;

/// Luma with ITU-R 601 weights, rounded half up: (299R + 587G + 114B + 500) / 1000.
std::uint8_t luma(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept;
GrayImage to_gray(const RgbImage& rgb);

/// Bilinear resampling with pixel-center alignment. Source positions and
/// weights are computed in integer arithmetic (11-bit weights), so results
/// are identical across platforms, resizing to the native size is the
/// identity, and adding a constant to every input pixel adds the same
/// constant to every output pixel when nothing clips.
template <int Channels>
Image<Channels> resize_bilinear(const Image<Channels>& src, int width, int height);

extern template class Image<1>;
extern template class Image<3>;
extern template Image<1> resize_bilinear(const Image<1>&, int, int);
extern template Image<3> resize_bilinear(const Image<3>&, int, int);

}  // namespace memeforge
