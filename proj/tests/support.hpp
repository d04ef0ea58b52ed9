#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "memeforge/image.hpp"
#include "memeforge/rng.hpp"

namespace testing {

inline memeforge::GrayImage random_gray(int w, int h, memeforge::Rng& rng, int lo = 0, int hi = 255) {
  memeforge::GrayImage img(w, h);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))));
  return img;
}

inline memeforge::RgbImage random_rgb(int w, int h, memeforge::Rng& rng) {
  memeforge::RgbImage img(w, h);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

/// Blocky image: a few constant rectangles on a constant background.
inline memeforge::GrayImage blocky_gray(int w, int h, memeforge::Rng& rng, int blocks = 12) {
  memeforge::GrayImage img(w, h, static_cast<std::uint8_t>(rng.below(256)));
  for (int b = 0; b < blocks; ++b) {
    const int bw = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(w / 3)));
    const int bh = 4 + static_cast<int>(rng.below(static_cast<std::uint64_t>(h / 3)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - bw)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - bh)));
    const auto v = static_cast<std::uint8_t>(rng.below(256));
    for (int y = y0; y < y0 + bh; ++y)
      for (int x = x0; x < x0 + bw; ++x) img.at(x, y) = v;
  }
  return img;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("memeforge_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing
