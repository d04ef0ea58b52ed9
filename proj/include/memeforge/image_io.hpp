#pragma once

#include <filesystem>

#include "memeforge/image.hpp"

namespace memeforge {

enum class ImageFormat { png, jpeg, gif, unknown };

/// Sniffs the leading magic bytes of a file.
ImageFormat sniff_format(const std::filesystem::path& path);

/// Decodes a PNG or JPEG file to 8-bit RGB. Alpha is dropped, palette and
/// 16-bit PNGs are expanded/stripped. GIF and anything else is rejected with
/// UnsupportedFormat; corrupt data raises DecodeError.
RgbImage read_rgb(const std::filesystem::path& path);

/// Writes an 8-bit PNG with fixed compression settings so identical pixels
/// always produce identical bytes.
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const GrayImage& image);

}  // namespace memeforge
