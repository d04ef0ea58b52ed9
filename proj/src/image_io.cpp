#include "memeforge/image_io.hpp"

#include <png.h>

#include <array>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

#include "memeforge/error.hpp"

namespace memeforge {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return f;
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&image, path.c_str()) == 0) {
    throw Error(ErrorCode::DecodeError, path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  const auto width = static_cast<int>(image.width);
  const auto height = static_cast<int>(image.height);
  if (width <= 0 || height <= 0) {
    png_image_free(&image);
    throw Error(ErrorCode::DecodeError, path.string() + ": empty image");
  }
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr) == 0) {
    const std::string message = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::DecodeError, path.string() + ": " + message);
  }
  return RgbImage(width, height, std::move(pixels));
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// Keeps libjpeg's longjmp confined to a frame whose automatic variables are
// all trivially destructible; output goes through references to caller state.
bool decode_jpeg(std::FILE* file, std::vector<std::uint8_t>& pixels, int& width, int& height,
                 char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  err.message[0] = '\0';
  if (setjmp(err.jump) != 0) {
    jpeg_destroy_decompress(&cinfo);
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  pixels.resize(static_cast<std::size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

RgbImage read_jpeg(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  std::vector<std::uint8_t> pixels;
  int width = 0;
  int height = 0;
  std::array<char, JMSG_LENGTH_MAX + 1> message{};
  if (!decode_jpeg(file.get(), pixels, width, height, message.data())) {
    throw Error(ErrorCode::DecodeError, path.string() + ": " + message.data());
  }
  if (width <= 0 || height <= 0) throw Error(ErrorCode::DecodeError, path.string() + ": empty image");
  return RgbImage(width, height, std::move(pixels));
}

template <int Channels>
void write_png_impl(const std::filesystem::path& path, const Image<Channels>& img) {
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw Error(ErrorCode::IoError, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr || setjmp(png_jmpbuf(png)) != 0) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()),
               static_cast<png_uint_32>(img.height()), 8,
               Channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto pixels = img.pixels();
  for (int y = 0; y < img.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() +
                                            static_cast<std::size_t>(y) * img.width() * Channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace

ImageFormat sniff_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::DecodeError, "cannot open " + path.string());
  std::array<unsigned char, 8> magic{};
  in.read(reinterpret_cast<char*>(magic.data()), magic.size());
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 8 && std::memcmp(magic.data(), "\x89PNG\r\n\x1a\n", 8) == 0) return ImageFormat::png;
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return ImageFormat::jpeg;
  if (got >= 4 && std::memcmp(magic.data(), "GIF8", 4) == 0) return ImageFormat::gif;
  return ImageFormat::unknown;
}

RgbImage read_rgb(const std::filesystem::path& path) {
  switch (sniff_format(path)) {
    case ImageFormat::png: return read_png(path);
    case ImageFormat::jpeg: return read_jpeg(path);
    case ImageFormat::gif:
      throw Error(ErrorCode::UnsupportedFormat, path.string() + ": GIF input is not supported");
    case ImageFormat::unknown: break;
  }
  throw Error(ErrorCode::UnsupportedFormat, path.string() + ": not a PNG or JPEG file");
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_png_impl(path, image);
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  write_png_impl(path, image);
}

}  // namespace memeforge
