#pragma once

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "contifuse/common.hpp"
#include "contifuse/tensor.hpp"

namespace contifuse {

/// Decoded 8-bit image, rows interleaved; channels is 1 (gray) or 3 (RGB).
struct ImageU8 {
  Dim height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(Dim i, Dim j, Dim c) const {
    return pixels[std::size_t((i * width + j) * channels + c)];
  }
};

namespace detail {

inline bool has_magic(const std::string& path, const unsigned char* magic, std::size_t n) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw RuntimeError("cannot open image file: " + path);
  unsigned char head[8] = {};
  const std::size_t got = std::fread(head, 1, sizeof head, f);
  std::fclose(f);
  return got >= n && std::memcmp(head, magic, n) == 0;
}

inline ImageU8 load_png(const std::string& path) {
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&im, path.c_str()))
    throw RuntimeError("PNG read failed for " + path + ": " + im.message);
  const bool color = (im.format & PNG_FORMAT_FLAG_COLOR) != 0;
  im.format = PNG_FORMAT_RGBA;  // normalize; alpha composited below
  std::vector<std::uint8_t> rgba(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, rgba.data(), 0, nullptr)) {
    const std::string msg = im.message;
    png_image_free(&im);
    throw RuntimeError("PNG decode failed for " + path + ": " + msg);
  }
  ImageU8 out;
  out.height = Dim(im.height);
  out.width = Dim(im.width);
  out.channels = color ? 3 : 1;
  out.pixels.resize(std::size_t(out.height * out.width * out.channels));
  const Dim n = out.height * out.width;
  for (Dim p = 0; p < n; ++p) {
    const std::uint8_t* px = rgba.data() + 4 * p;
    const unsigned a = px[3];
    if (color) {
      for (Dim c = 0; c < 3; ++c)
        out.pixels[std::size_t(3 * p + c)] = std::uint8_t((unsigned(px[c]) * a + 127) / 255);
    } else {
      out.pixels[std::size_t(p)] = std::uint8_t((unsigned(px[0]) * a + 127) / 255);
    }
  }
  return out;
}

struct JpegErrorTrap {
  jpeg_error_mgr mgr;
  std::jmp_buf env;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_trap(j_common_ptr cinfo) {
  auto* trap = reinterpret_cast<JpegErrorTrap*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, trap->message);
  std::longjmp(trap->env, 1);
}

inline ImageU8 load_jpeg(const std::string& path) {
  ImageU8 out;
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw RuntimeError("cannot open image file: " + path);

  jpeg_decompress_struct cinfo;
  JpegErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = jpeg_error_trap;
  trap.message[0] = '\0';
  // Only trivially-destructible state may be created past this point.
  if (setjmp(trap.env)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw RuntimeError("JPEG decode failed for " + path + ": " + trap.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.height = Dim(cinfo.output_height);
  out.width = Dim(cinfo.output_width);
  out.channels = Dim(cinfo.output_components);
  out.pixels.resize(std::size_t(out.height * out.width * out.channels));
  const Dim stride = out.width * out.channels;
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + Dim(cinfo.output_scanline) * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return out;
}

}  // namespace detail

/// Loads an 8-bit PNG or JPEG, detected by file magic.  Alpha is composited
/// over black; 16-bit PNGs are reduced.  Result has 1 or 3 channels.
inline ImageU8 load_image(const std::string& path) {
  static const unsigned char png_magic[4] = {0x89, 'P', 'N', 'G'};
  static const unsigned char jpg_magic[3] = {0xFF, 0xD8, 0xFF};
  if (detail::has_magic(path, png_magic, 4)) return detail::load_png(path);
  if (detail::has_magic(path, jpg_magic, 3)) return detail::load_jpeg(path);
  throw RuntimeError("unsupported image format (not PNG/JPEG): " + path);
}

inline void save_png(const std::string& path, const ImageU8& img) {
  require(img.channels == 1 || img.channels == 3, "save_png: 1 or 3 channels");
  require(img.height > 0 && img.width > 0, "save_png: empty image");
  require(Dim(img.pixels.size()) == img.height * img.width * img.channels,
          "save_png: pixel buffer size mismatch");
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  im.width = png_uint_32(img.width);
  im.height = png_uint_32(img.height);
  im.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&im, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw RuntimeError("PNG write failed for " + path + ": " + im.message);
}

/// Quantizes a [0,1] image to 8 bits (round half up after clamping).
template <typename T>
ImageU8 quantize_gray(const Tensor<T>& x) {
  require(x.rank() == 2, "quantize_gray: image must be H x W");
  ImageU8 out;
  out.height = x.dim(0);
  out.width = x.dim(1);
  out.channels = 1;
  out.pixels.resize(std::size_t(x.numel()));
  for (Dim i = 0; i < x.numel(); ++i) {
    double v = double(x[i]);
    v = v < 0 ? 0 : (v > 1 ? 1 : v);
    out.pixels[std::size_t(i)] = std::uint8_t(v * 255.0 + 0.5);
  }
  return out;
}

}  // namespace contifuse
