/*
Copyright 2026 the ctfgan authors
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
you may obtain a copy of the License at

                http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#pragma once

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "ctfgan/errors.hpp"
#include "ctfgan/serialize.hpp"
#include "ctfgan/tensor.hpp"

namespace ctfgan {

// Interleaved 8-bit RGB raster.
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  std::uint8_t& at(std::int64_t y, std::int64_t x, std::int64_t c) {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
  std::uint8_t at(std::int64_t y, std::int64_t x, std::int64_t c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
  }
};

namespace detail {

struct JpegErrorTrap {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX] = {0};
};

inline void jpeg_error_throw(j_common_ptr cinfo) {
  auto* trap = reinterpret_cast<JpegErrorTrap*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, trap->message);
  std::longjmp(trap->jump, 1);
}

inline Image decode_jpeg(const std::string& bytes, const std::string& origin) {
  jpeg_decompress_struct cinfo;
  JpegErrorTrap trap;
  cinfo.err = jpeg_std_error(&trap.mgr);
  trap.mgr.error_exit = jpeg_error_throw;
  if (setjmp(trap.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DataError("undecodable jpeg " + origin + ": " + trap.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  Image img;
  img.height = cinfo.output_height;
  img.width = cinfo.output_width;
  img.pixels.resize(static_cast<std::size_t>(img.height * img.width * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() +
                   static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

inline Image decode_png(const std::string& bytes, const std::string& origin) {
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
    throw DataError("undecodable png " + origin + ": " + pi.message);
  pi.format = PNG_FORMAT_RGB;

  Image img;
  img.height = pi.height;
  img.width = pi.width;
  img.pixels.resize(PNG_IMAGE_SIZE(pi));
  if (!png_image_finish_read(&pi, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw DataError("undecodable png " + origin + ": " + msg);
  }
  return img;
}

}  // namespace detail

// Decodes a PNG or JPEG file, sniffing the signature bytes. Alpha is
// dropped and grayscale expanded so callers always receive RGB.
inline Image load_image(const std::filesystem::path& path) {
  const std::string bytes = read_file_bytes(path);
  static const unsigned char png_sig[4] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), png_sig, 4) == 0)
    return detail::decode_png(bytes, path.string());
  if (bytes.size() >= 2 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8)
    return detail::decode_jpeg(bytes, path.string());
  throw DataError("unrecognized image signature: " + path.string());
}

inline std::string encode_png(const Image& img) {
  check_contract(img.height > 0 && img.width > 0 &&
                     img.pixels.size() == static_cast<std::size_t>(img.height * img.width * 3),
                 "encode_png: inconsistent raster");
  png_image pi;
  std::memset(&pi, 0, sizeof(pi));
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;

  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode sizing failed: ") + pi.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + pi.message);
  out.resize(size);
  return out;
}

inline void save_png(const std::filesystem::path& path, const Image& img) {
  atomic_write_bytes(path, encode_png(img));
}

// Pixel normalization: byte value b maps to b / 127.5 - 1 in [-1, 1].
inline double normalize_pixel(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

inline std::uint8_t denormalize_pixel(double v) {
  const double scaled = (v + 1.0) * 127.5;
  const double clamped = scaled < 0.0 ? 0.0 : (scaled > 255.0 ? 255.0 : scaled);
  return static_cast<std::uint8_t>(std::lround(clamped));
}

inline Tensor image_to_tensor(const Image& img) {
  Tensor t({3, img.height, img.width});
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < 3; ++c) t.at3(c, y, x) = normalize_pixel(img.at(y, x, c));
  return t;
}

inline Image tensor_to_image(const Tensor& t) {
  check_contract(t.rank() == 3 && t.dim(0) == 3, "tensor_to_image: expected [3,H,W]");
  Image img;
  img.height = t.dim(1);
  img.width = t.dim(2);
  img.pixels.resize(static_cast<std::size_t>(img.height * img.width * 3));
  for (std::int64_t y = 0; y < img.height; ++y)
    for (std::int64_t x = 0; x < img.width; ++x)
      for (std::int64_t c = 0; c < 3; ++c) img.at(y, x, c) = denormalize_pixel(t.at3(c, y, x));
  return img;
}

// Tiles a batch row-major into one raster. The grid must match the batch
// size exactly so layouts are unambiguous and reproducible.
inline Image tile_grid(const Tensor& batch, std::int64_t rows, std::int64_t cols) {
  check_contract(batch.rank() == 4 && batch.dim(1) == 3, "tile_grid: expected [N,3,H,W]");
  check_contract(rows >= 1 && cols >= 1 && rows * cols == batch.dim(0),
                 "tile_grid: grid " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " does not match batch of " + std::to_string(batch.dim(0)));
  const std::int64_t h = batch.dim(2), w = batch.dim(3);
  Image out;
  out.height = rows * h;
  out.width = cols * w;
  out.pixels.resize(static_cast<std::size_t>(out.height * out.width * 3));
  for (std::int64_t n = 0; n < batch.dim(0); ++n) {
    const std::int64_t gy = (n / cols) * h, gx = (n % cols) * w;
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        for (std::int64_t c = 0; c < 3; ++c)
          out.at(gy + y, gx + x, c) = denormalize_pixel(batch.at4(n, c, y, x));
  }
  return out;
}

}  // namespace ctfgan
