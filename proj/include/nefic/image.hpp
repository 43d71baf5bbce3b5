// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_IMAGE_HPP_
#define NEFIC_IMAGE_HPP_

#include <png.h>

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "nefic/tensor.hpp"

namespace nefic {

// 8-bit interleaved RGB image; the exchange type between files and tensors.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // height*width*3, row-major

  bool valid() const {
    return width > 0 && height > 0 &&
           rgb.size() == size_t(width) * size_t(height) * 3;
  }
};

// [3,H,W] tensor in [0,1] from 8-bit RGB.
template <class S>
Tensor<S> image_to_tensor(const ImageU8& img) {
  NEFIC_CHECK(img.valid(), IoError, "image_to_tensor: malformed image");
  Tensor<S> t({3, img.height, img.width});
  const int64_t hw = int64_t(img.height) * img.width;
  for (int64_t p = 0; p < hw; ++p)
    for (int64_t c = 0; c < 3; ++c)
      t[c * hw + p] = S(img.rgb[size_t(p * 3 + c)]) / S(255);
  return t;
}

template <class S>
ImageU8 tensor_to_image(const Tensor<S>& t) {
  NEFIC_CHECK(t.shape().size() == 3 && t.shape()[0] == 3, ShapeError,
              "tensor_to_image: need [3,H,W], got ", shape_str(t.shape()));
  ImageU8 img;
  img.height = int(t.shape()[1]);
  img.width = int(t.shape()[2]);
  img.rgb.resize(size_t(img.height) * size_t(img.width) * 3);
  const int64_t hw = int64_t(img.height) * img.width;
  for (int64_t p = 0; p < hw; ++p)
    for (int64_t c = 0; c < 3; ++c) {
      const double v = std::clamp(double(t[c * hw + p]), 0.0, 1.0);
      img.rgb[size_t(p * 3 + c)] = uint8_t(std::lround(v * 255.0));
    }
  return img;
}

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

inline ImageU8 load_png(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  NEFIC_CHECK(f != nullptr, IoError, "cannot open '", path, "'");
  png_byte sig[8];
  NEFIC_CHECK(std::fread(sig, 1, 8, f.get()) == 8 && !png_sig_cmp(sig, 0, 8),
              IoError, "'", path, "' is not a PNG file");

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  NEFIC_CHECK(png, IoError, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng info init failed");
  }
  ImageU8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(str_cat("libpng failed reading '", path, "'"));
  }
  png_init_io(png, f.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  img.width = int(png_get_image_width(png, info));
  img.height = int(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  // Normalize every input to 8-bit RGB.
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS))
    png_set_strip_alpha(png);
  png_read_update_info(png, info);
  NEFIC_CHECK(png_get_rowbytes(png, info) == size_t(img.width) * 3, IoError,
              "'", path, "' did not normalize to RGB8");

  img.rgb.resize(size_t(img.width) * size_t(img.height) * 3);
  rows.resize(size_t(img.height));
  for (int r = 0; r < img.height; ++r)
    rows[size_t(r)] = img.rgb.data() + size_t(r) * size_t(img.width) * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void save_png(const std::string& path, const ImageU8& img) {
  NEFIC_CHECK(img.valid(), IoError, "save_png: malformed image");
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  NEFIC_CHECK(f != nullptr, IoError, "cannot write '", path, "'");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  NEFIC_CHECK(png, IoError, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng info init failed");
  }
  std::vector<png_bytep> rows(size_t(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(str_cat("libpng failed writing '", path, "'"));
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int r = 0; r < img.height; ++r)
    rows[size_t(r)] =
        const_cast<png_bytep>(img.rgb.data() + size_t(r) * size_t(img.width) * 3);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline ImageU8 load_ppm(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  NEFIC_CHECK(f != nullptr, IoError, "cannot open '", path, "'");
  char magic[3] = {};
  NEFIC_CHECK(std::fscanf(f.get(), "%2s", magic) == 1 &&
                  std::strcmp(magic, "P6") == 0,
              IoError, "'", path, "' is not a binary PPM (P6)");
  auto next_int = [&]() {
    int c;
    do {
      c = std::fgetc(f.get());
      if (c == '#')
        while (c != '\n' && c != EOF) c = std::fgetc(f.get());
    } while (std::isspace(c));
    int v = 0;
    bool any = false;
    while (std::isdigit(c)) {
      v = v * 10 + (c - '0');
      any = true;
      c = std::fgetc(f.get());
    }
    NEFIC_CHECK(any, IoError, "'", path, "': malformed PPM header");
    return v;
  };
  ImageU8 img;
  img.width = next_int();
  img.height = next_int();
  const int maxval = next_int();
  NEFIC_CHECK(img.width > 0 && img.height > 0 && maxval == 255, IoError, "'",
              path, "': unsupported PPM header");
  img.rgb.resize(size_t(img.width) * size_t(img.height) * 3);
  NEFIC_CHECK(std::fread(img.rgb.data(), 1, img.rgb.size(), f.get()) ==
                  img.rgb.size(),
              IoError, "'", path, "': truncated PPM payload");
  return img;
}

inline void save_ppm(const std::string& path, const ImageU8& img) {
  NEFIC_CHECK(img.valid(), IoError, "save_ppm: malformed image");
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  NEFIC_CHECK(f != nullptr, IoError, "cannot write '", path, "'");
  std::fprintf(f.get(), "P6\n%d %d\n255\n", img.width, img.height);
  NEFIC_CHECK(std::fwrite(img.rgb.data(), 1, img.rgb.size(), f.get()) ==
                  img.rgb.size(),
              IoError, "short write to '", path, "'");
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline ImageU8 load_image(const std::string& path) {
  if (has_suffix(path, ".png") || has_suffix(path, ".PNG")) return load_png(path);
  if (has_suffix(path, ".ppm") || has_suffix(path, ".PPM")) return load_ppm(path);
  throw IoError(str_cat("unsupported image format: '", path,
                        "' (expected .png or .ppm)"));
}

inline void save_image(const std::string& path, const ImageU8& img) {
  if (has_suffix(path, ".png") || has_suffix(path, ".PNG")) {
    save_png(path, img);
    return;
  }
  if (has_suffix(path, ".ppm") || has_suffix(path, ".PPM")) {
    save_ppm(path, img);
    return;
  }
  throw IoError(str_cat("unsupported image format: '", path,
                        "' (expected .png or .ppm)"));
}

}  // namespace nefic

#endif  // NEFIC_IMAGE_HPP_
