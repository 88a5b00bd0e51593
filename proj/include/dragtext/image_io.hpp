// Copyright 2026 The dragtext Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include <png.h>
// jpeglib.h expects size_t and FILE to be declared first.
#include <cstddef>
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dragtext/domain.hpp"

namespace dragtext {

inline constexpr int kMaxImageSide = 4096;

using Bytes = std::vector<unsigned char>;

struct RgbPixels {
  int width = 0;
  int height = 0;
  Bytes data;  // row-major RGB, 8 bits per channel
};

namespace detail {

inline bool is_png(const Bytes& b) {
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::memcmp(b.data(), sig, 8) == 0;
}

inline bool is_jpeg(const Bytes& b) { return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF; }

inline void check_size(int w, int h) {
  if (w <= 0 || h <= 0) fail(ErrorCode::BadImage, "image has no pixels");
  if (w > kMaxImageSide || h > kMaxImageSide) {
    fail(ErrorCode::TooLarge, "image ", w, "x", h, " exceeds ", kMaxImageSide, "x", kMaxImageSide);
  }
}

inline RgbPixels decode_png_rgb(const Bytes& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    fail(ErrorCode::BadImage, "cannot read PNG: ", image.message);
  }
  const int w = static_cast<int>(image.width), h = static_cast<int>(image.height);
  if (w > kMaxImageSide || h > kMaxImageSide) {
    png_image_free(&image);
    check_size(w, h);
  }
  image.format = PNG_FORMAT_RGB;
  RgbPixels out{w, h, Bytes(PNG_IMAGE_SIZE(image), 0)};
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::BadImage, "cannot decode PNG: ", msg);
  }
  check_size(w, h);
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

extern "C" inline void dragtext_jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

// 0 = ok, 1 = decode error, 2 = too large. No objects with destructors are
// created between setjmp and the jumps back to it.
inline int decode_jpeg_raw(const Bytes& bytes, RgbPixels& out, char* message) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = dragtext_jpeg_error_exit;
  err.message[0] = '\0';
  if (setjmp(err.jump)) {
    std::strncpy(message, err.message, JMSG_LENGTH_MAX);
    jpeg_destroy_decompress(&cinfo);
    return 1;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.image_width > unsigned(kMaxImageSide) || cinfo.image_height > unsigned(kMaxImageSide)) {
    out.width = static_cast<int>(cinfo.image_width);
    out.height = static_cast<int>(cinfo.image_height);
    jpeg_destroy_decompress(&cinfo);
    return 2;
  }
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.data.resize(std::size_t(out.width) * out.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.data.data() + std::size_t(cinfo.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return 0;
}

inline RgbPixels decode_jpeg_rgb(const Bytes& bytes) {
  RgbPixels out;
  char message[JMSG_LENGTH_MAX] = {0};
  const int rc = decode_jpeg_raw(bytes, out, message);
  if (rc == 1) fail(ErrorCode::BadImage, "cannot decode JPEG: ", message);
  check_size(out.width, out.height);
  return out;
}

}  // namespace detail

/// PNG or JPEG bytes to 8-bit RGB. Alpha is composited onto black.
inline RgbPixels decode_rgb(const Bytes& bytes) {
  if (detail::is_png(bytes)) return detail::decode_png_rgb(bytes);
  if (detail::is_jpeg(bytes)) return detail::decode_jpeg_rgb(bytes);
  detail::fail(ErrorCode::BadImage, "not a PNG or JPEG stream");
}

inline ImageTensor decode_image(const Bytes& bytes) {
  const RgbPixels px = decode_rgb(bytes);
  Tensor3 t(3, px.height, px.width);
  for (int r = 0; r < px.height; ++r) {
    for (int c = 0; c < px.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        t.at(ch, r, c) = px.data[(std::size_t(r) * px.width + c) * 3 + ch] / 255.0;
      }
    }
  }
  return ImageTensor(std::move(t));
}

/// Binary mask at image resolution: a pixel is editable when any colour
/// channel is nonzero.
inline Matrix decode_mask(const Bytes& bytes) {
  const RgbPixels px = decode_rgb(bytes);
  Matrix m = Matrix::Zero(px.height, px.width);
  for (int r = 0; r < px.height; ++r) {
    for (int c = 0; c < px.width; ++c) {
      const unsigned char* p = &px.data[(std::size_t(r) * px.width + c) * 3];
      if (p[0] || p[1] || p[2]) m(r, c) = 1.0;
    }
  }
  return m;
}

inline Bytes encode_png(int width, int height, const Bytes& data, bool gray) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, data.data(), 0, nullptr)) {
    detail::fail(ErrorCode::BadImage, "cannot size PNG: ", image.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, data.data(), 0, nullptr)) {
    detail::fail(ErrorCode::BadImage, "cannot encode PNG: ", image.message);
  }
  out.resize(size);
  return out;
}

inline unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline Bytes encode_png(const ImageTensor& image) {
  const Tensor3& t = image.pixels();
  Bytes data(std::size_t(t.pixels()) * 3);
  for (int r = 0; r < t.height; ++r) {
    for (int c = 0; c < t.width; ++c) {
      for (int ch = 0; ch < 3; ++ch) data[(std::size_t(r) * t.width + c) * 3 + ch] = to_byte(t.at(ch, r, c));
    }
  }
  return encode_png(t.width, t.height, data, false);
}

inline Bytes encode_mask_png(const Matrix& mask) {
  Bytes data(static_cast<std::size_t>(mask.size()));
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) data[std::size_t(r) * mask.cols() + c] = mask(r, c) != 0.0 ? 255 : 0;
  }
  return encode_png(static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), data, true);
}

/// Images side by side, left to right.
inline ImageTensor hstack(const std::vector<ImageTensor>& images) {
  if (images.empty()) detail::fail(ErrorCode::BadInput, "nothing to stack");
  const int h = images.front().height();
  int w = 0;
  for (const auto& im : images) {
    if (im.height() != h) detail::fail(ErrorCode::ResolutionMismatch, "strip images differ in height");
    w += im.width();
  }
  Tensor3 t(3, h, w);
  int off = 0;
  for (const auto& im : images) {
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < im.width(); ++c) t.column(r, off + c) = im.pixels().column(r, c);
    }
    off += im.width();
  }
  return ImageTensor(std::move(t));
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::fail(ErrorCode::BadInput, "cannot open ", path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) detail::fail(ErrorCode::BadInput, "cannot write ", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, Bytes(text.begin(), text.end()));
}

}  // namespace dragtext
