#pragma once

// Grayscale raster type, binary PGM (P5) codec, luminance reduction,
// bilinear resampling and cropping.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "tbnet/error.hpp"

namespace tbnet {

/// Single-channel raster, row-major, intensities in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;

  GrayImage(std::size_t width, std::size_t height, double fill = 0.0)
      : width_(width), height_(height), data_(width * height, fill) {
    if (width == 0 || height == 0) throw PreconditionError("GrayImage: dimensions must be >= 1");
    check_range();
  }

  GrayImage(std::size_t width, std::size_t height, std::vector<double> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (width == 0 || height == 0) throw PreconditionError("GrayImage: dimensions must be >= 1");
    if (data_.size() != width * height)
      throw ShapeError("GrayImage: data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(width) + "x" + std::to_string(height));
    check_range();
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // (x, y) = (column, row)
  double operator()(std::size_t x, std::size_t y) const { return data_[y * width_ + x]; }

  std::span<const double> pixels() const { return data_; }

  bool operator==(const GrayImage&) const = default;

 private:
  void check_range() const {
    for (double v : data_)
      if (!(v >= 0.0 && v <= 1.0))
        throw PreconditionError("GrayImage: intensity " + std::to_string(v) + " outside [0, 1]");
  }

  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> data_;
};

struct BBox {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t w = 1;
  std::size_t h = 1;

  bool operator==(const BBox&) const = default;

  bool fits(const GrayImage& img) const {
    return w >= 1 && h >= 1 && x + w <= img.width() && y + h <= img.height();
  }
};

// ---------------------------------------------------------------------------
// PGM (P5, 8-bit)

namespace detail {

struct PgmCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  long read_uint(const char* field) {
    skip_space_and_comments();
    std::size_t start = pos;
    long value = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > 1'000'000'000L) throw DecodeError(std::string("PGM: ") + field + " too large");
      ++pos;
    }
    if (pos == start) throw DecodeError(std::string("PGM: missing or malformed ") + field);
    return value;
  }
};

}  // namespace detail

inline GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw DecodeError("PGM: bad magic (expected P5)");
  detail::PgmCursor cur{bytes, 2};
  if (cur.pos < bytes.size() && !std::isspace(bytes[cur.pos]) && bytes[cur.pos] != '#')
    throw DecodeError("PGM: bad magic (expected P5)");
  const long width = cur.read_uint("width");
  const long height = cur.read_uint("height");
  const long maxval = cur.read_uint("maxval");
  if (width < 1) throw DecodeError("PGM: width must be >= 1");
  if (height < 1) throw DecodeError("PGM: height must be >= 1");
  if (maxval < 1 || maxval > 255) throw DecodeError("PGM: maxval " + std::to_string(maxval) + " outside [1, 255]");
  // exactly one whitespace byte separates the header from the raster
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos]))
    throw DecodeError("PGM: truncated payload (no raster after header)");
  ++cur.pos;
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - cur.pos < n)
    throw DecodeError("PGM: truncated payload (expected " + std::to_string(n) + " bytes, got " +
                      std::to_string(bytes.size() - cur.pos) + ")");
  std::vector<double> data(n);
  const double scale = static_cast<double>(maxval);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = bytes[cur.pos + i];
    if (p > maxval) throw DecodeError("PGM: pixel value exceeds maxval at index " + std::to_string(i));
    data[i] = p / scale;
  }
  return GrayImage(static_cast<std::size_t>(width), static_cast<std::size_t>(height), std::move(data));
}

/// Quantizes to maxval 255 with round-to-nearest.
inline std::vector<std::uint8_t> encode_pgm(const GrayImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + img.size());
  for (double v : img.pixels()) out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  return out;
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pgm(bytes);
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write image " + path.string());
  const auto bytes = encode_pgm(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

// ---------------------------------------------------------------------------

inline GrayImage rgb_to_gray(std::size_t width, std::size_t height, std::span<const double> r,
                             std::span<const double> g, std::span<const double> b) {
  const std::size_t n = width * height;
  if (r.size() != n || g.size() != n || b.size() != n)
    throw ShapeError("rgb_to_gray: channel sizes differ from " + std::to_string(width) + "x" +
                     std::to_string(height));
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = std::clamp(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i], 0.0, 1.0);
  return GrayImage(width, height, std::move(out));
}

/// Half-pixel-centre bilinear resampling with edge clamping.
inline GrayImage resize_bilinear(const GrayImage& img, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw PreconditionError("resize_bilinear: output dimensions must be >= 1");
  if (out_w == img.width() && out_h == img.height()) return img;

  const double sx = static_cast<double>(img.width()) / static_cast<double>(out_w);
  const double sy = static_cast<double>(img.height()) / static_cast<double>(out_h);
  const auto max_x = static_cast<double>(img.width() - 1);
  const auto max_y = static_cast<double>(img.height() - 1);

  std::vector<double> out(out_w * out_h);
  for (std::size_t j = 0; j < out_h; ++j) {
    const double fy = std::clamp((static_cast<double>(j) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t i = 0; i < out_w; ++i) {
      const double fx = std::clamp((static_cast<double>(i) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
      const double tx = fx - static_cast<double>(x0);
      const double top = img(x0, y0) * (1.0 - tx) + img(x1, y0) * tx;
      const double bottom = img(x0, y1) * (1.0 - tx) + img(x1, y1) * tx;
      out[j * out_w + i] = std::clamp(top * (1.0 - ty) + bottom * ty, 0.0, 1.0);
    }
  }
  return GrayImage(out_w, out_h, std::move(out));
}

inline GrayImage crop(const GrayImage& img, const BBox& box) {
  if (!box.fits(img))
    throw PreconditionError("crop: box (" + std::to_string(box.x) + "," + std::to_string(box.y) + "," +
                            std::to_string(box.w) + "," + std::to_string(box.h) + ") outside " +
                            std::to_string(img.width()) + "x" + std::to_string(img.height()) + " image");
  std::vector<double> out;
  out.reserve(box.w * box.h);
  for (std::size_t j = 0; j < box.h; ++j)
    for (std::size_t i = 0; i < box.w; ++i) out.push_back(img(box.x + i, box.y + j));
  return GrayImage(box.w, box.h, std::move(out));
}

}  // namespace tbnet
