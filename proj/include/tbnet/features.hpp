#pragma once

// Salient-feature extraction: summed-area tables, block-mean ("Haar") maps,
// 8-neighbour local binary patterns, and NCC template matching used to
// localize the lung region.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tbnet/error.hpp"
#include "tbnet/imaging.hpp"

namespace tbnet {

/// Summed-area table of size (w+1) x (h+1); row 0 and column 0 are zero.
class IntegralImage {
 public:
  explicit IntegralImage(const GrayImage& img)
      : width_(img.width()), height_(img.height()), sums_((width_ + 1) * (height_ + 1), 0.0L) {
    for (std::size_t y = 0; y < height_; ++y) {
      long double row = 0.0L;
      for (std::size_t x = 0; x < width_; ++x) {
        row += img(x, y);
        at(x + 1, y + 1) = at(x + 1, y) + row;
      }
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }

  /// S(i, j): sum of pixels with column < i and row < j.
  long double operator()(std::size_t i, std::size_t j) const { return sums_[j * (width_ + 1) + i]; }

  long double rect_sum(std::size_t x, std::size_t y, std::size_t w, std::size_t h) const {
    return (*this)(x + w, y + h) - (*this)(x, y + h) - (*this)(x + w, y) + (*this)(x, y);
  }

 private:
  long double& at(std::size_t i, std::size_t j) { return sums_[j * (width_ + 1) + i]; }

  std::size_t width_;
  std::size_t height_;
  std::vector<long double> sums_;
};

inline IntegralImage integral_image(const GrayImage& img) { return IntegralImage(img); }

/// Mean over the k x k window centred on each pixel, clipped to the image.
inline GrayImage block_mean_map(const GrayImage& img, std::size_t k) {
  if (k == 0 || k % 2 == 0) throw PreconditionError("block_mean_map: window size k=" + std::to_string(k) + " must be odd");
  if (k > std::min(img.width(), img.height()))
    throw PreconditionError("block_mean_map: window size k=" + std::to_string(k) + " exceeds image dimension");
  if (k == 1) return img;

  const IntegralImage sat(img);
  const std::size_t r = k / 2;
  std::vector<double> out(img.size());
  for (std::size_t y = 0; y < img.height(); ++y) {
    const std::size_t y0 = y >= r ? y - r : 0;
    const std::size_t y1 = std::min(y + r + 1, img.height());
    for (std::size_t x = 0; x < img.width(); ++x) {
      const std::size_t x0 = x >= r ? x - r : 0;
      const std::size_t x1 = std::min(x + r + 1, img.width());
      const long double area = static_cast<long double>((x1 - x0) * (y1 - y0));
      const auto mean = static_cast<double>(sat.rect_sum(x0, y0, x1 - x0, y1 - y0) / area);
      out[y * img.width() + x] = std::clamp(mean, 0.0, 1.0);
    }
  }
  return GrayImage(img.width(), img.height(), std::move(out));
}

// ---------------------------------------------------------------------------
// Local binary patterns

struct LBPMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> codes;

  std::uint8_t operator()(std::size_t x, std::size_t y) const { return codes[y * width + x]; }
  bool operator==(const LBPMap&) const = default;
};

/// Clockwise from top-left; neighbour i contributes bit 2^i when it is >= the centre.
inline constexpr std::array<std::array<int, 2>, 8> kLbpOffsets{{
    {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1}, {-1, 0},
}};

inline LBPMap lbp_map(const GrayImage& img) {
  if (img.width() < 3 || img.height() < 3)
    throw PreconditionError("lbp_map: image must be at least 3x3, got " + std::to_string(img.width()) + "x" +
                            std::to_string(img.height()));
  LBPMap map{img.width(), img.height(), std::vector<std::uint8_t>(img.size(), 0)};
  const auto px = img.pixels();
  const std::size_t w = img.width();
  for (std::size_t y = 1; y + 1 < img.height(); ++y) {
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double c = px[y * w + x];
      unsigned code = 0;
      for (std::size_t bit = 0; bit < 8; ++bit) {
        const std::size_t nx = x + static_cast<std::size_t>(kLbpOffsets[bit][0]);
        const std::size_t ny = y + static_cast<std::size_t>(kLbpOffsets[bit][1]);
        if (px[ny * w + nx] >= c) code |= 1u << bit;
      }
      map.codes[y * w + x] = static_cast<std::uint8_t>(code);
    }
  }
  return map;
}

inline GrayImage lbp_to_image(const LBPMap& map) {
  std::vector<double> out(map.codes.size());
  std::transform(map.codes.begin(), map.codes.end(), out.begin(),
                 [](std::uint8_t c) { return static_cast<double>(c) / 255.0; });
  return GrayImage(map.width, map.height, std::move(out));
}

// ---------------------------------------------------------------------------
// Template matching

inline constexpr double kDefaultDetectionThreshold = 0.6;
inline constexpr std::size_t kDefaultHaarWindow = 15;

struct TemplateMatchResult {
  BBox best;
  double score = 0.0;
  bool success = false;
};

namespace detail {
// per-pixel variance below this is treated as a flat window
inline constexpr double kFlatVariance = 1e-12;
}  // namespace detail

/// Zero-mean NCC at every placement; flat windows score 0. Ties resolve to
/// the smallest row, then the smallest column.
inline TemplateMatchResult match_template(const GrayImage& feature, const GrayImage& templ,
                                          double threshold = kDefaultDetectionThreshold) {
  if (templ.width() > feature.width() || templ.height() > feature.height())
    throw PreconditionError("match_template: template " + std::to_string(templ.width()) + "x" +
                            std::to_string(templ.height()) + " larger than feature image " +
                            std::to_string(feature.width()) + "x" + std::to_string(feature.height()));
  const std::size_t tw = templ.width();
  const std::size_t th = templ.height();
  const auto n = static_cast<double>(tw * th);

  double t_mean = 0.0;
  for (double v : templ.pixels()) t_mean += v;
  t_mean /= n;
  std::vector<double> t_centered(templ.size());
  double t_ss = 0.0;
  for (std::size_t i = 0; i < templ.size(); ++i) {
    t_centered[i] = templ.pixels()[i] - t_mean;
    t_ss += t_centered[i] * t_centered[i];
  }
  if (t_ss / n <= detail::kFlatVariance) throw PreconditionError("match_template: template has zero variance");
  const double t_norm = std::sqrt(t_ss);

  const auto px = feature.pixels();
  const std::size_t fw = feature.width();
  TemplateMatchResult result{BBox{0, 0, tw, th}, -std::numeric_limits<double>::infinity(), false};
  for (std::size_t y = 0; y + th <= feature.height(); ++y) {
    for (std::size_t x = 0; x + tw <= fw; ++x) {
      double w_mean = 0.0;
      for (std::size_t j = 0; j < th; ++j)
        for (std::size_t i = 0; i < tw; ++i) w_mean += px[(y + j) * fw + x + i];
      w_mean /= n;
      double w_ss = 0.0;
      double cross = 0.0;
      for (std::size_t j = 0; j < th; ++j) {
        for (std::size_t i = 0; i < tw; ++i) {
          const double d = px[(y + j) * fw + x + i] - w_mean;
          w_ss += d * d;
          cross += d * t_centered[j * tw + i];
        }
      }
      double score = 0.0;
      if (w_ss / n > detail::kFlatVariance) score = std::clamp(cross / (std::sqrt(w_ss) * t_norm), -1.0, 1.0);
      if (score > result.score) {
        result.score = score;
        result.best = BBox{x, y, tw, th};
      }
    }
  }
  result.success = result.score >= threshold;
  return result;
}

enum class FeatureMethod { Haar, Lbp };

inline std::string_view to_string(FeatureMethod m) { return m == FeatureMethod::Haar ? "haar" : "lbp"; }

inline FeatureMethod parse_feature_method(std::string_view s) {
  if (s == "haar") return FeatureMethod::Haar;
  if (s == "lbp") return FeatureMethod::Lbp;
  throw PreconditionError("unknown feature method '" + std::string(s) + "' (expected haar or lbp)");
}

/// The feature image a method matches on: block means for Haar, scaled codes for LBP.
inline GrayImage feature_image(const GrayImage& img, FeatureMethod method, std::size_t k) {
  return method == FeatureMethod::Haar ? block_mean_map(img, k) : lbp_to_image(lbp_map(img));
}

inline TemplateMatchResult detect_roi(const GrayImage& img, const GrayImage& templ, FeatureMethod method,
                                      std::size_t k = kDefaultHaarWindow,
                                      double threshold = kDefaultDetectionThreshold) {
  return match_template(feature_image(img, method, k), templ, threshold);
}

/// Reference pattern: pixel-wise mean of the feature maps of equally sized lung crops.
inline GrayImage build_template(std::span<const GrayImage> crops, FeatureMethod method,
                                std::size_t k = kDefaultHaarWindow) {
  if (crops.empty()) throw PreconditionError("build_template: no crops supplied");
  const std::size_t w = crops.front().width();
  const std::size_t h = crops.front().height();
  std::vector<double> acc(w * h, 0.0);
  for (const auto& c : crops) {
    if (c.width() != w || c.height() != h)
      throw ShapeError("build_template: crops must share dimensions " + std::to_string(w) + "x" + std::to_string(h));
    const GrayImage f = feature_image(c, method, k);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += f.pixels()[i];
  }
  for (double& v : acc) v = std::clamp(v / static_cast<double>(crops.size()), 0.0, 1.0);
  return GrayImage(w, h, std::move(acc));
}

inline double iou(const BBox& a, const BBox& b) {
  const std::size_t ix0 = std::max(a.x, b.x);
  const std::size_t iy0 = std::max(a.y, b.y);
  const std::size_t ix1 = std::min(a.x + a.w, b.x + b.w);
  const std::size_t iy1 = std::min(a.y + a.h, b.y + b.h);
  const std::size_t inter = (ix1 > ix0 && iy1 > iy0) ? (ix1 - ix0) * (iy1 - iy0) : 0;
  const std::size_t uni = a.w * a.h + b.w * b.h - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace tbnet
