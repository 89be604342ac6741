#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "vgdz/error.hpp"
#include "vgdz/geometry.hpp"

namespace vgdz {

struct Rgb {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Integer pixel rectangle, half-open: columns [x0, x1), rows [y0, y1).
struct PixelRect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  bool empty() const noexcept { return width() <= 0 || height() <= 0; }
  bool contains(int x, int y) const noexcept { return x >= x0 && x < x1 && y >= y0 && y < y1; }

  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// Interleaved RGB raster with channel values in [0, 1], row-major HWC.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image(int width, int height, Rgb fill = {})
      : width_(width), height_(height) {
    check_dims(width, height);
    data_.resize(static_cast<std::size_t>(width) * height * kChannels);
    for (std::size_t i = 0; i < data_.size(); i += kChannels) {
      data_[i] = fill.r;
      data_[i + 1] = fill.g;
      data_[i + 2] = fill.b;
    }
    check_range();
  }

  Image(int width, int height, std::vector<double> hwc)
      : width_(width), height_(height), data_(std::move(hwc)) {
    check_dims(width, height);
    if (data_.size() != static_cast<std::size_t>(width) * height * kChannels) {
      throw Error(Errc::InvalidImage, "pixel buffer does not match image dimensions");
    }
    check_range();
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  ImageSize size() const { return ImageSize(width_, height_); }

  double at(int x, int y, int c) const noexcept { return data_[index(x, y) + c]; }
  double& at(int x, int y, int c) noexcept { return data_[index(x, y) + c]; }

  Rgb pixel(int x, int y) const noexcept {
    const std::size_t i = index(x, y);
    return {data_[i], data_[i + 1], data_[i + 2]};
  }

  void set_pixel(int x, int y, Rgb v) noexcept {
    const std::size_t i = index(x, y);
    data_[i] = v.r;
    data_[i + 1] = v.g;
    data_[i + 2] = v.b;
  }

  void fill_rect(const PixelRect& r, Rgb v) noexcept {
    for (int y = std::max(r.y0, 0); y < std::min(r.y1, height_); ++y)
      for (int x = std::max(r.x0, 0); x < std::min(r.x1, width_); ++x) set_pixel(x, y, v);
  }

  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels;
  }

  static void check_dims(int w, int h) {
    if (w < 1 || h < 1) throw Error(Errc::InvalidImage, "image dimensions must be positive");
  }

  void check_range() const {
    for (double v : data_) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw Error(Errc::InvalidImage, "pixel value outside [0, 1]");
      }
    }
  }

  int width_;
  int height_;
  std::vector<double> data_;
};

inline Image extract(const Image& src, const PixelRect& r) {
  if (r.empty() || r.x0 < 0 || r.y0 < 0 || r.x1 > src.width() || r.y1 > src.height()) {
    throw Error(Errc::DegenerateRegion, "sub-image rectangle outside the source raster");
  }
  Image out(r.width(), r.height());
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x) out.set_pixel(x, y, src.pixel(r.x0 + x, r.y0 + y));
  return out;
}

namespace detail {

struct LinearTap {
  int lo;
  int hi;
  double frac;
};

// Half-pixel-centre sampling positions (the convention of OpenCV INTER_LINEAR
// and PIL without antialiasing); identity when the sizes agree.
inline std::vector<LinearTap> linear_taps(int src, int dst) {
  std::vector<LinearTap> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    double pos = (i + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const int lo = static_cast<int>(std::floor(pos));
    const int hi = std::min(lo + 1, src - 1);
    taps[static_cast<std::size_t>(i)] = {lo, hi, pos - lo};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resample to out_w x out_h (aspect ratio not preserved).
inline Image resize_bilinear(const Image& src, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1) throw Error(Errc::InvalidImage, "resize target must be positive");
  const auto xs = detail::linear_taps(src.width(), out_w);
  const auto ys = detail::linear_taps(src.height(), out_h);
  std::vector<double> out(static_cast<std::size_t>(out_w) * out_h * Image::kChannels);
  std::size_t o = 0;
  for (const auto& ty : ys) {
    for (const auto& tx : xs) {
      for (int c = 0; c < Image::kChannels; ++c) {
        const double top = (1.0 - tx.frac) * src.at(tx.lo, ty.lo, c) + tx.frac * src.at(tx.hi, ty.lo, c);
        const double bot = (1.0 - tx.frac) * src.at(tx.lo, ty.hi, c) + tx.frac * src.at(tx.hi, ty.hi, c);
        out[o++] = std::clamp((1.0 - ty.frac) * top + ty.frac * bot, 0.0, 1.0);
      }
    }
  }
  return Image(out_w, out_h, std::move(out));
}

enum class ResizeMode { Stretch, Letterbox };

/// Fit an image onto a square canvas. Stretch distorts the aspect ratio;
/// Letterbox scales the long side to the canvas and pads with `pad`.
inline Image resize_to_canvas(const Image& src, int canvas, ResizeMode mode, Rgb pad) {
  if (mode == ResizeMode::Stretch) return resize_bilinear(src, canvas, canvas);

  const double scale = static_cast<double>(canvas) / std::max(src.width(), src.height());
  const int w = std::clamp(static_cast<int>(std::lround(src.width() * scale)), 1, canvas);
  const int h = std::clamp(static_cast<int>(std::lround(src.height() * scale)), 1, canvas);
  const Image inner = resize_bilinear(src, w, h);
  Image out(canvas, canvas, pad);
  const int ox = (canvas - w) / 2;
  const int oy = (canvas - h) / 2;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out.set_pixel(ox + x, oy + y, inner.pixel(x, y));
  return out;
}

}  // namespace vgdz
