#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include "vgdz/error.hpp"

namespace vgdz {

/// Image extent in whole pixels.
class ImageSize {
 public:
  ImageSize(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw Error(Errc::InvalidImage, "image size must be positive, got " + std::to_string(width) +
                                          "x" + std::to_string(height));
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }

  friend bool operator==(const ImageSize&, const ImageSize&) = default;

 private:
  int width_;
  int height_;
};

/// Axis-aligned box in corner form, pixel units, origin top-left.
/// Construction rejects non-finite coordinates and zero/negative extents.
class BoundingBox {
 public:
  BoundingBox(double x_min, double y_min, double x_max, double y_max)
      : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
    if (!std::isfinite(x_min) || !std::isfinite(y_min) || !std::isfinite(x_max) ||
        !std::isfinite(y_max)) {
      throw Error(Errc::InvalidBox, "non-finite coordinate in " + to_string());
    }
    if (!(x_min < x_max) || !(y_min < y_max)) {
      throw Error(Errc::InvalidBox, "empty box " + to_string());
    }
  }

  static BoundingBox from_xywh(double x, double y, double w, double h) {
    return BoundingBox(x, y, x + w, y + h);
  }

  double x_min() const noexcept { return x_min_; }
  double y_min() const noexcept { return y_min_; }
  double x_max() const noexcept { return x_max_; }
  double y_max() const noexcept { return y_max_; }
  double width() const noexcept { return x_max_ - x_min_; }
  double height() const noexcept { return y_max_ - y_min_; }
  double area() const noexcept { return width() * height(); }

  BoundingBox translated(double dx, double dy) const {
    return BoundingBox(x_min_ + dx, y_min_ + dy, x_max_ + dx, y_max_ + dy);
  }

  std::array<double, 4> corners() const noexcept { return {x_min_, y_min_, x_max_, y_max_}; }

  std::string to_string() const {
    std::ostringstream os;
    os << '(' << x_min_ << ", " << y_min_ << ", " << x_max_ << ", " << y_max_ << ')';
    return os.str();
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

 private:
  double x_min_;
  double y_min_;
  double x_max_;
  double y_max_;
};

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double w = std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min());
  const double h = std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min());
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

/// Intersection over union, in [0, 1].
inline double iou(const BoundingBox& a, const BoundingBox& b) noexcept {
  const double inter = intersection_area(a, b);
  if (inter == 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// Clamp a box to [0, width] x [0, height]. Throws ClipCollapse when nothing
/// of the box remains inside the image.
inline BoundingBox clip_to_image(const BoundingBox& box, const ImageSize& size) {
  const double w = size.width();
  const double h = size.height();
  const double x0 = std::clamp(box.x_min(), 0.0, w);
  const double y0 = std::clamp(box.y_min(), 0.0, h);
  const double x1 = std::clamp(box.x_max(), 0.0, w);
  const double y1 = std::clamp(box.y_max(), 0.0, h);
  if (!(x0 < x1) || !(y0 < y1)) {
    throw Error(Errc::ClipCollapse, "box " + box.to_string() + " lies outside " +
                                        std::to_string(size.width()) + "x" +
                                        std::to_string(size.height()) + " image");
  }
  return BoundingBox(x0, y0, x1, y1);
}

}  // namespace vgdz
