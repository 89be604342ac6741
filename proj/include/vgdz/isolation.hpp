#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>

#include "vgdz/error.hpp"
#include "vgdz/geometry.hpp"
#include "vgdz/image.hpp"

namespace vgdz {

enum class ViewKind { Mask, Crop };

constexpr std::string_view to_string(ViewKind k) noexcept {
  return k == ViewKind::Mask ? "mask" : "crop";
}

struct IsolationOptions {
  int canvas = 512;
  Rgb fill{0.5, 0.5, 0.5};
  ResizeMode resize = ResizeMode::Stretch;

  void validate() const {
    if (canvas < 8) throw Error(Errc::InvalidConfig, "canvas must be >= 8, got " + std::to_string(canvas));
    for (double v : {fill.r, fill.g, fill.b}) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::InvalidConfig, "fill colour must lie in [0, 1]");
    }
  }
};

/// One proposal rendered alone on the model canvas.
struct IsolatedView {
  Image pixels;
  ViewKind kind;
  std::size_t proposal = 0;
};

/// Grow a continuous box to the pixel grid (floor on mins, ceil on maxes),
/// clamped to the image.
inline PixelRect snap_box(const BoundingBox& box, const ImageSize& size) {
  PixelRect r;
  r.x0 = std::clamp(static_cast<int>(std::floor(box.x_min())), 0, size.width());
  r.y0 = std::clamp(static_cast<int>(std::floor(box.y_min())), 0, size.height());
  r.x1 = std::clamp(static_cast<int>(std::ceil(box.x_max())), 0, size.width());
  r.y1 = std::clamp(static_cast<int>(std::ceil(box.y_max())), 0, size.height());
  if (r.empty()) {
    throw Error(Errc::DegenerateRegion, "box " + box.to_string() + " covers no pixels");
  }
  return r;
}

/// Global-context view: everything outside the snapped box becomes `fill`,
/// then the whole frame is resized to the canvas.
inline IsolatedView mask_isolate(const Image& image, const BoundingBox& box,
                                 const IsolationOptions& opts, std::size_t proposal = 0) {
  opts.validate();
  const PixelRect r = snap_box(box, image.size());
  Image masked(image.width(), image.height(), opts.fill);
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) masked.set_pixel(x, y, image.pixel(x, y));
  return {resize_to_canvas(masked, opts.canvas, opts.resize, opts.fill), ViewKind::Mask, proposal};
}

/// Local-context view: the snapped sub-image alone, resized to the canvas.
inline IsolatedView crop_isolate(const Image& image, const BoundingBox& box,
                                 const IsolationOptions& opts, std::size_t proposal = 0) {
  opts.validate();
  const PixelRect r = snap_box(box, image.size());
  return {resize_to_canvas(extract(image, r), opts.canvas, opts.resize, opts.fill), ViewKind::Crop,
          proposal};
}

inline IsolatedView isolate(ViewKind kind, const Image& image, const BoundingBox& box,
                            const IsolationOptions& opts, std::size_t proposal = 0) {
  return kind == ViewKind::Mask ? mask_isolate(image, box, opts, proposal)
                                : crop_isolate(image, box, opts, proposal);
}

}  // namespace vgdz
