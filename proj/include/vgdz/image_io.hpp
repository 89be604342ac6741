#pragma once

// File decoding and encoding through OpenCV. Link vgdz::image_io to use it;
// the rest of the library never touches OpenCV.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vgdz/error.hpp"
#include "vgdz/geometry.hpp"
#include "vgdz/image.hpp"

namespace vgdz {

/// Decode any format OpenCV reads; 8- and 16-bit depths map onto [0, 1].
inline Image load_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingImage, "no image at " + path.string());
  const cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw Error(Errc::MissingImage, "cannot decode " + path.string());
  const double scale = raw.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  std::vector<double> hwc(static_cast<std::size_t>(raw.rows) * raw.cols * 3);
  std::size_t o = 0;
  for (int y = 0; y < raw.rows; ++y) {
    for (int x = 0; x < raw.cols; ++x) {
      double bgr[3];
      if (raw.depth() == CV_16U) {
        const auto& p = raw.at<cv::Vec3w>(y, x);
        for (int c = 0; c < 3; ++c) bgr[c] = p[c] * scale;
      } else {
        const auto& p = raw.at<cv::Vec3b>(y, x);
        for (int c = 0; c < 3; ++c) bgr[c] = p[c] * scale;
      }
      hwc[o++] = bgr[2];
      hwc[o++] = bgr[1];
      hwc[o++] = bgr[0];
    }
  }
  return Image(raw.cols, raw.rows, std::move(hwc));
}

namespace detail {

inline cv::Mat to_mat8(const Image& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const Rgb p = img.pixel(x, y);
      auto q = [](double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(q(p.b), q(p.g), q(p.r));
    }
  }
  return m;
}

}  // namespace detail

/// 8-bit encode; the container follows the file extension.
inline void save_image(const Image& img, const std::filesystem::path& path) {
  if (!cv::imwrite(path.string(), detail::to_mat8(img))) {
    throw Error(Errc::IOError, "cannot write image " + path.string());
  }
}

/// Draw every box in grey and the selected one in green, thicker.
inline void save_annotated(const Image& img, std::span<const BoundingBox> boxes, std::size_t selected,
                           const std::filesystem::path& path) {
  cv::Mat m = detail::to_mat8(img);
  const int thin = std::max(1, std::min(m.cols, m.rows) / 300);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (i == selected) continue;
    const auto& b = boxes[i];
    cv::rectangle(m, cv::Point(static_cast<int>(b.x_min()), static_cast<int>(b.y_min())),
                  cv::Point(static_cast<int>(b.x_max()), static_cast<int>(b.y_max())), cv::Scalar(160, 160, 160), thin);
  }
  if (selected < boxes.size()) {
    const auto& b = boxes[selected];
    cv::rectangle(m, cv::Point(static_cast<int>(b.x_min()), static_cast<int>(b.y_min())),
                  cv::Point(static_cast<int>(b.x_max()), static_cast<int>(b.y_max())), cv::Scalar(0, 200, 0), 3 * thin);
  }
  if (!cv::imwrite(path.string(), m)) throw Error(Errc::IOError, "cannot write image " + path.string());
}

}  // namespace vgdz
