#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vgdz/error.hpp"
#include "vgdz/isolation.hpp"

namespace vgdz {

/// channels x height x width
struct TensorShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t elements() const noexcept { return channels * height * width; }
  std::string to_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }

  friend bool operator==(const TensorShape&, const TensorShape&) = default;
};

/// Dense CHW tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorShape shape, double value = 0.0)
      : shape_(shape), values_(shape.elements(), value) {}
  Tensor(TensorShape shape, std::vector<double> values) : shape_(shape), values_(std::move(values)) {
    if (values_.size() != shape_.elements()) {
      throw Error(Errc::ShapeMismatch, "buffer of " + std::to_string(values_.size()) +
                                           " values does not fit shape " + shape_.to_string());
    }
  }

  const TensorShape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }
  double& operator[](std::size_t i) noexcept { return values_[i]; }

  bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  TensorShape shape_;
  std::vector<double> values_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": " + a.shape().to_string() + " vs " +
                                         b.shape().to_string());
  }
}

/// z0: an encoded isolated view.
struct LatentTensor {
  Tensor data;
  ViewKind kind = ViewKind::Mask;
  std::size_t proposal = 0;
};

/// Everything needed to regenerate a noise draw bit-exactly.
struct SeedRecord {
  std::uint64_t global_seed = 0;
  std::uint32_t timestep = 0;
  std::uint32_t sample = 0;

  friend bool operator==(const SeedRecord&, const SeedRecord&) = default;
};

/// epsilon ~ N(0, I) together with the key that produced it.
struct NoiseSample {
  Tensor data;
  SeedRecord seed;
};

/// z_t, the timestep it was diffused to and the noise key used.
struct NoisedLatent {
  Tensor data;
  int timestep = 0;
  SeedRecord noise;
};

}  // namespace vgdz
