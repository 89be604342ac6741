#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "vgdz/error.hpp"
#include "vgdz/random.hpp"
#include "vgdz/tensor.hpp"

namespace vgdz {

enum class BetaSchedule { Linear, ScaledLinear };

constexpr std::string_view to_string(BetaSchedule k) noexcept {
  return k == BetaSchedule::Linear ? "linear" : "scaled_linear";
}

inline BetaSchedule parse_beta_schedule(std::string_view s) {
  if (s == "linear") return BetaSchedule::Linear;
  if (s == "scaled_linear") return BetaSchedule::ScaledLinear;
  throw Error(Errc::InvalidScheduleParams, "unknown beta schedule '" + std::string(s) + "'");
}

/// DDPM forward-process schedule. Timesteps are 1-based: t = 1..T.
class NoiseSchedule {
 public:
  static NoiseSchedule make(BetaSchedule kind, double beta_start, double beta_end, int timesteps) {
    if (timesteps < 1) {
      throw Error(Errc::InvalidScheduleParams, "timestep count must be >= 1");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
      throw Error(Errc::InvalidScheduleParams,
                  "need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) + ", " +
                      std::to_string(beta_end));
    }
    NoiseSchedule s;
    s.kind_ = kind;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    s.betas_.resize(static_cast<std::size_t>(timesteps));
    s.alpha_bars_.resize(static_cast<std::size_t>(timesteps));
    const double denom = timesteps > 1 ? static_cast<double>(timesteps - 1) : 1.0;
    double running = 1.0;
    for (int i = 0; i < timesteps; ++i) {
      const double frac = i / denom;
      double beta;
      if (kind == BetaSchedule::Linear) {
        beta = beta_start + (beta_end - beta_start) * frac;
      } else {
        const double root = std::sqrt(beta_start) + (std::sqrt(beta_end) - std::sqrt(beta_start)) * frac;
        beta = root * root;
      }
      running *= 1.0 - beta;
      s.betas_[static_cast<std::size_t>(i)] = beta;
      s.alpha_bars_[static_cast<std::size_t>(i)] = running;
    }
    return s;
  }

  BetaSchedule kind() const noexcept { return kind_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }
  int timesteps() const noexcept { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[index(t)]; }
  double signal_scale(int t) const { return std::sqrt(alpha_bar(t)); }
  double noise_scale(int t) const { return std::sqrt(1.0 - alpha_bar(t)); }

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

  void check_timestep(int t) const {
    if (t < 1 || t > timesteps()) {
      throw Error(Errc::TimestepOutOfRange,
                  "timestep " + std::to_string(t) + " outside [1, " + std::to_string(timesteps()) + "]");
    }
  }

 private:
  NoiseSchedule() = default;

  std::size_t index(int t) const {
    check_timestep(t);
    return static_cast<std::size_t>(t - 1);
  }

  BetaSchedule kind_ = BetaSchedule::Linear;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

/// Stream tag separating diffusion noise from any other Philox consumer.
inline constexpr std::uint32_t kNoiseStream = 0x6e6f6973u;

/// Standard-normal noise keyed only on (global seed, timestep, sample index).
inline NoiseSample sample_noise(const TensorShape& shape, const SeedRecord& seed) {
  Tensor t(shape);
  rng::fill_standard_normal(t.values(), rng::key_from_seed(seed.global_seed), kNoiseStream, seed.timestep,
                            seed.sample);
  return {std::move(t), seed};
}

/// Closed-form forward diffusion: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
inline NoisedLatent add_noise(const LatentTensor& z0, const NoiseSample& eps, int t,
                              const NoiseSchedule& schedule) {
  schedule.check_timestep(t);
  require_same_shape(z0.data, eps.data, "add_noise");
  const double a = schedule.signal_scale(t);
  const double b = schedule.noise_scale(t);
  Tensor out(z0.data.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0.data[i] + b * eps.data[i];
  return {std::move(out), t, eps.seed};
}

}  // namespace vgdz
