#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "vgdz/error.hpp"
#include "vgdz/isolation.hpp"
#include "vgdz/schedule.hpp"
#include "vgdz/tensor.hpp"

namespace vgdz {

enum class BackendKind { Pretrained, Synthetic };
enum class Parameterization { Epsilon, V };

constexpr std::string_view to_string(BackendKind k) noexcept {
  return k == BackendKind::Pretrained ? "pretrained" : "synthetic";
}
constexpr std::string_view to_string(Parameterization p) noexcept {
  return p == Parameterization::Epsilon ? "epsilon" : "v";
}

inline Parameterization parse_parameterization(std::string_view s) {
  if (s == "epsilon") return Parameterization::Epsilon;
  if (s == "v" || s == "v_prediction") return Parameterization::V;
  throw Error(Errc::SchemaError, "unknown prediction type '" + std::string(s) + "'");
}

/// Encoded referring expression: context_length x embed_dim, row-major.
struct TextEmbedding {
  std::size_t context_length = 0;
  std::size_t embed_dim = 0;
  std::vector<double> values;
  std::string text;
  bool truncated = false;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * embed_dim, embed_dim);
  }
};

/// What a backend is and how its latent space and schedule look. Written into
/// every results file for provenance.
struct BackendDescriptor {
  BackendKind kind = BackendKind::Synthetic;
  std::string checkpoint;
  TensorShape latent_shape;
  int canvas = 512;
  double latent_scale = 1.0;
  BetaSchedule schedule_kind = BetaSchedule::Linear;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int train_timesteps = 1000;
  Parameterization parameterization = Parameterization::Epsilon;

  NoiseSchedule make_schedule() const {
    return NoiseSchedule::make(schedule_kind, beta_start, beta_end, train_timesteps);
  }

  nlohmann::json to_json() const {
    return {
        {"kind", std::string(to_string(kind))},
        {"checkpoint", checkpoint},
        {"latent_shape", {latent_shape.channels, latent_shape.height, latent_shape.width}},
        {"canvas", canvas},
        {"latent_scale", latent_scale},
        {"schedule",
         {{"kind", std::string(to_string(schedule_kind))},
          {"beta_start", beta_start},
          {"beta_end", beta_end},
          {"timesteps", train_timesteps}}},
        {"prediction_type", std::string(to_string(parameterization))},
    };
  }

  static BackendDescriptor from_json(const nlohmann::json& j) {
    try {
      BackendDescriptor d;
      d.kind = j.at("kind").get<std::string>() == "pretrained" ? BackendKind::Pretrained
                                                               : BackendKind::Synthetic;
      d.checkpoint = j.at("checkpoint").get<std::string>();
      const auto& shape = j.at("latent_shape");
      d.latent_shape = {shape.at(0).get<std::size_t>(), shape.at(1).get<std::size_t>(),
                        shape.at(2).get<std::size_t>()};
      d.canvas = j.at("canvas").get<int>();
      d.latent_scale = j.at("latent_scale").get<double>();
      const auto& s = j.at("schedule");
      d.schedule_kind = parse_beta_schedule(s.at("kind").get<std::string>());
      d.beta_start = s.at("beta_start").get<double>();
      d.beta_end = s.at("beta_end").get<double>();
      d.train_timesteps = s.at("timesteps").get<int>();
      d.parameterization = parse_parameterization(j.at("prediction_type").get<std::string>());
      return d;
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::SchemaError, std::string("backend descriptor: ") + e.what());
    }
  }
};

/// The pre-trained model triplet: latent encoder, text encoder, noise
/// predictor. Implementations must be deterministic and safe to call from
/// several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  /// Deterministic latent (posterior mean) scaled by the latent scale factor.
  virtual LatentTensor encode_image(const IsolatedView& view) const = 0;

  virtual TextEmbedding encode_text(std::string_view expression) const = 0;

  /// Noise-space predictions, one per input, whatever the checkpoint's native
  /// parameterization.
  virtual std::vector<Tensor> predict_noise(std::span<const NoisedLatent> batch,
                                            const TextEmbedding& cond) const = 0;

  Tensor predict_noise(const NoisedLatent& zt, const TextEmbedding& cond) const {
    auto out = predict_noise(std::span<const NoisedLatent>(&zt, 1), cond);
    return std::move(out.front());
  }

 protected:
  void check_canvas(const IsolatedView& view) const {
    const int canvas = descriptor().canvas;
    if (view.pixels.width() != canvas || view.pixels.height() != canvas) {
      throw Error(Errc::CanvasMismatch, "backend expects " + std::to_string(canvas) + "x" +
                                            std::to_string(canvas) + " views, got " +
                                            std::to_string(view.pixels.width()) + "x" +
                                            std::to_string(view.pixels.height()));
    }
  }
};

/// Convert a v-prediction into noise space:
/// eps = sqrt(abar_t) v + sqrt(1 - abar_t) z_t.
inline Tensor v_to_epsilon(const Tensor& v, const NoisedLatent& zt, const NoiseSchedule& schedule) {
  require_same_shape(v, zt.data, "v_to_epsilon");
  const double a = schedule.signal_scale(zt.timestep);
  const double b = schedule.noise_scale(zt.timestep);
  Tensor eps(v.shape());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = a * v[i] + b * zt.data[i];
  return eps;
}

}  // namespace vgdz
