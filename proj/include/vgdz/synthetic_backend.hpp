#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vgdz/backend.hpp"
#include "vgdz/random.hpp"

namespace vgdz {

struct SyntheticOptions {
  int canvas = 512;
  int downsample = 8;
  double latent_scale = 0.18215;
  /// Size of the prediction error for a fully mismatched image/text pair.
  double mismatch_gain = 1.0;
  /// Signature gaps (1 - cosine) at or below this count as an exact match.
  double match_tolerance = 1e-9;
  Parameterization parameterization = Parameterization::Epsilon;
  std::size_t context_length = 77;
  std::size_t embed_dim = 8;
};

/// Deterministic stand-in for a pre-trained latent diffusion model.
///
/// * Latent: 8x8 average pooling of pixels mapped to [-1, 1], followed by a
///   fixed 4x3 colour projection and the latent scale factor.
/// * Image signature: per-channel sums of z0, i.e. the projected mean colour.
///   Mid-grey maps to zero, so masking with the default fill does not move it.
/// * Text signature: expression hashed to a unit RGB direction, projected the
///   same way.
/// * Prediction: the true noise (regenerated from the seed record carried by
///   z_t) plus mismatch_gain * (1 - cos(image, text)) on every element.
///
/// A proposal painted with planted_color(text) therefore scores exactly zero
/// error and every other colour scores strictly more.
class SyntheticBackend final : public Backend {
 public:
  static constexpr std::size_t kLatentChannels = 4;
  using Projection = std::array<std::array<double, 3>, kLatentChannels>;

  static constexpr Projection kProjection{{
      {0.50, 0.30, 0.20},
      {-0.40, 0.60, 0.10},
      {0.20, -0.30, 0.70},
      {0.30, 0.30, -0.50},
  }};

  explicit SyntheticBackend(SyntheticOptions opts = {}) : opts_(opts) {
    if (opts_.canvas < 8 || opts_.downsample < 1 || opts_.canvas % opts_.downsample != 0) {
      throw Error(Errc::InvalidConfig, "synthetic canvas must be >= 8 and divisible by the downsample factor");
    }
    if (opts_.embed_dim < 3 || opts_.context_length < 3) {
      throw Error(Errc::InvalidConfig, "synthetic text embedding too small");
    }
    const auto side = static_cast<std::size_t>(opts_.canvas / opts_.downsample);
    desc_.kind = BackendKind::Synthetic;
    desc_.checkpoint = "synthetic-v1";
    desc_.latent_shape = {kLatentChannels, side, side};
    desc_.canvas = opts_.canvas;
    desc_.latent_scale = opts_.latent_scale;
    desc_.schedule_kind = BetaSchedule::Linear;
    desc_.beta_start = 1e-4;
    desc_.beta_end = 0.02;
    desc_.train_timesteps = 1000;
    desc_.parameterization = opts_.parameterization;
    schedule_ = std::make_shared<NoiseSchedule>(desc_.make_schedule());
  }

  const BackendDescriptor& descriptor() const override { return desc_; }
  const SyntheticOptions& options() const noexcept { return opts_; }

  LatentTensor encode_image(const IsolatedView& view) const override {
    check_canvas(view);
    const TensorShape shape = desc_.latent_shape;
    const int d = opts_.downsample;
    const double inv = 1.0 / (d * d);
    Tensor z(shape);
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        std::array<double, 3> pooled{};
        for (int dy = 0; dy < d; ++dy)
          for (int dx = 0; dx < d; ++dx)
            for (int c = 0; c < 3; ++c)
              pooled[c] += 2.0 * view.pixels.at(static_cast<int>(x) * d + dx, static_cast<int>(y) * d + dy, c) - 1.0;
        for (auto& p : pooled) p *= inv;
        for (std::size_t k = 0; k < kLatentChannels; ++k) {
          const double v = kProjection[k][0] * pooled[0] + kProjection[k][1] * pooled[1] +
                           kProjection[k][2] * pooled[2];
          z[(k * shape.height + y) * shape.width + x] = opts_.latent_scale * v;
        }
      }
    }
    return {std::move(z), view.kind, view.proposal};
  }

  TextEmbedding encode_text(std::string_view expression) const override {
    std::vector<std::string> words;
    std::istringstream in{std::string(expression)};
    for (std::string w; in >> w;) words.push_back(w);
    if (words.empty()) throw Error(Errc::EmptyExpression, "cannot encode empty text");

    TextEmbedding e;
    e.context_length = opts_.context_length;
    e.embed_dim = opts_.embed_dim;
    e.values.assign(e.context_length * e.embed_dim, 0.0);
    const std::size_t max_words = e.context_length - 2;  // BOS + EOS
    if (words.size() > max_words) {
      words.resize(max_words);
      e.truncated = true;
    }
    std::string kept;
    for (const auto& w : words) kept += (kept.empty() ? "" : " ") + w;
    e.text = kept;

    const auto dir = text_direction(kept);
    for (std::size_t c = 0; c < 3; ++c) e.values[c] = dir[c];
    for (std::size_t i = 0; i < words.size(); ++i) {
      rng::SplitMix token(rng::fnv1a(words[i]));
      for (std::size_t k = 0; k < e.embed_dim; ++k) e.values[(i + 1) * e.embed_dim + k] = 2.0 * token.unit() - 1.0;
    }
    for (std::size_t k = 0; k < e.embed_dim; ++k) e.values[(words.size() + 1) * e.embed_dim + k] = 1.0;
    return e;
  }

  using Backend::predict_noise;

  std::vector<Tensor> predict_noise(std::span<const NoisedLatent> batch,
                                    const TextEmbedding& cond) const override {
    if (cond.embed_dim != opts_.embed_dim || cond.values.size() != cond.context_length * cond.embed_dim) {
      throw Error(Errc::ShapeMismatch, "text embedding does not come from this backend");
    }
    const auto text_sig = project(std::array<double, 3>{cond.values[0], cond.values[1], cond.values[2]});
    std::vector<Tensor> out;
    out.reserve(batch.size());
    for (const auto& zt : batch) {
      if (zt.data.shape() != desc_.latent_shape) {
        throw Error(Errc::ShapeMismatch, "latent " + zt.data.shape().to_string() + " vs backend " +
                                             desc_.latent_shape.to_string());
      }
      schedule_->check_timestep(zt.timestep);
      const NoiseSample eps = sample_noise(zt.data.shape(), zt.noise);
      const double a = schedule_->signal_scale(zt.timestep);
      const double b = schedule_->noise_scale(zt.timestep);

      std::array<double, kLatentChannels> image_sig{};
      const std::size_t plane = zt.data.shape().height * zt.data.shape().width;
      for (std::size_t k = 0; k < kLatentChannels; ++k)
        for (std::size_t i = k * plane; i < (k + 1) * plane; ++i) image_sig[k] += (zt.data[i] - b * eps.data[i]) / a;

      const double offset = opts_.mismatch_gain * signature_gap(image_sig, text_sig);
      Tensor pred(zt.data.shape());
      if (opts_.parameterization == Parameterization::Epsilon) {
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = eps.data[i] + offset;
        out.push_back(std::move(pred));
      } else {
        // Emulate a v-predicting network, then convert back like a real checkpoint.
        for (std::size_t i = 0; i < pred.size(); ++i) {
          const double z0 = (zt.data[i] - b * eps.data[i]) / a;
          pred[i] = a * eps.data[i] - b * z0 + offset;
        }
        out.push_back(v_to_epsilon(pred, zt, *schedule_));
      }
    }
    return out;
  }

  /// Unit RGB direction a text hashes to.
  static std::array<double, 3> text_direction(std::string_view text) {
    rng::SplitMix gen(rng::fnv1a(text));
    std::array<double, 3> v{gen.normal(), gen.normal(), gen.normal()};
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (auto& x : v) x /= n;
    return v;
  }

  /// Pixel colour whose isolated views match `text` exactly.
  static Rgb planted_color(std::string_view text, double strength = 0.8) {
    const auto d = text_direction(text);
    return {0.5 + 0.5 * strength * d[0], 0.5 + 0.5 * strength * d[1], 0.5 + 0.5 * strength * d[2]};
  }

  /// 1 - cos between the signatures of an RGB direction and a text; the
  /// per-element offset the backend adds is mismatch_gain times this.
  double color_gap(Rgb color, std::string_view text) const {
    const auto img = project(std::array<double, 3>{2 * color.r - 1, 2 * color.g - 1, 2 * color.b - 1});
    return signature_gap(img, project(text_direction(text)));
  }

 private:
  static std::array<double, kLatentChannels> project(const std::array<double, 3>& rgb) {
    std::array<double, kLatentChannels> s{};
    for (std::size_t k = 0; k < kLatentChannels; ++k)
      s[k] = kProjection[k][0] * rgb[0] + kProjection[k][1] * rgb[1] + kProjection[k][2] * rgb[2];
    return s;
  }

  double signature_gap(const std::array<double, kLatentChannels>& img,
                       const std::array<double, kLatentChannels>& txt) const {
    double dot = 0.0, ni = 0.0, nt = 0.0;
    for (std::size_t k = 0; k < kLatentChannels; ++k) {
      dot += img[k] * txt[k];
      ni += img[k] * img[k];
      nt += txt[k] * txt[k];
    }
    const double cosine = (ni > 0.0 && nt > 0.0) ? dot / std::sqrt(ni * nt) : 0.0;
    const double gap = 1.0 - cosine;
    return gap <= opts_.match_tolerance ? 0.0 : gap;
  }

  SyntheticOptions opts_;
  BackendDescriptor desc_;
  std::shared_ptr<const NoiseSchedule> schedule_;
};

}  // namespace vgdz
