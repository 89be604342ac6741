#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vgdz/backend.hpp"
#include "vgdz/error.hpp"
#include "vgdz/isolation.hpp"
#include "vgdz/schedule.hpp"
#include "vgdz/tensor.hpp"

namespace vgdz {

/// How mask-view and crop-view errors combine into a selection.
enum class Aggregation {
  Sum,       ///< e_mask + e_crop
  Min,       ///< best single view per proposal
  MaskOnly,
  CropOnly,
};

constexpr std::string_view to_string(Aggregation a) noexcept {
  switch (a) {
    case Aggregation::Sum: return "sum";
    case Aggregation::Min: return "min";
    case Aggregation::MaskOnly: return "mask";
    case Aggregation::CropOnly: return "crop";
  }
  return "sum";
}

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "sum") return Aggregation::Sum;
  if (s == "min") return Aggregation::Min;
  if (s == "mask") return Aggregation::MaskOnly;
  if (s == "crop") return Aggregation::CropOnly;
  throw Error(Errc::InvalidConfig, "unknown aggregation '" + std::string(s) + "' (expected sum, min, mask, crop)");
}

constexpr bool needs_mask(Aggregation a) noexcept { return a != Aggregation::CropOnly; }
constexpr bool needs_crop(Aggregation a) noexcept { return a != Aggregation::MaskOnly; }

/// `count` timesteps evenly spaced over [first, last], rounded to the nearest
/// integer (halves away from zero).
inline std::vector<int> even_timesteps(int first, int last, int count) {
  if (count < 1) throw Error(Errc::InvalidConfig, "timestep count must be >= 1");
  if (count == 1) return {first};
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double t = first + (static_cast<double>(last) - first) * k / (count - 1);
    out.push_back(static_cast<int>(std::lround(t)));
  }
  return out;
}

/// Accepts "first:last:count" or a comma-separated list such as "100,500,900".
inline std::vector<int> parse_timesteps(std::string_view spec) {
  auto to_int = [&](std::string_view part) {
    int v = 0;
    const auto* end = part.data() + part.size();
    const auto [p, ec] = std::from_chars(part.data(), end, v);
    if (ec != std::errc{} || p != end || part.empty()) {
      throw Error(Errc::InvalidConfig, "bad timestep spec '" + std::string(spec) + "'");
    }
    return v;
  };
  std::vector<std::string_view> parts;
  const char sep = spec.find(':') != std::string_view::npos ? ':' : ',';
  for (std::size_t pos = 0;;) {
    const std::size_t next = spec.find(sep, pos);
    parts.push_back(spec.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  if (sep == ':') {
    if (parts.size() != 3) throw Error(Errc::InvalidConfig, "range timestep spec must be first:last:count");
    return even_timesteps(to_int(parts[0]), to_int(parts[1]), to_int(parts[2]));
  }
  std::vector<int> out;
  for (auto p : parts) out.push_back(to_int(p));
  return out;
}

struct ScoringConfig {
  std::vector<int> timesteps = even_timesteps(100, 900, 10);
  int samples_per_timestep = 1;
  Aggregation aggregation = Aggregation::Sum;
  std::uint64_t seed = 0;
  /// Noised latents per predict_noise call. Results do not depend on it.
  std::size_t batch_size = 8;

  void validate(const NoiseSchedule& schedule) const {
    if (timesteps.empty()) throw Error(Errc::InvalidConfig, "timestep set is empty");
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
      if (timesteps[i] < 1 || timesteps[i] > schedule.timesteps()) {
        throw Error(Errc::InvalidConfig, "timestep " + std::to_string(timesteps[i]) + " outside [1, " +
                                             std::to_string(schedule.timesteps()) + "]");
      }
      if (i > 0 && timesteps[i] <= timesteps[i - 1]) {
        throw Error(Errc::InvalidConfig, "timesteps must be strictly increasing");
      }
    }
    if (samples_per_timestep < 1) throw Error(Errc::InvalidConfig, "samples per timestep must be >= 1");
    if (batch_size < 1) throw Error(Errc::InvalidConfig, "batch size must be >= 1");
  }

  /// Noise keys in evaluation order: timestep-major, then sample index.
  std::vector<SeedRecord> noise_keys() const {
    std::vector<SeedRecord> keys;
    for (int t : timesteps)
      for (int s = 0; s < samples_per_timestep; ++s)
        keys.push_back({seed, static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(s)});
    return keys;
  }
};

/// Mean over elements of (eps - eps_hat)^2.
inline double mean_squared_error(const Tensor& eps, const Tensor& eps_hat) {
  require_same_shape(eps, eps_hat, "prediction error");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps[i] - eps_hat[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps.size());
}

/// Per-proposal errors. Views the aggregation mode did not need stay empty.
struct ScoreRecord {
  std::size_t proposal = 0;
  std::optional<double> e_mask;
  std::optional<double> e_crop;
  double e_total = 0.0;
  /// Raw per-(timestep, sample) errors in ScoringConfig::noise_keys() order.
  std::vector<double> mask_errors;
  std::vector<double> crop_errors;
  Aggregation aggregation = Aggregation::Sum;
};

inline double total_error(const ScoreRecord& r, Aggregation mode) {
  auto need = [&](const std::optional<double>& v, ViewKind k) {
    if (!v) {
      throw Error(Errc::MissingViews, "proposal " + std::to_string(r.proposal) + " has no " +
                                          std::string(to_string(k)) + " error");
    }
    return *v;
  };
  switch (mode) {
    case Aggregation::Sum: return need(r.e_mask, ViewKind::Mask) + need(r.e_crop, ViewKind::Crop);
    case Aggregation::Min: return std::min(need(r.e_mask, ViewKind::Mask), need(r.e_crop, ViewKind::Crop));
    case Aggregation::MaskOnly: return need(r.e_mask, ViewKind::Mask);
    case Aggregation::CropOnly: return need(r.e_crop, ViewKind::Crop);
  }
  return 0.0;
}

namespace detail {

struct WorkItem {
  std::size_t latent;
  std::size_t key;
};

// Per-key errors for every latent. Each error depends only on its own
// (latent, key) pair, so batching and ordering cannot change the values.
inline std::vector<std::vector<double>> pairwise_errors(std::span<const LatentTensor> latents,
                                                        const TextEmbedding& cond, const ScoringConfig& cfg,
                                                        const Backend& backend, const NoiseSchedule& schedule) {
  const auto keys = cfg.noise_keys();
  std::vector<std::vector<double>> errors(latents.size(), std::vector<double>(keys.size(), 0.0));
  if (latents.empty()) return errors;

  const TensorShape shape = latents.front().data.shape();
  for (const auto& z : latents) require_same_shape(z.data, latents.front().data, "latent batch");

  std::vector<NoiseSample> noise;
  noise.reserve(keys.size());
  for (const auto& k : keys) noise.push_back(sample_noise(shape, k));

  std::vector<WorkItem> items;
  items.reserve(latents.size() * keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k)
    for (std::size_t l = 0; l < latents.size(); ++l) items.push_back({l, k});

  std::vector<NoisedLatent> batch;
  for (std::size_t begin = 0; begin < items.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(items.size(), begin + cfg.batch_size);
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) {
      const auto& it = items[i];
      batch.push_back(add_noise(latents[it.latent], noise[it.key], static_cast<int>(keys[it.key].timestep), schedule));
    }
    const auto predicted = backend.predict_noise(batch, cond);
    if (predicted.size() != batch.size()) {
      throw Error(Errc::ShapeMismatch, "backend returned " + std::to_string(predicted.size()) +
                                           " predictions for " + std::to_string(batch.size()) + " inputs");
    }
    for (std::size_t i = begin; i < end; ++i) {
      const auto& it = items[i];
      errors[it.latent][it.key] = mean_squared_error(noise[it.key].data, predicted[i - begin]);
    }
  }
  return errors;
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

}  // namespace detail

/// Noise-prediction error of one encoded view: the mean over configured
/// (timestep, sample) pairs of the per-element squared error.
inline double view_error(const LatentTensor& z0, const TextEmbedding& cond, const ScoringConfig& cfg,
                         const Backend& backend, const NoiseSchedule& schedule) {
  cfg.validate(schedule);
  const auto errors = detail::pairwise_errors(std::span<const LatentTensor>(&z0, 1), cond, cfg, backend, schedule);
  return detail::mean_of(errors.front());
}

/// Isolated views of one proposal; only those the aggregation mode needs
/// have to be present.
struct ProposalViews {
  std::optional<IsolatedView> mask;
  std::optional<IsolatedView> crop;
};

/// Already-encoded counterpart of ProposalViews.
struct ProposalLatents {
  std::optional<LatentTensor> mask;
  std::optional<LatentTensor> crop;
};

inline std::vector<ScoreRecord> score_latents(std::span<const ProposalLatents> proposals, const TextEmbedding& cond,
                                              const ScoringConfig& cfg, const Backend& backend,
                                              const NoiseSchedule& schedule) {
  if (proposals.empty()) throw Error(Errc::NoProposals, "nothing to score");
  cfg.validate(schedule);

  std::vector<LatentTensor> flat;
  std::vector<std::pair<std::size_t, ViewKind>> owner;
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    if (needs_mask(cfg.aggregation)) {
      if (!proposals[p].mask) throw Error(Errc::MissingViews, "proposal " + std::to_string(p) + " lacks a mask view");
      flat.push_back(*proposals[p].mask);
      owner.emplace_back(p, ViewKind::Mask);
    }
    if (needs_crop(cfg.aggregation)) {
      if (!proposals[p].crop) throw Error(Errc::MissingViews, "proposal " + std::to_string(p) + " lacks a crop view");
      flat.push_back(*proposals[p].crop);
      owner.emplace_back(p, ViewKind::Crop);
    }
  }

  auto errors = detail::pairwise_errors(flat, cond, cfg, backend, schedule);

  std::vector<ScoreRecord> records(proposals.size());
  for (std::size_t p = 0; p < proposals.size(); ++p) {
    records[p].proposal = p;
    records[p].aggregation = cfg.aggregation;
  }
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto& r = records[owner[i].first];
    const double e = detail::mean_of(errors[i]);
    if (owner[i].second == ViewKind::Mask) {
      r.e_mask = e;
      r.mask_errors = std::move(errors[i]);
    } else {
      r.e_crop = e;
      r.crop_errors = std::move(errors[i]);
    }
  }
  for (auto& r : records) r.e_total = total_error(r, cfg.aggregation);
  return records;
}

/// Score every proposal under one text condition. All proposals see the same
/// noise draws at matching (timestep, sample), so the comparison is paired.
inline std::vector<ScoreRecord> score_proposals(std::span<const ProposalViews> views, const TextEmbedding& cond,
                                                const ScoringConfig& cfg, const Backend& backend,
                                                const NoiseSchedule& schedule) {
  if (views.empty()) throw Error(Errc::NoProposals, "nothing to score");
  std::vector<ProposalLatents> latents(views.size());
  for (std::size_t p = 0; p < views.size(); ++p) {
    if (needs_mask(cfg.aggregation) && views[p].mask) latents[p].mask = backend.encode_image(*views[p].mask);
    if (needs_crop(cfg.aggregation) && views[p].crop) latents[p].crop = backend.encode_image(*views[p].crop);
  }
  return score_latents(latents, cond, cfg, backend, schedule);
}

/// Index of the winning proposal under `mode`; ties go to the lowest index.
inline std::size_t select(std::span<const ScoreRecord> records, Aggregation mode) {
  if (records.empty()) throw Error(Errc::NoProposals, "no score records to select from");
  std::size_t best = records.front().proposal;
  double best_value = std::numeric_limits<double>::infinity();
  for (const auto& r : records) {
    const double v = total_error(r, mode);
    if (v < best_value || (v == best_value && r.proposal < best)) {
      best_value = v;
      best = r.proposal;
    }
  }
  return best;
}

}  // namespace vgdz
