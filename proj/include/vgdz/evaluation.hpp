#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vgdz/backend.hpp"
#include "vgdz/dataset.hpp"
#include "vgdz/error.hpp"
#include "vgdz/expression.hpp"
#include "vgdz/geometry.hpp"
#include "vgdz/isolation.hpp"
#include "vgdz/random.hpp"
#include "vgdz/scorer.hpp"

#ifndef VGDZ_VERSION
#define VGDZ_VERSION "0.0.0"
#endif

namespace vgdz {

inline constexpr const char* kResultsFormat = "vgdz-results/1";

struct PipelineConfig {
  ScoringConfig scoring;
  /// Selection rules to report; scoring runs once and serves all of them.
  std::vector<Aggregation> modes{Aggregation::Sum};
  ExpressionMode expr_mode = ExpressionMode::Full;
  IsolationOptions isolation;
  double iou_threshold = 0.5;
  unsigned workers = 1;

  /// The mode that makes the scorer produce every view some requested mode needs.
  Aggregation scoring_mode() const {
    bool mask = false, crop = false;
    for (auto m : modes) {
      mask = mask || needs_mask(m);
      crop = crop || needs_crop(m);
    }
    if (mask && crop) return Aggregation::Sum;
    return mask ? Aggregation::MaskOnly : Aggregation::CropOnly;
  }

  void validate(const NoiseSchedule& schedule) const {
    scoring.validate(schedule);
    isolation.validate();
    if (modes.empty()) throw Error(Errc::InvalidConfig, "at least one aggregation mode is required");
    if (std::set<Aggregation>(modes.begin(), modes.end()).size() != modes.size()) {
      throw Error(Errc::InvalidConfig, "aggregation modes repeat");
    }
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
      throw Error(Errc::InvalidConfig, "IoU threshold must lie in (0, 1]");
    }
    if (workers < 1) throw Error(Errc::InvalidConfig, "workers must be >= 1");
  }

  /// Everything that can change a result. Worker count and batch size are
  /// left out because outputs do not depend on them.
  nlohmann::json to_json() const {
    nlohmann::json m = nlohmann::json::array();
    for (auto a : modes) m.push_back(std::string(to_string(a)));
    return {
        {"timesteps", scoring.timesteps},
        {"samples_per_timestep", scoring.samples_per_timestep},
        {"seed", scoring.seed},
        {"error_reduction", "mean_per_element"},
        {"aggregations", m},
        {"expr_mode", std::string(to_string(expr_mode))},
        {"canvas", isolation.canvas},
        {"fill", {isolation.fill.r, isolation.fill.g, isolation.fill.b}},
        {"resize", isolation.resize == ResizeMode::Stretch ? "stretch" : "letterbox"},
        {"iou_threshold", iou_threshold},
    };
  }
};

struct ModeSelection {
  Aggregation mode;
  std::size_t proposal;
  BoundingBox box;
  double iou;
  bool hit;
};

/// One line of the results JSONL.
struct InstanceRecord {
  std::string id;
  std::string expression;
  bool expression_fallback = false;
  bool text_truncated = false;
  std::vector<ScoreRecord> scores;
  std::vector<ModeSelection> selections;
  std::optional<std::string> error;

  const ModeSelection* selection(Aggregation mode) const {
    for (const auto& s : selections)
      if (s.mode == mode) return &s;
    return nullptr;
  }
};

inline nlohmann::json to_json(const InstanceRecord& r) {
  nlohmann::json j;
  j["type"] = "instance";
  j["id"] = r.id;
  j["expression"] = r.expression;
  j["expression_fallback"] = r.expression_fallback;
  j["text_truncated"] = r.text_truncated;
  j["error"] = r.error ? nlohmann::json(*r.error) : nlohmann::json(nullptr);
  auto& scores = j["scores"] = nlohmann::json::array();
  for (const auto& s : r.scores) {
    nlohmann::json js;
    js["proposal"] = s.proposal;
    js["e_mask"] = s.e_mask ? nlohmann::json(*s.e_mask) : nlohmann::json(nullptr);
    js["e_crop"] = s.e_crop ? nlohmann::json(*s.e_crop) : nlohmann::json(nullptr);
    js["mask_errors"] = s.mask_errors;
    js["crop_errors"] = s.crop_errors;
    scores.push_back(std::move(js));
  }
  auto& sel = j["selections"] = nlohmann::json::object();
  for (const auto& s : r.selections) {
    sel[std::string(to_string(s.mode))] = {{"proposal", s.proposal},
                                           {"box", {s.box.x_min(), s.box.y_min(), s.box.x_max(), s.box.y_max()}},
                                           {"iou", s.iou},
                                           {"hit", s.hit}};
  }
  return j;
}

inline InstanceRecord record_from_json(const nlohmann::json& j) {
  try {
    InstanceRecord r;
    r.id = j.at("id").get<std::string>();
    r.expression = j.at("expression").get<std::string>();
    r.expression_fallback = j.at("expression_fallback").get<bool>();
    r.text_truncated = j.at("text_truncated").get<bool>();
    if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
    for (const auto& js : j.at("scores")) {
      ScoreRecord s;
      s.proposal = js.at("proposal").get<std::size_t>();
      if (!js.at("e_mask").is_null()) s.e_mask = js.at("e_mask").get<double>();
      if (!js.at("e_crop").is_null()) s.e_crop = js.at("e_crop").get<double>();
      s.mask_errors = js.at("mask_errors").get<std::vector<double>>();
      s.crop_errors = js.at("crop_errors").get<std::vector<double>>();
      r.scores.push_back(std::move(s));
    }
    for (const auto& [name, js] : j.at("selections").items()) {
      const auto b = js.at("box").get<std::vector<double>>();
      r.selections.push_back({parse_aggregation(name), js.at("proposal").get<std::size_t>(),
                              BoundingBox(b.at(0), b.at(1), b.at(2), b.at(3)), js.at("iou").get<double>(),
                              js.at("hit").get<bool>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaError, std::string("results record: ") + e.what());
  }
}

struct InstanceOutcome {
  std::string id;
  std::optional<std::size_t> selected;
  std::optional<BoundingBox> box;
  double iou = 0.0;
  bool hit = false;
  std::optional<double> e_total;
  std::optional<std::string> error;
};

struct EvalResult {
  std::string dataset;
  std::string split;
  Aggregation mode = Aggregation::Sum;
  ExpressionMode expr_mode = ExpressionMode::Full;
  std::string checkpoint;
  std::vector<InstanceOutcome> instances;
  std::size_t hits = 0;
  std::size_t errors = 0;
  double accuracy = 0.0;
  nlohmann::json config;
  nlohmann::json backend;
  double wall_seconds = 0.0;
};

/// Accuracy for one selection rule. Failed instances count as misses.
inline EvalResult summarize(std::span<const InstanceRecord> records, Aggregation mode, const nlohmann::json& header) {
  EvalResult res;
  res.mode = mode;
  res.config = header.value("config", nlohmann::json::object());
  res.backend = header.value("backend", nlohmann::json::object());
  const auto manifest = header.value("manifest", nlohmann::json::object());
  res.dataset = manifest.value("dataset", "");
  res.split = manifest.value("split", "");
  res.checkpoint = res.backend.value("checkpoint", "");
  res.expr_mode = parse_expression_mode(res.config.value("expr_mode", "full"));
  for (const auto& r : records) {
    InstanceOutcome o;
    o.id = r.id;
    o.error = r.error;
    if (const auto* s = r.selection(mode); s && !r.error) {
      o.selected = s->proposal;
      o.box = s->box;
      o.iou = s->iou;
      o.hit = s->hit;
      for (const auto& sc : r.scores)
        if (sc.proposal == s->proposal) o.e_total = total_error(sc, mode);
    } else {
      ++res.errors;
    }
    res.hits += o.hit ? 1 : 0;
    res.instances.push_back(std::move(o));
  }
  res.accuracy = records.empty() ? 0.0 : static_cast<double>(res.hits) / static_cast<double>(records.size());
  return res;
}

struct ResultsFile {
  nlohmann::json header;
  std::vector<InstanceRecord> records;
};

/// Read a results JSONL. A truncated final line (interrupted write) is ignored.
inline ResultsFile read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IOError, "cannot open results " + path.string());
  ResultsFile f;
  std::string line;
  if (!std::getline(in, line)) throw Error(Errc::SchemaError, path.string() + ": empty results file");
  try {
    f.header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::SchemaError, path.string() + ": bad header: " + e.what());
  }
  if (f.header.value("format", "") != kResultsFormat) {
    throw Error(Errc::SchemaError, path.string() + ": not a " + std::string(kResultsFormat) + " file");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(Errc::SchemaError, path.string() + ": corrupt record line");
    }
    f.records.push_back(record_from_json(j));
  }
  return f;
}

inline std::vector<EvalResult> summarize_all(const ResultsFile& f) {
  std::vector<EvalResult> out;
  for (const auto& name : f.header.at("config").at("aggregations"))
    out.push_back(summarize(f.records, parse_aggregation(name.get<std::string>()), f.header));
  return out;
}

namespace detail {

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json manifest_summary(const Manifest& m) {
  return {{"dataset", m.dataset}, {"split", m.split}, {"detector", m.detector}, {"instances", m.size()}, {"notes", m.notes}};
}

}  // namespace detail

/// Score, select and grade one instance. Errors other than an unreachable
/// backend are captured in the record.
inline InstanceRecord evaluate_instance(const GroundingInstance& inst, const Manifest& manifest,
                                        const PipelineConfig& cfg, const Backend& backend,
                                        const NoiseSchedule& schedule, ImageCache& images) {
  InstanceRecord rec;
  rec.id = inst.id;
  try {
    const auto expr = process_expression(inst.expression, cfg.expr_mode);
    rec.expression = expr.processed;
    rec.expression_fallback = expr.fallback;
    const TextEmbedding cond = backend.encode_text(expr.processed);
    rec.text_truncated = cond.truncated;

    const auto image = images.get(manifest.image_path(inst));
    if (image->width() != inst.size.width() || image->height() != inst.size.height()) {
      throw Error(Errc::SchemaError, "image " + inst.image + " is " + std::to_string(image->width()) + "x" +
                                         std::to_string(image->height()) + ", manifest says " +
                                         std::to_string(inst.size.width()) + "x" + std::to_string(inst.size.height()));
    }

    ScoringConfig scoring = cfg.scoring;
    scoring.aggregation = cfg.scoring_mode();
    // Views are encoded one at a time so only latents stay resident.
    std::vector<ProposalLatents> latents(inst.proposals.size());
    for (std::size_t p = 0; p < inst.proposals.size(); ++p) {
      const auto& box = inst.proposals[p].box;
      if (needs_mask(scoring.aggregation))
        latents[p].mask = backend.encode_image(mask_isolate(*image, box, cfg.isolation, p));
      if (needs_crop(scoring.aggregation))
        latents[p].crop = backend.encode_image(crop_isolate(*image, box, cfg.isolation, p));
    }
    rec.scores = score_latents(latents, cond, scoring, backend, schedule);

    for (auto mode : cfg.modes) {
      const std::size_t idx = select(rec.scores, mode);
      const auto& box = inst.proposals[idx].box;
      const double overlap = iou(box, inst.gt_box);
      rec.selections.push_back({mode, idx, box, overlap, overlap >= cfg.iou_threshold});
    }
  } catch (const Error& e) {
    if (e.code() == Errc::BackendUnavailable) throw;
    rec.error = e.what();
    rec.selections.clear();
  }
  return rec;
}

struct EvaluateOptions {
  /// Stream per-instance records here when set.
  std::optional<std::filesystem::path> results_path;
  /// Keep records already in results_path and skip their instances.
  bool resume = false;
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Run the pipeline over a manifest; one EvalResult per configured mode.
/// Records are written in manifest order regardless of worker count, so a
/// fixed seed reproduces the results body byte for byte.
inline std::vector<EvalResult> evaluate(const Manifest& manifest, const PipelineConfig& cfg, const Backend& backend,
                                        ImageCache& images, const EvaluateOptions& opts = {}) {
  const auto started = std::chrono::steady_clock::now();
  const NoiseSchedule schedule = backend.descriptor().make_schedule();
  cfg.validate(schedule);
  if (cfg.isolation.canvas != backend.descriptor().canvas) {
    throw Error(Errc::CanvasMismatch, "canvas " + std::to_string(cfg.isolation.canvas) + " but backend expects " +
                                          std::to_string(backend.descriptor().canvas));
  }

  nlohmann::json header = {{"type", "header"},
                           {"format", kResultsFormat},
                           {"version", VGDZ_VERSION},
                           {"created", detail::utc_timestamp()},
                           {"config", cfg.to_json()},
                           {"backend", backend.descriptor().to_json()},
                           {"manifest", detail::manifest_summary(manifest)}};

  const std::size_t n = manifest.size();
  std::vector<std::optional<InstanceRecord>> done(n);
  std::vector<bool> already(n, false);

  std::ofstream out;
  if (opts.results_path) {
    std::vector<InstanceRecord> previous;
    if (opts.resume && std::filesystem::exists(*opts.results_path)) {
      auto prior = read_results(*opts.results_path);
      for (const char* key : {"config", "backend", "manifest"}) {
        if (prior.header.at(key) != header.at(key)) {
          throw Error(Errc::InvalidConfig, std::string("cannot resume: ") + key + " differs from " +
                                               opts.results_path->string());
        }
      }
      header = prior.header;
      previous = std::move(prior.records);
    }
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < n; ++i) by_id.emplace(manifest.instances[i].id, i);
    for (auto& r : previous) {
      if (auto it = by_id.find(r.id); it != by_id.end() && !already[it->second]) {
        already[it->second] = true;
        done[it->second] = std::move(r);
      }
    }
    // Rewrite so a torn final line from an interrupted run disappears.
    out.open(*opts.results_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IOError, "cannot write results " + opts.results_path->string());
    out << header.dump() << '\n';
    out.flush();
  }

  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < n; ++i)
    if (!already[i]) pending.push_back(i);

  std::mutex mu;
  std::vector<bool> ready(n, false);
  std::size_t write_cursor = 0;
  std::size_t completed = n - pending.size();
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::exception_ptr failure;

  auto flush_ready = [&] {
    while (write_cursor < n && (already[write_cursor] || ready[write_cursor])) {
      if (out.is_open()) out << to_json(*done[write_cursor]).dump() << '\n';
      ++write_cursor;
    }
    if (out.is_open()) out.flush();
  };

  flush_ready();

  auto worker = [&] {
    while (!abort.load()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const std::size_t i = pending[k];
      try {
        auto rec = evaluate_instance(manifest.instances[i], manifest, cfg, backend, schedule, images);
        std::lock_guard lock(mu);
        done[i] = std::move(rec);
        ready[i] = true;
        ++completed;
        flush_ready();
        if (opts.progress) opts.progress(completed, n);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        abort.store(true);
        return;
      }
    }
  };

  const unsigned threads = std::min<unsigned>(cfg.workers, static_cast<unsigned>(std::max<std::size_t>(pending.size(), 1)));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<InstanceRecord> records;
  records.reserve(n);
  for (auto& r : done) records.push_back(std::move(*r));

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::vector<EvalResult> results;
  for (auto mode : cfg.modes) {
    results.push_back(summarize(records, mode, header));
    results.back().wall_seconds = wall;
  }
  return results;
}

struct RandomBaseline {
  std::string dataset;
  std::string split;
  std::size_t trials = 0;
  double mean = 0.0;
  double standard_error = 0.0;
  /// Exact expectation: mean over instances of hits / proposals.
  double expected = 0.0;
};

/// Accuracy of choosing a proposal uniformly at random, over `trials` draws.
inline RandomBaseline random_baseline(const Manifest& manifest, std::uint64_t seed, std::size_t trials,
                                      double iou_threshold = 0.5) {
  if (trials < 1) throw Error(Errc::InvalidConfig, "random baseline needs at least one trial");
  if (manifest.size() == 0) throw Error(Errc::NoProposals, "empty manifest");
  RandomBaseline rb;
  rb.dataset = manifest.dataset;
  rb.split = manifest.split;
  rb.trials = trials;

  std::vector<std::vector<bool>> hit(manifest.size());
  double expected = 0.0;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& inst = manifest.instances[i];
    std::size_t h = 0;
    for (const auto& p : inst.proposals) {
      hit[i].push_back(iou(p.box, inst.gt_box) >= iou_threshold);
      h += hit[i].back() ? 1 : 0;
    }
    expected += static_cast<double>(h) / static_cast<double>(inst.proposals.size());
  }
  rb.expected = expected / static_cast<double>(manifest.size());

  rng::SplitMix gen(seed);
  std::vector<double> acc(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    std::size_t hits = 0;
    for (const auto& h : hit) hits += h[static_cast<std::size_t>(gen.below(h.size()))] ? 1 : 0;
    acc[t] = static_cast<double>(hits) / static_cast<double>(manifest.size());
  }
  double mean = 0.0;
  for (double a : acc) mean += a;
  mean /= static_cast<double>(trials);
  double var = 0.0;
  for (double a : acc) var += (a - mean) * (a - mean);
  rb.mean = mean;
  rb.standard_error = trials > 1 ? std::sqrt(var / static_cast<double>(trials - 1) / static_cast<double>(trials)) : 0.0;
  return rb;
}

}  // namespace vgdz
