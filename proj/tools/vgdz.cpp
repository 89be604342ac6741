// vgdz: zero-shot visual grounding with diffusion noise-prediction errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vgdz/dataset.hpp"
#include "vgdz/error.hpp"
#include "vgdz/evaluation.hpp"
#include "vgdz/image_io.hpp"
#include "vgdz/isolation.hpp"
#include "vgdz/pretrained_backend.hpp"
#include "vgdz/report.hpp"
#include "vgdz/scorer.hpp"
#include "vgdz/synthetic_backend.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitValidation = 2;
constexpr int kExitBackend = 3;

int exit_code(vgdz::Errc c) {
  switch (c) {
    case vgdz::Errc::BackendUnavailable: return kExitBackend;
    case vgdz::Errc::ShapeMismatch:
    case vgdz::Errc::TimestepOutOfRange: return kExitFailure;
    default: return kExitValidation;
  }
}

/// Options shared by every command that runs the model.
struct RunOptions {
  std::string backend = "pretrained";
  std::string checkpoint = "2-1";
  std::string timesteps = "100:900:10";
  int samples = 1;
  std::string aggregation = "sum";
  std::string expr_mode = "full";
  int canvas = 512;
  std::string fill = "0.5,0.5,0.5";
  std::string resize = "stretch";
  std::uint64_t seed = 0;
  double iou_thresh = 0.5;
  unsigned workers = 1;
  std::size_t batch_size = 8;
  bool offline = false;
  std::string device = "auto";
  std::string python = vgdz::env_or("VGDZ_PYTHON", "python3");
  std::string worker_script = vgdz::env_or("VGDZ_SD_WORKER", VGDZ_DEFAULT_WORKER_SCRIPT);
};

void add_run_options(CLI::App* sub, RunOptions& o, bool many_modes) {
  sub->add_option("--backend", o.backend, "Noise predictor")
      ->check(CLI::IsMember({"pretrained", "synthetic"}))
      ->capture_default_str();
  sub->add_option("--checkpoint", o.checkpoint, "Stable Diffusion tag (2-1, 1-5, 1-4, 1-2), hub id or local path")
      ->capture_default_str();
  sub->add_option("--timesteps", o.timesteps, "first:last:count or a comma list")->capture_default_str();
  sub->add_option("--samples", o.samples, "Noise draws per timestep")->check(CLI::PositiveNumber)->capture_default_str();
  sub->add_option("--aggregation", o.aggregation,
                  many_modes ? "sum, min, mask, crop, a comma list of them, or all" : "sum, min, mask or crop")
      ->capture_default_str();
  sub->add_option("--expr-mode", o.expr_mode, "Expression processing")
      ->check(CLI::IsMember({"full", "core"}))
      ->capture_default_str();
  sub->add_option("--canvas", o.canvas, "Model input side in pixels")->check(CLI::Range(8, 4096))->capture_default_str();
  sub->add_option("--fill", o.fill, "Mask fill colour r,g,b in [0,1]")->capture_default_str();
  sub->add_option("--resize", o.resize, "Canvas fitting")
      ->check(CLI::IsMember({"stretch", "letterbox"}))
      ->capture_default_str();
  sub->add_option("--seed", o.seed, "Noise seed")->capture_default_str();
  sub->add_option("--iou-thresh", o.iou_thresh, "Hit threshold")->check(CLI::Range(0.0, 1.0))->capture_default_str();
  sub->add_option("--workers", o.workers, "Parallel instances")->check(CLI::Range(1u, 1024u))->capture_default_str();
  sub->add_option("--batch-size", o.batch_size, "Noised latents per model call")
      ->check(CLI::Range(std::size_t{1}, std::size_t{4096}))
      ->capture_default_str();
  sub->add_flag("--offline", o.offline, "Forbid model downloads");
  sub->add_option("--device", o.device, "Worker device (auto, cpu, cuda, ...)")->capture_default_str();
  sub->add_option("--python", o.python, "Interpreter for the model worker")->capture_default_str();
  sub->add_option("--worker-script", o.worker_script, "Model worker script")->capture_default_str();
}

vgdz::Rgb parse_fill(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw vgdz::Error(vgdz::Errc::InvalidConfig, "--fill: '" + s + "' is not a number list");
    }
  }
  if (v.size() == 1) return {v[0], v[0], v[0]};
  if (v.size() != 3) throw vgdz::Error(vgdz::Errc::InvalidConfig, "--fill: expected 1 or 3 values, got '" + s + "'");
  return {v[0], v[1], v[2]};
}

std::vector<vgdz::Aggregation> parse_modes(const std::string& s, bool many) {
  if (s == "all") {
    if (!many) throw vgdz::Error(vgdz::Errc::InvalidConfig, "--aggregation: 'all' is only valid for evaluate");
    return {vgdz::Aggregation::CropOnly, vgdz::Aggregation::MaskOnly, vgdz::Aggregation::Min, vgdz::Aggregation::Sum};
  }
  std::vector<vgdz::Aggregation> out;
  std::stringstream ss(s);
  try {
    for (std::string part; std::getline(ss, part, ',');) out.push_back(vgdz::parse_aggregation(part));
  } catch (const vgdz::Error& e) {
    throw vgdz::Error(vgdz::Errc::InvalidConfig, std::string("--aggregation: ") + e.detail());
  }
  if (out.empty()) throw vgdz::Error(vgdz::Errc::InvalidConfig, "--aggregation: empty");
  if (!many && out.size() != 1) throw vgdz::Error(vgdz::Errc::InvalidConfig, "--aggregation: pick one mode");
  return out;
}

/// Build and validate the pipeline config. Runs before any backend starts,
/// against the default 1000-step schedule; evaluate() re-checks against the
/// backend's own schedule.
vgdz::PipelineConfig pipeline_config(const RunOptions& o, bool many_modes) {
  vgdz::PipelineConfig cfg;
  try {
    cfg.scoring.timesteps = vgdz::parse_timesteps(o.timesteps);
  } catch (const vgdz::Error& e) {
    throw vgdz::Error(vgdz::Errc::InvalidConfig, std::string("--timesteps: ") + e.detail());
  }
  cfg.scoring.samples_per_timestep = o.samples;
  cfg.scoring.seed = o.seed;
  cfg.scoring.batch_size = o.batch_size;
  cfg.modes = parse_modes(o.aggregation, many_modes);
  cfg.scoring.aggregation = cfg.scoring_mode();
  cfg.expr_mode = vgdz::parse_expression_mode(o.expr_mode);
  cfg.isolation.canvas = o.canvas;
  cfg.isolation.fill = parse_fill(o.fill);
  cfg.isolation.resize = o.resize == "letterbox" ? vgdz::ResizeMode::Letterbox : vgdz::ResizeMode::Stretch;
  cfg.iou_threshold = o.iou_thresh;
  cfg.workers = o.workers;
  const auto schedule = vgdz::NoiseSchedule::make(vgdz::BetaSchedule::Linear, 1e-4, 0.02, 1000);
  try {
    cfg.validate(schedule);
  } catch (const vgdz::Error& e) {
    const std::string msg = e.detail();
    const char* field = msg.find("timestep") != std::string::npos  ? "--timesteps"
                        : msg.find("IoU") != std::string::npos     ? "--iou-thresh"
                        : msg.find("canvas") != std::string::npos  ? "--canvas"
                        : msg.find("fill") != std::string::npos    ? "--fill"
                        : msg.find("sample") != std::string::npos  ? "--samples"
                        : msg.find("aggregat") != std::string::npos ? "--aggregation"
                                                                    : "config";
    throw vgdz::Error(e.code(), std::string(field) + ": " + msg);
  }
  if (o.backend == "synthetic" && o.canvas % 8 != 0) {
    throw vgdz::Error(vgdz::Errc::InvalidConfig, "--canvas: the synthetic backend needs a multiple of 8");
  }
  return cfg;
}

std::unique_ptr<vgdz::Backend> make_backend(const RunOptions& o) {
  if (o.backend == "synthetic") {
    vgdz::SyntheticOptions so;
    so.canvas = o.canvas;
    return std::make_unique<vgdz::SyntheticBackend>(so);
  }
  vgdz::PretrainedOptions po;
  po.checkpoint = o.checkpoint;
  po.python = o.python;
  po.worker_script = o.worker_script;
  po.offline = o.offline;
  po.device = o.device;
  return std::make_unique<vgdz::PretrainedBackend>(po);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw vgdz::Error(vgdz::Errc::IOError, "cannot write " + path.string());
  out << text;
  if (!out) throw vgdz::Error(vgdz::Errc::IOError, "write failed for " + path.string());
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// --- ground --------------------------------------------------------------

struct GroundOptions {
  RunOptions run;
  std::string image;
  std::string expression;
  std::string proposals;
  std::vector<std::string> boxes;
  std::string annotate;
  bool json_out = false;
};

vgdz::BoundingBox parse_box_flag(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      v.push_back(std::stod(part));
    } catch (const std::exception&) {
      throw vgdz::Error(vgdz::Errc::InvalidBox, "--box: '" + s + "' is not x0,y0,x1,y1");
    }
  }
  if (v.size() != 4) throw vgdz::Error(vgdz::Errc::InvalidBox, "--box: '" + s + "' is not x0,y0,x1,y1");
  try {
    return vgdz::BoundingBox(v[0], v[1], v[2], v[3]);
  } catch (const vgdz::Error& e) {
    throw vgdz::Error(vgdz::Errc::InvalidBox, std::string("--box: ") + e.detail());
  }
}

/// A proposals file holds a JSON array whose entries are either
/// [x0,y0,x1,y1] or {"box": [...], "score": s, "format": "xyxy"|"xywh"}.
std::vector<vgdz::Proposal> read_proposals_file(const fs::path& path) {
  const json j = vgdz::detail::read_json_file(path);
  const std::string where = "--proposals " + path.string();
  if (!j.is_array()) throw vgdz::Error(vgdz::Errc::SchemaError, where + ": expected a JSON array");
  std::vector<vgdz::Proposal> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    if (j[i].is_array()) {
      const auto b = vgdz::detail::read_box(j[i], at);
      out.push_back({vgdz::BoundingBox(b[0], b[1], b[2], b[3]), 0.0});
    } else {
      auto one = vgdz::detail::parse_detections(json::array({j[i]}), at);
      out.push_back(one.front());
    }
  }
  return out;
}

int cmd_ground(const GroundOptions& g) {
  const auto cfg = pipeline_config(g.run, false);
  const auto mode = cfg.modes.front();

  std::vector<vgdz::Proposal> raw;
  if (!g.proposals.empty()) raw = read_proposals_file(g.proposals);
  for (const auto& b : g.boxes) raw.push_back({parse_box_flag(b), 0.0});
  if (raw.empty()) throw vgdz::Error(vgdz::Errc::NoProposals, "--proposals/--box: at least one proposal is required");

  const vgdz::Image image = vgdz::load_image(g.image);
  const vgdz::ImageSize size(image.width(), image.height());
  std::vector<vgdz::BoundingBox> boxes;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    try {
      boxes.push_back(vgdz::clip_to_image(raw[i].box, size));
      source.push_back(i);
    } catch (const vgdz::Error& e) {
      std::cerr << "warning: proposal " << i << " dropped: " << e.what() << '\n';
    }
  }
  if (boxes.empty()) throw vgdz::Error(vgdz::Errc::NoProposals, "--proposals: no proposal overlaps the image");
  const auto expr = vgdz::process_expression(g.expression, cfg.expr_mode);

  const auto backend = make_backend(g.run);
  if (backend->descriptor().canvas != cfg.isolation.canvas) {
    throw vgdz::Error(vgdz::Errc::CanvasMismatch, "--canvas: " + std::to_string(cfg.isolation.canvas) +
                                                      " but the backend expects " +
                                                      std::to_string(backend->descriptor().canvas));
  }
  const auto schedule = backend->descriptor().make_schedule();
  const auto cond = backend->encode_text(expr.processed);

  std::vector<vgdz::ProposalLatents> latents(boxes.size());
  for (std::size_t p = 0; p < boxes.size(); ++p) {
    if (vgdz::needs_mask(cfg.scoring.aggregation))
      latents[p].mask = backend->encode_image(vgdz::mask_isolate(image, boxes[p], cfg.isolation, p));
    if (vgdz::needs_crop(cfg.scoring.aggregation))
      latents[p].crop = backend->encode_image(vgdz::crop_isolate(image, boxes[p], cfg.isolation, p));
  }
  const auto scores = vgdz::score_latents(latents, cond, cfg.scoring, *backend, schedule);
  const std::size_t winner = vgdz::select(scores, mode);

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return vgdz::total_error(scores[a], mode) < vgdz::total_error(scores[b], mode);
  });
  // Keep the selected proposal first when totals tie.
  std::stable_partition(order.begin(), order.end(), [&](std::size_t i) { return i == winner; });

  if (g.json_out) {
    json j;
    j["expression"] = expr.processed;
    j["aggregation"] = std::string(vgdz::to_string(mode));
    j["selected"] = source[winner];
    auto& ranked = j["ranked"] = json::array();
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto& s = scores[order[r]];
      ranked.push_back({{"rank", r + 1},
                        {"proposal", source[order[r]]},
                        {"box", vgdz::detail::box_json(boxes[order[r]])},
                        {"e_mask", s.e_mask ? json(*s.e_mask) : json(nullptr)},
                        {"e_crop", s.e_crop ? json(*s.e_crop) : json(nullptr)},
                        {"e_total", vgdz::total_error(s, mode)}});
    }
    std::cout << j.dump(2) << '\n';
  } else {
    std::cout << "expression: " << expr.processed << (expr.fallback ? " (core extraction fell back)" : "") << '\n';
    std::cout << "aggregation: " << vgdz::to_string(mode) << "\n\n";
    std::printf("%-5s %-9s %-36s %-12s %-12s %-12s\n", "rank", "proposal", "box", "e_mask", "e_crop", "e_total");
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto& s = scores[order[r]];
      const std::string mark = order[r] == winner ? "*" : "";
      std::printf("%-5zu %-9s %-36s %-12s %-12s %-12s\n", r + 1, (std::to_string(source[order[r]]) + mark).c_str(),
                  boxes[order[r]].to_string().c_str(), s.e_mask ? fmt(*s.e_mask).c_str() : "-",
                  s.e_crop ? fmt(*s.e_crop).c_str() : "-", fmt(vgdz::total_error(s, mode)).c_str());
    }
    std::cout << "\nselected: proposal " << source[winner] << ' ' << boxes[winner].to_string() << '\n';
  }
  if (!g.annotate.empty()) vgdz::save_annotated(image, boxes, winner, g.annotate);
  return 0;
}

// --- evaluate ------------------------------------------------------------

struct EvaluateCli {
  RunOptions run;
  std::string manifest;
  std::string out;
  std::size_t subset = 0;
  std::uint64_t subset_seed = 0;
  std::size_t top_k = 0;
  double min_area = 0.0;
  bool resume = false;
  std::size_t random_trials = 1000;
  bool quiet = false;
};

int cmd_evaluate(const EvaluateCli& e, const CLI::App& sub) {
  const auto cfg = pipeline_config(e.run, true);
  if (e.min_area < 0.0) throw vgdz::Error(vgdz::Errc::InvalidConfig, "--min-area: must be >= 0");

  vgdz::ProposalFilter filter;
  if (e.top_k > 0) filter.top_k = e.top_k;
  filter.min_area = e.min_area;
  std::vector<std::string> warnings;
  vgdz::Manifest manifest = vgdz::load_manifest(e.manifest, filter, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  if (e.subset > 0) {
    try {
      manifest = vgdz::subset(manifest, e.subset, e.subset_seed);
    } catch (const vgdz::Error& err) {
      throw vgdz::Error(err.code(), std::string("--subset: ") + err.detail());
    }
  }

  const fs::path out(e.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw vgdz::Error(vgdz::Errc::IOError, "--out: cannot create " + out.string() + ": " + ec.message());
  write_text(out / "config.toml", "[evaluate]\n" + sub.config_to_str(true, false));

  const auto backend = make_backend(e.run);
  json snapshot = {{"pipeline", cfg.to_json()},
                   {"backend", backend->descriptor().to_json()},
                   {"manifest", e.manifest},
                   {"subset", e.subset},
                   {"subset_seed", e.subset_seed},
                   {"workers", cfg.workers},
                   {"batch_size", cfg.scoring.batch_size}};
  write_text(out / "config.json", snapshot.dump(2) + "\n");

  vgdz::ImageCache images([](const fs::path& p) { return vgdz::load_image(p); });
  vgdz::EvaluateOptions opts;
  opts.results_path = out / "results.jsonl";
  opts.resume = e.resume;
  if (!e.quiet) {
    opts.progress = [](std::size_t done, std::size_t total) {
      if (done == total || done % 10 == 0) std::cerr << "\r" << done << "/" << total << std::flush;
      if (done == total) std::cerr << '\n';
    };
  }
  const auto results = vgdz::evaluate(manifest, cfg, *backend, images, opts);

  std::vector<vgdz::RandomBaseline> baselines;
  if (e.random_trials > 0) baselines.push_back(vgdz::random_baseline(manifest, e.subset_seed, e.random_trials, cfg.iou_threshold));
  vgdz::write_report(results, vgdz::ReportFormat::Csv, out / "report.csv", vgdz::ReportAxis::Method, baselines);
  vgdz::write_report(results, vgdz::ReportFormat::Markdown, out / "report.md", vgdz::ReportAxis::Method, baselines);

  for (const auto& r : results) {
    std::printf("%-26s %s %s: %.2f%% (%zu/%zu, %zu errors)\n", vgdz::method_label(r.mode).c_str(), r.dataset.c_str(),
                r.split.c_str(), r.accuracy * 100.0, r.hits, r.instances.size(), r.errors);
  }
  for (const auto& b : baselines) {
    std::printf("%-26s %s %s: %.2f%% +/- %.2f (expected %.2f%%)\n", vgdz::kRandomLabel, b.dataset.c_str(),
                b.split.c_str(), b.mean * 100.0, b.standard_error * 100.0, b.expected * 100.0);
  }
  std::printf("results: %s\n", opts.results_path->string().c_str());
  return 0;
}

// --- convert -------------------------------------------------------------

struct ConvertCli {
  std::string refs;
  std::string detections;
  std::string out;
  vgdz::ConvertOptions opts;
  std::string on_missing = "drop";
};

int cmd_convert(ConvertCli c) {
  c.opts.missing = c.on_missing == "drop" ? vgdz::MissingDetectionsPolicy::Drop : vgdz::MissingDetectionsPolicy::Error;
  vgdz::ConvertReport rep;
  const auto m = vgdz::convert_refcoco(c.refs, c.detections, c.opts, &rep);
  if (!rep.images_without_detections.empty()) {
    std::cerr << "warning: " << rep.images_without_detections.size() << " image(s) without detections; "
              << rep.dropped_instances << " instance(s) dropped\n";
  }
  vgdz::write_manifest(m, c.out);
  const auto stats = m.proposal_stats();
  std::printf("%s %s: %zu refs, %zu expressions, %zu instances written, %zu dropped\n", m.dataset.c_str(),
              m.split.c_str(), rep.refs, rep.expressions, rep.instances, rep.dropped_instances);
  std::printf("proposals per instance: min %zu, mean %.2f, max %zu\n", stats.min, stats.mean, stats.max);
  std::printf("manifest: %s\n", c.out.c_str());
  return 0;
}

// --- report --------------------------------------------------------------

struct ReportCli {
  std::vector<std::string> results;
  std::string axis = "method";
  std::string csv;
  std::string markdown;
};

int cmd_report(const ReportCli& r) {
  const auto axis = vgdz::parse_report_axis(r.axis);
  std::vector<vgdz::EvalResult> all;
  for (const auto& path : r.results) {
    const auto file = vgdz::read_results(path);
    for (auto& res : vgdz::summarize_all(file)) all.push_back(std::move(res));
  }
  if (!r.csv.empty()) vgdz::write_report(all, vgdz::ReportFormat::Csv, r.csv, axis);
  if (!r.markdown.empty()) vgdz::write_report(all, vgdz::ReportFormat::Markdown, r.markdown, axis);
  std::cout << vgdz::render_markdown(vgdz::build_table(all, axis));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot visual grounding by diffusion noise-prediction error", "vgdz"};
  app.set_version_flag("--version", std::string(VGDZ_VERSION));
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML config file with [ground]/[evaluate] sections; flags take precedence");
  app.fallthrough();

  GroundOptions ground;
  auto* g = app.add_subcommand("ground", "Rank proposals for one image and expression");
  add_run_options(g, ground.run, false);
  g->add_option("--image", ground.image, "Image file")->required()->check(CLI::ExistingFile);
  g->add_option("--expression,-e", ground.expression, "Referring expression")->required();
  g->add_option("--proposals", ground.proposals, "JSON file of proposal boxes")->check(CLI::ExistingFile);
  g->add_option("--box", ground.boxes, "Proposal x0,y0,x1,y1 (repeatable)");
  g->add_option("--annotate", ground.annotate, "Write the image with boxes drawn, winner highlighted");
  g->add_flag("--json", ground.json_out, "Print the ranking as JSON");

  EvaluateCli eval;
  auto* e = app.add_subcommand("evaluate", "Evaluate a manifest and write results and reports");
  add_run_options(e, eval.run, true);
  e->add_option("--manifest,-m", eval.manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  e->add_option("--out,-o", eval.out, "Output directory")->required();
  e->add_option("--subset", eval.subset, "Evaluate a seeded random subset of this size (0 = all)")->capture_default_str();
  e->add_option("--subset-seed", eval.subset_seed, "Subset and random-baseline seed")->capture_default_str();
  e->add_option("--top-k", eval.top_k, "Keep the k highest-scoring proposals (0 = all)")->capture_default_str();
  e->add_option("--min-area", eval.min_area, "Drop proposals smaller than this area")->capture_default_str();
  e->add_flag("--resume", eval.resume, "Continue an interrupted run in --out");
  e->add_option("--random-trials", eval.random_trials, "Random-baseline trials (0 = skip)")->capture_default_str();
  e->add_flag("--quiet,-q", eval.quiet, "No progress output");

  ConvertCli conv;
  auto* c = app.add_subcommand("convert", "Build a manifest from RefCOCO-style refs and detections");
  c->add_option("--refs", conv.refs, "Directory with refs.json and instances.json")->required()->check(CLI::ExistingDirectory);
  c->add_option("--detections", conv.detections, "Detections JSON")->required()->check(CLI::ExistingFile);
  c->add_option("--split", conv.opts.split, "Split to export")->capture_default_str();
  c->add_option("--dataset", conv.opts.dataset, "Dataset name (default: refs directory name)");
  c->add_option("--image-root", conv.opts.image_root, "Prefix for image file names");
  c->add_option("--detector", conv.opts.detector, "Detector provenance tag")->capture_default_str();
  c->add_option("--on-missing", conv.on_missing, "Images without detections: drop (warn and count) or error")
      ->check(CLI::IsMember({"error", "drop"}))
      ->capture_default_str();
  c->add_option("--out,-o", conv.out, "Manifest file to write")->required();

  ReportCli rep;
  auto* r = app.add_subcommand("report", "Tabulate one or more results files");
  r->add_option("results", rep.results, "results.jsonl files")->required()->check(CLI::ExistingFile);
  r->add_option("--axis", rep.axis, "Row naming: method, expr or checkpoint")
      ->check(CLI::IsMember({"method", "expr", "checkpoint"}))
      ->capture_default_str();
  r->add_option("--csv", rep.csv, "Write CSV here");
  r->add_option("--markdown", rep.markdown, "Write markdown here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForVersion& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitValidation;
  }

  try {
    if (g->parsed()) return cmd_ground(ground);
    if (e->parsed()) return cmd_evaluate(eval, *e);
    if (c->parsed()) return cmd_convert(conv);
    if (r->parsed()) return cmd_report(rep);
  } catch (const vgdz::Error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return exit_code(ex.code());
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
