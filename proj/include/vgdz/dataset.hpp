#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "vgdz/error.hpp"
#include "vgdz/geometry.hpp"
#include "vgdz/image.hpp"
#include "vgdz/random.hpp"

namespace vgdz {

struct Proposal {
  BoundingBox box;
  double score = 0.0;

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

struct GroundingInstance {
  std::string id;
  std::string image;
  ImageSize size;
  std::string expression;
  BoundingBox gt_box;
  std::vector<Proposal> proposals;
  std::string split;

  friend bool operator==(const GroundingInstance&, const GroundingInstance&) = default;
};

struct ProposalStats {
  std::size_t total = 0;
  std::size_t min = 0;
  std::size_t max = 0;
  double mean = 0.0;
};

struct Manifest {
  std::string dataset;
  std::string split;
  std::string detector;
  std::vector<GroundingInstance> instances;
  /// Free-form provenance: drops, subsetting, conversion counts.
  std::vector<std::string> notes;
  /// Directory relative image paths resolve against; not serialized.
  std::filesystem::path base_dir;

  std::size_t size() const noexcept { return instances.size(); }

  std::filesystem::path image_path(const GroundingInstance& inst) const {
    const std::filesystem::path p(inst.image);
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }

  ProposalStats proposal_stats() const {
    ProposalStats s;
    if (instances.empty()) return s;
    s.min = instances.front().proposals.size();
    for (const auto& i : instances) {
      s.total += i.proposals.size();
      s.min = std::min(s.min, i.proposals.size());
      s.max = std::max(s.max, i.proposals.size());
    }
    s.mean = static_cast<double>(s.total) / static_cast<double>(instances.size());
    return s;
  }

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.dataset == b.dataset && a.split == b.split && a.detector == b.detector &&
           a.instances == b.instances && a.notes == b.notes;
  }
};

/// Optional proposal filtering applied at load time. Defaults keep everything.
struct ProposalFilter {
  std::optional<std::size_t> top_k;
  double min_area = 0.0;
};

namespace detail {

inline std::array<double, 4> read_box(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw Error(Errc::SchemaError, where + ": expected an array of 4 numbers");
  std::array<double, 4> v{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (!j[i].is_number()) throw Error(Errc::SchemaError, where + "[" + std::to_string(i) + "]: expected a number");
    v[i] = j[i].get<double>();
  }
  return v;
}

template <typename T>
T read_field(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) throw Error(Errc::SchemaError, where + "." + key + ": missing");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(Errc::SchemaError, where + "." + key + ": wrong type");
  }
}

inline nlohmann::json box_json(const BoundingBox& b) {
  return nlohmann::json::array({b.x_min(), b.y_min(), b.x_max(), b.y_max()});
}

inline std::vector<Proposal> filter_proposals(std::vector<Proposal> props, const ProposalFilter& f) {
  std::erase_if(props, [&](const Proposal& p) { return p.box.area() < f.min_area; });
  if (f.top_k && props.size() > *f.top_k) {
    std::vector<std::size_t> order(props.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return props[a].score > props[b].score; });
    order.resize(*f.top_k);
    std::sort(order.begin(), order.end());
    std::vector<Proposal> kept;
    for (auto i : order) kept.push_back(props[i]);
    props = std::move(kept);
  }
  return props;
}

}  // namespace detail

/// Validate and build a manifest from its JSON form. Proposals that are
/// empty or fall outside their image are dropped; instances left without
/// proposals are dropped. Each drop appends a line to `warnings`.
inline Manifest parse_manifest(const nlohmann::json& j, const ProposalFilter& filter = {},
                               std::vector<std::string>* warnings = nullptr) {
  auto warn = [&](const std::string& w) {
    if (warnings) warnings->push_back(w);
  };
  Manifest m;
  m.dataset = detail::read_field<std::string>(j, "dataset", "manifest");
  m.split = detail::read_field<std::string>(j, "split", "manifest");
  m.detector = j.contains("detector") ? detail::read_field<std::string>(j, "detector", "manifest") : std::string();
  if (j.contains("notes")) m.notes = detail::read_field<std::vector<std::string>>(j, "notes", "manifest");
  if (!j.contains("instances") || !j["instances"].is_array()) {
    throw Error(Errc::SchemaError, "manifest.instances: missing or not an array");
  }

  std::unordered_set<std::string> seen;
  std::size_t dropped_instances = 0;
  std::size_t dropped_proposals = 0;
  const auto& arr = j["instances"];
  for (std::size_t n = 0; n < arr.size(); ++n) {
    const auto& ji = arr[n];
    const std::string where = "instances[" + std::to_string(n) + "]";
    const auto id = detail::read_field<std::string>(ji, "id", where);
    if (!seen.insert(id).second) throw Error(Errc::SchemaError, where + ".id: duplicate id '" + id + "'");

    const int width = detail::read_field<int>(ji, "width", where);
    const int height = detail::read_field<int>(ji, "height", where);
    if (width < 1 || height < 1) throw Error(Errc::SchemaError, where + ": width/height must be positive");
    const ImageSize size(width, height);

    const auto g = detail::read_box(ji.contains("gt_box") ? ji["gt_box"] : nlohmann::json(), where + ".gt_box");
    std::optional<BoundingBox> gt;
    try {
      gt = clip_to_image(BoundingBox(g[0], g[1], g[2], g[3]), size);
    } catch (const Error& e) {
      throw Error(Errc::SchemaError, where + ".gt_box: " + e.what());
    }

    if (!ji.contains("proposals") || !ji["proposals"].is_array()) {
      throw Error(Errc::SchemaError, where + ".proposals: missing or not an array");
    }
    std::vector<Proposal> props;
    const auto& jp = ji["proposals"];
    for (std::size_t k = 0; k < jp.size(); ++k) {
      const std::string pw = where + ".proposals[" + std::to_string(k) + "]";
      if (!jp[k].is_object()) throw Error(Errc::SchemaError, pw + ": expected an object");
      const auto b = detail::read_box(jp[k].contains("box") ? jp[k]["box"] : nlohmann::json(), pw + ".box");
      const double score = jp[k].contains("score") ? detail::read_field<double>(jp[k], "score", pw) : 0.0;
      try {
        props.push_back({clip_to_image(BoundingBox(b[0], b[1], b[2], b[3]), size), score});
      } catch (const Error& e) {
        warn(pw + " dropped: " + e.what());
        ++dropped_proposals;
      }
    }
    props = detail::filter_proposals(std::move(props), filter);
    if (props.empty()) {
      warn(where + " ('" + id + "') dropped: no usable proposals");
      ++dropped_instances;
      continue;
    }
    m.instances.push_back({id, detail::read_field<std::string>(ji, "image", where), size,
                           detail::read_field<std::string>(ji, "expression", where), *gt, std::move(props),
                           m.split});
  }
  if (dropped_instances > 0 || dropped_proposals > 0) {
    m.notes.push_back("load dropped " + std::to_string(dropped_instances) + " instances and " +
                      std::to_string(dropped_proposals) + " proposals");
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path, const ProposalFilter& filter = {},
                              std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IOError, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::SchemaError, path.string() + ": " + e.what());
  }
  Manifest m = parse_manifest(j, filter, warnings);
  m.base_dir = path.parent_path();
  return m;
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["dataset"] = m.dataset;
  j["split"] = m.split;
  j["detector"] = m.detector;
  j["notes"] = m.notes;
  const auto stats = m.proposal_stats();
  j["proposal_stats"] = {{"total", stats.total}, {"min", stats.min}, {"max", stats.max}, {"mean", stats.mean}};
  auto& arr = j["instances"] = nlohmann::json::array();
  for (const auto& i : m.instances) {
    nlohmann::json props = nlohmann::json::array();
    for (const auto& p : i.proposals) props.push_back({{"box", detail::box_json(p.box)}, {"score", p.score}});
    arr.push_back({{"id", i.id},
                   {"image", i.image},
                   {"width", i.size.width()},
                   {"height", i.size.height()},
                   {"expression", i.expression},
                   {"gt_box", detail::box_json(i.gt_box)},
                   {"proposals", std::move(props)}});
  }
  return j;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IOError, "cannot write manifest " + path.string());
  out << to_json(m).dump(1) << '\n';
  if (!out) throw Error(Errc::IOError, "write failed for " + path.string());
}

/// Seeded sample of n instances without replacement; source order is kept.
inline Manifest subset(const Manifest& m, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw Error(Errc::InvalidConfig, "subset size must be >= 1");
  if (n > m.size()) {
    throw Error(Errc::SubsetTooLarge, "subset of " + std::to_string(n) + " requested from " +
                                          std::to_string(m.size()) + " instances");
  }
  std::vector<std::size_t> idx(m.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  rng::SplitMix gen(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(gen.below(idx.size() - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());

  Manifest out;
  out.dataset = m.dataset;
  out.split = m.split;
  out.detector = m.detector;
  out.notes = m.notes;
  out.base_dir = m.base_dir;
  for (auto i : idx) out.instances.push_back(m.instances[i]);
  out.notes.push_back("subset " + std::to_string(n) + " of " + std::to_string(m.size()) + " (seed " +
                      std::to_string(seed) + ")");
  return out;
}

// --- RefCOCO-family conversion ------------------------------------------

inline const std::vector<std::string>& valid_splits(const std::string& dataset) {
  static const std::vector<std::string> kRefcoco{"train", "val", "testA", "testB"};
  static const std::vector<std::string> kRefcocog{"train", "val", "test"};
  if (dataset == "refcoco" || dataset == "refcoco+") return kRefcoco;
  if (dataset == "refcocog") return kRefcocog;
  throw Error(Errc::SchemaError, "unknown dataset '" + dataset + "' (expected refcoco, refcoco+, refcocog)");
}

enum class MissingDetectionsPolicy { Error, Drop };

struct ConvertOptions {
  /// Dataset name; defaults to the refs directory's base name.
  std::string dataset;
  std::string split = "val";
  /// Prefix joined to each COCO file_name.
  std::string image_root;
  std::string detector = "faster-rcnn";
  MissingDetectionsPolicy missing = MissingDetectionsPolicy::Error;
};

struct ConvertReport {
  std::size_t refs = 0;
  std::size_t expressions = 0;
  std::size_t instances = 0;
  std::size_t dropped_instances = 0;
  std::vector<std::int64_t> images_without_detections;
};

namespace detail {

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::IOError, "cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::SchemaError, p.string() + ": " + e.what());
  }
}

inline std::vector<Proposal> parse_detections(const nlohmann::json& arr, const std::string& where) {
  std::vector<Proposal> out;
  if (!arr.is_array()) throw Error(Errc::SchemaError, where + ": expected an array");
  for (std::size_t k = 0; k < arr.size(); ++k) {
    const std::string w = where + "[" + std::to_string(k) + "]";
    const auto b = read_box(arr[k].contains("box") ? arr[k]["box"] : nlohmann::json(), w + ".box");
    const auto fmt = read_field<std::string>(arr[k], "format", w);
    const double score = arr[k].contains("score") ? read_field<double>(arr[k], "score", w) : 0.0;
    try {
      if (fmt == "xyxy") {
        out.push_back({BoundingBox(b[0], b[1], b[2], b[3]), score});
      } else if (fmt == "xywh") {
        out.push_back({BoundingBox::from_xywh(b[0], b[1], b[2], b[3]), score});
      } else {
        throw Error(Errc::SchemaError, w + ".format: expected \"xyxy\" or \"xywh\", got \"" + fmt + "\"");
      }
    } catch (const Error& e) {
      if (e.code() == Errc::SchemaError) throw;
      // zero-area detections are skipped
    }
  }
  return out;
}

}  // namespace detail

/// Build a manifest from RefCOCO-style annotations:
///   refs_dir/refs.json       [{ref_id, image_id, ann_id, split, sentences: [{sent_id, sent|raw}]}]
///   refs_dir/instances.json  COCO {images: [{id, file_name, width, height}],
///                                  annotations: [{id, image_id, bbox: [x, y, w, h]}]}
/// and a detections file {"<image_id>": [{box, score, format}]}. One instance
/// per (expression, ground-truth box) pair in the split.
inline Manifest convert_refcoco(const std::filesystem::path& refs_dir, const std::filesystem::path& detections_file,
                                const ConvertOptions& opts, ConvertReport* report = nullptr) {
  std::string dataset = opts.dataset;
  if (dataset.empty()) dataset = std::filesystem::path(refs_dir).lexically_normal().filename().string();
  if (dataset.empty()) dataset = refs_dir.parent_path().filename().string();
  const auto& splits = valid_splits(dataset);
  if (std::find(splits.begin(), splits.end(), opts.split) == splits.end()) {
    std::string list;
    for (const auto& s : splits) list += (list.empty() ? "" : ", ") + s;
    throw Error(Errc::UnknownSplit, "split '" + opts.split + "' is not defined for " + dataset + " (valid: " + list + ")");
  }

  const auto refs = detail::read_json_file(refs_dir / "refs.json");
  const auto coco = detail::read_json_file(refs_dir / "instances.json");
  const auto dets = detail::read_json_file(detections_file);
  if (!refs.is_array()) throw Error(Errc::SchemaError, "refs.json: expected an array");
  if (!dets.is_object()) throw Error(Errc::SchemaError, detections_file.string() + ": expected an object keyed by image id");

  struct ImageInfo {
    std::string file;
    int width;
    int height;
  };
  std::unordered_map<std::int64_t, ImageInfo> images;
  std::unordered_map<std::int64_t, std::array<double, 4>> anns;
  try {
    for (const auto& im : coco.at("images"))
      images[im.at("id").get<std::int64_t>()] = {im.at("file_name").get<std::string>(), im.at("width").get<int>(),
                                                 im.at("height").get<int>()};
    for (const auto& an : coco.at("annotations"))
      anns[an.at("id").get<std::int64_t>()] = detail::read_box(an.at("bbox"), "annotation bbox");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaError, std::string("instances.json: ") + e.what());
  }

  Manifest m;
  m.dataset = dataset;
  m.split = opts.split;
  m.detector = opts.detector;
  ConvertReport rep;
  std::vector<std::int64_t> missing;
  std::unordered_map<std::int64_t, std::vector<Proposal>> det_cache;

  for (std::size_t n = 0; n < refs.size(); ++n) {
    const auto& ref = refs[n];
    const std::string where = "refs[" + std::to_string(n) + "]";
    if (detail::read_field<std::string>(ref, "split", where) != opts.split) continue;
    ++rep.refs;
    const auto ref_id = detail::read_field<std::int64_t>(ref, "ref_id", where);
    const auto image_id = detail::read_field<std::int64_t>(ref, "image_id", where);
    const auto ann_id = detail::read_field<std::int64_t>(ref, "ann_id", where);
    const auto im = images.find(image_id);
    if (im == images.end()) throw Error(Errc::SchemaError, where + ": image " + std::to_string(image_id) + " not in instances.json");
    const auto an = anns.find(ann_id);
    if (an == anns.end()) throw Error(Errc::SchemaError, where + ": annotation " + std::to_string(ann_id) + " not in instances.json");
    const ImageSize size(im->second.width, im->second.height);
    const auto& g = an->second;
    const BoundingBox gt = clip_to_image(BoundingBox::from_xywh(g[0], g[1], g[2], g[3]), size);

    auto cached = det_cache.find(image_id);
    if (cached == det_cache.end()) {
      const std::string key = std::to_string(image_id);
      std::vector<Proposal> props;
      if (dets.contains(key)) {
        for (auto& p : detail::parse_detections(dets[key], "detections[" + key + "]")) {
          try {
            props.push_back({clip_to_image(p.box, size), p.score});
          } catch (const Error&) {
          }
        }
      }
      cached = det_cache.emplace(image_id, std::move(props)).first;
      if (cached->second.empty()) missing.push_back(image_id);
    }

    const auto sentences = ref.contains("sentences") ? ref["sentences"] : nlohmann::json::array();
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      const auto& sent = sentences[s];
      const std::string sw = where + ".sentences[" + std::to_string(s) + "]";
      std::string text = sent.contains("raw") ? detail::read_field<std::string>(sent, "raw", sw)
                                              : detail::read_field<std::string>(sent, "sent", sw);
      const auto sent_id = sent.contains("sent_id") ? detail::read_field<std::int64_t>(sent, "sent_id", sw)
                                                    : static_cast<std::int64_t>(s);
      ++rep.expressions;
      if (cached->second.empty()) {
        ++rep.dropped_instances;
        continue;
      }
      std::filesystem::path img = std::filesystem::path(opts.image_root) / im->second.file;
      m.instances.push_back({std::to_string(ref_id) + "_" + std::to_string(sent_id), img.generic_string(), size,
                             std::move(text), gt, cached->second, opts.split});
    }
  }

  if (!missing.empty() && opts.missing == MissingDetectionsPolicy::Error) {
    std::string ids;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) ids += (ids.empty() ? "" : ", ") + std::to_string(missing[i]);
    if (missing.size() > 20) ids += ", ...";
    throw Error(Errc::MissingDetections, std::to_string(missing.size()) + " image(s) without detections: " + ids);
  }

  rep.instances = m.instances.size();
  rep.images_without_detections = missing;
  m.notes.push_back("converted " + std::to_string(rep.expressions) + " expressions from " + std::to_string(rep.refs) +
                    " refs; " + std::to_string(rep.dropped_instances) + " dropped for missing detections");
  if (report) *report = rep;
  return m;
}

// --- Images --------------------------------------------------------------

using ImageLoader = std::function<Image(const std::filesystem::path&)>;

/// Bounded LRU cache of decoded images keyed by path. Thread-safe.
class ImageCache {
 public:
  explicit ImageCache(ImageLoader loader, std::size_t capacity = 32)
      : loader_(std::move(loader)), capacity_(std::max<std::size_t>(capacity, 1)) {}

  std::shared_ptr<const Image> get(const std::filesystem::path& path) {
    const std::string key = path.string();
    {
      std::lock_guard lock(mu_);
      if (auto it = index_.find(key); it != index_.end()) {
        order_.splice(order_.begin(), order_, it->second.second);
        ++hits_;
        return it->second.first;
      }
    }
    auto img = std::make_shared<const Image>(loader_(path));
    std::lock_guard lock(mu_);
    ++misses_;
    if (auto it = index_.find(key); it != index_.end()) return it->second.first;
    order_.push_front(key);
    index_.emplace(key, std::make_pair(img, order_.begin()));
    while (index_.size() > capacity_) {
      index_.erase(order_.back());
      order_.pop_back();
    }
    return img;
  }

  std::size_t hits() const {
    std::lock_guard lock(mu_);
    return hits_;
  }
  std::size_t misses() const {
    std::lock_guard lock(mu_);
    return misses_;
  }

 private:
  ImageLoader loader_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::list<std::string> order_;
  std::unordered_map<std::string, std::pair<std::shared_ptr<const Image>, std::list<std::string>::iterator>> index_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

}  // namespace vgdz
