#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "vgdz/error.hpp"
#include "vgdz/evaluation.hpp"

namespace vgdz {

/// Which property of a run names its table row.
enum class ReportAxis { Method, Expression, Checkpoint };

inline ReportAxis parse_report_axis(std::string_view s) {
  if (s == "method") return ReportAxis::Method;
  if (s == "expr") return ReportAxis::Expression;
  if (s == "checkpoint") return ReportAxis::Checkpoint;
  throw Error(Errc::InvalidConfig, "unknown report axis '" + std::string(s) + "' (expected method, expr, checkpoint)");
}

enum class ReportFormat { Csv, Markdown };

inline constexpr const char* kRandomLabel = "Random";

inline std::string method_label(Aggregation a) {
  switch (a) {
    case Aggregation::CropOnly: return "Cropping";
    case Aggregation::MaskOnly: return "Masking";
    case Aggregation::Min: return "VGDiffZero w/ Single IPM";
    case Aggregation::Sum: return "VGDiffZero";
  }
  return "VGDiffZero";
}

inline std::string row_label(const EvalResult& r, ReportAxis axis) {
  switch (axis) {
    case ReportAxis::Method: return method_label(r.mode);
    case ReportAxis::Expression: return r.expr_mode == ExpressionMode::Core ? "w/ core-exp" : "w/ full-exp";
    case ReportAxis::Checkpoint: return r.checkpoint;
  }
  return method_label(r.mode);
}

/// Accuracy table: rows are runs, columns are dataset splits.
struct ReportTable {
  std::vector<std::string> rows;
  std::vector<std::string> columns;
  std::map<std::pair<std::string, std::string>, double> cells;  // accuracy in [0, 1]
  /// Standard error of the mean for cells filled by more than one run.
  std::map<std::pair<std::string, std::string>, double> spread;
  std::vector<std::string> provenance;

  const double* cell(const std::string& row, const std::string& col) const {
    auto it = cells.find({row, col});
    return it == cells.end() ? nullptr : &it->second;
  }

  const double* cell_spread(const std::string& row, const std::string& col) const {
    auto it = spread.find({row, col});
    return it == spread.end() ? nullptr : &it->second;
  }
};

namespace detail {

inline int split_rank(const std::string& s) {
  static const std::vector<std::string> kOrder{"val", "testA", "testB", "test"};
  const auto it = std::find(kOrder.begin(), kOrder.end(), s);
  return it == kOrder.end() ? static_cast<int>(kOrder.size()) : static_cast<int>(it - kOrder.begin());
}

inline int row_rank(const std::string& label, ReportAxis axis) {
  if (label == kRandomLabel) return -1;
  if (axis == ReportAxis::Method) {
    static const std::vector<std::string> kOrder{"Cropping", "Masking", "VGDiffZero w/ Single IPM", "VGDiffZero"};
    const auto it = std::find(kOrder.begin(), kOrder.end(), label);
    return static_cast<int>(it - kOrder.begin());
  }
  if (axis == ReportAxis::Expression) return label == "w/ core-exp" ? 0 : 1;
  return 0;
}

inline std::string percent(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", acc * 100.0);
  return buf;
}

}  // namespace detail

inline ReportTable build_table(std::span<const EvalResult> results, ReportAxis axis,
                               std::span<const RandomBaseline> baselines = {}) {
  if (results.empty() && baselines.empty()) throw Error(Errc::InvalidConfig, "report needs at least one result");
  ReportTable t;
  std::vector<std::string> datasets;
  auto note_dataset = [&](const std::string& d) {
    if (std::find(datasets.begin(), datasets.end(), d) == datasets.end()) datasets.push_back(d);
  };
  for (const auto& r : results) note_dataset(r.dataset);
  for (const auto& b : baselines) note_dataset(b.dataset);
  const bool multi = datasets.size() > 1;
  auto column = [&](const std::string& dataset, const std::string& split) {
    return multi ? dataset + " " + split : split;
  };

  struct Col {
    std::size_t dataset;
    int rank;
    std::string split;
    std::string name;
  };
  std::vector<Col> cols;
  auto add_col = [&](const std::string& dataset, const std::string& split) {
    const auto name = column(dataset, split);
    for (const auto& c : cols)
      if (c.name == name) return name;
    const auto d = static_cast<std::size_t>(std::find(datasets.begin(), datasets.end(), dataset) - datasets.begin());
    cols.push_back({d, detail::split_rank(split), split, name});
    return name;
  };

  std::vector<std::string> rows;
  auto add_row = [&](const std::string& label) {
    if (std::find(rows.begin(), rows.end(), label) == rows.end()) rows.push_back(label);
  };

  for (const auto& b : baselines) {
    add_row(kRandomLabel);
    t.cells[{kRandomLabel, add_col(b.dataset, b.split)}] = b.mean;
    t.provenance.push_back(std::string(kRandomLabel) + " " + column(b.dataset, b.split) + ": " +
                           std::to_string(b.trials) + " trials, SE " + detail::percent(b.standard_error) +
                           " pts, exact expectation " + detail::percent(b.expected) + "%");
  }
  std::map<std::pair<std::string, std::string>, std::vector<double>> runs;
  for (const auto& r : results) {
    const auto label = row_label(r, axis);
    add_row(label);
    const auto col = add_col(r.dataset, r.split);
    runs[{label, col}].push_back(r.accuracy);
    std::ostringstream p;
    p << label << " " << column(r.dataset, r.split) << ": " << r.hits << "/" << r.instances.size() << " hits, "
      << r.errors << " errors; checkpoint " << r.checkpoint << "; config " << r.config.dump();
    t.provenance.push_back(p.str());
  }
  // Repeated runs of one cell (e.g. several seeds) report mean and standard error.
  for (const auto& [key, accs] : runs) {
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    t.cells[key] = mean;
    if (accs.size() < 2) continue;
    double var = 0.0;
    for (double a : accs) var += (a - mean) * (a - mean);
    const double n = static_cast<double>(accs.size());
    t.spread[key] = std::sqrt(var / (n - 1.0) / n);
    t.provenance.push_back(key.first + " " + key.second + ": mean of " + std::to_string(accs.size()) + " runs, SE " +
                           detail::percent(t.spread[key]) + " pts");
  }

  std::stable_sort(cols.begin(), cols.end(), [](const Col& a, const Col& b) {
    return std::tie(a.dataset, a.rank, a.split) < std::tie(b.dataset, b.rank, b.split);
  });
  std::stable_sort(rows.begin(), rows.end(), [&](const std::string& a, const std::string& b) {
    const int ra = detail::row_rank(a, axis), rb = detail::row_rank(b, axis);
    return ra != rb ? ra < rb : (axis == ReportAxis::Checkpoint && a < b);
  });
  for (const auto& c : cols) t.columns.push_back(c.name);
  t.rows = std::move(rows);
  return t;
}

/// Percentages with two decimals; absent cells render as an em dash, repeated
/// runs as mean ± SE.
inline std::string render_markdown(const ReportTable& t) {
  std::ostringstream os;
  os << "| Methods |";
  for (const auto& c : t.columns) os << ' ' << c << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << "---:|";
  os << '\n';
  for (const auto& r : t.rows) {
    os << "| " << r << " |";
    for (const auto& c : t.columns) {
      const double* v = t.cell(r, c);
      const double* se = t.cell_spread(r, c);
      os << ' ' << (v ? detail::percent(*v) : "—");
      if (se) os << " ± " << detail::percent(*se);
      os << " |";
    }
    os << '\n';
  }
  if (!t.provenance.empty()) {
    os << "\nAccuracy@IoU (%), per run:\n\n";
    for (const auto& p : t.provenance) os << "- " << p << '\n';
  }
  return os.str();
}

inline std::string render_csv(const ReportTable& t) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  };
  std::ostringstream os;
  for (const auto& p : t.provenance) os << "# " << p << '\n';
  os << "method";
  for (const auto& c : t.columns) os << ',' << quote(c);
  os << '\n';
  for (const auto& r : t.rows) {
    os << quote(r);
    for (const auto& c : t.columns) {
      const double* v = t.cell(r, c);
      os << ',' << (v ? detail::percent(*v) : "");
    }
    os << '\n';
  }
  return os.str();
}

inline void write_report(std::span<const EvalResult> results, ReportFormat format, const std::filesystem::path& path,
                         ReportAxis axis = ReportAxis::Method, std::span<const RandomBaseline> baselines = {}) {
  const auto table = build_table(results, axis, baselines);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IOError, "cannot write report " + path.string());
  out << (format == ReportFormat::Csv ? render_csv(table) : render_markdown(table));
  if (!out) throw Error(Errc::IOError, "write failed for " + path.string());
}

}  // namespace vgdz
