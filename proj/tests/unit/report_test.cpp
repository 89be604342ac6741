#include <gtest/gtest.h>

#include "test_support.hpp"
#include "vgdz/report.hpp"

using namespace vgdz;
using namespace vgdz::testing;

namespace {

EvalResult result(const std::string& dataset, const std::string& split, Aggregation mode, double acc,
                  ExpressionMode expr = ExpressionMode::Full, const std::string& ckpt = "2-1") {
  EvalResult r;
  r.dataset = dataset;
  r.split = split;
  r.mode = mode;
  r.accuracy = acc;
  r.expr_mode = expr;
  r.checkpoint = ckpt;
  r.hits = static_cast<std::size_t>(acc * 100);
  r.instances.resize(100);
  return r;
}

}  // namespace

TEST(Report, MethodLabels) {
  EXPECT_EQ(method_label(Aggregation::CropOnly), "Cropping");
  EXPECT_EQ(method_label(Aggregation::MaskOnly), "Masking");
  EXPECT_EQ(method_label(Aggregation::Min), "VGDiffZero w/ Single IPM");
  EXPECT_EQ(method_label(Aggregation::Sum), "VGDiffZero");
}

TEST(Report, MethodRowsAndSplitColumnsInCanonicalOrder) {
  std::vector<EvalResult> rs;
  for (const char* split : {"testB", "val", "testA"})
    for (auto m : {Aggregation::Sum, Aggregation::CropOnly, Aggregation::Min, Aggregation::MaskOnly})
      rs.push_back(result("refcoco", split, m, 0.25));
  RandomBaseline rb;
  rb.dataset = "refcoco";
  rb.split = "val";
  rb.trials = 10;
  rb.mean = 0.1;
  const std::vector<RandomBaseline> bl{rb};
  const auto t = build_table(rs, ReportAxis::Method, bl);
  EXPECT_EQ(t.rows, (std::vector<std::string>{"Random", "Cropping", "Masking", "VGDiffZero w/ Single IPM", "VGDiffZero"}));
  EXPECT_EQ(t.columns, (std::vector<std::string>{"val", "testA", "testB"}));
  ASSERT_NE(t.cell("Random", "val"), nullptr);
  EXPECT_EQ(t.cell("Random", "testA"), nullptr);
  EXPECT_DOUBLE_EQ(*t.cell("Masking", "testB"), 0.25);
}

TEST(Report, MultipleDatasetsPrefixColumns) {
  const std::vector<EvalResult> rs{result("refcoco+", "val", Aggregation::Sum, 0.3),
                                   result("refcoco", "testA", Aggregation::Sum, 0.4)};
  const auto t = build_table(rs, ReportAxis::Method);
  EXPECT_EQ(t.columns, (std::vector<std::string>{"refcoco+ val", "refcoco testA"}));
}

TEST(Report, ExpressionAndCheckpointAxes) {
  const std::vector<EvalResult> ex{result("r", "val", Aggregation::Sum, 0.3, ExpressionMode::Full),
                                   result("r", "val", Aggregation::Sum, 0.2, ExpressionMode::Core)};
  EXPECT_EQ(build_table(ex, ReportAxis::Expression).rows, (std::vector<std::string>{"w/ core-exp", "w/ full-exp"}));
  const std::vector<EvalResult> ck{result("r", "val", Aggregation::Sum, 0.3, ExpressionMode::Full, "2-1"),
                                   result("r", "val", Aggregation::Sum, 0.2, ExpressionMode::Full, "1-5")};
  EXPECT_EQ(build_table(ck, ReportAxis::Checkpoint).rows, (std::vector<std::string>{"1-5", "2-1"}));
  EXPECT_EQ(parse_report_axis("expr"), ReportAxis::Expression);
  EXPECT_THROW(parse_report_axis("mode"), Error);
}

TEST(Report, MarkdownAndCsvRendering) {
  const std::vector<EvalResult> rs{result("r", "val", Aggregation::Sum, 0.27951),
                                   result("r", "testA", Aggregation::MaskOnly, 0.5)};
  const auto t = build_table(rs, ReportAxis::Method);
  const auto md = render_markdown(t);
  EXPECT_EQ(md.substr(0, md.find("\n\n")),
            "| Methods | val | testA |\n|---|---:|---:|\n| Masking | — | 50.00 |\n| VGDiffZero | 27.95 | — |");
  const auto csv = render_csv(t);
  EXPECT_NE(csv.find("method,val,testA\nMasking,,50.00\nVGDiffZero,27.95,\n"), std::string::npos);
  EXPECT_EQ(csv.rfind("# ", 0), 0u);
}

TEST(Report, RepeatedRunsGiveMeanAndStandardError) {
  const std::vector<EvalResult> rs{result("r", "val", Aggregation::Sum, 0.2), result("r", "val", Aggregation::Sum, 0.3),
                                   result("r", "val", Aggregation::Sum, 0.4), result("r", "val", Aggregation::Min, 0.5)};
  const auto t = build_table(rs, ReportAxis::Method);
  EXPECT_NEAR(*t.cell("VGDiffZero", "val"), 0.3, 1e-12);
  // Sample sd 0.1 over three runs.
  EXPECT_NEAR(*t.cell_spread("VGDiffZero", "val"), 0.1 / std::sqrt(3.0), 1e-12);
  EXPECT_EQ(t.cell_spread("VGDiffZero w/ Single IPM", "val"), nullptr);
  EXPECT_NE(render_markdown(t).find("| VGDiffZero | 30.00 ± 5.77 |"), std::string::npos);
  EXPECT_NE(render_csv(t).find("VGDiffZero,30.00\n"), std::string::npos);
}

TEST(Report, FromEvaluationRun) {
  ImageStore store;
  const auto m = planted_manifest(3, 4, store);
  ImageCache cache(store.loader());
  const std::vector<Aggregation> all{Aggregation::Sum, Aggregation::Min, Aggregation::MaskOnly, Aggregation::CropOnly};
  const auto res = evaluate(m, small_config(32, all), synthetic(32), cache);
  const std::vector<RandomBaseline> bl{random_baseline(m, 1, 100)};
  TempDir dir("report");
  write_report(res, ReportFormat::Markdown, dir / "r.md", ReportAxis::Method, bl);
  const auto md = read_file(dir / "r.md");
  for (const char* row : {"| Random |", "| Cropping | 100.00 |", "| Masking | 100.00 |",
                          "| VGDiffZero w/ Single IPM | 100.00 |", "| VGDiffZero | 100.00 |"})
    EXPECT_NE(md.find(row), std::string::npos) << row;
  EXPECT_THROW(build_table(std::vector<EvalResult>{}, ReportAxis::Method), Error);
}
