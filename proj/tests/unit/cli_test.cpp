#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>

#include "test_support.hpp"
#include "vgdz/image_io.hpp"

using namespace vgdz;
using namespace vgdz::testing;
using json = nlohmann::json;

namespace {

struct Run {
  int status;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(VGDZ_CLI) + " " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) out.append(buf, n);
  const int raw = ::pclose(pipe);
  return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, out};
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

/// Planted manifest written to disk with PNG images next to it.
class CliFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    ImageStore store;
    manifest_ = planted_manifest(77, 5, store, false, &facts_);
    for (const auto& [path, img] : store.images()) {
      std::filesystem::create_directories((dir_ / path).parent_path());
      save_image(img, dir_ / path);
    }
    write_manifest(manifest_, dir_ / "manifest.json");
  }

  std::string eval_args(const std::string& out, const std::string& extra = "") const {
    return "evaluate --backend synthetic --canvas 32 --timesteps 100:900:3 -q -m " + q(dir_ / "manifest.json") +
           " -o " + q(dir_ / out) + " " + extra;
  }

  TempDir dir_{"cli"};
  Manifest manifest_;
  std::vector<PlantedFacts> facts_;
};

}  // namespace

TEST(Cli, HelpAndVersion) {
  EXPECT_EQ(run("--help").status, 0);
  const auto v = run("--version");
  EXPECT_EQ(v.status, 0);
  EXPECT_FALSE(v.out.empty());
  EXPECT_NE(run("evaluate --help").out.find("--aggregation"), std::string::npos);
}

TEST(Cli, ParseErrorsExitTwo) {
  EXPECT_EQ(run("").status, 2);
  EXPECT_EQ(run("frobnicate").status, 2);
  EXPECT_EQ(run("evaluate -m /nonexistent.json -o /tmp/x").status, 2);
}

TEST_F(CliFixture, EvaluateWritesArtifactsAndFindsPlanted) {
  const auto r = run(eval_args("out"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("VGDiffZero"), std::string::npos);
  EXPECT_NE(r.out.find("planted val: 100.00% (5/5, 0 errors)"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("Random"), std::string::npos);
  for (const char* f : {"config.toml", "config.json", "results.jsonl", "report.csv", "report.md"})
    EXPECT_TRUE(std::filesystem::exists(dir_ / "out" / f)) << f;
  const auto cfg = json::parse(read_file(dir_ / "out" / "config.json"));
  EXPECT_EQ(cfg.at("pipeline").at("timesteps"), json({100, 500, 900}));
  EXPECT_EQ(cfg.at("backend").at("checkpoint"), "synthetic-v1");
}

TEST_F(CliFixture, EvaluateDeterministicAndConfigReplayable) {
  ASSERT_EQ(run(eval_args("a", "--workers 3 --batch-size 2")).status, 0);
  ASSERT_EQ(run(eval_args("b")).status, 0);
  const auto body = results_body(dir_ / "a" / "results.jsonl");
  EXPECT_EQ(body, results_body(dir_ / "b" / "results.jsonl"));

  // Replaying the saved config with a different output directory.
  const auto r = run("--config " + q(dir_ / "a" / "config.toml") + " evaluate -o " + q(dir_ / "c"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(body, results_body(dir_ / "c" / "results.jsonl"));
}

TEST_F(CliFixture, FlagsOverrideConfigFile) {
  write_file(dir_ / "cfg.toml", "[evaluate]\nseed = 3\nbackend = \"synthetic\"\ncanvas = 32\ntimesteps = \"200,400\"\n");
  const auto r = run("--config " + q(dir_ / "cfg.toml") + " evaluate -q --seed 5 -m " + q(dir_ / "manifest.json") +
                     " -o " + q(dir_ / "o"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto cfg = json::parse(read_file(dir_ / "o" / "config.json"));
  EXPECT_EQ(cfg.at("pipeline").at("seed"), 5);
  EXPECT_EQ(cfg.at("pipeline").at("timesteps"), json({200, 400}));
}

TEST_F(CliFixture, AllAggregationsProduceFourMethodRows) {
  const auto r = run(eval_args("all", "--aggregation all"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto md = read_file(dir_ / "all" / "report.md");
  for (const char* row : {"| Random |", "| Cropping |", "| Masking |", "| VGDiffZero w/ Single IPM |", "| VGDiffZero |"})
    EXPECT_NE(md.find(row), std::string::npos) << row;
  EXPECT_NE(md.find("| Methods | val |"), std::string::npos);

  const auto rep = run("report " + q(dir_ / "all" / "results.jsonl") + " --csv " + q(dir_ / "r.csv"));
  ASSERT_EQ(rep.status, 0) << rep.out;
  EXPECT_NE(rep.out.find("| VGDiffZero | 100.00 |"), std::string::npos) << rep.out;
  EXPECT_NE(read_file(dir_ / "r.csv").find("method,val"), std::string::npos);
}

TEST_F(CliFixture, ResumeKeepsBody) {
  ASSERT_EQ(run(eval_args("r")).status, 0);
  const auto full = read_file(dir_ / "r" / "results.jsonl");
  std::size_t cut = 0;
  for (int i = 0; i < 3; ++i) cut = full.find('\n', cut) + 1;
  write_file(dir_ / "r" / "results.jsonl", full.substr(0, cut));
  ASSERT_EQ(run(eval_args("r", "--resume")).status, 0);
  EXPECT_EQ(read_file(dir_ / "r" / "results.jsonl"), full);
}

TEST_F(CliFixture, SubsetAndValidation) {
  auto r = run(eval_args("s", "--subset 3 --subset-seed 4"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("(3/3, 0 errors)"), std::string::npos) << r.out;
  EXPECT_EQ(run(eval_args("s2", "--subset 50")).status, 2);
  EXPECT_EQ(run(eval_args("s3", "--timesteps 0:900:3")).status, 2);
  EXPECT_EQ(run(eval_args("s4", "--timesteps 1:2000:3")).status, 2);
  EXPECT_EQ(run(eval_args("s5", "--aggregation avg")).status, 2);
  EXPECT_EQ(run(eval_args("s6", "--fill 2,0,0")).status, 2);
  EXPECT_EQ(run(eval_args("s7", "--canvas 36")).status, 2);
  r = run(eval_args("s8", "--timesteps abc"));
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("--timesteps"), std::string::npos) << r.out;
}

TEST_F(CliFixture, PretrainedWithoutWorkerExitsThree) {
  const auto r = run("evaluate -q --canvas 32 --python /nonexistent/python -m " + q(dir_ / "manifest.json") + " -o " +
                     q(dir_ / "p"));
  EXPECT_EQ(r.status, 3) << r.out;
}

TEST_F(CliFixture, PretrainedThroughStubWorker) {
  const auto r = run("evaluate -q --canvas 64 --timesteps 100,900 --python " + std::string(VGDZ_TEST_PYTHON) +
                     " --worker-script " + std::string(VGDZ_TEST_FIXTURES) + "/stub_worker.py -m " +
                     q(dir_ / "manifest.json") + " -o " + q(dir_ / "stub"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto file = read_results(dir_ / "stub" / "results.jsonl");
  EXPECT_EQ(file.header.at("backend").at("kind"), "pretrained");
  EXPECT_EQ(file.records.size(), manifest_.size());
}

TEST_F(CliFixture, GroundRanksPlantedFirst) {
  const auto& inst = manifest_.instances[0];
  std::string boxes;
  for (const auto& p : inst.proposals) {
    const auto& b = p.box;
    boxes += " --box " + std::to_string(static_cast<int>(b.x_min())) + "," + std::to_string(static_cast<int>(b.y_min())) +
             "," + std::to_string(static_cast<int>(b.x_max())) + "," + std::to_string(static_cast<int>(b.y_max()));
  }
  const std::string base = "ground --backend synthetic --canvas 32 --timesteps 100:900:3 --image " +
                           q(dir_ / inst.image) + " -e '" + inst.expression + "'" + boxes;
  auto r = run(base + " --annotate " + q(dir_ / "annot.png"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("selected: proposal " + std::to_string(facts_[0].planted)), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir_ / "annot.png"));

  r = run(base + " --json");
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("selected").get<std::size_t>(), facts_[0].planted);

  json props = json::array();
  for (const auto& p : inst.proposals)
    props.push_back({{"box", {p.box.x_min(), p.box.y_min(), p.box.width(), p.box.height()}}, {"format", "xywh"}});
  write_file(dir_ / "props.json", props.dump());
  r = run("ground --backend synthetic --canvas 32 --timesteps 100:900:3 --json --image " + q(dir_ / inst.image) +
          " -e '" + inst.expression + "' --proposals " + q(dir_ / "props.json"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_EQ(json::parse(r.out).at("selected").get<std::size_t>(), facts_[0].planted);

  EXPECT_EQ(run("ground --backend synthetic --canvas 32 --image " + q(dir_ / inst.image) + " -e x").status, 2);
  EXPECT_EQ(run("ground --backend synthetic --canvas 32 --aggregation all --box 0,0,5,5 --image " + q(dir_ / inst.image) +
                " -e x")
                .status,
            2);
}

TEST(Cli, ConvertBuildsManifest) {
  TempDir dir("cli-convert");
  std::filesystem::create_directories(dir / "refcoco");
  write_file(dir / "refcoco" / "refs.json",
             json::array({{{"ref_id", 1}, {"image_id", 10}, {"ann_id", 100}, {"split", "val"},
                           {"sentences", {{{"sent_id", 5}, {"raw", "left dog"}}}}}})
                 .dump());
  write_file(dir / "refcoco" / "instances.json",
             json{{"images", {{{"id", 10}, {"file_name", "a.jpg"}, {"width", 100}, {"height", 50}}}},
                  {"annotations", {{{"id", 100}, {"image_id", 10}, {"bbox", {5, 5, 20, 10}}}}}}
                 .dump());
  write_file(dir / "dets.json", json{{"10", {{{"box", {5, 5, 20, 10}}, {"score", 0.9}, {"format", "xywh"}}}}}.dump());
  const auto r = run("convert --refs " + q(dir / "refcoco") + " --detections " + q(dir / "dets.json") + " -o " +
                     q(dir / "m.json"));
  ASSERT_EQ(r.status, 0) << r.out;
  const auto m = load_manifest(dir / "m.json");
  EXPECT_EQ(m.dataset, "refcoco");
  EXPECT_EQ(m.size(), 1u);
  EXPECT_EQ(run("convert --refs " + q(dir / "refcoco") + " --detections " + q(dir / "dets.json") +
                " --split testC -o " + q(dir / "x.json"))
                .status,
            2);
}

TEST(Cli, ConvertDropsImagesWithoutDetections) {
  TempDir dir("cli-convert-missing");
  std::filesystem::create_directories(dir / "refcoco");
  json refs = json::array();
  for (int img : {10, 11})
    refs.push_back({{"ref_id", img}, {"image_id", img}, {"ann_id", img * 10}, {"split", "val"},
                    {"sentences", {{{"sent_id", img}, {"raw", "left dog"}}}}});
  write_file(dir / "refcoco" / "refs.json", refs.dump());
  json images = json::array(), anns = json::array();
  for (int img : {10, 11}) {
    images.push_back({{"id", img}, {"file_name", std::to_string(img) + ".jpg"}, {"width", 100}, {"height", 50}});
    anns.push_back({{"id", img * 10}, {"image_id", img}, {"bbox", {5, 5, 20, 10}}});
  }
  write_file(dir / "refcoco" / "instances.json", json{{"images", images}, {"annotations", anns}}.dump());
  write_file(dir / "dets.json", json{{"10", {{{"box", {5, 5, 20, 10}}, {"score", 0.9}, {"format", "xywh"}}}}}.dump());
  const std::string base = "convert --refs " + q(dir / "refcoco") + " --detections " + q(dir / "dets.json");

  const auto r = run(base + " -o " + q(dir / "m.json"));
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("warning: 1 image(s) without detections; 1 instance(s) dropped"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("1 instances written, 1 dropped"), std::string::npos) << r.out;
  EXPECT_EQ(load_manifest(dir / "m.json").size(), 1u);

  const auto strict = run(base + " --on-missing error -o " + q(dir / "x.json"));
  EXPECT_NE(strict.status, 0);
  EXPECT_NE(strict.out.find("11"), std::string::npos) << strict.out;
}
