// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "ptseg/cli.hpp"
#include "ptseg/fileio.hpp"

namespace ptseg {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "ptseg");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "ptseg_cli_test";
    fs::remove_all(root_);
    const Outcome r = run({"--seed", "3", "--out", (root_ / "data").string(), "phantom", "-n", "20"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static fs::path root_;
};
fs::path Cli::root_;

TEST_F(Cli, PhantomManifestSplit) {
  const json m = read_json(root_ / "data" / "manifest.json");
  EXPECT_EQ(m.at("split").at("train"), 10);
  EXPECT_EQ(m.at("split").at("val"), 3);
  EXPECT_EQ(m.at("split").at("test"), 7);
  ASSERT_EQ(m.at("cases").size(), 20u);
  EXPECT_EQ(m.at("cases")[0].at("id"), "case_000");
  EXPECT_TRUE(fs::exists(root_ / "data" / "case_019" / "label.raw"));
}

TEST_F(Cli, EvalOfGroundTruthAgainstItselfIsPerfect) {
  const Outcome r = run({"--out", (root_ / "self_eval").string(), "eval", "--pred", (root_ / "data").string(), "--gt",
                     (root_ / "data").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json s = read_json(root_ / "self_eval" / "summary.json");
  EXPECT_EQ(s.at("cases"), 20);
  EXPECT_EQ(s.at("mean_dice"), 1.0);
  const json c = read_json(root_ / "self_eval" / "reports" / "case_004.json");
  for (const auto& k : c.at("classes")) {
    EXPECT_EQ(k.at("dice"), 1.0);
    EXPECT_EQ(k.at("asd"), 0.0);
  }
  EXPECT_NE(read_file(root_ / "self_eval" / "table.csv").find("Avg"), std::string::npos);
}

TEST_F(Cli, PreprocessAndHierarchy) {
  const fs::path c = root_ / "data" / "case_000";
  Outcome r = run({"--out", (root_ / "pre").string(), "preprocess", "--image", (c / "image").string(), "--mask",
               (c / "mask").string(), "--labels", (c / "label").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "pre" / "points.json"));
  r = run({"--out", (root_ / "hier").string(), "hierarchy", "--points", (root_ / "pre" / "points").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json h = read_json(root_ / "hier" / "hierarchy.json");
  ASSERT_EQ(h.at("levels").size(), 4u);
  EXPECT_GT(h.at("levels")[0].at("points").get<size_t>(), h.at("levels")[3].at("points").get<size_t>());
}

TEST_F(Cli, TrainInferEvalSmoke) {
  const std::string data = (root_ / "data").string();
  Outcome r = run({"--seed", "1", "--out", (root_ / "tr").string(), "train", "--dataset", data, "--ablation", "a",
               "--epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "tr" / "checkpoint.bin"));
  EXPECT_NE(read_file(root_ / "tr" / "log.jsonl").find("\"epoch\""), std::string::npos);
  r = run({"--out", (root_ / "inf").string(), "infer", "--checkpoint", (root_ / "tr" / "checkpoint").string(),
           "--case", (root_ / "data" / "case_019").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "inf" / "case_019" / "pred.raw"));
  r = run({"--out", (root_ / "bench").string(), "bench", "--checkpoint", (root_ / "tr" / "checkpoint").string(),
           "--repeats", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json b = read_json(root_ / "bench" / "bench.json");
  EXPECT_GT(b.at("gflops_per_case").get<double>(), 0.0);
  EXPECT_EQ(b.at("conv3d_gflops_per_forward"), 0.0);
  EXPECT_FALSE(b.at("flops").contains("level1.conv3d"));
}

TEST_F(Cli, RefusesToOverwrite) {
  const fs::path out = root_ / "busy";
  fs::create_directories(out);
  write_file_atomic(out / "keep.txt", "x");
  const Outcome r = run({"--out", out.string(), "phantom", "-n", "1"});
  EXPECT_EQ(r.code, 13);
  const json e = json::parse(r.err);
  EXPECT_EQ(e.at("code"), 13);
  EXPECT_EQ(read_file(out / "keep.txt"), "x");
  EXPECT_EQ(run({"--out", out.string(), "--force", "phantom", "-n", "1"}).code, 0);
}

TEST_F(Cli, ErrorCodes) {
  Outcome r = run({"--out", (root_ / "e1").string(), "train", "--dataset", (root_ / "nowhere").string()});
  EXPECT_EQ(r.code, 11);
  EXPECT_EQ(json::parse(r.err).at("code"), 11);
  write_file_atomic(root_ / "bad_config.json", R"({"model": {"grid_sise": 8}})");
  r = run({"--config", (root_ / "bad_config.json").string(), "--out", (root_ / "e2").string(), "train", "--dataset",
           (root_ / "data").string()});
  EXPECT_EQ(r.code, 8);
  EXPECT_NE(run({"train", "--dataset", "x", "--ablation", "z"}).code, 0);
  r = run({"--out", (root_ / "e3").string(), "phantom", "--portal-height", "2"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(run({"phantom", "--bogus"}).code, 0);
}

TEST_F(Cli, Gradcheck) {
  const Outcome r = run({"--out", (root_ / "gc").string(), "gradcheck", "--seeds", "2"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
}

}  // namespace
}  // namespace ptseg
