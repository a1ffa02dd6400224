#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include <gtest/gtest.h>

#include "fpe/jsonl.hpp"
#include "test_support.hpp"

using namespace fpe;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(FPE_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(dir_ / "fpe.toml") << "[paths]\nstore = \"store\"\n"
                                        "[engine]\nbudget = 100\nplateau_eps = 0.0\n"
                                        "[world]\npool_size = 1500\ndev_size = 300\n";
  }
  std::string base() const { return "--config " + (dir_ / "fpe.toml").string() + " "; }
  std::string file(const fs::path& p) const { return jsonl::read_file(p); }

  test::TempDir dir_;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("--no-such-flag evaluate").code, 1);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run(base() + "simulate --strategy greedy").code, 1);
  EXPECT_EQ(run("--alpha -3 evaluate").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, UnreachableModelExitsTwo) {
  const auto r = run(base() + "ingest --sim-world");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(run(base() + "--model http://127.0.0.1:1 --out " + (dir_ / "e").string() + " evaluate").code, 2);
}

TEST_F(Cli, IngestAndVerify) {
  auto r = run(base() + "ingest --sim-world");
  ASSERT_EQ(r.code, 0);
  const auto report = Json::parse(r.out);
  EXPECT_EQ(report.at("samples_added"), 1800);
  r = run(base() + "verify");
  EXPECT_EQ(r.code, 0);
  EXPECT_TRUE(Json::parse(r.out).at("disjoint").get<bool>());
}

TEST_F(Cli, EvaluateIsReproducible) {
  ASSERT_EQ(run(base() + "ingest --sim-world").code, 0);
  ASSERT_EQ(run(base() + "--out " + (dir_ / "a").string() + " evaluate").code, 0);
  ASSERT_EQ(run(base() + "--out " + (dir_ / "b").string() + " evaluate").code, 0);
  EXPECT_EQ(file(dir_ / "a/failures.jsonl"), file(dir_ / "b/failures.jsonl"));
  EXPECT_EQ(file(dir_ / "a/error_distribution.json"), file(dir_ / "b/error_distribution.json"));
}

TEST_F(Cli, PhasesMatchTheLoop) {
  const auto art = dir_ / "art";
  auto r = run(base() + "--out " + art.string() + " loop --max-iter 1");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(Json::parse(r.out).at("t"), 1);

  const auto p = (dir_ / "phases").string();
  const auto b = base() + "--out " + p + " ";
  ASSERT_EQ(run(b + "evaluate").code, 0);
  ASSERT_EQ(run(b + "cluster").code, 0);
  ASSERT_EQ(run(b + "retrieve --iteration 0").code, 0);
  ASSERT_EQ(run(b + "annotate --iteration 0").code, 0);
  // Offline review: the decisions file lists every pending record; an unfilled import
  // leaves them pending.
  ASSERT_EQ(run(b + "review-export").code, 0);
  EXPECT_FALSE(jsonl::read(dir_ / "phases/decisions.jsonl").empty());
  EXPECT_EQ(run(b + "review-export --import " + (dir_ / "phases/decisions.jsonl").string()).code, 1);
  EXPECT_FALSE(fs::exists(dir_ / "phases/resolved.jsonl"));
  ASSERT_EQ(run(b + "review-export --sim").code, 0);
  ASSERT_EQ(run(b + "qa").code, 0);
  ASSERT_EQ(run(b + "export").code, 0);

  for (const char* f : {"failures.jsonl", "error_distribution.json", "prototypes.jsonl", "annotation_set.jsonl",
                        "annotations.jsonl", "routing.json", "reviews.jsonl", "resolved.jsonl", "qa_report.jsonl",
                        "train.jsonl"}) {
    EXPECT_EQ(file(dir_ / "phases" / f), file(art / "iter-0" / f)) << f;
  }
}

TEST_F(Cli, OfflineDecisionsApply) {
  const auto p = (dir_ / "w").string();
  const auto b = base() + "--out " + p + " ";
  ASSERT_EQ(run(b + "evaluate").code, 0);
  ASSERT_EQ(run(b + "cluster").code, 0);
  ASSERT_EQ(run(b + "retrieve --iteration 0").code, 0);
  ASSERT_EQ(run(b + "annotate --iteration 0").code, 0);
  ASSERT_EQ(run(b + "review-export").code, 0);
  auto lines = jsonl::read(dir_ / "w/decisions.jsonl");
  for (auto& l : lines) {
    l["action"] = "edit";
    l["edited_text"] = "mild";
    l["reviewer"] = "offline-a";
  }
  jsonl::write(dir_ / "w/filled.jsonl", lines);
  ASSERT_EQ(run(b + "review-export --import " + (dir_ / "w/filled.jsonl").string()).code, 0);
  for (const auto& j : jsonl::read(dir_ / "w/resolved.jsonl")) EXPECT_EQ(j.at("final_label"), "mild");
}

TEST_F(Cli, LoopTwiceIsByteIdentical) {
  for (const char* d : {"r1", "r2"}) {
    const auto r = run(base() + "--store " + (dir_ / d / "store").string() + " --out " + (dir_ / d / "art").string() +
                       " loop --max-iter 3");
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(Json::parse(r.out).at("t"), 3);
  }
  for (int t = 0; t < 3; ++t) {
    const auto rel = fs::path("art") / ("iter-" + std::to_string(t)) / "train.jsonl";
    EXPECT_EQ(file(dir_ / "r1" / rel), file(dir_ / "r2" / rel)) << t;
  }
  EXPECT_EQ(file(dir_ / "r1/art/state.json"), file(dir_ / "r2/art/state.json"));
  const auto s = run(base() + "--store " + (dir_ / "r1/store").string() + " --out " + (dir_ / "r1/art").string() +
                     " stats");
  ASSERT_EQ(s.code, 0);
  EXPECT_EQ(Json::parse(s.out).at("pending"), 0);
}

TEST_F(Cli, SimulateWritesCurves) {
  const auto out = dir_ / "sim";
  const auto r = run(base() + "--budget 300 --out " + out.string() + " simulate --iterations 3");
  ASSERT_EQ(r.code, 0);
  const auto csv = file(out / "curve.csv");
  EXPECT_EQ(csv.rfind("strategy,seed,budget,accuracy\n", 0), 0u);
  EXPECT_NE(csv.find("failure_driven,7,0,"), std::string::npos);
  EXPECT_NE(csv.find("random,7,0,"), std::string::npos);
  EXPECT_NE(file(out / "curve.svg").find("<polyline"), std::string::npos);
  const auto summary = Json::parse(file(out / "summary.json"));
  EXPECT_TRUE(summary.contains("failure_driven_budget_to_match_random"));
  EXPECT_GT(summary.at("failure_driven").at("final_accuracy").get<double>(),
            summary.at("random").at("final_accuracy").get<double>());
}
