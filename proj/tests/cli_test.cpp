#include "bbw/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include <gtest/gtest.h>
#include <json.hpp>

#include "bbw/interchange.hpp"
#include "bbw/trigger.hpp"

namespace bbw::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run call(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(::testing::TempDir()) / "bbw_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// A world small enough for quick command-line round trips.
fs::path write_small_config(const fs::path& dir) {
  const auto path = dir / "experiment.json";
  std::ofstream(path) << R"({
    "world": {"n_train": 1000, "n_substitute": 1000, "n_test": 1200, "n_key": 400},
    "policy": {"delta_w": 1.1, "delta_h": 1.1},
    "n_benign": 3,
    "n_extracted": 3
  })";
  return path;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    // ctest runs each case in its own process, possibly concurrently
    root_ = new fs::path(scratch("suite-" + std::to_string(::getpid())));
    const auto res = call({"--seed", "5", "simulate", "--config", write_small_config(*root_).string(),
                           "--out", (*root_ / "sim").string()});
    ASSERT_EQ(res.code, kExitOk) << res.err;
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
    root_ = nullptr;
  }

  static fs::path sim() { return *root_ / "sim"; }
  static fs::path root() { return *root_; }

  static fs::path* root_;
};

fs::path* CliTest::root_ = nullptr;

TEST_F(CliTest, SimulateWritesArtifacts) {
  for (const char* name : {"report.json", "trigger.model", "train_features.csv", "key_features.csv",
                           "key_target.jsonl", "substitute_responses.jsonl", "config.json",
                           "train_trigger_membership.csv", "hist_response_vs_clean_iou.csv",
                           "hist_area_ratio_extracted.csv", "hist_area_ratio_benign.csv",
                           "suspects/extracted-000.jsonl", "suspects/benign-002.jsonl"}) {
    EXPECT_TRUE(fs::exists(sim() / name)) << name;
  }
  const auto report = json::parse(slurp(sim() / "report.json"));
  EXPECT_EQ(report["suspects"].size(), 6u);
  EXPECT_EQ(json::parse(slurp(sim() / "config.json"))["world"]["seed"], 5);
}

TEST_F(CliTest, SimulateRerunIsByteIdentical) {
  const auto again = root() / "again";
  const auto res = call({"simulate", "--seed", "5", "--config", (root() / "experiment.json").string(),
                         "--out", again.string(), "--threads", "3"});
  ASSERT_EQ(res.code, kExitOk) << res.err;
  for (const auto& entry : fs::recursive_directory_iterator(sim())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), sim());
    EXPECT_EQ(slurp(entry.path()), slurp(again / rel)) << rel;
  }
}

TEST_F(CliTest, SelectTriggerFromFeatureFile) {
  const auto model = root() / "compact.model";
  const auto res = call({"select-trigger", "--features", (sim() / "train_features.csv").string(),
                         "--p", "0.02", "--t", "4", "--out", model.string()});
  ASSERT_EQ(res.code, kExitOk) << res.err;
  const auto summary = json::parse(res.out);
  EXPECT_EQ(summary["provenance"], "compact_search");
  EXPECT_EQ(load_trigger_model(model).trigger_features.rows(), summary["rows"].get<std::size_t>());
}

TEST_F(CliTest, RandomTriggerNeedsSeed) {
  const std::vector<std::string> base = {"random-trigger", "--train",
                                         (sim() / "train_features.csv").string(), "--substitute",
                                         (sim() / "key_features.csv").string(), "--p", "0.05",
                                         "--out", (root() / "random.model").string()};
  EXPECT_EQ(call(base).code, kExitUsage);
  auto with_seed = base;
  with_seed.push_back("--seed");
  with_seed.push_back("3");
  const auto res = call(with_seed);
  ASSERT_EQ(res.code, kExitOk) << res.err;
  EXPECT_EQ(json::parse(res.out)["provenance"], "random_baseline");
}

TEST_F(CliTest, VerifyReproducesSimulatedReport) {
  std::vector<std::string> args = {"verify",
                                   "--target", (sim() / "key_target.jsonl").string(),
                                   "--target-features", (sim() / "key_features.csv").string(),
                                   "--trigger-model", (sim() / "trigger.model").string(),
                                   "--delta-w", "1.1", "--delta-h", "1.1"};
  for (int i = 0; i < 3; ++i) {
    const auto idx = "00" + std::to_string(i);
    args.push_back("--suspect");
    args.push_back("extracted-" + idx + "=" + (sim() / "suspects" / ("extracted-" + idx + ".jsonl")).string() +
                   ",label=extracted");
    args.push_back("--suspect");
    args.push_back("benign-" + idx + "=" + (sim() / "suspects" / ("benign-" + idx + ".jsonl")).string() +
                   ",label=benign");
  }
  const auto res = call(args);
  ASSERT_EQ(res.code, kExitOk) << res.err;
  const auto doc = json::parse(res.out);
  const auto report = json::parse(slurp(sim() / "report.json"));
  EXPECT_EQ(doc["auroc"], report["auroc"]);

  args.insert(args.begin(), {"--format", "csv"});
  const auto csv = call(args);
  ASSERT_EQ(csv.code, kExitOk) << csv.err;
  EXPECT_EQ(csv.out.rfind("name,label,score", 0), 0u);
  EXPECT_NE(csv.out.find("# auroc,"), std::string::npos);
}

TEST_F(CliTest, VerifyMissingSuspectNamesPath) {
  const auto missing = (root() / "nope.jsonl").string();
  const auto res = call({"verify", "--target", (sim() / "key_target.jsonl").string(),
                         "--target-features", (sim() / "key_features.csv").string(),
                         "--trigger-model", (sim() / "trigger.model").string(), "--suspect",
                         "ghost=" + missing + ",label=benign"});
  EXPECT_EQ(res.code, kExitDomainError);
  EXPECT_NE(res.err.find(missing), std::string::npos) << res.err;
  EXPECT_EQ(json::parse(res.err)["error"], "IoError");
}

TEST_F(CliTest, VerifyRejectsIdentityScaleMetric) {
  const auto res = call({"verify", "--target", (sim() / "key_target.jsonl").string(),
                         "--target-features", (sim() / "key_features.csv").string(),
                         "--trigger-model", (sim() / "trigger.model").string(), "--suspect",
                         "x=" + (sim() / "suspects" / "benign-000.jsonl").string()});
  EXPECT_EQ(res.code, kExitDomainError);
  EXPECT_EQ(json::parse(res.err)["error"], "DegenerateMetricError");
}

TEST_F(CliTest, PoisonStreamWithFeatureFile) {
  const auto out = root() / "poisoned.jsonl";
  const auto flags = root() / "flags.csv";
  const auto res = call({"poison", "--trigger-model", (sim() / "trigger.model").string(),
                         "--detections", (sim() / "key_target.jsonl").string(), "--features",
                         (sim() / "key_features.csv").string(), "--delta-w", "1.2", "--delta-h",
                         "1.2", "--out", out.string(), "--flags-out", flags.string()});
  ASSERT_EQ(res.code, kExitOk) << res.err;
  const auto summary = json::parse(res.out);
  EXPECT_GT(summary["poisoned"].get<std::size_t>(), 0u);
  EXPECT_LT(summary["poisoned"].get<std::size_t>(), summary["objects"].get<std::size_t>());

  const auto before = read_detections(sim() / "key_target.jsonl");
  const auto after = read_detections(out);
  ASSERT_EQ(before.size(), after.size());
  std::ifstream flag_in(flags);
  std::string line;
  std::getline(flag_in, line);
  EXPECT_EQ(line, "image_id,object_index,poisoned");
  for (std::size_t i = 0; i < before.size(); ++i) {
    for (std::size_t k = 0; k < before[i].objects.size(); ++k) {
      ASSERT_TRUE(std::getline(flag_in, line));
      const bool poisoned = line.back() == '1';
      const auto& b = before[i].objects[k];
      const auto& a = after[i].objects[k];
      EXPECT_EQ(a.category, b.category);
      EXPECT_EQ(a.confidence, b.confidence);
      if (!poisoned) EXPECT_EQ(a.bbox, b.bbox);
    }
  }
}

TEST_F(CliTest, HistogramToStdout) {
  const auto res = call({"histogram", "--target", (sim() / "key_target.jsonl").string(), "--suspect",
                         (sim() / "suspects" / "extracted-000.jsonl").string(), "--target-features",
                         (sim() / "key_features.csv").string(), "--trigger-model",
                         (sim() / "trigger.model").string(), "--value", "area", "--bins", "5"});
  ASSERT_EQ(res.code, kExitOk) << res.err;
  EXPECT_NE(res.out.find("trigger"), std::string::npos);
  EXPECT_NE(res.out.find("nontrigger"), std::string::npos);
}

TEST_F(CliTest, SweepIsReproducible) {
  const auto doc = root() / "sweep.json";
  std::ofstream(doc) << R"({
    "base": {"world": {"n_train": 1000, "n_substitute": 1000, "n_test": 1200, "n_key": 400},
             "n_benign": 2, "n_extracted": 2},
    "grid": {"delta": [1.0, 1.1], "strategy": ["compact"]}
  })";
  const auto a = root() / "a.csv";
  const auto b = root() / "b.csv";
  ASSERT_EQ(call({"--seed", "2", "sweep", "--config", doc.string(), "--out", a.string()}).code, kExitOk);
  ASSERT_EQ(call({"sweep", "--seed", "2", "--config", doc.string(), "--out", b.string(), "--threads",
                  "4"}).code,
            kExitOk);
  const auto text = slurp(a);
  EXPECT_EQ(text, slurp(b));
  EXPECT_EQ(text.rfind("delta,p,lambda,alpha,recall,strategy,auroc,mean_S_extracted,mean_S_benign,error\n", 0),
            0u);
  EXPECT_NE(text.find("ConfigError"), std::string::npos);
}

TEST(CliUsageTest, ExitCodes) {
  EXPECT_EQ(call({}).code, kExitUsage);
  EXPECT_EQ(call({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(call({"verify", "--bogus"}).code, kExitUsage);
  EXPECT_EQ(call({"simulate", "--out", (scratch("noseed") / "x").string()}).code, kExitUsage);
  EXPECT_EQ(call({"sweep"}).code, kExitUsage);
  EXPECT_EQ(call({"--format", "xml", "sweep"}).code, kExitUsage);
  const auto help = call({"--help"});
  EXPECT_EQ(help.code, kExitOk);
  EXPECT_NE(help.out.find("simulate"), std::string::npos);
}

TEST(CliUsageTest, DomainErrorsAreJson) {
  const auto dir = scratch("domain");
  std::ofstream(dir / "bad.csv") << "image_id,object_index,f0\nimg,0,abc\n";
  const auto res = call({"select-trigger", "--features", (dir / "bad.csv").string(), "--p", "0.5",
                         "--out", (dir / "m.model").string()});
  EXPECT_EQ(res.code, kExitDomainError);
  EXPECT_EQ(json::parse(res.err)["error"], "FormatError");
}

#ifdef BBW_CLI_PATH
TEST(CliBinaryTest, ProcessExitCodes) {
  const std::string bin = BBW_CLI_PATH;
  EXPECT_EQ(std::system((bin + " --help > /dev/null").c_str()), 0);
  const int status = std::system((bin + " frobnicate > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(status), kExitUsage);
}
#endif

}  // namespace
}  // namespace bbw::cli
