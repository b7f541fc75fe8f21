#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "floodrank/model.hpp"
#include "floodrank/pair_labels.hpp"

using namespace floodrank;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(FLOODRANK_CLI) + " " + args + " 2>/dev/null";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("floodrank_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(cli("gen-data --count 24 --seed 1 --image-size 16 --out " + (root_ / "strong").string()).code, 0);
    ASSERT_EQ(cli("gen-data --count 30 --seed 2 --image-size 16 --prefix weak --out " + (root_ / "weak").string()).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string strong() { return (root_ / "strong" / "manifest.jsonl").string(); }
  static std::string weak() { return (root_ / "weak" / "manifest.jsonl").string(); }
  static inline fs::path root_;
};

}  // namespace

TEST_F(CliTest, GenData) {
  const auto r = cli("gen-data --count 3 --image-size 8 --out " + (root_ / "g").string());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("manifest.jsonl 3"), std::string::npos);
  EXPECT_TRUE(fs::exists(root_ / "g" / "images" / "syn-000002.png"));
}

TEST_F(CliTest, TrainThenPredict) {
  const auto runs = root_ / "runs";
  auto r = cli("--run-root " + runs.string() + " train --strong " + strong() + " --weak " + weak() +
               " --epochs 2 --lr-decay-epochs 1 --input-size 16 --seed 4");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream first(r.out);
  std::string ckpt;
  first >> ckpt;
  ASSERT_TRUE(fs::exists(ckpt));
  const auto dir = fs::path(ckpt).parent_path();
  EXPECT_TRUE(fs::exists(dir / "history.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "config.json"));
  EXPECT_NE(dir.filename().string().find("-seed4"), std::string::npos);

  const auto img = root_ / "strong" / "images" / "syn-000000.png";
  r = cli("predict --checkpoint " + ckpt + " " + img.string());
  ASSERT_EQ(r.code, 0);
  auto loaded = load_checkpoint<float>(ckpt);
  const auto depth = predict(*loaded.model, read_png(img));
  char expected[512];
  std::snprintf(expected, sizeof expected, "%s %.4f %.4f\n", img.string().c_str(), depth.value(),
                cm_to_level(depth.value()));
  EXPECT_EQ(r.out, expected);

  r = cli("predict --checkpoint " + ckpt + " --manifest " + strong());
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 24);

  r = cli("--run-root " + runs.string() + " eval --checkpoint " + ckpt + " --manifest " + strong());
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("rmse_cm="), std::string::npos);
}

TEST_F(CliTest, ExportLabelsFromManifest) {
  const auto out = root_ / "pairs.jsonl";
  const auto r = cli("export-labels --manifest " + weak() + " --max-pairs 10 --seed 3 --out " + out.string());
  ASSERT_EQ(r.code, 0);
  const auto labels = read_pair_labels(out);
  EXPECT_EQ(labels.size(), 10u);
  const auto again = cli("export-labels --manifest " + weak() + " --max-pairs 10 --seed 3");
  std::ifstream is(out);
  const std::string file((std::istreambuf_iterator<char>(is)), {});
  EXPECT_EQ(again.out, file);
}

TEST_F(CliTest, TrainWithPairFile) {
  const auto pairs = root_ / "train_pairs.jsonl";
  ASSERT_EQ(cli("export-labels --manifest " + weak() + " --max-pairs 200 --out " + pairs.string()).code, 0);
  const auto r = cli("--run-root " + (root_ / "runs2").string() + " train --strong " + strong() + " --weak " +
                     weak() + " --pairs " + pairs.string() + " --epochs 1 --input-size 16");
  EXPECT_EQ(r.code, 0);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("train --no-such-flag").code, 2);
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("train --strong " + strong() + " --lambda -1").code, 2);
  EXPECT_EQ(cli("train --strong " + strong() + " --regime classification").code, 2);
  const auto bad = root_ / "bad.json";
  std::ofstream(bad) << R"({"lamda": 3})";
  EXPECT_EQ(cli("train --strong " + strong() + " --config " + bad.string()).code, 2);
  EXPECT_EQ(cli("export-labels").code, 2);
  EXPECT_EQ(cli("predict --checkpoint " + (root_ / "missing.json").string() + " x.png").code, 1);
}
