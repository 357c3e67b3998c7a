#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string output;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(ICL_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, "popen failed"};
  std::string out;
  std::array<char, 4096> buf{};
  while (const std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) out.append(buf.data(), n);
  const int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("icl_cli_" + name);
  fs::remove_all(p);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  return nlohmann::json::parse(f);
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("gradcheck --bogus").code, 2);
  EXPECT_EQ(run("no-such-command").code, 2);
  EXPECT_EQ(run("gradcheck --size 4by4").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, GradcheckPasses) {
  const auto r = run("gradcheck --size 4x4 --instances 2 --seed 0");
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST(Cli, RuntimeErrorsAreOneLine) {
  const auto r = run("optimize --labels /nonexistent/labels.png --out /tmp/x.png");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.output.rfind("error: ", 0), 0u) << r.output;
  EXPECT_EQ(r.output.find('\n'), r.output.size() - 1) << r.output;
}

TEST(Cli, IdealFieldsScorePerfectly) {
  const auto dir = scratch("ideal");
  ASSERT_EQ(run("gen-scenes --count 3 --seed 0 --ideal-fields --out " + dir.string()).code, 0);
  const auto r = run("eval-prompt --manifest " + (dir / "manifest.json").string() + " --clicks 2 --report " +
                     (dir / "report.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto rep = read_json(dir / "report.json");
  EXPECT_EQ(rep["images"].size(), 3u);
  EXPECT_EQ(rep["aggregate"]["mean_iou_per_click"], (nlohmann::json{1.0, 1.0}));

  const auto e = run("eval-edges --manifest " + (dir / "manifest.json").string() + " --tolerance 0 --report " +
                     (dir / "edges.json").string() + " --curve " + (dir / "curve.csv").string());
  ASSERT_EQ(e.code, 0) << e.output;
  EXPECT_EQ(read_json(dir / "edges.json")["aggregate"]["pooled_ap"], 1.0);
  EXPECT_TRUE(fs::exists(dir / "curve.csv"));
  fs::remove_all(dir);
}

TEST(Cli, OptimizeThenEvaluate) {
  const auto dir = scratch("optimize");
  ASSERT_EQ(run("gen-scenes --count 2 --seed 3 --width 24 --height 24 --out " + dir.string()).code, 0);
  const auto o = run("optimize --manifest " + (dir / "manifest.json").string() + " --out " + (dir / "fields").string() +
                     " --iters 50");
  ASSERT_EQ(o.code, 0) << o.output;
  EXPECT_TRUE(fs::exists(dir / "fields" / "scene_0000.png"));
  EXPECT_TRUE(fs::exists(dir / "fields" / "scene_0000.icf"));
  const auto r = run("eval-prompt --manifest " + (dir / "manifest.json").string() + " --fields " +
                     (dir / "fields").string() + " --report " + (dir / "r.json").string());
  ASSERT_EQ(r.code, 0) << r.output;
  const double miou = read_json(dir / "r.json")["aggregate"]["mean_iou_per_click"][0];
  EXPECT_GE(miou, 0.0);
  EXPECT_LE(miou, 1.0);
  EXPECT_EQ(run("optimize --manifest " + (dir / "manifest.json").string() + " --out " + dir.string() + " --iters 0").code,
            1);
  fs::remove_all(dir);
}
