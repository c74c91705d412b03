#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>

#include "polarsfp/io.hpp"

using namespace polarsfp;

namespace {

const fs::path& work() {
  static const fs::path dir = [] {
    auto p = fs::temp_directory_path() / ("polarsfp_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(POLARSFP_CLI) + " --threads 2 " + args + " >" +
                          (work() / "last.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scene_file(const std::string& name, double albedo, double strength) {
  SceneSpec s;
  s.name = name;
  s.width = s.height = 40;
  s.views = camera_ring(3, deg2rad(10.0));
  s.material.diffuse_albedo = albedo;
  s.material.specular_strength = strength;
  const auto path = work() / (name + ".json");
  write_scene(path, s);
  return path;
}

// Renders once per scene name and reuses the directory.
fs::path rendered(const std::string& name, double albedo, double strength) {
  const auto dir = work() / ("r_" + name);
  if (!fs::exists(dir / "manifest.json")) {
    EXPECT_EQ(run("render " + scene_file(name, albedo, strength).string() + " " + dir.string()), 0);
  }
  return dir;
}

std::string q(const fs::path& p) { return p.string(); }

}  // namespace

TEST(Cli, RenderIsDeterministicAndRecordsDefaultSeed) {
  const auto scene = scene_file("det", 0.5, 0.5);
  ASSERT_EQ(run("render " + q(scene) + " " + q(work() / "det_a")), 0);
  ASSERT_EQ(run("render " + q(scene) + " " + q(work() / "det_b")), 0);
  const auto a = read_file(work() / "det_a" / "manifest.json");
  EXPECT_EQ(a, read_file(work() / "det_b" / "manifest.json"));
  const auto doc = json::parse(a);
  EXPECT_EQ(doc["parameters"]["seed"], 0);
  EXPECT_GT(doc["artifacts"].size(), 20u);
  for (const auto& f : doc["artifacts"]) {
    EXPECT_EQ(f["sha256"].get<std::string>().size(), 64u);
    EXPECT_TRUE(fs::exists(work() / "det_a" / f["file"].get<std::string>()));
  }
}

TEST(Cli, UsageAndIoErrorsExitTwo) {
  EXPECT_EQ(run("render " + q(work() / "absent.json") + " " + q(work() / "x")), 2);
  EXPECT_EQ(run("solve " + q(rendered("glossy", 0.5, 0.5)) + " --mode sideways"), 2);
  EXPECT_EQ(run("solve " + q(work() / "nowhere")), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST(Cli, CorrectedModeWithOneViewIsInsufficient) {
  EXPECT_EQ(run("solve " + q(rendered("glossy", 0.5, 0.5)) + " --views 0 --out " + q(work() / "one")), 2);
  EXPECT_NE(read_file(work() / "last.log").find("InsufficientViews"), std::string::npos);
}

TEST(Cli, CorrectedSolveRecoversIndex) {
  const auto dir = rendered("glossy", 0.5, 0.5);
  ASSERT_EQ(run("solve " + q(dir) + " --mode corrected-mixed --out " + q(work() / "glossy_cm")), 0);
  const auto diag = json::parse(read_file(work() / "glossy_cm" / "diagnostics.json"));
  EXPECT_GT(diag["converged"].get<int>(), 500);
  ASSERT_EQ(run("evaluate " + q(work() / "glossy_cm") + " " + q(dir / "truth")), 0);
  const auto rows = read_metrics_csv(work() / "glossy_cm" / "metrics.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].mode, "corrected-mixed");
  EXPECT_LT(rows[0].metrics.index_mae, 0.1);  // 40 px: resampling error dominates
  EXPECT_TRUE(fs::exists(work() / "glossy_cm" / "previews" / "view0_normals.ppm"));
}

TEST(Cli, UncorrectedSpecularOnPureSpecularScene) {
  const auto dir = rendered("mirror", 0.0, 1.0);
  ASSERT_EQ(run("solve " + q(dir) + " --mode uncorrected-specular --assumed-n 1.5 --out " + q(work() / "mirror_us")), 0);
  ASSERT_EQ(run("evaluate " + q(work() / "mirror_us") + " " + q(dir / "truth")), 0);
  const auto rows = read_metrics_csv(work() / "mirror_us" / "metrics.csv");
  EXPECT_LT(rows[0].metrics.mean_angular_error_deg, 0.1);
  EXPECT_TRUE(std::isnan(rows[0].metrics.index_mae));
}

TEST(Cli, EvaluateTruthAgainstItself) {
  const auto dir = rendered("glossy", 0.5, 0.5);
  const auto truth = read_truth(dir / "truth");
  PipelineResult r;
  for (const auto& gv : truth.views) {
    ViewEstimate e = detail::blank_estimate(gv.mask.width(), gv.mask.height());
    e.normals = {gv.normals, gv.mask};
    e.index = ImageD(gv.mask.width(), gv.mask.height(), 1, 1.49);
    e.index_mask = gv.mask;
    e.diffuse = gv.diffuse;
    e.diffuse_mask = gv.mask;
    r.views.push_back(e);
  }
  write_result(work() / "self", r, PipelineMode::corrected_mixed);
  ASSERT_EQ(run("evaluate " + q(work() / "self") + " " + q(dir / "truth") + " --out " + q(work() / "self.csv")), 0);
  const auto rows = read_metrics_csv(work() / "self.csv");
  EXPECT_EQ(rows[0].metrics.normal_mse, 0.0);
  EXPECT_EQ(rows[0].metrics.mean_angular_error_deg, 0.0);
  EXPECT_NEAR(rows[0].metrics.index_mae, 0.01, 1e-6);
  EXPECT_EQ(rows[0].metrics.diffuse_rel_error, 0.0);
}

TEST(Cli, EvaluateMismatchedSizesExitTwo) {
  SceneSpec s;
  s.width = s.height = 24;
  s.views = camera_ring(3, deg2rad(10.0));
  write_scene(work() / "tiny.json", s);
  ASSERT_EQ(run("render " + q(work() / "tiny.json") + " " + q(work() / "tiny")), 0);
  const auto dir = rendered("glossy", 0.5, 0.5);
  ASSERT_EQ(run("solve " + q(dir) + " --mode uncorrected-specular --out " + q(work() / "glossy_us")), 0);
  EXPECT_EQ(run("evaluate " + q(work() / "glossy_us") + " " + q(work() / "tiny" / "truth")), 2);
}

TEST(Cli, EvaluateEmptyIntersectionFails) {
  const auto dir = rendered("matte", 0.7, 0.0);
  ASSERT_EQ(run("solve " + q(dir) + " --mode uncorrected-specular --out " + q(work() / "matte_us")), 0);
  EXPECT_NE(run("evaluate " + q(work() / "matte_us") + " " + q(dir / "truth")), 0);
  EXPECT_NE(read_file(work() / "last.log").find("EmptyIntersection"), std::string::npos);
}

TEST(Cli, ThreadsFlagDoesNotChangeOutput) {
  const auto dir = rendered("glossy", 0.5, 0.5);
  ASSERT_EQ(run("solve " + q(dir) + " --out " + q(work() / "t2")), 0);
  const std::string one = std::string(POLARSFP_CLI) + " --threads 1 solve " + q(dir) + " --out " + q(work() / "t1") +
                          " >/dev/null 2>&1";
  ASSERT_EQ(std::system(one.c_str()), 0);
  EXPECT_EQ(json::parse(read_file(work() / "t1" / "manifest.json"))["artifacts"],
            json::parse(read_file(work() / "t2" / "manifest.json"))["artifacts"]);
}

TEST(Cli, NonConvergenceBeyondLimitExitsOne) {
  const auto dir = rendered("glossy", 0.5, 0.5);
  EXPECT_EQ(run("solve " + q(dir) + " --max-inner 1 --max-outer 1 --max-failure-fraction 0 --out " +
                q(work() / "starved")),
            1);
}
