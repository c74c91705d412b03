#pragma once

// End-to-end presets: render -> solve (every mode) -> evaluate, with the
// corrected vs uncorrected comparison table and the sweep reports.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "polarsfp/io.hpp"
#include "polarsfp/pipeline.hpp"
#include "polarsfp/scene_sim.hpp"

namespace polarsfp {

#ifdef POLARSFP_SCENES_DIR
inline const fs::path kDefaultScenesDir = POLARSFP_SCENES_DIR;
#else
inline const fs::path kDefaultScenesDir = "scenes";
#endif

/// DoP noise floor for a relative intensity noise level: below twice the
/// noise a pixel counts as unpolarized.
inline double noise_dop_threshold(double noise_sigma) { return std::max(1e-4, 2.0 * noise_sigma); }

inline PipelineConfig config_for(const SceneSpec& scene, PipelineMode mode, double assumed_n = 1.5) {
  PipelineConfig cfg;
  cfg.mode = mode;
  cfg.assumed_n = assumed_n;
  cfg.fit.degenerate_threshold = noise_dop_threshold(scene.noise_sigma);
  cfg.solver.degenerate_threshold = cfg.fit.degenerate_threshold;
  return cfg;
}

struct ExperimentCase {
  SceneSpec scene;
  std::string label;      // row label in the table
  double parameter = 0.0; // swept value, if any
};

struct Preset {
  std::string name;
  std::string parameter_name;  // empty unless a sweep
  std::vector<ExperimentCase> cases;
};

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"sphere-fig4", "sphere-fig5", "bunny-like", "noise-sweep",
                                              "violation-sweep"};
  return names;
}

/// Builds a preset from the checked-in scene files.
inline Preset make_preset(const std::string& name, const fs::path& scenes_dir = kDefaultScenesDir) {
  auto load = [&](const std::string& file) { return read_scene(scenes_dir / file); };
  Preset p;
  p.name = name;
  if (name == "sphere-fig4" || name == "sphere-fig5") {
    auto s = load(name + ".json");
    p.cases.push_back({s, s.name, 0.0});
  } else if (name == "bunny-like") {
    for (const char* m : {"diffuse", "glossy", "textured"}) {
      auto s = load(std::string("bunny-like-") + m + ".json");
      p.cases.push_back({s, s.name, 0.0});
    }
  } else if (name == "noise-sweep" || name == "violation-sweep") {
    const auto base = load(name + ".json");
    const bool noise = name == "noise-sweep";
    p.parameter_name = noise ? "noise_sigma" : "model_violation";
    const std::vector<double> values = noise ? std::vector<double>{0.0, 0.005, 0.01, 0.02}
                                             : std::vector<double>{0.0, 0.25, 0.5, 1.0};
    for (double v : values) {
      auto s = base;
      (noise ? s.noise_sigma : s.model_violation) = v;
      char label[64];
      std::snprintf(label, sizeof label, "%s@%s=%g", base.name.c_str(), p.parameter_name.c_str(), v);
      s.name = label;
      p.cases.push_back({s, label, v});
    }
  } else {
    throw Error(ErrorCode::SchemaError, "unknown preset '" + name + "'");
  }
  return p;
}

struct ExperimentRow {
  std::string scene;
  std::string mode;
  double parameter = 0.0;
  Metrics metrics;         // over pixels every mode estimated
  Metrics own_mask;        // over this mode's own valid pixels
  Metrics mixed_region;    // own pixels whose true specular part is non-zero
  Diagnostics diagnostics;
  double seconds = 0.0;
};

struct ExperimentReport {
  Preset preset;
  std::vector<ExperimentRow> rows;
  double seconds = 0.0;
};

/// Restricts normal masks to `common` (per view).
inline std::vector<ViewEstimate> restrict_normals(std::vector<ViewEstimate> views, const std::vector<Mask>& common) {
  for (std::size_t k = 0; k < views.size(); ++k) {
    auto& m = views[k].normals.mask.data();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] && common[k].data()[i];
    auto& im = views[k].index_mask.data();
    for (std::size_t i = 0; i < im.size(); ++i) im[i] = im[i] && common[k].data()[i];
    auto& dm = views[k].diffuse_mask.data();
    for (std::size_t i = 0; i < dm.size(); ++i) dm[i] = dm[i] && common[k].data()[i];
  }
  return views;
}

using StageLog = std::function<void(const std::string&)>;

/// Runs every case through corrected-mixed and uncorrected-specular.
/// Stage failures are rethrown with the case and stage named.
inline ExperimentReport run_experiment(const Preset& preset, std::uint64_t seed, std::size_t threads,
                                       const StageLog& log = {}) {
  ExperimentReport report;
  report.preset = preset;
  const auto t_all = std::chrono::steady_clock::now();
  const PipelineMode modes[] = {PipelineMode::corrected_mixed, PipelineMode::uncorrected_specular};

  for (const auto& c : preset.cases) {
    auto stage = [&](const std::string& what, auto&& fn) {
      if (log) log(c.label + ": " + what);
      try {
        return fn();
      } catch (const Error& e) {
        throw Error(e.code(), c.label + ": " + what + " failed: " + e.what());
      }
    };
    const auto rendered = stage("render", [&] { return render_views(c.scene, seed, threads); });

    std::vector<PipelineResult> results;
    std::vector<double> seconds;
    for (auto mode : modes) {
      auto cfg = config_for(c.scene, mode, c.scene.material.n_true);
      cfg.threads = threads;
      const auto t0 = std::chrono::steady_clock::now();
      results.push_back(stage(std::string("solve ") + std::string(to_string(mode)),
                              [&] { return run_pipeline(rendered.stacks, rendered.correspondences, cfg); }));
      seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }

    std::vector<Mask> common;
    for (std::size_t k = 0; k < rendered.stacks.size(); ++k) {
      Mask m = results.front().views[k].normals.mask;
      for (const auto& r : results) {
        for (std::size_t i = 0; i < m.data().size(); ++i) m.data()[i] = m.data()[i] && r.views[k].normals.mask.data()[i];
      }
      common.push_back(std::move(m));
    }

    for (std::size_t i = 0; i < results.size(); ++i) {
      ExperimentRow row;
      row.scene = c.label;
      row.mode = std::string(to_string(modes[i]));
      row.parameter = c.parameter;
      row.diagnostics = results[i].diagnostics;
      row.seconds = seconds[i];
      row.own_mask = stage("evaluate", [&] { return evaluate(results[i].views, rendered.truth); });
      std::vector<Mask> mixed;
      for (const auto& gv : rendered.truth.views) {
        Mask m(gv.mask.width(), gv.mask.height());
        for (std::size_t p = 0; p < m.data().size(); ++p) m.data()[p] = gv.mask.data()[p] && gv.specular.data()[p] > 0.0;
        mixed.push_back(std::move(m));
      }
      row.mixed_region = stage("evaluate", [&] { return evaluate(restrict_normals(results[i].views, mixed), rendered.truth); });
      const auto restricted = restrict_normals(results[i].views, common);
      row.metrics = stage("evaluate", [&] { return evaluate(restricted, rendered.truth); });
      report.rows.push_back(std::move(row));
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_all).count();
  return report;
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Fixed-width comparison table over the common mask. Timing is optional so
/// files written from it stay byte-stable.
inline std::string comparison_table(const ExperimentReport& r, bool with_timing = false) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-38s %-22s %11s %9s %10s %10s %8s", "scene", "mode", "normal_mse", "ang_deg",
                "index_mae", "diff_rel", "pixels");
  out += line;
  out += with_timing ? "     secs\n" : "\n";
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-38s %-22s %11.6f %9.4f %10.5f %10.5f %8zu", row.scene.c_str(),
                  row.mode.c_str(), row.metrics.normal_mse, row.metrics.mean_angular_error_deg, row.metrics.index_mae,
                  row.metrics.diffuse_rel_error, row.metrics.normal_pixels);
    out += line;
    out += with_timing ? fmt(" %8.2f\n", row.seconds) : "\n";
  }
  return out;
}

struct SweepPoint {
  double parameter = 0.0;
  double index_mae = 0.0;        // every solved pixel
  double angular_err_deg = 0.0;
  double mixed_index_mae = 0.0;  // pixels with a true specular part
};

struct SweepReport {
  std::string parameter_name;
  std::vector<SweepPoint> points;
  bool monotone_nondecreasing = true;  // mixed-region index MAE
  bool monotone_overall = true;        // index MAE over every solved pixel
  double tolerance = 0.02;             // index MAE deemed acceptable
  double breaking_point = std::nan("");  // first value whose mixed-region MAE exceeds tolerance
};

inline SweepReport sweep_report(const ExperimentReport& r, double tolerance = 0.02) {
  SweepReport s;
  s.parameter_name = r.preset.parameter_name;
  s.tolerance = tolerance;
  for (const auto& row : r.rows) {
    if (row.mode != to_string(PipelineMode::corrected_mixed)) continue;
    s.points.push_back({row.parameter, row.own_mask.index_mae, row.own_mask.mean_angular_error_deg,
                        row.mixed_region.index_mae});
  }
  for (std::size_t i = 1; i < s.points.size(); ++i) {
    if (!(s.points[i].mixed_index_mae >= s.points[i - 1].mixed_index_mae)) s.monotone_nondecreasing = false;
    if (!(s.points[i].index_mae >= s.points[i - 1].index_mae)) s.monotone_overall = false;
  }
  for (const auto& p : s.points) {
    if (!(p.mixed_index_mae <= tolerance)) {
      s.breaking_point = p.parameter;
      break;
    }
  }
  return s;
}

inline std::string format_sweep(const SweepReport& s) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %10s %16s %16s\n", s.parameter_name.c_str(), "index_mae", "angular_err_deg",
                "mixed_index_mae");
  out += line;
  for (const auto& p : s.points) {
    std::snprintf(line, sizeof line, "%-16g %10.5f %16.4f %16.5f\n", p.parameter, p.index_mae, p.angular_err_deg,
                  p.mixed_index_mae);
    out += line;
  }
  out += std::string("mixed_index_mae monotone non-decreasing: ") + (s.monotone_nondecreasing ? "yes" : "no") + "\n";
  out += std::string("index_mae monotone non-decreasing: ") + (s.monotone_overall ? "yes" : "no") + "\n";
  out += "first " + s.parameter_name + " with mixed_index_mae > " + fmt("%g", s.tolerance) + ": " +
         (std::isnan(s.breaking_point) ? std::string("none") : fmt("%g", s.breaking_point)) + "\n";
  return out;
}

}  // namespace polarsfp
