// polarsfp: render / solve / evaluate / experiment driver.
//
// Exit codes: 0 success, 1 computational failure, 2 usage or I/O error.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "CLI11.hpp"
#include "polarsfp/experiment.hpp"
#include "polarsfp/io.hpp"
#include "polarsfp/pipeline.hpp"
#include "polarsfp/report.hpp"
#include "polarsfp/scene_sim.hpp"

namespace {

using namespace polarsfp;

constexpr int kOk = 0;
constexpr int kComputeFailure = 1;
constexpr int kUsageError = 2;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::SchemaError:
    case ErrorCode::MalformedHeader:
    case ErrorCode::TruncatedData:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::InsufficientViews:
      return kUsageError;
    default:
      return kComputeFailure;
  }
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::IoError, "SHA-256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

/// manifest.json: command, parameters and every artifact with its SHA-256.
void write_manifest(const fs::path& dir, const std::string& command, json parameters, std::vector<fs::path> files) {
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  json artifacts = json::array();
  for (const auto& f : files) {
    const auto bytes = read_file(f);
    artifacts.push_back({{"file", fs::relative(f, dir).generic_string()},
                         {"bytes", bytes.size()},
                         {"sha256", sha256_hex(bytes)}});
  }
  json doc{{"schema_version", kSchemaVersion},
           {"command", command},
           {"parameters", std::move(parameters)},
           {"artifacts", std::move(artifacts)}};
  write_file(dir / "manifest.json", doc.dump(2) + "\n");
}

void write_previews(const fs::path& dir, const std::string& stem, const ImageF& img, std::vector<fs::path>& files) {
  write_pfm(dir / (stem + ".pfm"), img);
  write_file(dir / (stem + ".ppm"), encode_ppm(img));
  files.push_back(dir / (stem + ".pfm"));
  files.push_back(dir / (stem + ".ppm"));
}

std::vector<std::size_t> parse_views(const std::string& spec, std::size_t available) {
  std::vector<std::size_t> out;
  if (spec.empty()) {
    for (std::size_t k = 0; k < available; ++k) out.push_back(k);
    return out;
  }
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    long v = -1;
    try {
      v = std::stol(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 0 || static_cast<std::size_t>(v) >= available) {
      throw Error(ErrorCode::SchemaError, "--views entry '" + item + "' is not a view index below " +
                                              std::to_string(available));
    }
    if (std::find(out.begin(), out.end(), static_cast<std::size_t>(v)) != out.end()) {
      throw Error(ErrorCode::SchemaError, "--views lists view " + item + " twice");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// ------------------------------------------------------------------ render

struct RenderArgs {
  std::string scene;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_render(const RenderArgs& a, std::size_t threads) {
  const auto scene = read_scene(a.scene);
  const auto rendered = render_views(scene, a.seed, threads);
  const fs::path out = a.out;
  std::vector<fs::path> files;
  write_scene(out / "scene.json", scene);
  files.push_back(out / "scene.json");
  for (auto& f : write_stacks(out, rendered.stacks)) files.push_back(f);
  for (auto& f : write_correspondences(out, rendered.correspondences)) files.push_back(f);
  for (auto& f : write_truth(out / "truth", rendered.truth, scene.material.n_true)) files.push_back(f);
  write_manifest(out, "render", {{"scene", scene.name}, {"seed", a.seed}, {"n_true", scene.material.n_true}}, files);
  std::printf("rendered %zu views of '%s' into %s\n", rendered.stacks.size(), scene.name.c_str(), out.c_str());
  return kOk;
}

// ------------------------------------------------------------------ solve

struct SolveArgs {
  std::string in;
  std::string out;
  std::string mode_name = "corrected-mixed";
  std::string azimuth_name = "specular-phase";
  std::string disambiguation_name = "convex-outward";
  std::string branch_name = "below";
  std::string refinement_name = "multiview";
  PipelineMode mode = PipelineMode::corrected_mixed;
  double assumed_n = 1.5;
  std::string views;
  AzimuthConvention azimuth = AzimuthConvention::specular_phase;
  Disambiguation disambiguation = Disambiguation::convex_outward;
  SolverConfig solver;
  double floor_deg = 2.0;
  double max_failure_fraction = 0.05;
};

int cmd_solve(const SolveArgs& a, std::size_t threads) {
  const fs::path in = a.in;
  const auto all = read_stacks(in);
  const auto indices = parse_views(a.views, all.size());
  std::vector<PolarizedStack> stacks;
  for (auto k : indices) stacks.push_back(all[k]);

  CorrespondenceMap corr;
  if (a.mode == PipelineMode::corrected_mixed) {
    const auto full = read_correspondences(in);
    if (full.view_count() != all.size()) throw Error(ErrorCode::ShapeMismatch, "correspondences do not match stacks");
    corr.width = full.width;
    corr.height = full.height;
    corr.coords.assign(indices.size(), std::vector<ImageD>(indices.size()));
    for (std::size_t r = 0; r < indices.size(); ++r) {
      for (std::size_t t = 0; t < indices.size(); ++t) corr.coords[r][t] = full.coords[indices[r]][indices[t]];
    }
  }

  PipelineConfig cfg;
  cfg.mode = a.mode;
  cfg.assumed_n = a.assumed_n;
  cfg.azimuth_convention = a.azimuth;
  cfg.disambiguation = a.disambiguation;
  cfg.solver = a.solver;
  cfg.solver.zenith_floor = deg2rad(a.floor_deg);
  cfg.fit.degenerate_threshold = a.solver.degenerate_threshold;
  cfg.threads = threads;
  const auto result = run_pipeline(stacks, corr, cfg);

  const fs::path out = a.out.empty() ? in / std::string(to_string(a.mode)) : fs::path(a.out);
  auto files = write_result(out, result, a.mode, indices);
  write_manifest(out, "solve",
                 {{"mode", to_string(a.mode)},
                  {"assumed_n", a.assumed_n},
                  {"views", indices},
                  {"dop_threshold", cfg.solver.degenerate_threshold},
                  {"n_lo", cfg.solver.n_lo},
                  {"n_hi", cfg.solver.n_hi}},
                 files);

  const auto& d = result.diagnostics;
  std::printf("%s: %zu converged, %zu max-iter, %zu degenerate, %zu failed, %zu without correspondence\n",
              std::string(to_string(a.mode)).c_str(), d.converged, d.max_iter, d.degenerate, d.failed,
              d.no_correspondence);
  if (d.nonconverged_fraction() > a.max_failure_fraction) {
    std::fprintf(stderr, "error: %.2f%% of solved pixels did not converge (limit %.2f%%)\n",
                 100.0 * d.nonconverged_fraction(), 100.0 * a.max_failure_fraction);
    return kComputeFailure;
  }
  return kOk;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  std::string result;
  std::string truth;
  std::string out;
  std::string scene = "scene";
};

int cmd_evaluate(const EvaluateArgs& a) {
  const fs::path result_dir = a.result;
  const auto stored = read_result(result_dir);
  const auto truth = read_truth(a.truth);
  GroundTruth matched;
  for (auto k : stored.source_views) {
    if (k >= truth.views.size()) throw Error(ErrorCode::ShapeMismatch, "result refers to a view the truth lacks");
    matched.views.push_back(truth.views[k]);
  }
  const auto metrics = evaluate(stored.views, matched);
  const fs::path csv = a.out.empty() ? result_dir / "metrics.csv" : fs::path(a.out);
  const std::vector<MetricsRow> rows{{a.scene, stored.mode, metrics}};
  write_metrics_csv(csv, rows);

  const fs::path previews = result_dir / "previews";
  std::vector<fs::path> files;
  for (std::size_t k = 0; k < stored.views.size(); ++k) {
    const auto& v = stored.views[k];
    const auto tag = "view" + std::to_string(stored.source_views[k]);
    write_previews(previews, tag + "_normals", normal_rgb(v.normals.normals, v.normals.mask), files);
    write_previews(previews, tag + "_normals_truth", normal_rgb(matched.views[k].normals, matched.views[k].mask), files);
    write_previews(previews, tag + "_dop", ramp_gray(v.dop, v.normals.mask, kDopRamp), files);
    write_previews(previews, tag + "_zenith", ramp_gray(v.zenith, v.normals.mask, kZenithRamp), files);
    write_previews(previews, tag + "_index", ramp_gray(v.index, v.index_mask, kIndexRamp), files);
  }
  std::printf("%s", metrics_csv(rows).c_str());
  return kOk;
}

// ------------------------------------------------------------------ experiment

struct ExperimentArgs {
  std::string preset;
  std::string scenes;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_experiment(const ExperimentArgs& a, std::size_t threads) {
  const auto preset = make_preset(a.preset, a.scenes.empty() ? kDefaultScenesDir : fs::path(a.scenes));
  const auto report = run_experiment(preset, a.seed, threads, [](const std::string& s) {
    std::fprintf(stderr, "[%s]\n", s.c_str());
  });
  std::printf("%s", comparison_table(report, true).c_str());
  std::string sweep;
  if (!preset.parameter_name.empty()) {
    sweep = format_sweep(sweep_report(report));
    std::printf("\n%s", sweep.c_str());
  }
  std::printf("total %.1f s\n", report.seconds);

  if (!a.out.empty()) {
    const fs::path out = a.out;
    std::vector<MetricsRow> rows;
    for (const auto& r : report.rows) rows.push_back({r.scene, r.mode, r.metrics});
    std::vector<fs::path> files{out / "metrics.csv", out / "table.txt"};
    write_metrics_csv(out / "metrics.csv", rows);
    write_file(out / "table.txt", comparison_table(report, false));
    if (!sweep.empty()) {
      write_file(out / "sweep.txt", sweep);
      files.push_back(out / "sweep.txt");
    }
    write_manifest(out, "experiment", {{"preset", a.preset}, {"seed", a.seed}}, files);
  }
  return kOk;
}

template <typename V>
std::vector<std::string> keys(const std::map<std::string, V>& m) {
  std::vector<std::string> out;
  for (const auto& [k, _] : m) out.push_back(k);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shape from polarization under mixed diffuse/specular reflection"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0: POLARSFP_THREADS or all cores)");

  RenderArgs render;
  auto* r = app.add_subcommand("render", "Render a scene's polarizer stacks, truth and correspondences");
  r->add_option("scene", render.scene, "Scene JSON")->required();
  r->add_option("out_dir", render.out, "Output directory")->required();
  r->add_option("--seed", render.seed, "Noise seed")->capture_default_str();

  SolveArgs solve;
  const std::map<std::string, PipelineMode> modes{{"uncorrected-specular", PipelineMode::uncorrected_specular},
                                                  {"uncorrected-diffuse", PipelineMode::uncorrected_diffuse},
                                                  {"corrected-mixed", PipelineMode::corrected_mixed}};
  const std::map<std::string, ZenithBranch> branches{{"below", ZenithBranch::below_brewster},
                                                     {"above", ZenithBranch::above_brewster}};
  const std::map<std::string, ZenithRefinement> refinements{{"none", ZenithRefinement::none},
                                                            {"corrected-dop", ZenithRefinement::corrected_dop},
                                                            {"multiview", ZenithRefinement::multiview}};
  const std::map<std::string, AzimuthConvention> conventions{{"specular-phase", AzimuthConvention::specular_phase},
                                                             {"diffuse-shift", AzimuthConvention::diffuse_shift}};
  const std::map<std::string, Disambiguation> policies{{"convex-outward", Disambiguation::convex_outward},
                                                       {"none", Disambiguation::none}};
  auto* s = app.add_subcommand("solve", "Estimate normals (and n, I^d) from a rendered or captured directory");
  s->add_option("in_dir", solve.in, "Directory with stacks.json and correspondences.json")->required();
  s->add_option("--out", solve.out, "Output directory (default: <in_dir>/<mode>)");
  s->add_option("--mode", solve.mode_name, "uncorrected-specular | uncorrected-diffuse | corrected-mixed")
      ->check(CLI::IsMember(keys(modes)));
  s->add_option("--assumed-n", solve.assumed_n, "Refractive index for the uncorrected modes")->capture_default_str();
  s->add_option("--views", solve.views, "Comma-separated view indices (default: all)");
  s->add_option("--azimuth", solve.azimuth_name, "specular-phase | diffuse-shift")
      ->check(CLI::IsMember(keys(conventions)));
  s->add_option("--disambiguation", solve.disambiguation_name, "convex-outward | none")
      ->check(CLI::IsMember(keys(policies)));
  s->add_option("--n-lo", solve.solver.n_lo, "Lower refractive index bound")->capture_default_str();
  s->add_option("--n-hi", solve.solver.n_hi, "Upper refractive index bound")->capture_default_str();
  s->add_option("--max-outer", solve.solver.max_outer_iters, "Outer iterations")->capture_default_str();
  s->add_option("--max-inner", solve.solver.max_inner_iters, "LM iterations per solve")->capture_default_str();
  s->add_option("--inner-tol", solve.solver.inner_tol, "Relative residual tolerance")->capture_default_str();
  s->add_option("--outer-tol", solve.solver.outer_tol, "Zenith change tolerance (rad)")->capture_default_str();
  s->add_option("--zenith-floor-deg", solve.floor_deg, "Smallest usable zenith (deg)")->capture_default_str();
  s->add_option("--multistart", solve.solver.multistart_count, "Refractive index seeds")->capture_default_str();
  s->add_option("--dop-threshold", solve.solver.degenerate_threshold, "DoP below which a pixel is unpolarized")
      ->capture_default_str();
  s->add_option("--branch", solve.branch_name, "below | above (Brewster branch for zenith inversion)")
      ->check(CLI::IsMember(keys(branches)));
  s->add_option("--refinement", solve.refinement_name, "none | corrected-dop | multiview")
      ->check(CLI::IsMember(keys(refinements)));
  s->add_option("--max-failure-fraction", solve.max_failure_fraction,
                "Exit 1 when more solved pixels than this fail to converge")
      ->capture_default_str();

  EvaluateArgs eval;
  auto* e = app.add_subcommand("evaluate", "Compare a solve result with ground truth");
  e->add_option("result_dir", eval.result, "Directory written by solve")->required();
  e->add_option("truth_dir", eval.truth, "Directory with truth.json")->required();
  e->add_option("--out", eval.out, "Metrics CSV path (default: <result_dir>/metrics.csv)");
  e->add_option("--scene", eval.scene, "Scene label for the CSV row")->capture_default_str();

  ExperimentArgs exp;
  auto* x = app.add_subcommand("experiment", "Render, solve both modes and compare for a preset");
  x->add_option("preset", exp.preset, "Preset name")->required()->check(CLI::IsMember(preset_names()));
  x->add_option("--scenes", exp.scenes, "Scene directory (default: the repository's scenes/)");
  x->add_option("--out", exp.out, "Directory for metrics.csv, table.txt and sweep.txt");
  x->add_option("--seed", exp.seed, "Noise seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsageError;
  }

  try {
    if (*r) return cmd_render(render, threads);
    if (*s) {
      solve.mode = modes.at(solve.mode_name);
      solve.azimuth = conventions.at(solve.azimuth_name);
      solve.disambiguation = policies.at(solve.disambiguation_name);
      solve.solver.branch = branches.at(solve.branch_name);
      solve.solver.refinement = refinements.at(solve.refinement_name);
      return cmd_solve(solve, threads);
    }
    if (*e) return cmd_evaluate(eval);
    if (*x) return cmd_experiment(exp, threads);
  } catch (const Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return exit_code_for(err.code());
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kComputeFailure;
  }
  return kUsageError;
}
