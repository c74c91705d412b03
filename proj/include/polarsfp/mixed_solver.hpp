#pragma once

// Joint recovery of diffuse intensity and refractive index from multiview
// observations of one surface point (Eq. 8-9 style nonlinear least squares),
// plus the zenith refinement that closes the loop.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "polarsfp/dual.hpp"
#include "polarsfp/error.hpp"
#include "polarsfp/geometry.hpp"
#include "polarsfp/lm.hpp"
#include "polarsfp/parallel.hpp"
#include "polarsfp/polar_core.hpp"

namespace polarsfp {

enum class ReflectionModel { specular, diffuse };
enum class ZenithBranch { below_brewster, above_brewster };

/// How zeniths are updated between Eq. 9 solves.
enum class ZenithRefinement {
  none,           // single pass at the initial zeniths
  corrected_dop,  // re-invert the specular model at rho * I / (I - I^d)
  multiview,      // zeniths tied to one world normal through the view rotations
};

enum class SolveStatus { Converged, MaxIter, Degenerate, Failed };

inline std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "Converged";
    case SolveStatus::MaxIter: return "MaxIter";
    case SolveStatus::Degenerate: return "Degenerate";
    case SolveStatus::Failed: return "Failed";
  }
  return "Unknown";
}

struct ViewObservation {
  double intensity = 0.0;  // rotation-averaged, (i_max + i_min) / 2
  double dop = 0.0;
  double phase = 0.0;      // [0, pi)
  double zenith = 0.0;     // current estimate
  Mat3 view_rotation = Mat3::Identity();  // world -> camera
  double azimuth = 0.0;    // disambiguated azimuth in this camera; seeds the normal
};

/// Observations of one surface point. observations[0] is the reference view.
struct PointTrack {
  std::vector<ViewObservation> observations;
  std::int64_t point_id = 0;
};

struct SeparationResult {
  double diffuse = 0.0;
  double index = 0.0;
  std::vector<double> zeniths;
  double residual = 0.0;  // Eq. 9 sum of squares at the last solved zeniths
  int iterations = 0;     // outer iterations
  SolveStatus status = SolveStatus::Failed;
  bool index_identified = false;
  bool zenith_consistent = true;  // every rho_tilde was invertible at the final n
  Vec3 normal = Vec3::Zero();     // world normal, multiview refinement only
  std::vector<std::vector<double>> zenith_history;  // filled when record_history
  std::string message;
};

struct SolverConfig {
  double n_lo = 1.05;
  double n_hi = 2.5;
  int max_outer_iters = 20;
  double inner_tol = 1e-10;
  double outer_tol = 1e-6;
  double zenith_floor = deg2rad(2.0);
  int multistart_count = 5;
  double degenerate_threshold = 1e-4;
  ZenithBranch branch = ZenithBranch::below_brewster;
  ZenithRefinement refinement = ZenithRefinement::multiview;
  int max_inner_iters = 200;
  bool record_history = false;

  double n_mid() const { return 0.5 * (n_lo + n_hi); }

  void validate() const {
    if (!(n_lo > 1.0) || !(n_hi > n_lo)) throw Error(ErrorCode::DomainError, "n box must satisfy 1 < n_lo < n_hi");
    if (!(inner_tol > 0.0) || !(outer_tol > 0.0)) throw Error(ErrorCode::DomainError, "tolerances must be positive");
    if (max_outer_iters < 1 || multistart_count < 1 || max_inner_iters < 1) {
      throw Error(ErrorCode::DomainError, "iteration and multistart counts must be positive");
    }
    if (!(zenith_floor > 0.0 && zenith_floor < kHalfPi)) throw Error(ErrorCode::DomainError, "bad zenith floor");
  }

  /// Deterministic multistart seeds: midpoints of equal slices of the n box.
  std::vector<double> n_seeds() const {
    std::vector<double> seeds;
    for (int k = 0; k < multistart_count; ++k) seeds.push_back(n_lo + (k + 0.5) * (n_hi - n_lo) / multistart_count);
    return seeds;
  }
};

// ---------------------------------------------------------------------------
// zenith inversion

namespace detail {

// Bisection for model(theta) == target on [lo, hi], `increasing` giving the
// branch direction.
template <typename Model>
double bisect_zenith(const Model& model, double target, double lo, double hi, bool increasing) {
  for (int i = 0; i < 200 && hi - lo > 1e-16; ++i) {
    const double mid = 0.5 * (lo + hi);
    const bool below = model(mid) < target;
    if (below == increasing) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Numeric inversion of the specular (Eq. 3) or diffuse (Eq. 4) DoP model.
inline double estimate_zenith_naive(double dop, RefractiveIndex n, ReflectionModel model,
                                    ZenithBranch branch = ZenithBranch::below_brewster) {
  const double nv = n.value();
  if (!(dop >= 0.0)) throw Error(ErrorCode::OutOfRange, "DoP must be non-negative");
  if (model == ReflectionModel::specular) {
    if (dop > 1.0) throw Error(ErrorCode::OutOfRange, "specular DoP cannot exceed 1");
    const double brewster = std::atan(nv);
    if (dop >= 1.0) return brewster;
    auto f = [nv](double t) { return specular_dop_model(t, nv); };
    if (branch == ZenithBranch::below_brewster) {
      if (dop == 0.0) return 0.0;
      return detail::bisect_zenith(f, dop, 0.0, brewster, true);
    }
    return detail::bisect_zenith(f, dop, brewster, std::nextafter(kHalfPi, 0.0), false);
  }
  const double max_dop = diffuse_dop_model(kHalfPi, nv);
  if (dop > max_dop) {
    throw Error(ErrorCode::OutOfRange, "diffuse DoP " + std::to_string(dop) + " exceeds model maximum " +
                                           std::to_string(max_dop) + " for this index");
  }
  if (dop == 0.0) return 0.0;
  return detail::bisect_zenith([nv](double t) { return diffuse_dop_model(t, nv); }, dop, 0.0, kHalfPi, true);
}

/// Specular inversion on whichever Brewster branch lies closer to `reference`.
inline double invert_specular_nearest(double dop, double n, double reference) {
  const RefractiveIndex idx(n);
  const double a = estimate_zenith_naive(dop, idx, ReflectionModel::specular, ZenithBranch::below_brewster);
  const double b = estimate_zenith_naive(dop, idx, ReflectionModel::specular, ZenithBranch::above_brewster);
  return std::abs(a - reference) <= std::abs(b - reference) ? a : b;
}

// ---------------------------------------------------------------------------
// residuals

/// Component i is i_d - f(n, theta_i, I_i, rho_i).
inline std::vector<double> residual_vector(const PointTrack& track, double i_d, double n,
                                           const SolverConfig& cfg = {}) {
  std::vector<double> r;
  r.reserve(track.observations.size());
  for (const auto& o : track.observations) {
    if (!(o.zenith >= cfg.zenith_floor)) {
      throw Error(ErrorCode::DomainError, "zenith " + std::to_string(o.zenith) + " below the configured floor");
    }
    r.push_back(i_d - diffuse_from_view(o.intensity, o.dop, o.zenith, RefractiveIndex(n)));
  }
  return r;
}

namespace detail {

struct FixedZenithResiduals {
  std::span<const double> intensity;
  std::span<const double> dop;
  std::span<const double> zenith;

  std::size_t size() const { return intensity.size(); }

  template <typename T>
  void operator()(const std::array<T, 2>& x, T* out) const {
    for (std::size_t i = 0; i < intensity.size(); ++i) {
      out[i] = x[0] - diffuse_from_view_model(intensity[i], dop[i], T(zenith[i]), x[1]);
    }
  }
};

// Parameters: diffuse, index, and the reference-camera zenith/azimuth of the
// shared world normal. Residuals: one Eq. 8 term per view, then one
// azimuth-plane term per view (the normal must lie in the plane spanned by
// the view direction and the measured polarization phase).
struct JointResiduals {
  std::span<const double> intensity;
  std::span<const double> dop;
  std::span<const Vec3> view_dir;
  std::span<const Vec3> phase_plane;
  Mat3 ref_to_world;
  double zenith_floor;

  std::size_t size() const { return 2 * intensity.size(); }

  template <typename T>
  std::array<T, 3> normal(const T& zenith, const T& azimuth) const {
    using std::sin, std::cos;
    const T s = sin(zenith);
    const std::array<T, 3> c{s * cos(azimuth), s * sin(azimuth), cos(zenith)};
    std::array<T, 3> w;
    for (int r = 0; r < 3; ++r) w[r] = ref_to_world(r, 0) * c[0] + ref_to_world(r, 1) * c[1] + ref_to_world(r, 2) * c[2];
    return w;
  }

  template <typename T>
  T view_zenith(const std::array<T, 3>& nw, std::size_t i) const {
    using std::acos;
    const T c = nw[0] * view_dir[i].x() + nw[1] * view_dir[i].y() + nw[2] * view_dir[i].z();
    const double cv = value_of(c);
    if (cv >= std::cos(zenith_floor)) return T(zenith_floor);
    if (cv <= 1e-6) return T(kHalfPi - 1e-6);
    return acos(c);
  }

  template <typename T>
  void operator()(const std::array<T, 4>& x, T* out) const {
    const auto nw = normal(x[2], x[3]);
    const std::size_t n = intensity.size();
    for (std::size_t i = 0; i < n; ++i) {
      const T theta = i == 0 ? x[2] : view_zenith(nw, i);
      out[i] = x[0] - diffuse_from_view_model(intensity[i], dop[i], theta, x[1]);
      const T along = nw[0] * phase_plane[i].x() + nw[1] * phase_plane[i].y() + nw[2] * phase_plane[i].z();
      out[n + i] = intensity[i] * along;
    }
  }
};

struct InnerSolution {
  double diffuse = 0.0;
  double index = 0.0;
  double cost = std::numeric_limits<double>::infinity();
  bool converged = false;
};

inline double mean_implied_diffuse(std::span<const double> intensity, std::span<const double> dop,
                                   std::span<const double> zenith, double n) {
  double s = 0.0;
  for (std::size_t i = 0; i < intensity.size(); ++i) s += diffuse_from_view_model(intensity[i], dop[i], zenith[i], n);
  return s / static_cast<double>(intensity.size());
}

}  // namespace detail

/// Eq. 9 at fixed zeniths: box-constrained LM over (I^d, n) from every n seed
/// (plus an optional warm start), keeping the lowest sum of squares.
inline detail::InnerSolution solve_fixed_zenith(std::span<const double> intensity, std::span<const double> dop,
                                                std::span<const double> zenith, const SolverConfig& cfg,
                                                const detail::InnerSolution* warm = nullptr) {
  const double i_cap = *std::min_element(intensity.begin(), intensity.end());
  double scale2 = 0.0;
  for (double v : intensity) scale2 += v * v;

  const detail::FixedZenithResiduals fn{intensity, dop, zenith};
  const Box<2> box{{0.0, cfg.n_lo}, {i_cap, cfg.n_hi}};
  LmOptions opts;
  opts.max_iterations = cfg.max_inner_iters;
  opts.cost_tol = cfg.inner_tol * cfg.inner_tol * scale2;

  std::vector<std::array<double, 2>> starts;
  if (warm) starts.push_back({warm->diffuse, warm->index});
  for (double n0 : cfg.n_seeds()) {
    double d0 = detail::mean_implied_diffuse(intensity, dop, zenith, n0);
    if (!std::isfinite(d0)) d0 = 0.5 * i_cap;
    starts.push_back({std::clamp(d0, 0.0, i_cap), n0});
  }

  detail::InnerSolution best;
  for (const auto& s : starts) {
    const auto r = levenberg_marquardt<2>(fn, s, box, opts);
    if (r.cost < best.cost) best = {r.x[0], r.x[1], r.cost, r.converged};
    if (best.cost <= opts.cost_tol) break;
  }
  return best;
}

namespace detail {

struct JointSolution {
  std::array<double, 4> x{};
  double cost = std::numeric_limits<double>::infinity();
  bool converged = false;
};

inline JointSolution solve_joint(const JointResiduals& fn, const std::vector<std::array<double, 4>>& starts,
                                 const Box<4>& box, const LmOptions& opts) {
  JointSolution best;
  for (const auto& s : starts) {
    const auto r = levenberg_marquardt<4>(fn, s, box, opts);
    if (r.cost < best.cost) best = {r.x, r.cost, r.converged};
    if (best.cost <= opts.cost_tol) break;
  }
  return best;
}

}  // namespace detail

/// Per-point separation: Eq. 9 solve, zenith refinement to a fixed point, and
/// final zeniths re-inverted from the corrected DoP rho * I / (I - I^d).
inline SeparationResult solve_point(const PointTrack& track, const SolverConfig& cfg) {
  cfg.validate();
  const auto& obs = track.observations;
  const std::size_t n_views = obs.size();
  if (n_views < 2) throw Error(ErrorCode::InsufficientViews, "a track needs at least two views");

  std::vector<double> intensity(n_views), dop(n_views), zenith(n_views);
  for (std::size_t i = 0; i < n_views; ++i) {
    if (!(obs[i].intensity > 0.0)) throw Error(ErrorCode::DomainError, "observation intensity must be positive");
    if (!(obs[i].dop >= 0.0 && obs[i].dop <= 1.0)) throw Error(ErrorCode::DomainError, "observation DoP outside [0, 1]");
    intensity[i] = obs[i].intensity;
    dop[i] = obs[i].dop;
    zenith[i] = std::clamp(obs[i].zenith, cfg.zenith_floor, kHalfPi - 1e-6);
  }

  SeparationResult result;
  auto record = [&](const std::vector<double>& z) {
    if (cfg.record_history) result.zenith_history.push_back(z);
  };
  record(zenith);

  // One polarized view pins only rho_spec(theta, n), a curve rather than a point.
  const auto polarized = std::count_if(dop.begin(), dop.end(), [&](double r) { return r >= cfg.degenerate_threshold; });
  if (polarized < 2) {
    result.diffuse = std::accumulate(intensity.begin(), intensity.end(), 0.0) / static_cast<double>(n_views);
    result.index = cfg.n_mid();
    result.zeniths = zenith;
    result.residual = 0.0;
    for (double v : intensity) result.residual += (result.diffuse - v) * (result.diffuse - v);
    result.status = SolveStatus::Degenerate;
    result.index_identified = false;
    result.message = "fewer than two views above the degenerate DoP threshold; n unidentifiable";
    return result;
  }

  auto inner = solve_fixed_zenith(intensity, dop, zenith, cfg);
  bool converged = false;
  int outer = 0;

  if (cfg.refinement == ZenithRefinement::none) {
    converged = inner.converged;
    outer = 1;
  } else if (cfg.refinement == ZenithRefinement::corrected_dop) {
    for (outer = 1; outer <= cfg.max_outer_iters; ++outer) {
      double delta = 0.0;
      for (std::size_t i = 0; i < n_views; ++i) {
        const double spec = intensity[i] - inner.diffuse;
        if (!(spec > 0.0)) continue;
        const double corrected = std::min(1.0, dop[i] * intensity[i] / spec);
        const double z = std::clamp(invert_specular_nearest(corrected, inner.index, zenith[i]), cfg.zenith_floor,
                                    kHalfPi - 1e-6);
        delta = std::max(delta, std::abs(z - zenith[i]));
        zenith[i] = z;
      }
      record(zenith);
      if (delta < cfg.outer_tol) {
        converged = true;
        break;
      }
      inner = solve_fixed_zenith(intensity, dop, zenith, cfg, &inner);
    }
    outer = std::min(outer, cfg.max_outer_iters);
  } else {
    std::vector<Vec3> view_dir(n_views), phase_plane(n_views);
    for (std::size_t i = 0; i < n_views; ++i) {
      const Mat3 to_world = obs[i].view_rotation.transpose();
      view_dir[i] = to_world * Vec3::UnitZ();
      // An unpolarized view carries no azimuth.
      phase_plane[i] = dop[i] < cfg.degenerate_threshold
                           ? Vec3::Zero()
                           : Vec3(to_world * Vec3(-std::sin(obs[i].phase), std::cos(obs[i].phase), 0.0));
    }
    const detail::JointResiduals fn{intensity, dop, view_dir, phase_plane, obs[0].view_rotation.transpose(),
                                    cfg.zenith_floor};
    const double i_cap = *std::min_element(intensity.begin(), intensity.end());
    double scale2 = 0.0;
    for (double v : intensity) scale2 += v * v;
    const Box<4> box{{0.0, cfg.n_lo, cfg.zenith_floor, -1e6}, {i_cap, cfg.n_hi, kHalfPi - 1e-4, 1e6}};
    LmOptions opts;
    opts.max_iterations = cfg.max_inner_iters;
    opts.cost_tol = cfg.inner_tol * cfg.inner_tol * scale2;

    const double azimuth0 = obs[0].azimuth;
    auto seed = [&](double n0, double zen0) {
      zen0 = std::clamp(zen0, cfg.zenith_floor, kHalfPi - 0.02);
      const auto nw = fn.normal(zen0, azimuth0);
      std::vector<double> z(n_views);
      for (std::size_t i = 0; i < n_views; ++i) z[i] = i == 0 ? zen0 : fn.view_zenith(nw, i);
      double d0 = detail::mean_implied_diffuse(intensity, dop, z, n0);
      if (!std::isfinite(d0)) d0 = 0.5 * i_cap;
      return std::array<double, 4>{std::clamp(d0, 0.0, i_cap), n0, zen0, azimuth0};
    };

    std::vector<std::array<double, 4>> starts;
    starts.push_back({std::clamp(inner.diffuse, 0.0, i_cap), inner.index, zenith[0], azimuth0});
    for (double n0 : cfg.n_seeds()) {
      for (auto branch : {ZenithBranch::below_brewster, ZenithBranch::above_brewster}) {
        const double z0 = estimate_zenith_naive(std::min(dop[0], 1.0), RefractiveIndex(n0), ReflectionModel::specular, branch);
        starts.push_back(seed(n0, z0));
      }
    }

    for (outer = 1; outer <= cfg.max_outer_iters; ++outer) {
      const auto joint = detail::solve_joint(fn, starts, box, opts);
      const auto nw = fn.normal(joint.x[2], joint.x[3]);
      result.normal = Vec3(nw[0], nw[1], nw[2]).normalized();
      double delta = 0.0;
      for (std::size_t i = 0; i < n_views; ++i) {
        const double z = i == 0 ? joint.x[2] : fn.view_zenith(nw, i);
        delta = std::max(delta, std::abs(z - zenith[i]));
        zenith[i] = z;
      }
      record(zenith);
      const detail::InnerSolution warm{joint.x[0], joint.x[1], joint.cost, joint.converged};
      inner = solve_fixed_zenith(intensity, dop, zenith, cfg, &warm);
      if (delta < cfg.outer_tol) {
        converged = joint.converged;
        break;
      }
      starts = {{inner.diffuse, inner.index, joint.x[2], joint.x[3]}};
    }
    outer = std::min(outer, cfg.max_outer_iters);
  }

  result.diffuse = inner.diffuse;
  result.index = inner.index;
  result.residual = inner.cost;
  result.iterations = outer;
  result.index_identified = true;

  // Final zeniths from the corrected DoP, on the branch nearest the solved ones.
  result.zeniths = zenith;
  for (std::size_t i = 0; i < n_views; ++i) {
    const double spec = intensity[i] - result.diffuse;
    const double corrected = spec > 0.0 ? dop[i] * intensity[i] / spec : std::numeric_limits<double>::infinity();
    if (!(corrected <= 1.0)) {
      result.zenith_consistent = false;
      continue;
    }
    result.zeniths[i] = invert_specular_nearest(corrected, result.index, zenith[i]);
  }
  const double ref_spec = intensity[0] - result.diffuse;
  if (!(ref_spec > 0.0 && dop[0] * intensity[0] <= ref_spec)) {
    result.status = SolveStatus::Failed;
    result.message = "corrected reference DoP exceeds 1; no valid separation found";
    return result;
  }
  result.status = converged ? SolveStatus::Converged : SolveStatus::MaxIter;
  return result;
}

struct BatchOptions {
  std::size_t threads = 0;  // 0: POLARSFP_THREADS or hardware concurrency
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Independent solve_point over a batch. Per-track errors become Failed
/// results; the batch itself never aborts.
inline std::vector<SeparationResult> solve_image(std::span<const PointTrack> tracks, const SolverConfig& cfg,
                                                 const BatchOptions& opts = {}) {
  std::vector<SeparationResult> results(tracks.size());
  constexpr std::size_t kBlock = 256;
  const std::size_t blocks = (tracks.size() + kBlock - 1) / kBlock;
  std::atomic<std::size_t> done{0};
  parallel_for(blocks, opts.threads, [&](std::size_t b) {
    const std::size_t end = std::min(tracks.size(), (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) {
      try {
        results[i] = solve_point(tracks[i], cfg);
      } catch (const std::exception& e) {
        results[i] = SeparationResult{};
        results[i].status = SolveStatus::Failed;
        results[i].message = e.what();
      }
    }
    const std::size_t d = done.fetch_add(end - b * kBlock) + (end - b * kBlock);
    if (opts.progress) opts.progress(d, tracks.size());
  });
  return results;
}

}  // namespace polarsfp
