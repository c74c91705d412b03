#pragma once

// Polarized stacks -> sinusoid fits -> (tracks -> mixed solver) -> per-view
// normal maps, plus the uncorrected single-model SfP baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polarsfp/error.hpp"
#include "polarsfp/geometry.hpp"
#include "polarsfp/image.hpp"
#include "polarsfp/mixed_solver.hpp"
#include "polarsfp/parallel.hpp"
#include "polarsfp/polar_core.hpp"
#include "polarsfp/scene_sim.hpp"

namespace polarsfp {

enum class PipelineMode { uncorrected_specular, uncorrected_diffuse, corrected_mixed };
enum class AzimuthConvention { specular_phase, diffuse_shift };
enum class Disambiguation { convex_outward, none };

inline std::string_view to_string(PipelineMode m) {
  switch (m) {
    case PipelineMode::uncorrected_specular: return "uncorrected-specular";
    case PipelineMode::uncorrected_diffuse: return "uncorrected-diffuse";
    case PipelineMode::corrected_mixed: return "corrected-mixed";
  }
  return "unknown";
}

struct PipelineConfig {
  PipelineMode mode = PipelineMode::corrected_mixed;
  double assumed_n = 1.5;  // uncorrected modes only
  AzimuthConvention azimuth_convention = AzimuthConvention::specular_phase;
  Disambiguation disambiguation = Disambiguation::convex_outward;
  SolverConfig solver;
  FitOptions fit;
  std::size_t threads = 0;
};

/// Per-pixel unit normals in the world frame.
struct NormalMap {
  ImageD normals;  // 3 channels
  Mask mask;
  std::string frame = "world";
};

/// Pixel status codes stored in ViewEstimate::status.
enum class PixelStatus : std::uint8_t {
  background = 0,
  converged = 1,
  max_iter = 2,
  degenerate = 3,
  failed = 4,
  no_correspondence = 5,
  out_of_range = 6,
};

struct ViewEstimate {
  NormalMap normals;
  ImageD zenith;
  ImageD azimuth;
  ImageD intensity;  // rotation-averaged measured intensity
  ImageD dop;        // measured DoP
  ImageD diffuse;
  Mask diffuse_mask;
  ImageD index;
  Mask index_mask;
  Mask status;  // PixelStatus
};

struct Diagnostics {
  std::size_t foreground = 0;  // pixels with positive measured intensity
  std::size_t converged = 0;
  std::size_t max_iter = 0;
  std::size_t degenerate = 0;
  std::size_t failed = 0;
  std::size_t no_correspondence = 0;
  std::size_t out_of_range = 0;
  std::size_t clamped_fits = 0;
  std::size_t inconsistent_zenith = 0;

  double degenerate_fraction() const {
    return foreground ? static_cast<double>(degenerate) / static_cast<double>(foreground) : 0.0;
  }
  double nonconverged_fraction() const {
    const std::size_t attempted = converged + max_iter + failed;
    return attempted ? static_cast<double>(max_iter + failed) / static_cast<double>(attempted) : 0.0;
  }
};

struct PipelineResult {
  std::vector<ViewEstimate> views;
  Diagnostics diagnostics;
};

/// Chooses between phase and phase + pi. convex_outward keeps the candidate
/// whose image-plane direction points away from the mask centroid (camera
/// frame: x right, y up, so azimuth pi/2 points toward the top of the image).
inline ImageD disambiguate_azimuth(const ImageD& phase, const Mask& mask, Disambiguation policy) {
  if (!phase.same_shape(mask)) throw Error(ErrorCode::ShapeMismatch, "phase and mask sizes differ");
  ImageD out = phase;
  if (policy == Disambiguation::none) return out;
  double cx = 0.0, cy = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(x, y)) continue;
      cx += x;
      cy += y;
      ++n;
    }
  }
  if (n == 0) return out;
  cx /= static_cast<double>(n);
  cy /= static_cast<double>(n);
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(x, y)) continue;
      const double dx = x - cx;
      const double dy = cy - y;
      const double p = phase(x, y);
      if (std::cos(p) * dx + std::sin(p) * dy < 0.0) out(x, y) = p + kPi;
    }
  }
  return out;
}

namespace detail {

struct ViewFits {
  ImageD coeffs;  // offset, c, s
  Mask foreground;
};

inline ViewFits fit_view(const PolarizedStack& stack, std::size_t threads) {
  if (stack.images.size() != stack.angles.size() || stack.images.size() < 3) {
    throw Error(ErrorCode::DegenerateSampling, "a stack needs >= 3 images with one angle each");
  }
  const int w = stack.images.front().width();
  const int h = stack.images.front().height();
  for (const auto& img : stack.images) {
    if (!img.same_shape(w, h)) throw Error(ErrorCode::ShapeMismatch, "stack images differ in size");
  }
  // Validates the angle set once; the per-pixel solve reuses its pseudo-inverse.
  std::vector<PolarizerSample> probe;
  for (double a : stack.angles) probe.push_back({a, 1.0});
  (void)fit_sinusoid(probe);

  const auto m = static_cast<Eigen::Index>(stack.angles.size());
  Eigen::MatrixXd design(m, 3);
  for (Eigen::Index i = 0; i < m; ++i) {
    design(i, 0) = 1.0;
    design(i, 1) = std::cos(2.0 * stack.angles[static_cast<std::size_t>(i)]);
    design(i, 2) = std::sin(2.0 * stack.angles[static_cast<std::size_t>(i)]);
  }
  const Eigen::MatrixXd pinv = design.completeOrthogonalDecomposition().pseudoInverse();

  ViewFits out{ImageD(w, h, 3), Mask(w, h)};
  parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    Eigen::VectorXd samples(m);
    for (int x = 0; x < w; ++x) {
      for (Eigen::Index i = 0; i < m; ++i) samples(i) = stack.images[static_cast<std::size_t>(i)](x, y);
      const Eigen::Vector3d k = pinv * samples;
      for (int c = 0; c < 3; ++c) out.coeffs(x, y, c) = k(c);
      out.foreground(x, y) = k(0) > 0.0 ? 1 : 0;
    }
  });
  return out;
}

inline SinusoidCoefficients coeffs_at(const ImageD& img, int x, int y) {
  return {img(x, y, 0), img(x, y, 1), img(x, y, 2)};
}

// Bilinear sample of the sinusoid coefficients. Every contributing neighbour
// must be foreground, and they must agree on being polarized: across that
// boundary the polarized signal has a kink that interpolation smears.
inline std::optional<SinusoidCoefficients> sample_bilinear(const ViewFits& v, double x, double y,
                                                           const FitOptions& fit) {
  const int w = v.coeffs.width();
  const int h = v.coeffs.height();
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, w - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  const std::array<std::tuple<int, int, double>, 4> taps{{{x0, y0, (1 - fx) * (1 - fy)},
                                                          {x1, y0, fx * (1 - fy)},
                                                          {x0, y1, (1 - fx) * fy},
                                                          {x1, y1, fx * fy}}};
  SinusoidCoefficients k;
  int polarized = 0;
  int used = 0;
  for (const auto& [tx, ty, wt] : taps) {
    if (wt <= 0.0) continue;
    if (!v.foreground(tx, ty)) return std::nullopt;
    polarized += !from_coefficients(coeffs_at(v.coeffs, tx, ty), fit).degenerate;
    ++used;
    k.offset += wt * v.coeffs(tx, ty, 0);
    k.c += wt * v.coeffs(tx, ty, 1);
    k.s += wt * v.coeffs(tx, ty, 2);
  }
  if (polarized != 0 && polarized != used) return std::nullopt;
  return k;
}

inline ViewEstimate blank_estimate(int w, int h) {
  ViewEstimate e;
  e.normals.normals = ImageD(w, h, 3);
  e.normals.mask = Mask(w, h);
  e.zenith = ImageD(w, h);
  e.azimuth = ImageD(w, h);
  e.intensity = ImageD(w, h);
  e.dop = ImageD(w, h);
  e.diffuse = ImageD(w, h);
  e.diffuse_mask = Mask(w, h);
  e.index = ImageD(w, h);
  e.index_mask = Mask(w, h);
  e.status = Mask(w, h);
  return e;
}

inline void set_normal(ViewEstimate& e, int x, int y, const Mat3& rotation, double azimuth, double zenith) {
  const Vec3 n = (rotation.transpose() * compose_normal(azimuth, zenith)).normalized();
  for (int c = 0; c < 3; ++c) e.normals.normals(x, y, c) = n[c];
  e.normals.mask(x, y) = 1;
  e.zenith(x, y) = zenith;
}

}  // namespace detail

/// Runs the configured SfP variant on every view. Normal maps are produced
/// for every view; in corrected mode each view serves in turn as the track
/// reference, using `correspondences.coords[r][t]`.
inline PipelineResult run_pipeline(std::span<const PolarizedStack> stacks, const CorrespondenceMap& correspondences,
                                   const PipelineConfig& cfg) {
  if (stacks.empty()) throw Error(ErrorCode::InsufficientViews, "no polarized stacks");
  const bool corrected = cfg.mode == PipelineMode::corrected_mixed;
  if (corrected && stacks.size() < 2) {
    throw Error(ErrorCode::InsufficientViews, "corrected mode needs >= 2 views, got " + std::to_string(stacks.size()));
  }
  if (corrected) {
    cfg.solver.validate();
    if (correspondences.view_count() != stacks.size()) {
      throw Error(ErrorCode::ShapeMismatch, "correspondence map does not cover every view");
    }
  }
  const RefractiveIndex assumed(cfg.assumed_n);

  std::vector<detail::ViewFits> fits;
  for (const auto& s : stacks) fits.push_back(detail::fit_view(s, cfg.threads));
  const int w = fits.front().coeffs.width();
  const int h = fits.front().coeffs.height();
  for (const auto& f : fits) {
    if (!f.coeffs.same_shape(w, h)) throw Error(ErrorCode::ShapeMismatch, "views differ in image size");
  }
  if (corrected && (correspondences.width != w || correspondences.height != h)) {
    throw Error(ErrorCode::ShapeMismatch, "correspondence map size differs from the images");
  }

  PipelineResult result;
  auto& diag = result.diagnostics;
  std::vector<ImageD> azimuths;
  for (std::size_t k = 0; k < stacks.size(); ++k) {
    auto est = detail::blank_estimate(w, h);
    ImageD phase(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!fits[k].foreground(x, y)) continue;
        const auto fit = from_coefficients(detail::coeffs_at(fits[k].coeffs, x, y), cfg.fit);
        diag.foreground += 1;
        diag.clamped_fits += fit.clamped;
        est.intensity(x, y) = fit.mean();
        est.dop(x, y) = fit.mean() > 0.0 ? degree_of_polarization(fit) : 0.0;
        double p = fit.phase;
        if (cfg.azimuth_convention == AzimuthConvention::diffuse_shift) p = wrap_angle(p + kHalfPi, kPi);
        phase(x, y) = p;
      }
    }
    est.azimuth = disambiguate_azimuth(phase, fits[k].foreground, cfg.disambiguation);
    azimuths.push_back(est.azimuth);
    result.views.push_back(std::move(est));
  }

  if (!corrected) {
    const auto model = cfg.mode == PipelineMode::uncorrected_specular ? ReflectionModel::specular : ReflectionModel::diffuse;
    for (std::size_t k = 0; k < stacks.size(); ++k) {
      auto& est = result.views[k];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!fits[k].foreground(x, y)) continue;
          const double rho = est.dop(x, y);
          if (rho < cfg.fit.degenerate_threshold) {
            est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::degenerate);
            ++diag.degenerate;
            continue;
          }
          try {
            const double z = estimate_zenith_naive(rho, assumed, model, cfg.solver.branch);
            detail::set_normal(est, x, y, stacks[k].rotation, est.azimuth(x, y), z);
            est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::converged);
            ++diag.converged;
          } catch (const Error&) {
            est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::out_of_range);
            ++diag.out_of_range;
          }
        }
      }
    }
    return result;
  }

  const RefractiveIndex seed_index(cfg.solver.n_mid());
  for (std::size_t r = 0; r < stacks.size(); ++r) {
    auto& est = result.views[r];
    std::vector<PointTrack> tracks;
    std::vector<std::pair<int, int>> where;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!fits[r].foreground(x, y)) continue;
        PointTrack track;
        track.point_id = static_cast<std::int64_t>(y) * w + x;
        bool all_degenerate = true;
        for (std::size_t t = 0; t < stacks.size(); ++t) {
          std::optional<SinusoidCoefficients> k;
          if (t == r) {
            k = detail::coeffs_at(fits[r].coeffs, x, y);
          } else {
            const auto& map = correspondences.coords[r][t];
            if (map(x, y, 2) == 0.0) continue;
            k = detail::sample_bilinear(fits[t], map(x, y, 0), map(x, y, 1), cfg.fit);
          }
          if (!k) continue;
          const auto fit = from_coefficients(*k, cfg.fit);
          if (!(fit.mean() > 0.0)) continue;
          ViewObservation o;
          o.intensity = fit.mean();
          o.dop = degree_of_polarization(fit);
          o.phase = fit.phase;
          o.azimuth = t == r ? azimuths[r](x, y) : fit.phase;
          o.view_rotation = stacks[t].rotation;
          o.zenith = estimate_zenith_naive(std::min(o.dop, 1.0), seed_index, ReflectionModel::specular);
          all_degenerate = all_degenerate && o.dop < cfg.solver.degenerate_threshold;
          if (t == r) {
            track.observations.insert(track.observations.begin(), o);
          } else {
            track.observations.push_back(o);
          }
        }
        // Without polarized light in the reference view its zenith is unobservable.
        const bool reference_degenerate =
            track.observations.empty() || track.observations.front().dop < cfg.solver.degenerate_threshold;
        if (all_degenerate || reference_degenerate) {
          est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::degenerate);
          ++diag.degenerate;
          continue;
        }
        if (track.observations.size() < 2) {
          est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::no_correspondence);
          ++diag.no_correspondence;
          continue;
        }
        tracks.push_back(std::move(track));
        where.emplace_back(x, y);
      }
    }

    BatchOptions batch;
    batch.threads = cfg.threads;
    const auto solved = solve_image(tracks, cfg.solver, batch);
    for (std::size_t i = 0; i < solved.size(); ++i) {
      const auto [x, y] = where[i];
      const auto& s = solved[i];
      switch (s.status) {
        case SolveStatus::Degenerate:
          est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::degenerate);
          ++diag.degenerate;
          continue;
        case SolveStatus::Failed:
          est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::failed);
          ++diag.failed;
          continue;
        case SolveStatus::Converged:
          est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::converged);
          ++diag.converged;
          break;
        case SolveStatus::MaxIter:
          est.status(x, y) = static_cast<std::uint8_t>(PixelStatus::max_iter);
          ++diag.max_iter;
          break;
      }
      diag.inconsistent_zenith += !s.zenith_consistent;
      detail::set_normal(est, x, y, stacks[r].rotation, est.azimuth(x, y), s.zeniths.front());
      est.diffuse(x, y) = s.diffuse;
      est.diffuse_mask(x, y) = 1;
      est.index(x, y) = s.index;
      est.index_mask(x, y) = 1;
    }
  }
  return result;
}

struct Metrics {
  double normal_mse = 0.0;
  double mean_angular_error_deg = 0.0;
  double index_mae = std::numeric_limits<double>::quiet_NaN();  // NaN: not estimated
  double diffuse_rel_error = std::numeric_limits<double>::quiet_NaN();
  std::size_t normal_pixels = 0;
  std::size_t index_pixels = 0;
  std::size_t diffuse_pixels = 0;
};

namespace detail {

struct MetricSums {
  double sq = 0.0, ang = 0.0, idx = 0.0, diff_abs = 0.0, diff_ref = 0.0;
  std::size_t n = 0, n_idx = 0, n_diff = 0;

  void add(const ViewEstimate& e, const GroundTruthView& gt) {
    const auto& nm = e.normals;
    if (!nm.normals.same_shape(gt.normals) || !nm.mask.same_shape(gt.mask)) {
      throw Error(ErrorCode::ShapeMismatch, "estimate and ground truth differ in size");
    }
    for (int y = 0; y < gt.mask.height(); ++y) {
      for (int x = 0; x < gt.mask.width(); ++x) {
        if (!gt.mask(x, y)) continue;
        if (nm.mask(x, y)) {
          const Vec3 a(nm.normals(x, y, 0), nm.normals(x, y, 1), nm.normals(x, y, 2));
          const Vec3 b(gt.normals(x, y, 0), gt.normals(x, y, 1), gt.normals(x, y, 2));
          sq += (a - b).squaredNorm();
          ang += rad2deg(angle_between(a, b));
          ++n;
        }
        if (!e.index_mask.empty() && e.index_mask(x, y)) {
          idx += std::abs(e.index(x, y) - gt.index(x, y));
          ++n_idx;
        }
        if (!e.diffuse_mask.empty() && e.diffuse_mask(x, y)) {
          diff_abs += std::abs(e.diffuse(x, y) - gt.diffuse(x, y));
          diff_ref += std::abs(gt.diffuse(x, y));
          ++n_diff;
        }
      }
    }
  }

  Metrics finish() const {
    if (n == 0) throw Error(ErrorCode::EmptyIntersection, "no pixel is valid in both estimate and ground truth");
    Metrics m;
    m.normal_mse = sq / static_cast<double>(n);
    m.mean_angular_error_deg = ang / static_cast<double>(n);
    m.normal_pixels = n;
    if (n_idx) m.index_mae = idx / static_cast<double>(n_idx);
    m.index_pixels = n_idx;
    if (n_diff && diff_ref > 0.0) m.diffuse_rel_error = diff_abs / diff_ref;
    m.diffuse_pixels = n_diff;
    return m;
  }
};

}  // namespace detail

/// Normal MSE is the mean squared vector difference |n_hat - n|^2; angular
/// error is averaged in degrees; diffuse error is sum |dI| / sum I over the
/// pixels where both exist.
inline Metrics evaluate(const ViewEstimate& estimate, const GroundTruthView& gt) {
  detail::MetricSums s;
  s.add(estimate, gt);
  return s.finish();
}

inline Metrics evaluate(const NormalMap& normals, const GroundTruthView& gt) {
  ViewEstimate e;
  e.normals = normals;
  return evaluate(e, gt);
}

/// Pools every view's pixels.
inline Metrics evaluate(std::span<const ViewEstimate> estimates, const GroundTruth& gt) {
  if (estimates.size() != gt.views.size()) throw Error(ErrorCode::ShapeMismatch, "view counts differ");
  detail::MetricSums s;
  for (std::size_t k = 0; k < estimates.size(); ++k) s.add(estimates[k], gt.views[k]);
  return s.finish();
}

}  // namespace polarsfp
