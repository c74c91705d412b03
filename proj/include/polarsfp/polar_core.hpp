#pragma once

// Closed-form polarization physics: the polarizer sinusoid, degree of
// polarization, and the Fresnel specular / diffuse / mixed DoP models.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "polarsfp/dual.hpp"
#include "polarsfp/error.hpp"

namespace polarsfp {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kHalfPi = std::numbers::pi / 2.0;

/// Wraps an angle into [0, period).
inline double wrap_angle(double angle, double period) {
  double r = std::fmod(angle, period);
  if (r < 0.0) r += period;
  if (r >= period) r = 0.0;
  return r;
}

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Refractive index of a solid dielectric; always strictly greater than one.
class RefractiveIndex {
 public:
  explicit RefractiveIndex(double n) : n_(n) {
    if (!(n > 1.0) || !std::isfinite(n)) {
      throw Error(ErrorCode::DomainError, "refractive index must be finite and > 1, got " + std::to_string(n));
    }
  }
  double value() const noexcept { return n_; }

 private:
  double n_;
};

struct PolarizerSample {
  double angle = 0.0;  // polarizer rotation, radians
  double intensity = 0.0;
};

/// Per-pixel sinusoid I(a) = (i_max+i_min)/2 + (i_max-i_min)/2 cos(2(a - phase)).
struct SinusoidFit {
  double i_max = 0.0;
  double i_min = 0.0;
  double phase = 0.0;       // [0, pi)
  bool degenerate = false;  // amplitude below threshold; phase forced to 0
  bool clamped = false;     // noise drove i_min (or i_max) below zero

  double mean() const { return 0.5 * (i_max + i_min); }
  double amplitude() const { return 0.5 * (i_max - i_min); }
};

/// Linear (offset, cos 2a, sin 2a) coefficients of a sinusoid. Interpolating
/// these is equivalent to interpolating the raw polarizer images.
struct SinusoidCoefficients {
  double offset = 0.0;
  double c = 0.0;
  double s = 0.0;
};

/// Dichromatic split of one observation under the rotation-averaged
/// convention: total = diffuse + specular, specular = (spec_max + spec_min)/2.
struct IntensityDecomposition {
  double total = 0.0;
  double diffuse = 0.0;
  double specular = 0.0;
  double spec_max = 0.0;
  double spec_min = 0.0;
};

inline IntensityDecomposition decompose(double diffuse, double specular, double specular_polarization) {
  IntensityDecomposition d;
  d.diffuse = diffuse;
  d.specular = specular;
  d.total = diffuse + specular;
  d.spec_max = specular * (1.0 + specular_polarization);
  d.spec_min = specular * (1.0 - specular_polarization);
  return d;
}

struct FitOptions {
  double degenerate_threshold = 1e-4;  // on (i_max - i_min)/(i_max + i_min)
};

inline double eval_sinusoid(const SinusoidFit& fit, double pol_angle) {
  return 0.5 * (fit.i_max + fit.i_min) + 0.5 * (fit.i_max - fit.i_min) * std::cos(2.0 * (pol_angle - fit.phase));
}

inline SinusoidCoefficients to_coefficients(const SinusoidFit& fit) {
  const double a = fit.amplitude();
  return {fit.mean(), a * std::cos(2.0 * fit.phase), a * std::sin(2.0 * fit.phase)};
}

inline SinusoidFit from_coefficients(const SinusoidCoefficients& k, const FitOptions& opts = {}) {
  const double amplitude = std::hypot(k.c, k.s);
  SinusoidFit fit;
  fit.i_max = k.offset + amplitude;
  fit.i_min = k.offset - amplitude;
  fit.phase = wrap_angle(0.5 * std::atan2(k.s, k.c), kPi);
  if (fit.i_min < 0.0) {
    fit.i_min = 0.0;
    fit.clamped = true;
  }
  if (fit.i_max < 0.0) {
    fit.i_max = 0.0;
    fit.clamped = true;
  }
  const double sum = fit.i_max + fit.i_min;
  if (sum <= 0.0 || (fit.i_max - fit.i_min) < opts.degenerate_threshold * sum) {
    fit.degenerate = true;
    fit.phase = 0.0;
  }
  return fit;
}

/// Least-squares sinusoid through >= 3 polarizer samples whose angles are
/// distinct modulo pi. Exactly three samples are interpolated.
inline SinusoidFit fit_sinusoid(std::span<const PolarizerSample> samples, const FitOptions& opts = {}) {
  std::vector<double> distinct;
  for (const auto& s : samples) {
    if (!std::isfinite(s.angle) || !std::isfinite(s.intensity)) {
      throw Error(ErrorCode::DomainError, "non-finite polarizer sample");
    }
    const double a = wrap_angle(s.angle, kPi);
    const bool seen = std::any_of(distinct.begin(), distinct.end(), [&](double b) {
      const double d = std::abs(a - b);
      return std::min(d, kPi - d) < 1e-9;
    });
    if (!seen) distinct.push_back(a);
  }
  if (distinct.size() < 3) {
    throw Error(ErrorCode::DegenerateSampling,
                "need >= 3 polarizer angles distinct modulo pi, got " + std::to_string(distinct.size()));
  }

  Eigen::MatrixXd design(static_cast<Eigen::Index>(samples.size()), 3);
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    design(r, 0) = 1.0;
    design(r, 1) = std::cos(2.0 * samples[i].angle);
    design(r, 2) = std::sin(2.0 * samples[i].angle);
    rhs(r) = samples[i].intensity;
  }
  const Eigen::Vector3d x = design.colPivHouseholderQr().solve(rhs);
  return from_coefficients({x(0), x(1), x(2)}, opts);
}

inline double degree_of_polarization(const SinusoidFit& fit) {
  const double sum = fit.i_max + fit.i_min;
  if (!(sum > 0.0)) throw Error(ErrorCode::ZeroIntensity, "i_max + i_min must be positive");
  return (fit.i_max - fit.i_min) / sum;
}

inline double brewster_angle(RefractiveIndex n) { return std::atan(n.value()); }

// Unchecked model evaluations, templated so the solvers can differentiate them.

template <typename T>
T specular_dop_model(const T& theta, const T& n) {
  using std::sin, std::tan, std::sqrt;
  const T s = sin(theta);
  const T t = tan(theta);
  return (2.0 * s * t * sqrt(n * n - s * s)) / (n * n - 2.0 * s * s + t * t);
}

template <typename T>
T diffuse_dop_model(const T& theta, const T& n) {
  using std::sin, std::cos, std::sqrt;
  const T s = sin(theta);
  const T s2 = s * s;
  const T a = n - 1.0 / n;
  const T b = n + 1.0 / n;
  return (a * a * s2) / (2.0 + 2.0 * n * n - b * b * s2 + 4.0 * cos(theta) * sqrt(n * n - s2));
}

/// Eq. 8's f: diffuse intensity implied by one view, I (1 - rho / rho_spec).
template <typename T>
T diffuse_from_view_model(double intensity, double rho, const T& theta, const T& n) {
  return intensity * (1.0 - rho / specular_dop_model(theta, n));
}

inline double specular_dop(double theta, RefractiveIndex n) {
  if (!(theta >= 0.0 && theta < kHalfPi)) {
    throw Error(ErrorCode::DomainError, "specular zenith must lie in [0, pi/2), got " + std::to_string(theta));
  }
  return std::clamp(specular_dop_model(theta, n.value()), 0.0, 1.0);
}

inline double diffuse_dop(double theta, RefractiveIndex n) {
  if (!(theta >= 0.0 && theta <= kHalfPi)) {
    throw Error(ErrorCode::DomainError, "diffuse zenith must lie in [0, pi/2], got " + std::to_string(theta));
  }
  return diffuse_dop_model(theta, n.value());
}

/// Measured DoP of a point reflecting both components; only the specular
/// part is polarized.
inline double mixed_dop(double theta, RefractiveIndex n, double diffuse, double total) {
  if (!(total > 0.0)) throw Error(ErrorCode::DomainError, "total intensity must be positive");
  if (diffuse < 0.0 || diffuse > total) {
    throw Error(ErrorCode::DomainError, "diffuse intensity must lie in [0, total]");
  }
  return specular_dop(theta, n) * (total - diffuse) / total;
}

/// Inverts the mixed model for the diffuse intensity at a known zenith. The
/// result is not clamped: inconsistent inputs give negative values.
inline double diffuse_from_view(double intensity, double rho, double theta, RefractiveIndex n) {
  if (!(theta > 0.0 && theta < kHalfPi)) {
    throw Error(ErrorCode::DomainError, "zenith must lie strictly inside (0, pi/2)");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorCode::DomainError, "DoP must lie in [0, 1]");
  return diffuse_from_view_model(intensity, rho, theta, n.value());
}

}  // namespace polarsfp
