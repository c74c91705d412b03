#pragma once

// Small dense box-constrained Levenberg-Marquardt. Jacobians come from
// forward-mode dual numbers, so the residual functor is written once as a
// template over its scalar type:
//
//   struct Residuals {
//     std::size_t size() const;
//     template <class T> void operator()(const std::array<T, P>& x, T* out) const;
//   };

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "polarsfp/dual.hpp"

namespace polarsfp {

struct LmOptions {
  int max_iterations = 100;
  double cost_tol = 0.0;       // stop once the sum of squares falls below this
  double rel_cost_tol = 1e-15; // relative decrease considered stagnation
  double step_tol = 1e-14;     // relative parameter step
  double gradient_tol = 1e-16; // projected gradient, infinity norm
};

template <std::size_t P>
struct LmResult {
  std::array<double, P> x{};
  double cost = 0.0;  // sum of squared residuals
  int iterations = 0;
  bool converged = false;
};

template <std::size_t P>
struct Box {
  std::array<double, P> lo{};
  std::array<double, P> hi{};

  std::array<double, P> clamp(std::array<double, P> x) const {
    for (std::size_t i = 0; i < P; ++i) x[i] = std::clamp(x[i], lo[i], hi[i]);
    return x;
  }
};

template <std::size_t P, typename Residuals>
double sum_of_squares(const Residuals& fn, const std::array<double, P>& x, std::vector<double>& buffer) {
  buffer.resize(fn.size());
  fn(x, buffer.data());
  double s = 0.0;
  for (double r : buffer) s += r * r;
  return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
}

template <std::size_t P, typename Residuals>
LmResult<P> levenberg_marquardt(const Residuals& fn, std::array<double, P> x0, const Box<P>& box,
                                const LmOptions& opts = {}) {
  using MatP = Eigen::Matrix<double, static_cast<int>(P), static_cast<int>(P)>;
  using VecP = Eigen::Matrix<double, static_cast<int>(P), 1>;

  const std::size_t m = fn.size();
  std::vector<Dual<P>> rd(m);
  std::vector<double> scratch(m);

  LmResult<P> out;
  out.x = box.clamp(x0);

  MatP jtj;
  VecP jtr;
  auto linearize = [&](const std::array<double, P>& x) {
    std::array<Dual<P>, P> xd;
    for (std::size_t i = 0; i < P; ++i) xd[i] = Dual<P>::variable(x[i], i);
    fn(xd, rd.data());
    jtj.setZero();
    jtr.setZero();
    double cost = 0.0;
    for (const auto& r : rd) {
      VecP g;
      for (std::size_t i = 0; i < P; ++i) g(static_cast<int>(i)) = r.d[i];
      jtj.noalias() += g * g.transpose();
      jtr.noalias() += r.v * g;
      cost += r.v * r.v;
    }
    return std::isfinite(cost) ? cost : std::numeric_limits<double>::infinity();
  };

  out.cost = linearize(out.x);
  double lambda = 1e-3;
  bool relinearize = false;

  for (int it = 0; it < opts.max_iterations; ++it) {
    out.iterations = it + 1;
    if (relinearize) {
      out.cost = linearize(out.x);
      relinearize = false;
    }
    if (!std::isfinite(out.cost)) break;
    if (out.cost <= opts.cost_tol) {
      out.converged = true;
      break;
    }

    // Variables pinned at a bound with the gradient pushing outward stay fixed.
    std::array<bool, P> free{};
    double projected_gradient = 0.0;
    for (std::size_t i = 0; i < P; ++i) {
      const double g = jtr(static_cast<int>(i));
      const bool at_lo = out.x[i] <= box.lo[i] && g > 0.0;
      const bool at_hi = out.x[i] >= box.hi[i] && g < 0.0;
      free[i] = !(at_lo || at_hi);
      if (free[i]) projected_gradient = std::max(projected_gradient, std::abs(g));
    }
    if (projected_gradient <= opts.gradient_tol) {
      out.converged = true;
      break;
    }

    bool accepted = false;
    while (!accepted) {
      MatP a = jtj;
      VecP b = -jtr;
      for (std::size_t i = 0; i < P; ++i) {
        const int ii = static_cast<int>(i);
        if (!free[i]) {
          a.row(ii).setZero();
          a.col(ii).setZero();
          a(ii, ii) = 1.0;
          b(ii) = 0.0;
        } else {
          a(ii, ii) += lambda * std::max(jtj(ii, ii), 1e-12);
        }
      }
      const VecP step = a.ldlt().solve(b);
      std::array<double, P> trial = out.x;
      for (std::size_t i = 0; i < P; ++i) trial[i] += step(static_cast<int>(i));
      trial = box.clamp(trial);

      double step_norm = 0.0;
      double x_norm = 0.0;
      for (std::size_t i = 0; i < P; ++i) {
        step_norm = std::max(step_norm, std::abs(trial[i] - out.x[i]));
        x_norm = std::max(x_norm, std::abs(out.x[i]));
      }

      const double trial_cost = sum_of_squares(fn, trial, scratch);
      if (trial_cost < out.cost) {
        const double decrease = out.cost - trial_cost;
        out.x = trial;
        out.cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        relinearize = true;
        if (decrease <= opts.rel_cost_tol * trial_cost || step_norm <= opts.step_tol * (x_norm + opts.step_tol)) {
          out.converged = true;
          return out;
        }
      } else {
        lambda *= 4.0;
        if (lambda > 1e16 || step_norm <= opts.step_tol * (x_norm + opts.step_tol)) {
          // No descent direction left inside the box: stationary point.
          out.converged = true;
          return out;
        }
      }
    }
  }
  return out;
}

}  // namespace polarsfp
