#pragma once

// Shared test helpers: forward-generated point tracks and a brute-force
// grid-refinement minimizer of the per-point least-squares cost.

#include <algorithm>
#include <limits>
#include <vector>

#include "polarsfp/mixed_solver.hpp"

namespace polarsfp::testing {

/// Noiseless track at known zeniths; spec_fraction[i] = I^s / I in view i.
inline PointTrack make_track(double diffuse, double n, const std::vector<double>& zenith,
                             const std::vector<double>& spec_fraction) {
  PointTrack t;
  for (std::size_t i = 0; i < zenith.size(); ++i) {
    ViewObservation o;
    o.intensity = diffuse / (1.0 - spec_fraction[i]);
    o.zenith = zenith[i];
    o.dop = mixed_dop(zenith[i], RefractiveIndex(n), diffuse, o.intensity);
    t.observations.push_back(o);
  }
  return t;
}

struct GridMinimum {
  double diffuse = 0.0;
  double index = 0.0;
  double cost = std::numeric_limits<double>::infinity();
};

inline double track_cost(const PointTrack& t, double diffuse, double n) {
  double s = 0.0;
  for (const auto& o : t.observations) {
    const double r = diffuse - diffuse_from_view_model(o.intensity, o.dop, o.zenith, n);
    s += r * r;
  }
  return s;
}

/// Evaluates the cost on a dense grid over the whole box, then repeatedly
/// re-grids a shrinking window around the incumbent.
inline GridMinimum grid_oracle(const PointTrack& t, const SolverConfig& cfg) {
  double d_cap = std::numeric_limits<double>::infinity();
  for (const auto& o : t.observations) d_cap = std::min(d_cap, o.intensity);
  double d_lo = 0.0, d_hi = d_cap, n_lo = cfg.n_lo, n_hi = cfg.n_hi;
  GridMinimum best;
  int steps = 400;
  for (int round = 0; round < 60; ++round) {
    const double dd = (d_hi - d_lo) / steps;
    const double dn = (n_hi - n_lo) / steps;
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; j <= steps; ++j) {
        const double d = d_lo + i * dd;
        const double n = n_lo + j * dn;
        const double c = track_cost(t, d, n);
        if (c < best.cost) best = {d, n, c};
      }
    }
    if (dd < 1e-14 && dn < 1e-14) break;
    d_lo = std::max(0.0, best.diffuse - 4 * dd);
    d_hi = std::min(d_cap, best.diffuse + 4 * dd);
    n_lo = std::max(cfg.n_lo, best.index - 4 * dn);
    n_hi = std::min(cfg.n_hi, best.index + 4 * dn);
    steps = 40;
  }
  return best;
}

}  // namespace polarsfp::testing
