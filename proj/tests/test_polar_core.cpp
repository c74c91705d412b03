#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "polarsfp/polar_core.hpp"

using namespace polarsfp;

namespace {

// Values computed offline with 50-digit mpmath and frozen here.
constexpr double kSpecular45 = 0.8314794192830981;
constexpr double kDiffuse45 = 0.04398316218763183;
constexpr double kMixed45 = 0.4157397096415490;
constexpr double kDiffuseFromView = 0.5000477578165233;

std::array<PolarizerSample, 3> standard_samples(const SinusoidFit& f) {
  std::array<PolarizerSample, 3> s{};
  const double angles[] = {0.0, kPi / 4.0, kPi / 2.0};
  for (int i = 0; i < 3; ++i) s[i] = {angles[i], eval_sinusoid(f, angles[i])};
  return s;
}

void expect_error(ErrorCode code, auto&& fn) {
  try {
    fn();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace

TEST(Sinusoid, EvaluatesClosedForm) {
  EXPECT_DOUBLE_EQ(eval_sinusoid({1.0, 1.0, 0.7}, 1.234), 1.0);
  EXPECT_DOUBLE_EQ(eval_sinusoid({2.0, 0.0, 0.0}, 0.0), 2.0);
  EXPECT_NEAR(eval_sinusoid({2.0, 0.0, 0.0}, kHalfPi), 0.0, 1e-15);
}

TEST(Sinusoid, ThreeSampleExampleInterpolates) {
  const std::array<PolarizerSample, 3> s{{{0.0, 1.5}, {kPi / 4.0, 1.0}, {kPi / 2.0, 0.5}}};
  const auto fit = fit_sinusoid(s);
  EXPECT_NEAR(fit.i_max, 1.5, 1e-12);
  EXPECT_NEAR(fit.i_min, 0.5, 1e-12);
  EXPECT_NEAR(fit.phase, 0.0, 1e-12);
  EXPECT_FALSE(fit.degenerate);
}

// Brute-force minimizer of the squared misfit over a parameter grid, then a
// finer grid around the coarse winner.
TEST(Sinusoid, ExampleAgreesWithDenseGridSearch) {
  const std::array<PolarizerSample, 3> s{{{0.0, 1.5}, {kPi / 4.0, 1.0}, {kPi / 2.0, 0.5}}};
  auto misfit = [&](double hi, double lo, double ph) {
    double e = 0.0;
    for (const auto& p : s) {
      const double r = eval_sinusoid({hi, lo, ph}, p.angle) - p.intensity;
      e += r * r;
    }
    return e;
  };
  auto search = [&](double hc, double lc, double pc, double span, double pspan, int steps) {
    std::array<double, 4> best{1e300, 0, 0, 0};
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; j <= steps; ++j) {
        for (int k = 0; k <= steps; ++k) {
          const double hi = hc - span + 2.0 * span * i / steps;
          const double lo = lc - span + 2.0 * span * j / steps;
          const double ph = pc - pspan + 2.0 * pspan * k / steps;
          const double e = misfit(hi, lo, ph);
          if (e < best[0]) best = {e, hi, lo, ph};
        }
      }
    }
    return best;
  };
  auto coarse = search(1.0, 1.0, kPi / 2.0, 1.0, kPi / 2.0, 120);
  auto fine = search(coarse[1], coarse[2], coarse[3], 0.02, 0.05, 80);
  const double phase = wrap_angle(fine[3], kPi);
  EXPECT_NEAR(fine[1], 1.5, 1e-3);
  EXPECT_NEAR(fine[2], 0.5, 1e-3);
  EXPECT_NEAR(std::min(phase, kPi - phase), 0.0, 2e-3);
}

TEST(Sinusoid, ConstantSignalIsDegenerate) {
  const std::array<PolarizerSample, 3> s{{{0.0, 0.8}, {0.5, 0.8}, {1.1, 0.8}}};
  const auto fit = fit_sinusoid(s);
  EXPECT_NEAR(fit.i_max, 0.8, 1e-12);
  EXPECT_NEAR(fit.i_min, 0.8, 1e-12);
  EXPECT_TRUE(fit.degenerate);
  EXPECT_EQ(fit.phase, 0.0);
}

TEST(Sinusoid, CoincidentAnglesRejected) {
  const std::array<PolarizerSample, 3> s{{{0.0, 1.0}, {kPi, 1.2}, {0.3, 0.9}}};
  expect_error(ErrorCode::DegenerateSampling, [&] { fit_sinusoid(s); });
  const std::array<PolarizerSample, 2> two{{{0.0, 1.0}, {0.3, 0.9}}};
  expect_error(ErrorCode::DegenerateSampling, [&] { fit_sinusoid(two); });
}

TEST(Sinusoid, NegativeMinimumIsClampedAndFlagged) {
  const std::array<PolarizerSample, 3> s{{{0.0, 2.0}, {kPi / 4.0, 0.5}, {kPi / 2.0, -0.2}}};
  const auto fit = fit_sinusoid(s);
  EXPECT_TRUE(fit.clamped);
  EXPECT_EQ(fit.i_min, 0.0);
}

TEST(Sinusoid, OverdeterminedFitIsLeastSquares) {
  const SinusoidFit truth{1.7, 0.3, 2.1};
  std::vector<PolarizerSample> s;
  for (int k = 0; k < 8; ++k) s.push_back({k * kPi / 8.0, eval_sinusoid(truth, k * kPi / 8.0)});
  const auto fit = fit_sinusoid(s);
  EXPECT_NEAR(fit.i_max, truth.i_max, 1e-12);
  EXPECT_NEAR(fit.i_min, truth.i_min, 1e-12);
  EXPECT_NEAR(fit.phase, truth.phase, 1e-12);
}

TEST(SinusoidProperty, RoundTripAtStandardAngles) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lo(0.0, 1.0), span(0.05, 2.0), ph(0.0, kPi);
  for (int i = 0; i < 2000; ++i) {
    const double i_min = lo(rng);
    const SinusoidFit truth{i_min + span(rng), i_min, ph(rng)};
    const auto fit = fit_sinusoid(standard_samples(truth));
    EXPECT_NEAR(fit.i_max, truth.i_max, 1e-9 * truth.i_max);
    EXPECT_NEAR(fit.i_min, truth.i_min, 1e-9 * std::max(truth.i_max, 1e-3));
    const double d = std::abs(fit.phase - truth.phase);
    EXPECT_LT(std::min(d, kPi - d), 1e-9);
  }
}

TEST(SinusoidProperty, RoundTripAtArbitraryWellPosedAngles) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const SinusoidFit truth{1.0 + u(rng), 0.2 * u(rng), kPi * u(rng)};
    const double a0 = kPi * u(rng);
    std::array<PolarizerSample, 3> s{};
    for (int k = 0; k < 3; ++k) {
      const double a = a0 + k * kPi / 3.0 + 0.2 * (u(rng) - 0.5);
      s[k] = {a, eval_sinusoid(truth, a)};
    }
    const auto fit = fit_sinusoid(s);
    EXPECT_NEAR(fit.i_max, truth.i_max, 1e-9 * truth.i_max);
    EXPECT_NEAR(fit.i_min, truth.i_min, 1e-9 * truth.i_max);
  }
}

TEST(SinusoidProperty, PeriodicAndPhaseAmbiguous) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int i = 0; i < 500; ++i) {
    const SinusoidFit f{1.3, 0.4, std::abs(u(rng))};
    SinusoidFit g = f;
    g.phase += kPi;
    const double a = u(rng);
    EXPECT_NEAR(eval_sinusoid(f, a), eval_sinusoid(f, a + kPi), 1e-12);
    EXPECT_NEAR(eval_sinusoid(f, a), eval_sinusoid(g, a), 1e-12);
    EXPECT_GE(eval_sinusoid(f, a), f.i_min - 1e-12);
    EXPECT_LE(eval_sinusoid(f, a), f.i_max + 1e-12);
  }
}

TEST(Dop, RatioOfExtremes) {
  EXPECT_EQ(degree_of_polarization({2.0, 2.0, 0.0}), 0.0);
  EXPECT_EQ(degree_of_polarization({1.0, 0.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(degree_of_polarization({3.0, 1.0, 0.0}), 0.5);
  expect_error(ErrorCode::ZeroIntensity, [] { degree_of_polarization({0.0, 0.0, 0.0}); });
}

TEST(Fresnel, SpecularAnchors) {
  for (double n : {1.1, 1.3, 1.5, 1.8, 2.0}) {
    const RefractiveIndex idx(n);
    EXPECT_NEAR(specular_dop(std::atan(n), idx), 1.0, 1e-12) << n;
    EXPECT_EQ(specular_dop(0.0, idx), 0.0);
    EXPECT_EQ(diffuse_dop(0.0, idx), 0.0);
  }
  EXPECT_NEAR(specular_dop(deg2rad(45.0), RefractiveIndex(1.5)), kSpecular45, 1e-12);
}

TEST(Fresnel, DiffuseValues) {
  EXPECT_NEAR(diffuse_dop(deg2rad(45.0), RefractiveIndex(1.5)), kDiffuse45, 1e-12);
  EXPECT_NEAR(diffuse_dop(0.9, RefractiveIndex(1.0 + 1e-12)), 0.0, 1e-20);
  EXPECT_NEAR(diffuse_dop(kHalfPi, RefractiveIndex(1.5)), 0.38461538461538464, 1e-12);
}

TEST(Fresnel, DomainChecks) {
  const RefractiveIndex n(1.5);
  expect_error(ErrorCode::DomainError, [&] { specular_dop(kHalfPi, n); });
  expect_error(ErrorCode::DomainError, [&] { specular_dop(-0.1, n); });
  expect_error(ErrorCode::DomainError, [&] { diffuse_dop(kHalfPi + 1e-9, n); });
  expect_error(ErrorCode::DomainError, [] { RefractiveIndex(1.0); });
  expect_error(ErrorCode::DomainError, [] { RefractiveIndex(std::nan("")); });
}

TEST(FresnelProperty, SpecularRisesToBrewsterThenFalls) {
  for (double n : {1.1, 1.3, 1.5, 1.8, 2.0, 2.5}) {
    const RefractiveIndex idx(n);
    const double b = std::atan(n);
    double prev = -1.0;
    for (int i = 0; i <= 2000; ++i) {
      const double v = specular_dop(b * i / 2000.0, idx);
      EXPECT_GT(v, prev);
      prev = v;
    }
    for (int i = 1; i < 2000; ++i) {
      const double v = specular_dop(b + (kHalfPi - b) * i / 2000.0, idx);
      EXPECT_LT(v, prev);
      prev = v;
    }
  }
}

TEST(FresnelProperty, DiffuseStrictlyIncreasing) {
  for (int j = 0; j <= 29; ++j) {
    const RefractiveIndex idx(1.05 + 1.45 * j / 29.0);
    double prev = -1.0;
    for (int i = 0; i <= 2000; ++i) {
      const double v = diffuse_dop(kHalfPi * i / 2000.0, idx);
      EXPECT_GT(v, prev);
      prev = v;
    }
  }
}

TEST(Mixed, ReducesToEndpoints) {
  const RefractiveIndex n(1.5);
  const double t = deg2rad(45.0);
  EXPECT_EQ(mixed_dop(t, n, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(mixed_dop(t, n, 0.0, 1.0), specular_dop(t, n));
  EXPECT_NEAR(mixed_dop(t, n, 0.5, 1.0), kMixed45, 1e-12);
  expect_error(ErrorCode::DomainError, [&] { mixed_dop(t, n, 1.1, 1.0); });
  expect_error(ErrorCode::DomainError, [&] { mixed_dop(t, n, 0.0, 0.0); });
}

TEST(DiffuseFromView, Examples) {
  const RefractiveIndex n(1.5);
  const double t = deg2rad(45.0);
  EXPECT_EQ(diffuse_from_view(0.7, 0.0, t, n), 0.7);
  EXPECT_NEAR(diffuse_from_view(0.7, specular_dop(t, n), t, n), 0.0, 1e-15);
  EXPECT_NEAR(diffuse_from_view(1.0, 0.4157, t, n), kDiffuseFromView, 1e-12);
  expect_error(ErrorCode::DomainError, [&] { diffuse_from_view(1.0, 0.1, 0.0, n); });
  expect_error(ErrorCode::DomainError, [&] { diffuse_from_view(1.0, 1.2, t, n); });
}

TEST(DiffuseFromView, InconsistentInputGoesNegative) {
  const RefractiveIndex n(1.5);
  const double t = deg2rad(30.0);
  EXPECT_LT(diffuse_from_view(1.0, std::min(1.0, 1.5 * specular_dop(t, n)), t, n), 0.0);
}

TEST(MixedProperty, InverseRecoversDiffuseAndNeverExceedsSpecular) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> th(deg2rad(5.0), deg2rad(85.0)), nn(1.1, 2.2), u(0.0, 1.0);
  for (int i = 0; i < 5000; ++i) {
    const double theta = th(rng);
    const RefractiveIndex n(nn(rng));
    const double total = 0.1 + 2.0 * u(rng);
    const double diffuse = total * u(rng);
    const double rho = mixed_dop(theta, n, diffuse, total);
    EXPECT_LE(rho, specular_dop(theta, n));
    EXPECT_NEAR(diffuse_from_view(total, rho, theta, n), diffuse, 1e-9 * total);
  }
}

TEST(Decompose, RotationAveragedSplit) {
  const auto d = decompose(0.4, 0.6, 0.5);
  EXPECT_DOUBLE_EQ(d.total, 1.0);
  EXPECT_DOUBLE_EQ(0.5 * (d.spec_max + d.spec_min), d.specular);
  EXPECT_DOUBLE_EQ((d.spec_max - d.spec_min) / (d.total * 2.0), 0.3);
}
