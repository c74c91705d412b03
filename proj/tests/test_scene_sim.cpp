#include <gtest/gtest.h>

#include <cmath>

#include "polarsfp/scene_sim.hpp"

using namespace polarsfp;

namespace {

SceneSpec small_sphere(int size = 65) {
  SceneSpec s;
  s.width = s.height = size;
  s.views = camera_ring(3, deg2rad(10.0));
  return s;
}

SinusoidFit fit_pixel(const PolarizedStack& st, int x, int y) {
  std::vector<PolarizerSample> samples;
  for (std::size_t j = 0; j < st.images.size(); ++j) samples.push_back({st.angles[j], st.images[j](x, y)});
  return fit_sinusoid(samples);
}

}  // namespace

TEST(CameraRing, SingleViewIsIdentity) {
  const auto v = camera_ring(1, 0.7);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_TRUE(v[0].rotation.isApprox(Mat3::Identity(), 1e-15));
  EXPECT_EQ(v[0].polarizer_angles.size(), 3u);
}

TEST(CameraRing, TenDegreeIncrementsAboutVertical) {
  const auto v = camera_ring(3, deg2rad(10.0));
  for (int k = 0; k < 3; ++k) {
    const Vec3 d = view_direction(v[k].rotation);
    EXPECT_NEAR(d.y(), 0.0, 1e-15);
    EXPECT_NEAR(rad2deg(std::atan2(d.x(), d.z())), 10.0 * k, 1e-12);
    EXPECT_TRUE(is_rotation(v[k].rotation));
  }
}

TEST(CameraRing, QuarterTurnZenithsFollowGeometry) {
  auto s = small_sphere(101);
  s.views = camera_ring(2, kHalfPi);
  const auto out = render_views(s, 0);
  const auto& map = out.correspondences.coords[0][1];
  int checked = 0;
  for (int y = 0; y < s.height; y += 7) {
    for (int x = 0; x < s.width; x += 7) {
      if (!out.truth.views[0].mask(x, y) || map(x, y, 2) == 0.0) continue;
      const Vec3 n(out.truth.views[0].normals(x, y, 0), out.truth.views[0].normals(x, y, 1),
                   out.truth.views[0].normals(x, y, 2));
      EXPECT_NEAR(out.truth.views[0].zenith(x, y), std::acos(std::clamp(n.z(), -1.0, 1.0)), 1e-12);
      // the second camera sits on world +x
      const double expected = std::acos(std::clamp(n.x(), -1.0, 1.0));
      const Vec3 hit = detail::trace(s.geometry, s.views[0].rotation, detail::pixel_to_plane(s, x, y).x(),
                                     detail::pixel_to_plane(s, x, y).y())
                           ->point;
      const Vec3 cam = s.views[1].rotation * hit;
      const auto seen = detail::trace(s.geometry, s.views[1].rotation, cam.x(), cam.y());
      ASSERT_TRUE(seen);
      EXPECT_NEAR(angle_between(seen->normal, view_direction(s.views[1].rotation)), expected, 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Render, CenterPixelIsUnpolarized) {
  const auto s = small_sphere(65);
  const auto out = render_views(s, 0);
  const int c = 32;
  EXPECT_NEAR(out.truth.views[0].zenith(c, c), 0.0, 1e-12);
  EXPECT_NEAR(degree_of_polarization(fit_pixel(out.stacks[0], c, c)), 0.0, 1e-12);
}

TEST(Render, LambertianStacksAreFlat) {
  auto s = small_sphere();
  s.material.specular_strength = 0.0;
  const auto out = render_views(s, 0);
  for (const auto& st : out.stacks) {
    EXPECT_EQ(st.images[0], st.images[1]);
    EXPECT_EQ(st.images[1], st.images[2]);
  }
}

TEST(Render, NoiselessDopMatchesMixedModel) {
  auto s = small_sphere();
  s.material.specular_exponent = 3.0;
  const auto out = render_views(s, 0);
  std::size_t checked = 0;
  for (std::size_t k = 0; k < out.stacks.size(); ++k) {
    const auto& gt = out.truth.views[k];
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        if (!gt.mask(x, y) || gt.zenith(x, y) >= kHalfPi - 1e-6) continue;
        const double total = gt.diffuse(x, y) + gt.specular(x, y);
        if (total <= 0.0) continue;
        const auto fit = fit_pixel(out.stacks[k], x, y);
        EXPECT_NEAR(fit.mean(), total, 1e-12);
        EXPECT_NEAR(degree_of_polarization(fit),
                    mixed_dop(gt.zenith(x, y), RefractiveIndex(s.material.n_true), gt.diffuse(x, y), total), 1e-9);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 3000u);
}

TEST(Render, SpecularPhaseIsNormalAzimuth) {
  const auto s = small_sphere();
  const auto out = render_views(s, 0);
  const auto& gt = out.truth.views[1];
  for (int y = 5; y < s.height; y += 9) {
    for (int x = 5; x < s.width; x += 9) {
      if (!gt.mask(x, y) || gt.specular(x, y) <= 0.0 || gt.zenith(x, y) < 0.05) continue;
      const auto fit = fit_pixel(out.stacks[1], x, y);
      const double d = std::abs(fit.phase - wrap_angle(gt.azimuth(x, y), kPi));
      EXPECT_LT(std::min(d, kPi - d), 1e-9);
    }
  }
}

TEST(Render, ViolationAddsShiftedDiffusePolarization) {
  auto s = small_sphere();
  s.material.specular_strength = 0.0;
  s.model_violation = 1.0;
  const auto out = render_views(s, 0);
  const auto& gt = out.truth.views[0];
  for (int y = 3; y < s.height; y += 6) {
    for (int x = 3; x < s.width; x += 6) {
      if (!gt.mask(x, y) || gt.diffuse(x, y) <= 0.0 || gt.zenith(x, y) < 0.1) continue;
      const auto fit = fit_pixel(out.stacks[0], x, y);
      EXPECT_NEAR(degree_of_polarization(fit), diffuse_dop(gt.zenith(x, y), RefractiveIndex(1.5)), 1e-9);
      const double d = std::abs(fit.phase - wrap_angle(gt.azimuth(x, y) + kHalfPi, kPi));
      EXPECT_LT(std::min(d, kPi - d), 1e-9);
    }
  }
}

TEST(RenderProperty, DiffuseIsViewIndependent) {
  const auto s = small_sphere(81);
  std::size_t checked = 0;
  for (int y = 0; y < s.height; y += 3) {
    for (int x = 0; x < s.width; x += 3) {
      const Vec3 p = detail::pixel_to_plane(s, x, y);
      const auto hit = detail::trace(s.geometry, s.views[0].rotation, p.x(), p.y());
      if (!hit) continue;
      const double ref = detail::shade(s, *hit, s.views[0].rotation).diffuse;
      for (std::size_t k = 1; k < s.views.size(); ++k) {
        if (hit->normal.dot(view_direction(s.views[k].rotation)) <= 0.0) continue;
        EXPECT_NEAR(detail::shade(s, *hit, s.views[k].rotation).diffuse, ref, 1e-12);
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 500u);
}

TEST(RenderProperty, TruthZenithIsAngleToView) {
  const auto s = small_sphere();
  const auto out = render_views(s, 0);
  for (std::size_t k = 0; k < out.truth.views.size(); ++k) {
    const auto& gt = out.truth.views[k];
    const Vec3 v = view_direction(s.views[k].rotation);
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        if (!gt.mask(x, y)) continue;
        const Vec3 n(gt.normals(x, y, 0), gt.normals(x, y, 1), gt.normals(x, y, 2));
        ASSERT_NEAR(n.norm(), 1.0, 1e-12);
        ASSERT_NEAR(gt.zenith(x, y), std::acos(std::clamp(n.dot(v), -1.0, 1.0)), 1e-7);
        ASSERT_NEAR(gt.zenith(x, y), angle_between(n, v), 1e-12);
      }
    }
  }
}

TEST(RenderProperty, DeterministicAcrossRunsAndThreads) {
  auto s = small_sphere();
  s.noise_sigma = 0.02;
  const auto a = render_views(s, 17, 1);
  const auto b = render_views(s, 17, 8);
  for (std::size_t k = 0; k < a.stacks.size(); ++k) {
    for (std::size_t j = 0; j < a.stacks[k].images.size(); ++j) EXPECT_EQ(a.stacks[k].images[j], b.stacks[k].images[j]);
    for (std::size_t t = 0; t < a.stacks.size(); ++t) {
      EXPECT_EQ(a.correspondences.coords[k][t], b.correspondences.coords[k][t]);
    }
  }
  const auto c = render_views(s, 18, 1);
  EXPECT_NE(a.stacks[0].images[0], c.stacks[0].images[0]);
}

TEST(RenderProperty, NoiseLevelMatchesSigma) {
  auto s = small_sphere(128);
  const auto clean = render_views(s, 0);
  for (double sigma : {0.005, 0.02}) {
    s.noise_sigma = sigma;
    const auto noisy = render_views(s, 3);
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < noisy.stacks.size(); ++k) {
      for (std::size_t j = 0; j < noisy.stacks[k].images.size(); ++j) {
        const auto& a = noisy.stacks[k].images[j].data();
        const auto& b = clean.stacks[k].images[j].data();
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (b[i] <= 0.0) continue;
          const double r = a[i] / b[i] - 1.0;
          sum += r;
          sq += r * r;
          ++n;
        }
      }
    }
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    EXPECT_NEAR(sd, sigma, 0.05 * sigma);
  }
}

TEST(Render, CorrespondencesReprojectToSamePoint) {
  const auto s = small_sphere();
  const auto out = render_views(s, 0);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t t = 0; t < 3; ++t) {
      const auto& map = out.correspondences.coords[r][t];
      for (int y = 0; y < s.height; y += 4) {
        for (int x = 0; x < s.width; x += 4) {
          if (map(x, y, 2) == 0.0) continue;
          EXPECT_TRUE(out.truth.views[r].mask(x, y));
          if (r == t) {
            EXPECT_EQ(map(x, y, 0), x);
            EXPECT_EQ(map(x, y, 1), y);
            continue;
          }
          EXPECT_GE(map(x, y, 0), 0.0);
          EXPECT_LE(map(x, y, 0), s.width - 1.0);
          const Vec3 pr = detail::pixel_to_plane(s, x, y);
          const Vec3 pt = detail::pixel_to_plane(s, map(x, y, 0), map(x, y, 1));
          const auto a = detail::trace(s.geometry, s.views[r].rotation, pr.x(), pr.y());
          const auto b = detail::trace(s.geometry, s.views[t].rotation, pt.x(), pt.y());
          ASSERT_TRUE(a && b);
          EXPECT_LT((a->point - b->point).norm(), 1e-9);
        }
      }
    }
  }
}

TEST(Render, TiltedPlaneHasUniformZenith) {
  SceneSpec s;
  s.width = s.height = 32;
  s.geometry = Plane{Vec3(0.0, std::sin(0.4), std::cos(0.4)), 0.0};
  s.views = camera_ring(1, 0.0);
  const auto out = render_views(s, 0);
  EXPECT_EQ(count(out.truth.views[0].mask), 32u * 32u);
  for (double z : out.truth.views[0].zenith.data()) EXPECT_NEAR(z, 0.4, 1e-12);
}

TEST(Render, SphereOutOfFrameIsEmptyMask) {
  auto s = small_sphere();
  s.geometry = Sphere{Vec3(10.0, 0.0, 0.0), 1.0};
  try {
    render_views(s, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyMask);
  }
}

TEST(Render, InvalidScenesRejected) {
  auto s = small_sphere();
  s.views.clear();
  EXPECT_THROW(validate(s), Error);
  s = small_sphere();
  s.views[0].polarizer_angles = {0.0, kPi, 0.5};
  EXPECT_THROW(validate(s), Error);
  s = small_sphere();
  s.views[1].rotation(0, 0) = 2.0;
  EXPECT_THROW(validate(s), Error);
  s = small_sphere();
  s.geometry = Sphere{Vec3::Zero(), 0.0};
  EXPECT_THROW(validate(s), Error);
  s = small_sphere();
  s.model_violation = 1.5;
  EXPECT_THROW(validate(s), Error);
}
