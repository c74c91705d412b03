#pragma once

// Analytic multiview polarimetric renderer: orthographic cameras, one distant
// unpolarized light, Lambertian diffuse plus a Phong specular lobe whose
// polarization follows the Fresnel specular DoP.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "polarsfp/error.hpp"
#include "polarsfp/geometry.hpp"
#include "polarsfp/image.hpp"
#include "polarsfp/parallel.hpp"
#include "polarsfp/polar_core.hpp"

namespace polarsfp {

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Points x with normal . x == offset.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
};

using Geometry = std::variant<Sphere, Plane>;

/// low + (high - low) * (0.5 + 0.5 sin(f x) sin(f y)) over world position.
struct SinusoidTexture {
  double low = 0.0;
  double high = 1.0;
  double frequency = 1.0;
};

/// A material channel: either a constant or a smooth spatial texture.
using Texture = std::variant<double, SinusoidTexture>;

inline double sample(const Texture& t, const Vec3& p) {
  if (const auto* c = std::get_if<double>(&t)) return *c;
  const auto& s = std::get<SinusoidTexture>(t);
  const double w = 0.5 + 0.5 * std::sin(s.frequency * p.x()) * std::sin(s.frequency * p.y());
  return s.low + (s.high - s.low) * w;
}

struct MaterialSpec {
  double n_true = 1.5;
  Texture diffuse_albedo = 0.5;
  Texture specular_strength = 0.5;
  double specular_exponent = 1.0;
};

struct LightSpec {
  Vec3 direction = Vec3::UnitZ();  // toward the light
  double intensity = 1.0;
};

struct ViewSpec {
  Mat3 rotation = Mat3::Identity();  // world -> camera
  std::vector<double> polarizer_angles{0.0, kPi / 4.0, kPi / 2.0};
};

struct SceneSpec {
  std::string name = "scene";
  Geometry geometry = Sphere{};
  MaterialSpec material;
  LightSpec light;
  std::vector<ViewSpec> views;
  int width = 256;
  int height = 256;
  double extent = 2.4;  // world width covered by the image
  double noise_sigma = 0.0;
  double model_violation = 0.0;

  double pixel_size() const { return extent / width; }
};

/// Throws DomainError describing the first violated invariant.
inline void validate(const SceneSpec& s) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::DomainError, m); };
  if (s.views.empty()) fail("scene needs >= 1 view");
  if (s.width <= 0 || s.height <= 0) fail("image size must be positive");
  if (!(s.extent > 0.0)) fail("extent must be positive");
  if (!(s.noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (!(s.model_violation >= 0.0 && s.model_violation <= 1.0)) fail("model_violation must lie in [0, 1]");
  if (!(s.material.n_true > 1.0)) fail("n_true must be > 1");
  if (!(s.material.specular_exponent > 0.0)) fail("specular_exponent must be > 0");
  if (!(s.light.direction.norm() > 0.0)) fail("light direction must be non-zero");
  if (const auto* sp = std::get_if<Sphere>(&s.geometry); sp && !(sp->radius > 0.0)) fail("sphere radius must be > 0");
  if (const auto* pl = std::get_if<Plane>(&s.geometry); pl && !(pl->normal.norm() > 0.0)) fail("plane normal must be non-zero");
  for (const auto& v : s.views) {
    if (!is_rotation(v.rotation, 1e-6)) fail("view rotation must be orthonormal with det +1");
    std::vector<double> distinct;
    for (double a : v.polarizer_angles) {
      const double w = wrap_angle(a, kPi);
      if (std::none_of(distinct.begin(), distinct.end(), [&](double b) {
            const double d = std::abs(w - b);
            return std::min(d, kPi - d) < 1e-9;
          })) {
        distinct.push_back(w);
      }
    }
    if (distinct.size() < 3) fail("each view needs >= 3 polarizer angles distinct modulo pi");
  }
}

/// Views orbiting the vertical axis by k * increment, k = 0..count-1.
inline std::vector<ViewSpec> camera_ring(int count, double increment) {
  std::vector<ViewSpec> views;
  for (int k = 0; k < count; ++k) {
    ViewSpec v;
    v.rotation = orbit_rotation(k * increment);
    views.push_back(v);
  }
  return views;
}

struct PolarizedStack {
  std::vector<ImageD> images;
  std::vector<double> angles;
  int view_index = 0;
  double exposure_scale = 1.0;
  Mat3 rotation = Mat3::Identity();  // camera metadata: world -> camera
};

struct GroundTruthView {
  ImageD normals;   // 3 channels, world frame
  ImageD zenith;    // angle(normal, this view's direction)
  ImageD azimuth;   // camera-frame azimuth of the normal
  ImageD diffuse;   // I^d
  ImageD specular;  // rotation-averaged I^s
  ImageD dop;       // noiseless measured DoP
  ImageD index;
  Mask mask;
};

struct GroundTruth {
  std::vector<GroundTruthView> views;
};

/// For reference view r and target view t, coords[r][t] holds the (x, y)
/// pixel position in t of the surface point seen at each pixel of r, and a
/// validity flag as third channel.
struct CorrespondenceMap {
  int width = 0;
  int height = 0;
  std::vector<std::vector<ImageD>> coords;

  std::size_t view_count() const { return coords.size(); }
};

struct RenderOutput {
  std::vector<PolarizedStack> stacks;
  GroundTruth truth;
  CorrespondenceMap correspondences;
};

namespace detail {

struct Hit {
  Vec3 point;
  Vec3 normal;
};

// Front-most intersection of the orthographic ray through camera-plane point
// (u, v) of the camera with the given rotation.
inline std::optional<Hit> trace(const Geometry& g, const Mat3& rotation, double u, double v) {
  const Mat3 to_world = rotation.transpose();
  const Vec3 dir = to_world * Vec3::UnitZ();  // toward the camera
  const Vec3 origin = to_world * Vec3(u, v, 0.0);
  if (const auto* s = std::get_if<Sphere>(&g)) {
    const Vec3 oc = origin - s->center;
    const double b = dir.dot(oc);
    const double c = oc.squaredNorm() - s->radius * s->radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double t = -b + std::sqrt(disc);
    const Vec3 p = origin + t * dir;
    return Hit{p, (p - s->center).normalized()};
  }
  const auto& pl = std::get<Plane>(g);
  const Vec3 n = pl.normal.normalized();
  const double offset = pl.offset / pl.normal.norm();
  const double denom = n.dot(dir);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = (offset - n.dot(origin)) / denom;
  return Hit{origin + t * dir, denom > 0.0 ? n : Vec3(-n)};
}

inline Vec3 pixel_to_plane(const SceneSpec& s, double x, double y) {
  const double px = s.pixel_size();
  return {(x + 0.5 - 0.5 * s.width) * px, (0.5 * s.height - y - 0.5) * px, 0.0};
}

inline Vec3 plane_to_pixel(const SceneSpec& s, const Vec3& cam) {
  const double px = s.pixel_size();
  return {cam.x() / px + 0.5 * s.width - 0.5, 0.5 * s.height - cam.y() / px - 0.5, 0.0};
}

struct Shading {
  double diffuse = 0.0;
  double specular = 0.0;
  double zenith = 0.0;
  double azimuth = 0.0;
  SinusoidCoefficients coeffs;
};

inline Shading shade(const SceneSpec& s, const Hit& hit, const Mat3& rotation) {
  const Vec3 view = rotation.transpose() * Vec3::UnitZ();
  const Vec3 light = s.light.direction.normalized();
  const Vec3 cam_normal = rotation * hit.normal;

  Shading out;
  out.zenith = angle_between(hit.normal, view);
  out.azimuth = std::atan2(cam_normal.y(), cam_normal.x());

  const double n_dot_l = hit.normal.dot(light);
  if (n_dot_l > 0.0) {
    out.diffuse = sample(s.material.diffuse_albedo, hit.point) * s.light.intensity * n_dot_l;
    const Vec3 mirror = 2.0 * n_dot_l * hit.normal - light;
    const double lobe = std::max(0.0, mirror.dot(view));
    out.specular = sample(s.material.specular_strength, hit.point) * s.light.intensity *
                   std::pow(lobe, s.material.specular_exponent);
  }

  const double n = s.material.n_true;
  const bool grazing = out.zenith >= kHalfPi - 1e-9;
  const double spec_dop = grazing ? 0.0 : specular_dop_model(out.zenith, n);
  const double diff_dop = diffuse_dop_model(std::min(out.zenith, kHalfPi), n);
  // Specular light peaks at the azimuth; the polarized part of the diffuse
  // light is shifted by pi/2, i.e. opposite sign in the cos/sin 2a basis.
  const double amplitude = spec_dop * out.specular - s.model_violation * diff_dop * out.diffuse;
  out.coeffs.offset = out.diffuse + out.specular;
  out.coeffs.c = amplitude * std::cos(2.0 * out.azimuth);
  out.coeffs.s = amplitude * std::sin(2.0 * out.azimuth);
  return out;
}

}  // namespace detail

/// Renders every view's polarizer stack with ground truth and analytic
/// correspondences. Deterministic in (scene, seed).
inline RenderOutput render_views(const SceneSpec& scene, std::uint64_t seed, std::size_t threads = 0) {
  validate(scene);
  const int w = scene.width;
  const int h = scene.height;
  const std::size_t n_views = scene.views.size();

  RenderOutput out;
  out.truth.views.resize(n_views);
  out.stacks.resize(n_views);
  std::vector<Image<double>> coeffs(n_views);

  for (std::size_t k = 0; k < n_views; ++k) {
    const Mat3& rot = scene.views[k].rotation;
    auto& gt = out.truth.views[k];
    gt.normals = ImageD(w, h, 3);
    gt.zenith = ImageD(w, h);
    gt.azimuth = ImageD(w, h);
    gt.diffuse = ImageD(w, h);
    gt.specular = ImageD(w, h);
    gt.dop = ImageD(w, h);
    gt.index = ImageD(w, h);
    gt.mask = Mask(w, h);
    coeffs[k] = ImageD(w, h, 3);

    parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t row) {
      const int y = static_cast<int>(row);
      for (int x = 0; x < w; ++x) {
        const Vec3 plane = detail::pixel_to_plane(scene, x, y);
        const auto hit = detail::trace(scene.geometry, rot, plane.x(), plane.y());
        if (!hit) continue;
        const auto sh = detail::shade(scene, *hit, rot);
        gt.mask(x, y) = 1;
        for (int c = 0; c < 3; ++c) gt.normals(x, y, c) = hit->normal[c];
        gt.zenith(x, y) = sh.zenith;
        gt.azimuth(x, y) = sh.azimuth;
        gt.diffuse(x, y) = sh.diffuse;
        gt.specular(x, y) = sh.specular;
        const double total = sh.coeffs.offset;
        gt.dop(x, y) = total > 0.0 ? std::hypot(sh.coeffs.c, sh.coeffs.s) / total : 0.0;
        gt.index(x, y) = scene.material.n_true;
        coeffs[k](x, y, 0) = sh.coeffs.offset;
        coeffs[k](x, y, 1) = sh.coeffs.c;
        coeffs[k](x, y, 2) = sh.coeffs.s;
      }
    });
    if (count(gt.mask) == 0) {
      throw Error(ErrorCode::EmptyMask, "geometry projects to zero pixels in view " + std::to_string(k));
    }

    auto& stack = out.stacks[k];
    stack.view_index = static_cast<int>(k);
    stack.rotation = rot;
    stack.angles = scene.views[k].polarizer_angles;
    for (double a : stack.angles) {
      ImageD img(w, h);
      const double ca = std::cos(2.0 * a);
      const double sa = std::sin(2.0 * a);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!gt.mask(x, y)) continue;
          img(x, y) = coeffs[k](x, y, 0) + coeffs[k](x, y, 1) * ca + coeffs[k](x, y, 2) * sa;
        }
      }
      stack.images.push_back(std::move(img));
    }
  }

  // Noise is drawn serially in (view, angle, row, column) order so the
  // output does not depend on the thread count.
  if (scene.noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, scene.noise_sigma);
    for (std::size_t k = 0; k < n_views; ++k) {
      for (auto& img : out.stacks[k].images) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            if (out.truth.views[k].mask(x, y)) img(x, y) *= 1.0 + gauss(rng);
          }
        }
      }
    }
  }

  // Correspondences: project each reference hit into every other view and
  // keep it if it is the front-most surface point there.
  auto& corr = out.correspondences;
  corr.width = w;
  corr.height = h;
  corr.coords.assign(n_views, std::vector<ImageD>(n_views));
  const double tol = 1e-7 * std::max(1.0, scene.extent);
  for (std::size_t r = 0; r < n_views; ++r) {
    for (std::size_t t = 0; t < n_views; ++t) {
      corr.coords[r][t] = ImageD(w, h, 3);
    }
    const Mat3& rot_r = scene.views[r].rotation;
    parallel_for(static_cast<std::size_t>(h), threads, [&](std::size_t row) {
      const int y = static_cast<int>(row);
      for (int x = 0; x < w; ++x) {
        if (!out.truth.views[r].mask(x, y)) continue;
        const Vec3 plane = detail::pixel_to_plane(scene, x, y);
        const auto hit = detail::trace(scene.geometry, rot_r, plane.x(), plane.y());
        for (std::size_t t = 0; t < n_views; ++t) {
          auto& map = corr.coords[r][t];
          if (t == r) {
            map(x, y, 0) = x;
            map(x, y, 1) = y;
            map(x, y, 2) = 1.0;
            continue;
          }
          const Mat3& rot_t = scene.views[t].rotation;
          const Vec3 cam = rot_t * hit->point;
          const auto seen = detail::trace(scene.geometry, rot_t, cam.x(), cam.y());
          if (!seen || (seen->point - hit->point).norm() > tol) continue;
          const Vec3 pix = detail::plane_to_pixel(scene, cam);
          if (pix.x() < 0.0 || pix.y() < 0.0 || pix.x() > w - 1 || pix.y() > h - 1) continue;
          map(x, y, 0) = pix.x();
          map(x, y, 1) = pix.y();
          map(x, y, 2) = 1.0;
        }
      }
    });
  }
  return out;
}

}  // namespace polarsfp
