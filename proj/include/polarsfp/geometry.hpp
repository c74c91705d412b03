#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

namespace polarsfp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Unit normal in a camera frame (+z toward the camera) from its azimuth and
/// zenith angles.
inline Vec3 compose_normal(double azimuth, double zenith) {
  const double s = std::sin(zenith);
  return {s * std::cos(azimuth), s * std::sin(azimuth), std::cos(zenith)};
}

/// World -> camera rotation of a camera orbiting the vertical (y) axis by
/// `angle`, looking at the origin.
inline Mat3 orbit_rotation(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix().transpose();
}

/// Direction from the scene toward an orthographic camera, in world frame.
inline Vec3 view_direction(const Mat3& world_to_camera) { return world_to_camera.transpose() * Vec3::UnitZ(); }

inline bool is_rotation(const Mat3& r, double tol = 1e-9) {
  return (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol && std::abs(r.determinant() - 1.0) < tol;
}

inline double angle_between(const Vec3& a, const Vec3& b) {
  // atan2 form stays accurate near 0 and pi, unlike acos of the dot product
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace polarsfp
