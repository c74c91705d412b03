#pragma once

// False-color previews. Normals map to RGB as (n + 1) / 2 per channel;
// scalar maps use a linear gray ramp over a fixed range (DoP [0, 1],
// refractive index [1, 2.5], zenith [0, pi/2]). Invalid pixels are black.

#include <algorithm>
#include <cmath>
#include <string>

#include "polarsfp/error.hpp"
#include "polarsfp/image.hpp"
#include "polarsfp/polar_core.hpp"

namespace polarsfp {

struct Ramp {
  double lo = 0.0;
  double hi = 1.0;
};

inline constexpr Ramp kDopRamp{0.0, 1.0};
inline constexpr Ramp kIndexRamp{1.0, 2.5};
inline constexpr Ramp kZenithRamp{0.0, kHalfPi};

inline ImageF normal_rgb(const ImageD& normals, const Mask& mask) {
  if (normals.channels() != 3 || !normals.same_shape(mask)) {
    throw Error(ErrorCode::ShapeMismatch, "normal preview needs a 3-channel map and a matching mask");
  }
  ImageF out(normals.width(), normals.height(), 3);
  for (int y = 0; y < normals.height(); ++y) {
    for (int x = 0; x < normals.width(); ++x) {
      if (!mask(x, y)) continue;
      for (int c = 0; c < 3; ++c) out(x, y, c) = static_cast<float>(0.5 * (normals(x, y, c) + 1.0));
    }
  }
  return out;
}

inline ImageF ramp_gray(const ImageD& values, const Mask& mask, Ramp r) {
  if (!values.same_shape(mask)) throw Error(ErrorCode::ShapeMismatch, "ramp preview mask size differs");
  ImageF out(values.width(), values.height());
  for (int y = 0; y < values.height(); ++y) {
    for (int x = 0; x < values.width(); ++x) {
      if (!mask(x, y)) continue;
      out(x, y) = static_cast<float>(std::clamp((values(x, y) - r.lo) / (r.hi - r.lo), 0.0, 1.0));
    }
  }
  return out;
}

/// Binary PPM (P6) with 8-bit channels; gray images are replicated.
inline std::string encode_ppm(const ImageF& img) {
  if (img.channels() != 1 && img.channels() != 3) throw Error(ErrorCode::ShapeMismatch, "PPM needs 1 or 3 channels");
  std::string out = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.pixel_count() * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = img(x, y, img.channels() == 3 ? c : 0);
        const double q = std::isfinite(v) ? std::clamp(static_cast<double>(v), 0.0, 1.0) : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(q * 255.0))));
      }
    }
  }
  return out;
}

}  // namespace polarsfp
