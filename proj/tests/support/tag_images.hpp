#pragma once

// Rendered tag images and corner bookkeeping shared by the detector checks.

#include <algorithm>
#include <array>
#include <cmath>

#include "fidreg/geometry.hpp"
#include "fidreg/projection.hpp"

namespace fixtures {

using fidreg::IntensityImage;
using fidreg::Vec2;

/// Canonical corners of a fronto-parallel tag in a mirrored image (u falls
/// with marker x, v rises with marker y).
inline std::array<Vec2, 4> fronto(double cu, double cv, double half) {
  return {Vec2(cu + half, cv - half), Vec2(cu - half, cv - half), Vec2(cu - half, cv + half),
          Vec2(cu + half, cv + half)};
}

/// Canonical corners seen by a mirrored pinhole camera (f = depth = 600 px)
/// after rolling the tag about its normal and tilting it about its vertical axis.
inline std::array<Vec2, 4> oblique(double cu, double cv, double side_px, double tilt, double roll = 0.0) {
  const double f = 600.0, depth = 600.0;
  const fidreg::Mat3 r =
      (Eigen::AngleAxisd(tilt, fidreg::Vec3::UnitY()) * Eigen::AngleAxisd(roll, fidreg::Vec3::UnitZ()))
          .toRotationMatrix();
  const double h = side_px / 2.0;
  const std::array<Vec2, 4> canon = {Vec2(-h, -h), Vec2(h, -h), Vec2(h, h), Vec2(-h, h)};
  std::array<Vec2, 4> out;
  for (int k = 0; k < 4; ++k) {
    const fidreg::Vec3 x = r * fidreg::Vec3(canon[k].x(), canon[k].y(), 0.0) + fidreg::Vec3(0, 0, depth);
    out[k] = Vec2(cu - f * x.x() / x.z(), cv + f * x.y() / x.z());
  }
  return out;
}

inline double max_corner_error(const std::array<Vec2, 4>& a, const std::array<Vec2, 4>& b) {
  double e = 0.0;
  for (int k = 0; k < 4; ++k) e = std::max(e, (a[k] - b[k]).norm());
  return e;
}

/// Quarter turn of the pixel grid: (u, v) -> (H-1-v, u).
inline IntensityImage rotate_image(const IntensityImage& img) {
  IntensityImage out(img.height(), img.width());
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      const int nu = img.height() - 1 - v, nv = u;
      out.set(nu, nv, img.intensity(u, v), 1.0, out.index(nu, nv));
    }
  }
  return out;
}

inline Vec2 rotate_point(const Vec2& p, int height) { return {height - 1 - p.y(), p.x()}; }

/// `b` over `a` wherever `b` differs from its background.
inline IntensityImage overlay(const IntensityImage& a, const IntensityImage& b, double b_background) {
  IntensityImage out = a;
  for (int v = 0; v < a.height(); ++v) {
    for (int u = 0; u < a.width(); ++u) {
      if (b.intensity(u, v) != b_background) out.set_intensity(u, v, b.intensity(u, v));
    }
  }
  return out;
}

}  // namespace fixtures
