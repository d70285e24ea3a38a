#include "fidreg/projection.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "fidreg/errors.hpp"

namespace fidreg {

ProjectionParams ProjectionParams::covering(double theta_min, double theta_max, double phi_min,
                                            double phi_max, double alpha_a, double alpha_i) {
  ProjectionParams p;
  p.alpha_a = alpha_a;
  p.alpha_i = alpha_i;
  const int u_min = round_half_away(theta_min / alpha_a);
  const int u_max = round_half_away(theta_max / alpha_a);
  const int v_min = round_half_away(phi_min / alpha_i);
  const int v_max = round_half_away(phi_max / alpha_i);
  p.u_o = -u_min;
  p.v_o = -v_min;
  p.width = u_max - u_min + 1;
  p.height = v_max - v_min + 1;
  // offsets must sit inside the image; widen when the box excludes zero angle
  if (p.u_o < 0) {
    p.width += -p.u_o;
    p.u_o = 0;
  } else if (p.u_o >= p.width) {
    p.width = p.u_o + 1;
  }
  if (p.v_o < 0) {
    p.height += -p.v_o;
    p.v_o = 0;
  } else if (p.v_o >= p.height) {
    p.height = p.v_o + 1;
  }
  return p;
}

ProjectionParams ProjectionParams::fit_to(const PointCloud& cloud, double alpha_a, double alpha_i) {
  double t0 = std::numeric_limits<double>::infinity(), t1 = -t0, f0 = t0, f1 = -t0;
  for (const Point& pt : cloud.points) {
    const Vec3 x = pt.xyz();
    if (x.squaredNorm() == 0.0) continue;
    const Spherical s = to_spherical(x);
    t0 = std::min(t0, s.theta);
    t1 = std::max(t1, s.theta);
    f0 = std::min(f0, s.phi);
    f1 = std::max(f1, s.phi);
  }
  if (!std::isfinite(t0)) throw EmptyCloud("fit_to: cloud has no non-origin point");
  return covering(t0, t1, f0, f1, alpha_a, alpha_i);
}

void ProjectionParams::validate() const {
  if (!(alpha_a > 0.0) || !(alpha_i > 0.0)) throw ConfigError("projection resolutions must be > 0");
  if (width <= 0 || height <= 0) throw ConfigError("projection image size must be > 0");
  if (u_o < 0 || u_o >= width || v_o < 0 || v_o >= height) {
    throw ConfigError("projection offsets must lie inside the image");
  }
}

Spherical to_spherical(const Vec3& p) {
  const double r = p.norm();
  if (r == 0.0) throw OriginPoint("to_spherical: point at the origin");
  return {std::atan2(p.y(), p.x()), std::atan2(p.z(), std::hypot(p.x(), p.y())), r};
}

Vec3 ray_direction(double theta, double phi) {
  const double c = std::cos(phi);
  return {c * std::cos(theta), c * std::sin(theta), std::sin(phi)};
}

int round_half_away(double x) { return static_cast<int>(std::round(x)); }

IntensityImage::IntensityImage(int width, int height)
    : width_(width),
      height_(height),
      intensity_(static_cast<std::size_t>(width) * height, 0.0),
      range_(static_cast<std::size_t>(width) * height, 0.0),
      source_(static_cast<std::size_t>(width) * height, kEmpty) {}

void IntensityImage::set(int u, int v, double intensity, double range, std::size_t source) {
  const auto k = index(u, v);
  intensity_[k] = intensity;
  range_[k] = range;
  source_[k] = static_cast<std::int64_t>(source);
}

std::size_t IntensityImage::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(source_.begin(), source_.end(), [](auto s) { return s != kEmpty; }));
}

IntensityImage project(const PointCloud& cloud, const ProjectionParams& params,
                       ProjectionReport* report) {
  params.validate();
  IntensityImage img(params.width, params.height);
  ProjectionReport rep;
  const double pole_limit = std::numbers::pi / 2 - 2.0 * params.alpha_i;
  for (std::size_t k = 0; k < cloud.size(); ++k) {
    const Point& pt = cloud.points[k];
    const Vec3 x = pt.xyz();
    if (x.squaredNorm() == 0.0) {
      ++rep.at_origin;
      continue;
    }
    const Spherical s = to_spherical(x);
    if (std::abs(s.phi) >= pole_limit) {
      ++rep.near_pole;
      continue;
    }
    const int u = round_half_away(s.theta / params.alpha_a) + params.u_o;
    const int v = round_half_away(s.phi / params.alpha_i) + params.v_o;
    if (!img.in_bounds(u, v)) {
      ++rep.out_of_frame;
      continue;
    }
    if (img.has(u, v)) {
      ++rep.occluded;
      // equal range keeps the earlier point
      if (s.r >= img.range(u, v)) continue;
    } else {
      ++rep.projected;
    }
    img.set(u, v, pt.intensity, s.r, k);
  }
  if (report != nullptr) *report = rep;
  if (rep.projected == 0) throw AllPointsOutOfFrame("project: no point landed inside the image");
  return img;
}

IntensityImage normalize_intensity(const IntensityImage& img) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      if (!img.has(u, v)) continue;
      lo = std::min(lo, img.intensity(u, v));
      hi = std::max(hi, img.intensity(u, v));
    }
  }
  IntensityImage out = img;
  const double span = hi - lo;
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      if (!img.has(u, v)) continue;
      out.set_intensity(u, v, span > 0.0 ? 255.0 * (img.intensity(u, v) - lo) / span : 0.0);
    }
  }
  return out;
}

Vec3 pixel_ray(const ProjectionParams& params, double u, double v) {
  return ray_direction((u - params.u_o) * params.alpha_a, (v - params.v_o) * params.alpha_i);
}

Vec3 lift_pixel(const IntensityImage& img, const ProjectionParams& params, double u, double v) {
  const int u0 = static_cast<int>(std::floor(u));
  const int v0 = static_cast<int>(std::floor(v));
  const double fu = u - u0, fv = v - v0;
  double wsum = 0.0, rsum = 0.0;
  for (int dv = 0; dv <= 1; ++dv) {
    for (int du = 0; du <= 1; ++du) {
      const int uu = u0 + du, vv = v0 + dv;
      if (!img.in_bounds(uu, vv) || !img.has(uu, vv)) continue;
      const double w = (du ? fu : 1.0 - fu) * (dv ? fv : 1.0 - fv);
      if (w <= 0.0) continue;
      wsum += w;
      rsum += w * img.range(uu, vv);
    }
  }
  double range = 0.0;
  if (wsum > 0.0) {
    range = rsum / wsum;
  } else {
    const int ur = round_half_away(u), vr = round_half_away(v);
    double best = std::numeric_limits<double>::infinity();
    for (int dv = -1; dv <= 1; ++dv) {
      for (int du = -1; du <= 1; ++du) {
        const int uu = ur + du, vv = vr + dv;
        if (!img.in_bounds(uu, vv) || !img.has(uu, vv)) continue;
        const double d = std::hypot(uu - u, vv - v);
        if (d < best) {
          best = d;
          range = img.range(uu, vv);
        }
      }
    }
    if (!std::isfinite(best)) {
      throw NoRangeSupport("lift_pixel: no valid range near (" + std::to_string(u) + ", " +
                           std::to_string(v) + ")");
    }
  }
  return range * pixel_ray(params, u, v);
}

std::optional<Plane> fit_plane(std::span<const Vec3> points) {
  if (points.size() < 3) return std::nullopt;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Mat3 cov = Mat3::Zero();
  for (const Vec3& p : points) {
    const Vec3 d = p - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 ev = es.eigenvalues();  // ascending
  if (!(ev(1) > 1e-12 * std::max(ev(2), 1e-300))) return std::nullopt;  // collinear
  Vec3 n = es.eigenvectors().col(0).normalized();
  return Plane{n, n.dot(centroid)};
}

namespace {

// Point-in-convex-quad test (either orientation).
bool inside_quad(const std::array<Vec2, 4>& q, const Vec2& p) {
  int sign = 0;
  for (int k = 0; k < 4; ++k) {
    const Vec2 a = q[k], b = q[(k + 1) % 4];
    const double c = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
    const int s = (c > 0) - (c < 0);
    if (s == 0) continue;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

}  // namespace

std::array<Vec3, 4> lift_quad_corners(const IntensityImage& img, const PointCloud& cloud,
                                      const ProjectionParams& params,
                                      const std::array<Vec2, 4>& corners,
                                      std::size_t min_support) {
  double umin = corners[0].x(), umax = umin, vmin = corners[0].y(), vmax = vmin;
  for (const Vec2& c : corners) {
    umin = std::min(umin, c.x());
    umax = std::max(umax, c.x());
    vmin = std::min(vmin, c.y());
    vmax = std::max(vmax, c.y());
  }
  std::vector<Vec3> support;
  for (int v = std::max(0, static_cast<int>(std::ceil(vmin)));
       v <= std::min(img.height() - 1, static_cast<int>(std::floor(vmax))); ++v) {
    for (int u = std::max(0, static_cast<int>(std::ceil(umin)));
         u <= std::min(img.width() - 1, static_cast<int>(std::floor(umax))); ++u) {
      if (!img.has(u, v) || !inside_quad(corners, Vec2(u, v))) continue;
      support.push_back(cloud.points[*img.source(u, v)].xyz());
    }
  }
  if (support.size() < min_support) {
    throw NoRangeSupport("lift_quad_corners: only " + std::to_string(support.size()) +
                         " valid pixels inside the quad");
  }
  const auto plane = fit_plane(support);
  if (!plane) throw NoRangeSupport("lift_quad_corners: degenerate range support");
  std::array<Vec3, 4> out;
  for (int k = 0; k < 4; ++k) {
    const Vec3 dir = pixel_ray(params, corners[k].x(), corners[k].y());
    const double denom = plane->normal.dot(dir);
    if (std::abs(denom) < 1e-9) throw NoRangeSupport("lift_quad_corners: ray parallel to plane");
    const double t = plane->offset / denom;
    if (!(t > 0.0)) throw NoRangeSupport("lift_quad_corners: plane behind the sensor");
    out[k] = t * dir;
  }
  return out;
}

void write_pgm(const IntensityImage& img, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P2\n" << img.width() << ' ' << img.height() << "\n255\n";
  for (int v = img.height() - 1; v >= 0; --v) {
    for (int u = 0; u < img.width(); ++u) {
      const double val = img.has(u, v) ? std::clamp(img.intensity(u, v), 0.0, 255.0) : 0.0;
      out << static_cast<int>(std::lround(val)) << (u + 1 < img.width() ? ' ' : '\n');
    }
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace fidreg
