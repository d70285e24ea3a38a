#pragma once

// Spherical projection of a scan into an intensity image with a range buffer,
// and the reverse lift from (sub)pixels back to 3D.
//
// Pixel (u, v) is the cell whose center sits at integer coordinates; u grows
// with azimuth theta, v grows with inclination phi.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fidreg/cloud_io.hpp"
#include "fidreg/geometry.hpp"

namespace fidreg {

using Vec2 = Eigen::Vector2d;

struct ProjectionParams {
  double alpha_a = 0.002;  // azimuth resolution, rad/pixel
  double alpha_i = 0.002;  // inclination resolution, rad/pixel
  int u_o = 0;
  int v_o = 0;
  int width = 1;
  int height = 1;

  /// Smallest image whose pixel grid covers the given angular box.
  static ProjectionParams covering(double theta_min, double theta_max, double phi_min,
                                   double phi_max, double alpha_a, double alpha_i);
  /// Fits the image to the angular extent of a cloud.
  static ProjectionParams fit_to(const PointCloud& cloud, double alpha_a, double alpha_i);

  /// Throws ConfigError when the invariants do not hold.
  void validate() const;
};

struct Spherical {
  double theta;  // azimuth, (-pi, pi]
  double phi;    // inclination, (-pi/2, pi/2)
  double r;      // range, meters
};

/// Throws OriginPoint when p is the origin.
Spherical to_spherical(const Vec3& p);

/// Unit ray direction for azimuth theta and inclination phi.
Vec3 ray_direction(double theta, double phi);

/// Round to nearest, halves away from zero.
int round_half_away(double x);

class IntensityImage {
 public:
  static constexpr std::int64_t kEmpty = -1;

  IntensityImage() = default;
  IntensityImage(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  bool in_bounds(int u, int v) const { return u >= 0 && v >= 0 && u < width_ && v < height_; }
  bool has(int u, int v) const { return source_[index(u, v)] != kEmpty; }

  double intensity(int u, int v) const { return intensity_[index(u, v)]; }
  double range(int u, int v) const { return range_[index(u, v)]; }
  std::optional<std::size_t> source(int u, int v) const {
    const auto s = source_[index(u, v)];
    return s == kEmpty ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(s));
  }

  void set(int u, int v, double intensity, double range, std::size_t source);
  void set_intensity(int u, int v, double intensity) { intensity_[index(u, v)] = intensity; }

  std::size_t valid_count() const;

  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(u);
  }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> intensity_;
  std::vector<double> range_;
  std::vector<std::int64_t> source_;
};

struct ProjectionReport {
  std::size_t projected = 0;
  std::size_t out_of_frame = 0;
  std::size_t near_pole = 0;
  std::size_t at_origin = 0;
  std::size_t occluded = 0;  // lost a pixel collision
};

/// Throws AllPointsOutOfFrame when no point lands in the image.
IntensityImage project(const PointCloud& cloud, const ProjectionParams& params,
                       ProjectionReport* report = nullptr);

/// Min-max normalization of valid pixels to [0, 255]. A constant image maps to 0.
IntensityImage normalize_intensity(const IntensityImage& img);

/// Angles of the ray through a subpixel location.
Vec3 pixel_ray(const ProjectionParams& params, double u, double v);

/// Lifts a subpixel location at the range interpolated bilinearly over the
/// valid pixels of its 2x2 neighbourhood (weights renormalized). When none of
/// those is valid the nearest valid pixel within one pixel of the rounded
/// location is used. Throws NoRangeSupport otherwise.
Vec3 lift_pixel(const IntensityImage& img, const ProjectionParams& params, double u, double v);

struct Plane {
  Vec3 normal;    // unit
  double offset;  // normal . x = offset
};

/// Least-squares plane (PCA). Needs at least 3 non-collinear points.
std::optional<Plane> fit_plane(std::span<const Vec3> points);

/// Lifts the corners of a planar quad: fits a plane to the cloud points of all
/// valid pixels inside the quad, then intersects each corner's ray with it.
/// Throws NoRangeSupport when the quad holds fewer than `min_support` valid
/// pixels, the support is degenerate, or a ray is parallel to the plane.
std::array<Vec3, 4> lift_quad_corners(const IntensityImage& img, const PointCloud& cloud,
                                      const ProjectionParams& params,
                                      const std::array<Vec2, 4>& corners,
                                      std::size_t min_support = 16);

/// Debug dump as ASCII PGM (P2); intensities are clamped to [0, 255] and rows
/// are written top (largest v) first.
void write_pgm(const IntensityImage& img, const std::filesystem::path& path);

}  // namespace fidreg
