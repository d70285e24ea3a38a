#pragma once

// Shared helpers for unit and acceptance tests: random rigid motions and the
// synthetic scenes used by the end-to-end checks.

#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "fidreg/cloud_io.hpp"
#include "fidreg/geometry.hpp"
#include "fidreg/synth.hpp"

namespace fixtures {

using fidreg::Pose;
using fidreg::Rotation;
using fidreg::Vec3;

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Vec3 v(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-6) v = Vec3(g(rng), g(rng), g(rng));
  return v.normalized();
}

/// Rotation with angle uniform in [0, max_angle] about a random axis.
inline Rotation random_rotation(std::mt19937_64& rng, double max_angle = 3.0) {
  std::uniform_real_distribution<double> a(0.0, max_angle);
  return fidreg::exp_rotation(random_unit(rng) * a(rng));
}

inline Pose random_pose(std::mt19937_64& rng, double max_angle = 3.0, double trans = 5.0) {
  std::uniform_real_distribution<double> t(-trans, trans);
  return {random_rotation(rng, max_angle), Vec3(t(rng), t(rng), t(rng))};
}

inline Pose sensor(double x, double y, double z, double yaw, double pitch = 0.0, double roll = 0.0) {
  const fidreg::Mat3 r = (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
                          Eigen::AngleAxisd(roll, Vec3::UnitX()))
                             .toRotationMatrix();
  return {Rotation(r), Vec3(x, y, z)};
}

inline fidreg::ScenePlane wall_at_x(double x, double half_width, double half_height,
                                    double intensity = 90.0, double y_center = 0.0) {
  fidreg::ScenePlane p;
  p.origin = Vec3(x, y_center, 0);
  p.normal = Vec3(-1, 0, 0);
  p.up = Vec3(0, 0, 1);
  p.half_width = half_width;
  p.half_height = half_height;
  p.intensity = intensity;
  return p;
}

/// Wall point (world y, z) to the (right, up) coordinates of a wall facing -x
/// centered at y_center; its right axis is world -y.
inline fidreg::Vec2 on_wall(double y, double z, double y_center = 0.0) { return {y_center - y, z}; }

/// Five sensors strung along a long wall above a floor, four markers, each marker seen by
/// exactly two neighbouring scans near the edges of their fields of view.
inline fidreg::SceneSpec chain_scene(double range_sigma = 0.0, double intensity_sigma = 0.0) {
  fidreg::SceneSpec s;
  s.scan.azimuth_min = -0.85;
  s.scan.azimuth_max = 0.85;
  s.scan.inclination_min = -0.45;
  s.scan.inclination_max = 0.3;
  const double spacing = 7.8;
  const double mid = 2.0 * spacing;
  s.planes.push_back(wall_at_x(4.0, 22.0, 2.5, 90.0, mid));
  fidreg::ScenePlane floor;
  floor.origin = Vec3(2.0, mid, -1.2);
  floor.normal = Vec3(0, 0, 1);
  floor.up = Vec3(1, 0, 0);
  floor.half_width = 22.0;  // along world y
  floor.half_height = 2.0;  // along world x
  floor.intensity = 60.0;
  s.planes.push_back(floor);
  const std::vector<std::tuple<double, double, double>> jitter = {
      {0.0, 0.0, 0.0}, {0.15, 0.01, -0.012}, {-0.1, -0.015, 0.008}, {0.05, 0.012, 0.015}, {-0.2, -0.008, -0.01}};
  for (int k = 0; k < 5; ++k) {
    const auto [dz, pitch, roll] = jitter[static_cast<std::size_t>(k)];
    s.sensor_poses.push_back(sensor(0.0, k * spacing, dz, k == 0 ? 0.0 : 0.004 * (k % 2 ? 1 : -1), pitch, roll));
  }
  const double q = std::numbers::pi / 2.0;
  const std::vector<double> rolls = {0.0, q, 2.0 * q, -q};
  for (int j = 0; j < 4; ++j) {
    fidreg::SceneMarker m;
    m.id = j;
    m.plane = 0;
    m.center = on_wall(j * spacing + spacing / 2.0, 0.05 * (j - 1.5), mid);
    m.roll = rolls[static_cast<std::size_t>(j)];
    s.markers.push_back(m);
  }
  s.noise.range_sigma = range_sigma;
  s.noise.intensity_sigma = intensity_sigma;
  return s;
}

/// Three scans of a corner (front wall and side wall) holding five markers,
/// most of them seen by two or three scans.
inline fidreg::SceneSpec corner_scene(double range_sigma = 0.0, double intensity_sigma = 0.0) {
  fidreg::SceneSpec s;
  s.scan.azimuth_min = -0.7;
  s.scan.azimuth_max = 0.7;
  s.scan.inclination_min = -0.3;
  s.scan.inclination_max = 0.3;
  s.planes.push_back(wall_at_x(4.0, 6.0, 2.5, 90.0));
  fidreg::ScenePlane side;
  side.origin = Vec3(1.0, 3.2, 0.0);
  side.normal = Vec3(0, -1, 0);
  side.up = Vec3(0, 0, 1);
  side.half_width = 3.0;
  side.half_height = 2.5;
  side.intensity = 110.0;
  s.planes.push_back(side);

  s.sensor_poses.push_back(sensor(0.0, 0.0, 0.0, 0.0));
  s.sensor_poses.push_back(sensor(0.4, -1.1, 0.1, 0.12, 0.01, -0.01));
  s.sensor_poses.push_back(sensor(0.2, 0.9, -0.1, 0.3, -0.015, 0.01));

  const std::vector<std::tuple<int, int, double, double, double>> markers = {
      {0, 0, -1.2, 0.0, 0.0}, {1, 0, 0.0, 0.2, 0.2}, {2, 0, 1.2, -0.1, -0.25},
      {3, 0, 2.5, 0.15, 0.5}, {4, 1, 1.5, 0.0, 0.2}};
  for (const auto& [id, plane, a, b, roll] : markers) {
    fidreg::SceneMarker m;
    m.id = id;
    m.plane = plane;
    // front wall: world y; side wall: world x relative to its origin
    m.center = plane == 0 ? on_wall(a, b) : fidreg::Vec2(a, b);
    m.roll = roll;
    s.markers.push_back(m);
  }
  s.noise.range_sigma = range_sigma;
  s.noise.intensity_sigma = intensity_sigma;
  return s;
}

/// Voxel-occupancy overlap |A ∩ B| / min(|A|, |B|) of two world-frame clouds.
inline double voxel_overlap(const fidreg::PointCloud& a, const fidreg::PointCloud& b, double voxel) {
  auto cells = [voxel](const fidreg::PointCloud& c) {
    std::set<std::tuple<long, long, long>> out;
    for (const auto& p : c.points) {
      out.emplace(static_cast<long>(std::floor(p.x / voxel)), static_cast<long>(std::floor(p.y / voxel)),
                  static_cast<long>(std::floor(p.z / voxel)));
    }
    return out;
  };
  const auto ca = cells(a), cb = cells(b);
  std::size_t common = 0;
  for (const auto& k : ca) common += cb.count(k);
  return static_cast<double>(common) / static_cast<double>(std::min(ca.size(), cb.size()));
}

}  // namespace fixtures
