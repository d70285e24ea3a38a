#pragma once

// Synthetic planar scenes with fiducial markers and a grid-scanning LiDAR
// simulator that provides ground truth for end-to-end checks.
//
// Scene file schema (sections may repeat; see ConfigFile):
//
//   [scan]       azimuth = min max        (rad)
//                inclination = min max    (rad)
//                resolution = a_a a_i     (rad per ray)
//   [noise]      range_sigma = m ; intensity_sigma = units
//   [plane]      origin = x y z ; normal = x y z ; up = x y z
//                half_extent = w h ; intensity = value
//   [marker]     id = n ; side = m ; plane = index ; center = a b (m, in the
//                plane's right/up axes) ; roll = rad ; bright = 200 ; dark = 20
//   [sensor]     pose = 12 values (row-major 3x4, sensor -> world)
//                or position = x y z with yaw/pitch/roll = rad
//   [dictionary] name = default16 | path

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fidreg/cloud_io.hpp"
#include "fidreg/geometry.hpp"
#include "fidreg/projection.hpp"
#include "fidreg/tagdetect.hpp"

namespace fidreg {

struct ScenePlane {
  Vec3 origin = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 up = Vec3::UnitY();  // projected onto the plane to fix its in-plane axes
  double half_width = 1.0;
  double half_height = 1.0;
  double intensity = 100.0;

  /// Columns: right, up, normal.
  Mat3 axes() const;
};

struct SceneMarker {
  int id = 0;
  double side = 0.692;
  int plane = 0;
  Vec2 center = Vec2::Zero();
  double roll = 0.0;
  double bright = 200.0;
  double dark = 20.0;
};

struct ScanPattern {
  double azimuth_min = -0.4;
  double azimuth_max = 0.4;
  double inclination_min = -0.3;
  double inclination_max = 0.3;
  double alpha_a = 0.002;
  double alpha_i = 0.002;

  /// Image parameters whose pixel grid coincides with the ray grid.
  ProjectionParams projection() const;
};

struct SceneNoise {
  double range_sigma = 0.0;
  double intensity_sigma = 0.0;
};

struct SceneSpec {
  std::vector<ScenePlane> planes;
  std::vector<SceneMarker> markers;
  std::vector<Pose> sensor_poses;  // sensor frame -> world
  ScanPattern scan;
  SceneNoise noise;
  std::string dictionary = "default16";

  /// Throws ConfigError when a marker (with its one-cell quiet zone) leaves
  /// its plane, references a missing plane or unknown id, or the scan FOV is
  /// outside (-pi, pi] x (-pi/2, pi/2).
  void validate(const TagDictionary& dict) const;

  static SceneSpec load(const std::filesystem::path& path);
  static SceneSpec parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
};

/// Marker frame -> world: origin at the marker center on the plane, z along
/// the plane normal, x/y the plane axes rolled by `roll`.
Pose marker_pose_in_world(const SceneSpec& spec, const SceneMarker& m);

struct GroundTruth {
  std::vector<Pose> scan_poses;  // index-aligned with the clouds
  std::map<int, Pose> marker_poses;
  std::map<int, std::array<Vec3, 4>> corners;
};

struct RenderResult {
  std::vector<PointCloud> clouds;  // scan_id = index
  GroundTruth truth;
};

/// Casts one ray per scan-grid cell from every sensor, intersects the
/// nearest plane and emits the hit in the sensor frame. Deterministic for a
/// given seed. Throws EmptyScan when a sensor hits nothing.
RenderResult render_scans(const SceneSpec& spec, std::uint64_t seed);

/// Intensity at a world point on plane `plane` (marker cells, quiet zone or
/// plane background).
double surface_intensity(const SceneSpec& spec, const TagDictionary& dict, int plane,
                         const Vec3& world_point);

/// 2D raster of a tag whose canonical corners land on `corners` (pixel
/// centers at integer coordinates), area-averaged with `supersample`^2
/// samples per pixel. Includes the one-cell bright quiet zone.
IntensityImage render_tag_image(const TagDictionary& dict, int id,
                                const std::array<Vec2, 4>& corners, int width, int height,
                                double dark = 20.0, double bright = 200.0,
                                double background = 110.0, int supersample = 4);

void write_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth);

}  // namespace fidreg
