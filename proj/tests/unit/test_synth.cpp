#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <unistd.h>

#include "fidreg/cloud_io.hpp"
#include "fidreg/errors.hpp"
#include "fidreg/synth.hpp"
#include "fixtures.hpp"

using namespace fidreg;
namespace fs = std::filesystem;

namespace {

SceneSpec single_wall(double distance, double alpha) {
  SceneSpec s;
  s.scan.azimuth_min = s.scan.inclination_min = -0.12;
  s.scan.azimuth_max = s.scan.inclination_max = 0.12;
  s.scan.alpha_a = s.scan.alpha_i = alpha;
  s.planes.push_back(fixtures::wall_at_x(distance, 3.0, 3.0));
  SceneMarker m;
  m.id = 3;
  s.markers.push_back(m);
  s.sensor_poses.push_back(Pose::identity());
  return s;
}

}  // namespace

TEST_CASE("render_scans: noise-free points lie on the wall") {
  SceneSpec s = single_wall(4.0, 0.004);
  s.sensor_poses.push_back(fixtures::sensor(0.5, -0.3, 0.2, 0.1, 0.02, -0.03));
  const RenderResult r = render_scans(s, 1);
  REQUIRE(r.clouds.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r.clouds[i].scan_id == static_cast<int>(i));
    CHECK(r.clouds[i].size() > 1000);
    for (const auto& p : r.clouds[i].points) {
      CHECK(std::abs(apply(s.sensor_poses[i], p.xyz()).x() - 4.0) < 1e-12);
    }
    CHECK(max_abs_diff(r.truth.scan_poses[i], s.sensor_poses[i]) == 0.0);
  }
}

TEST_CASE("render_scans: intensities follow the marker pattern") {
  const SceneSpec s = single_wall(4.0, 0.002);
  const RenderResult r = render_scans(s, 0);
  std::set<double> levels;
  for (const auto& p : r.clouds[0].points) levels.insert(p.intensity);
  CHECK(levels == std::set<double>{20.0, 90.0, 200.0});
  const TagDictionary d = TagDictionary::default16();
  // marker center cell block is payload, the border ring is dark
  const double cell = 0.692 / 6.0;
  CHECK(surface_intensity(s, d, 0, Vec3(4.0, 0.692 / 2 - cell / 2, 0.0)) == 20.0);
  CHECK(surface_intensity(s, d, 0, Vec3(4.0, 0.692 / 2 + cell / 2, 0.0)) == 200.0);
  CHECK(surface_intensity(s, d, 0, Vec3(4.0, 2.0, 2.0)) == 90.0);
}

TEST_CASE("render_scans is deterministic for a seed") {
  SceneSpec s = single_wall(4.0, 0.004);
  s.noise.range_sigma = 0.005;
  s.noise.intensity_sigma = 5.0;
  const RenderResult a = render_scans(s, 7), b = render_scans(s, 7), c = render_scans(s, 8);
  REQUIRE(a.clouds[0].size() == b.clouds[0].size());
  bool same = true, differs = false;
  for (std::size_t k = 0; k < a.clouds[0].size(); ++k) {
    const auto& p = a.clouds[0].points[k];
    const auto& q = b.clouds[0].points[k];
    same = same && p.x == q.x && p.y == q.y && p.z == q.z && p.intensity == q.intensity;
    differs = differs || p.x != c.clouds[0].points[k].x;
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("render_scans: range noise has the configured spread") {
  SceneSpec s = single_wall(4.0, 0.004);
  const RenderResult clean = render_scans(s, 3);
  s.noise.range_sigma = 0.005;
  const RenderResult noisy = render_scans(s, 3);
  REQUIRE(clean.clouds[0].size() == noisy.clouds[0].size());
  double sum = 0.0, sq = 0.0;
  const std::size_t n = clean.clouds[0].size();
  for (std::size_t k = 0; k < n; ++k) {
    const double d = noisy.clouds[0].points[k].xyz().norm() - clean.clouds[0].points[k].xyz().norm();
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 0.0005);
  CHECK(sd == doctest::Approx(0.005).epsilon(0.05));
}

TEST_CASE("a 0.692 m marker at 5 m spans about 92 pixels at 0.0015 rad") {
  const SceneSpec s = single_wall(5.0, 0.0015);
  const RenderResult r = render_scans(s, 0);
  const ProjectionParams params = s.scan.projection();
  const IntensityImage img = normalize_intensity(project(r.clouds[0], params));
  const auto res = adaptive_threshold_search(img, TagDictionary::default16());
  REQUIRE(res.queue.size() == 1);
  const auto& c = res.queue.entries[0].corners;
  const double expected = 2.0 * std::atan(0.346 / 5.0) / 0.0015;
  CHECK(expected == doctest::Approx(92.0).epsilon(0.01));
  for (int k = 0; k < 4; ++k) CHECK((c[k] - c[(k + 1) % 4]).norm() == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("ground-truth corners lie on their host plane") {
  const SceneSpec s = fixtures::corner_scene();
  const RenderResult r = render_scans(s, 0);
  CHECK(r.truth.corners.size() == s.markers.size());
  for (const auto& m : s.markers) {
    const ScenePlane& pl = s.planes[m.plane];
    const Pose w = marker_pose_in_world(s, m);
    CHECK((w.rotation().matrix().col(2) - pl.normal.normalized()).norm() < 1e-12);
    CHECK(max_abs_diff(r.truth.marker_poses.at(m.id), w) == 0.0);
    const auto& c = r.truth.corners.at(m.id);
    for (int k = 0; k < 4; ++k) {
      CHECK(std::abs((c[k] - pl.origin).dot(pl.normal.normalized())) < 1e-12);
      CHECK((c[k] - c[(k + 1) % 4]).norm() == doctest::Approx(m.side).epsilon(1e-12));
    }
  }
}

TEST_CASE("SceneSpec::validate") {
  const TagDictionary d = TagDictionary::default16();
  SceneSpec s = single_wall(4.0, 0.004);
  CHECK_NOTHROW(s.validate(d));
  SceneSpec off = s;
  off.markers[0].center = Vec2(2.7, 0.0);
  CHECK_THROWS_AS(off.validate(d), ConfigError);
  SceneSpec no_plane = s;
  no_plane.markers[0].plane = 4;
  CHECK_THROWS_AS(no_plane.validate(d), ConfigError);
  SceneSpec unknown = s;
  unknown.markers[0].id = 40;
  CHECK_THROWS_AS(unknown.validate(d), ConfigError);
  SceneSpec fov = s;
  fov.scan.inclination_max = 1.6;
  CHECK_THROWS_AS(fov.validate(d), ConfigError);
  CHECK_NOTHROW(fixtures::chain_scene().validate(d));
  CHECK_NOTHROW(fixtures::corner_scene().validate(d));
}

TEST_CASE("render_scans: a sensor facing away sees nothing") {
  SceneSpec s = single_wall(4.0, 0.004);
  s.sensor_poses[0] = fixtures::sensor(0, 0, 0, 3.0);
  CHECK_THROWS_AS(render_scans(s, 0), EmptyScan);
}

TEST_CASE("scene files round trip") {
  const fs::path dir = fs::temp_directory_path() / ("fidreg_scene_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  SceneSpec s = fixtures::corner_scene(0.005, 5.0);
  s.save(dir / "scene.ini");
  const SceneSpec back = SceneSpec::load(dir / "scene.ini");
  CHECK(back.planes.size() == s.planes.size());
  CHECK(back.markers.size() == s.markers.size());
  CHECK(back.sensor_poses.size() == s.sensor_poses.size());
  CHECK(back.noise.range_sigma == s.noise.range_sigma);
  for (std::size_t i = 0; i < s.sensor_poses.size(); ++i) {
    CHECK(max_abs_diff(back.sensor_poses[i], s.sensor_poses[i]) < 1e-12);
  }
  const RenderResult a = render_scans(s, 4), b = render_scans(back, 4);
  REQUIRE(a.clouds[1].size() == b.clouds[1].size());
  double worst = 0.0;
  for (std::size_t k = 0; k < a.clouds[1].size(); ++k) {
    worst = std::max(worst, (a.clouds[1].points[k].xyz() - b.clouds[1].points[k].xyz()).norm());
  }
  CHECK(worst < 1e-9);

  write_ground_truth(dir, a.truth);
  const auto poses = read_pose_file(dir / "gt_poses.txt");
  REQUIRE(poses.size() == 3);
  CHECK(max_abs_diff(poses[2].pose, a.truth.scan_poses[2]) < 1e-12);
  CHECK(fs::exists(dir / "gt_markers.txt"));
  fs::remove_all(dir);
}

TEST_CASE("scene parser accepts position and angles") {
  const SceneSpec s = SceneSpec::parse(
      "[scan]\nazimuth = -0.3 0.3\ninclination = -0.2 0.2\nresolution = 0.004 0.004\n"
      "[plane]\norigin = 4 0 0\nnormal = -1 0 0\nup = 0 0 1\nhalf_extent = 3 2\nintensity = 80\n"
      "[marker]\nid = 2\nside = 0.5\nplane = 0\ncenter = 0.1 -0.2\nroll = 0.3\n"
      "[sensor]\nposition = 0.1 0.2 0.3\nyaw = 0.05\n");
  REQUIRE(s.sensor_poses.size() == 1);
  CHECK((s.sensor_poses[0].translation() - Vec3(0.1, 0.2, 0.3)).norm() == 0.0);
  CHECK(max_abs_diff(s.sensor_poses[0], fixtures::sensor(0.1, 0.2, 0.3, 0.05)) < 1e-15);
  CHECK(s.markers[0].side == 0.5);
  CHECK(s.planes[0].intensity == 80.0);
  CHECK_THROWS_AS(SceneSpec::parse("[marker]\nid = 1\n"), ConfigError);
}
