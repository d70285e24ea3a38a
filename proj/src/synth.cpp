#include "fidreg/synth.hpp"

#include <Eigen/LU>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "fidreg/config.hpp"
#include "fidreg/errors.hpp"
#include "fidreg/pose_svd.hpp"

namespace fidreg {

Mat3 ScenePlane::axes() const {
  const Vec3 z = normal.normalized();
  Vec3 y = up - up.dot(z) * z;
  if (y.norm() < 1e-9) y = z.unitOrthogonal();
  y.normalize();
  const Vec3 x = y.cross(z);
  Mat3 a;
  a.col(0) = x;
  a.col(1) = y;
  a.col(2) = z;
  return a;
}

ProjectionParams ScanPattern::projection() const {
  return ProjectionParams::covering(azimuth_min, azimuth_max, inclination_min, inclination_max,
                                    alpha_a, alpha_i);
}

namespace {

// Cell value of a tag in marker-plane coordinates measured in cells from
// the tag center. Returns -1 outside the quiet zone, else 0 (dark) / 1 (bright).
int tag_cell(const TagDictionary& dict, std::uint64_t bits, double x, double y) {
  const int n = dict.grid_n();
  const double h = 0.5 * (n + 2);
  if (std::abs(x) > h + 1.0 || std::abs(y) > h + 1.0) return -1;
  if (std::abs(x) >= h || std::abs(y) >= h) return 1;  // quiet zone
  const int col = static_cast<int>(std::floor(x + h));
  const int row = static_cast<int>(std::floor(h - y));
  if (row <= 0 || col <= 0 || row >= n + 1 || col >= n + 1) return 0;
  const int k = (row - 1) * n + (col - 1);
  return static_cast<int>((bits >> (n * n - 1 - k)) & 1u);
}

}  // namespace

Pose marker_pose_in_world(const SceneSpec& spec, const SceneMarker& m) {
  const ScenePlane& p = spec.planes.at(static_cast<std::size_t>(m.plane));
  const Mat3 a = p.axes();
  const Vec3 origin = p.origin + m.center.x() * a.col(0) + m.center.y() * a.col(1);
  const Mat3 roll = exp_rotation(Vec3(0, 0, m.roll)).matrix();
  return {Rotation(a * roll), origin};
}

void SceneSpec::validate(const TagDictionary& dict) const {
  const double pi = std::numbers::pi;
  if (!(scan.azimuth_min > -pi && scan.azimuth_max <= pi && scan.azimuth_min < scan.azimuth_max)) {
    throw ConfigError("scan azimuth range must lie in (-pi, pi]");
  }
  if (!(scan.inclination_min > -pi / 2 && scan.inclination_max < pi / 2 &&
        scan.inclination_min < scan.inclination_max)) {
    throw ConfigError("scan inclination range must lie in (-pi/2, pi/2)");
  }
  if (!(scan.alpha_a > 0 && scan.alpha_i > 0)) throw ConfigError("scan resolutions must be > 0");
  if (noise.range_sigma < 0 || noise.intensity_sigma < 0) throw ConfigError("noise sigmas must be >= 0");
  for (const auto& p : planes) {
    if (p.normal.norm() < 1e-9) throw ConfigError("plane normal must be non-zero");
    if (!(p.half_width > 0 && p.half_height > 0)) throw ConfigError("plane extent must be > 0");
  }
  for (const auto& m : markers) {
    if (m.plane < 0 || m.plane >= static_cast<int>(planes.size())) {
      throw ConfigError("marker " + std::to_string(m.id) + " references a missing plane");
    }
    if (!dict.contains(m.id)) throw ConfigError("marker id " + std::to_string(m.id) + " not in dictionary");
    if (!(m.side > 0)) throw ConfigError("marker side must be > 0");
    const ScenePlane& p = planes[static_cast<std::size_t>(m.plane)];
    // quiet zone included
    const double h = 0.5 * m.side * (dict.grid_n() + 4) / (dict.grid_n() + 2);
    for (double sx : {-1.0, 1.0}) {
      for (double sy : {-1.0, 1.0}) {
        const double c = std::cos(m.roll), s = std::sin(m.roll);
        const double a = m.center.x() + c * sx * h - s * sy * h;
        const double b = m.center.y() + s * sx * h + c * sy * h;
        if (std::abs(a) > p.half_width || std::abs(b) > p.half_height) {
          throw ConfigError("marker " + std::to_string(m.id) + " exceeds its plane's extent");
        }
      }
    }
  }
}

double surface_intensity(const SceneSpec& spec, const TagDictionary& dict, int plane,
                         const Vec3& world_point) {
  for (const auto& m : spec.markers) {
    if (m.plane != plane) continue;
    const Pose mp = marker_pose_in_world(spec, m);
    const Vec3 q = apply(inverse(mp), world_point);
    const double cell = m.side / (dict.grid_n() + 2);
    const int v = tag_cell(dict, dict.bits_of(m.id), q.x() / cell, q.y() / cell);
    if (v >= 0) return v ? m.bright : m.dark;
  }
  return spec.planes[static_cast<std::size_t>(plane)].intensity;
}

RenderResult render_scans(const SceneSpec& spec, std::uint64_t seed) {
  const TagDictionary dict = TagDictionary::from_name(spec.dictionary);
  spec.validate(dict);

  struct PlaneCache {
    Vec3 origin;
    Mat3 axes;
    double hw, hh;
  };
  std::vector<PlaneCache> planes;
  for (const auto& p : spec.planes) planes.push_back({p.origin, p.axes(), p.half_width, p.half_height});
  std::vector<Pose> marker_poses;
  for (const auto& m : spec.markers) marker_poses.push_back(marker_pose_in_world(spec, m));

  auto intensity_at = [&](int plane, const Vec3& x) {
    for (std::size_t k = 0; k < spec.markers.size(); ++k) {
      const auto& m = spec.markers[k];
      if (m.plane != plane) continue;
      const Vec3 q = apply(inverse(marker_poses[k]), x);
      const double cell = m.side / (dict.grid_n() + 2);
      const int v = tag_cell(dict, dict.bits_of(m.id), q.x() / cell, q.y() / cell);
      if (v >= 0) return v ? m.bright : m.dark;
    }
    return spec.planes[static_cast<std::size_t>(plane)].intensity;
  };

  const int k0 = round_half_away(spec.scan.azimuth_min / spec.scan.alpha_a);
  const int k1 = round_half_away(spec.scan.azimuth_max / spec.scan.alpha_a);
  const int m0 = round_half_away(spec.scan.inclination_min / spec.scan.alpha_i);
  const int m1 = round_half_away(spec.scan.inclination_max / spec.scan.alpha_i);

  RenderResult out;
  for (std::size_t s = 0; s < spec.sensor_poses.size(); ++s) {
    const Pose& sensor = spec.sensor_poses[s];
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(s)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> gauss(0.0, 1.0);

    PointCloud cloud;
    cloud.scan_id = static_cast<int>(s);
    for (int m = m0; m <= m1; ++m) {
      for (int k = k0; k <= k1; ++k) {
        const Vec3 dir_local = ray_direction(k * spec.scan.alpha_a, m * spec.scan.alpha_i);
        const Vec3 dir = sensor.rotation() * dir_local;
        double best_t = std::numeric_limits<double>::infinity();
        int best_plane = -1;
        for (std::size_t p = 0; p < planes.size(); ++p) {
          const Vec3 n = planes[p].axes.col(2);
          const double denom = n.dot(dir);
          if (std::abs(denom) < 1e-12) continue;
          const double t = n.dot(planes[p].origin - sensor.translation()) / denom;
          if (!(t > 1e-6) || t >= best_t) continue;
          const Vec3 d = sensor.translation() + t * dir - planes[p].origin;
          if (std::abs(d.dot(planes[p].axes.col(0))) > planes[p].hw ||
              std::abs(d.dot(planes[p].axes.col(1))) > planes[p].hh) {
            continue;
          }
          best_t = t;
          best_plane = static_cast<int>(p);
        }
        if (best_plane < 0) continue;
        const Vec3 hit = sensor.translation() + best_t * dir;
        double intensity = intensity_at(best_plane, hit);
        double range = best_t;
        // draw both every ray so the stream does not depend on the sigmas
        const double nr = gauss(rng), ni = gauss(rng);
        range += spec.noise.range_sigma * nr;
        intensity = std::max(0.0, intensity + spec.noise.intensity_sigma * ni);
        if (!(range > 0.0)) continue;
        const Vec3 p = range * dir_local;
        cloud.points.push_back({p.x(), p.y(), p.z(), intensity});
      }
    }
    if (cloud.empty()) throw EmptyScan("sensor " + std::to_string(s) + " sees nothing");
    out.clouds.push_back(std::move(cloud));
    out.truth.scan_poses.push_back(sensor);
  }
  const CanonicalCorners canon0(1.0);
  for (std::size_t k = 0; k < spec.markers.size(); ++k) {
    const auto& m = spec.markers[k];
    out.truth.marker_poses[m.id] = marker_poses[k];
    const CanonicalCorners canon(m.side);
    std::array<Vec3, 4> c;
    for (int s = 0; s < 4; ++s) c[s] = apply(marker_poses[k], canon.corners[s]);
    out.truth.corners[m.id] = c;
  }
  return out;
}

IntensityImage render_tag_image(const TagDictionary& dict, int id,
                                const std::array<Vec2, 4>& corners, int width, int height,
                                double dark, double bright, double background, int supersample) {
  const int n = dict.grid_n();
  const double h = 0.5 * (n + 2);
  const std::array<Vec2, 4> canon = {Vec2(-h, -h), Vec2(h, -h), Vec2(h, h), Vec2(-h, h)};
  // homography image -> marker cells
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int k = 0; k < 4; ++k) {
    const double x = corners[k].x(), y = corners[k].y(), u = canon[k].x(), v = canon[k].y();
    a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * k) = u;
    b(2 * k + 1) = v;
  }
  const Eigen::Matrix<double, 8, 1> hv = a.fullPivLu().solve(b);
  Eigen::Matrix3d hm;
  hm << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), 1.0;

  const std::uint64_t bits = dict.bits_of(id);
  IntensityImage img(width, height);
  const int ss = std::max(1, supersample);
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      double acc = 0.0;
      for (int i = 0; i < ss; ++i) {
        for (int j = 0; j < ss; ++j) {
          const double su = u - 0.5 + (i + 0.5) / ss;
          const double sv = v - 0.5 + (j + 0.5) / ss;
          const Eigen::Vector3d p = hm * Eigen::Vector3d(su, sv, 1.0);
          const int c = tag_cell(dict, bits, p.x() / p.z(), p.y() / p.z());
          acc += c < 0 ? background : (c ? bright : dark);
        }
      }
      img.set(u, v, acc / (ss * ss), 1.0, img.index(u, v));
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// scene files

namespace {

Pose pose_from_section(const ConfigSection& s) {
  if (s.has("pose")) {
    const auto v = s.get_doubles("pose");
    if (v.size() != 12) throw ConfigError("[sensor] pose needs 12 values");
    std::ostringstream os;
    os.precision(17);
    for (double x : v) os << x << ' ';
    return parse_pose(os.str());
  }
  const Vec3 pos = s.get_vec3("position");
  const Mat3 r = (Eigen::AngleAxisd(s.get_double("yaw", 0.0), Vec3::UnitZ()) *
                  Eigen::AngleAxisd(s.get_double("pitch", 0.0), Vec3::UnitY()) *
                  Eigen::AngleAxisd(s.get_double("roll", 0.0), Vec3::UnitX()))
                     .toRotationMatrix();
  return {Rotation(r), pos};
}

std::pair<double, double> pair_of(const ConfigSection& s, const std::string& key) {
  const auto v = s.get_doubles(key);
  if (v.size() != 2) throw ConfigError("key '" + key + "' needs 2 values");
  return {v[0], v[1]};
}

SceneSpec from_config(const ConfigFile& cfg) {
  SceneSpec spec;
  if (const auto* s = cfg.first("scan")) {
    std::tie(spec.scan.azimuth_min, spec.scan.azimuth_max) = pair_of(*s, "azimuth");
    std::tie(spec.scan.inclination_min, spec.scan.inclination_max) = pair_of(*s, "inclination");
    std::tie(spec.scan.alpha_a, spec.scan.alpha_i) = pair_of(*s, "resolution");
  }
  if (const auto* s = cfg.first("noise")) {
    spec.noise.range_sigma = s->get_double("range_sigma", 0.0);
    spec.noise.intensity_sigma = s->get_double("intensity_sigma", 0.0);
  }
  if (const auto* s = cfg.first("dictionary")) spec.dictionary = s->get_string("name", "default16");
  for (const auto* s : cfg.all("plane")) {
    ScenePlane p;
    p.origin = s->get_vec3("origin");
    p.normal = s->get_vec3("normal");
    if (s->has("up")) p.up = s->get_vec3("up");
    std::tie(p.half_width, p.half_height) = pair_of(*s, "half_extent");
    p.intensity = s->get_double("intensity", p.intensity);
    spec.planes.push_back(p);
  }
  for (const auto* s : cfg.all("marker")) {
    SceneMarker m;
    m.id = s->get_int("id");
    m.side = s->get_double("side", m.side);
    m.plane = s->get_int("plane");
    if (s->has("center")) {
      const auto [a, b] = pair_of(*s, "center");
      m.center = Vec2(a, b);
    }
    m.roll = s->get_double("roll", 0.0);
    m.bright = s->get_double("bright", m.bright);
    m.dark = s->get_double("dark", m.dark);
    spec.markers.push_back(m);
  }
  for (const auto* s : cfg.all("sensor")) spec.sensor_poses.push_back(pose_from_section(*s));
  return spec;
}

std::string join(std::initializer_list<double> v) {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (double x : v) {
    os << (first ? "" : " ") << x;
    first = false;
  }
  return os.str();
}

}  // namespace

SceneSpec SceneSpec::load(const std::filesystem::path& path) { return from_config(ConfigFile::load(path)); }

SceneSpec SceneSpec::parse(const std::string& text) { return from_config(ConfigFile::parse_string(text)); }

void SceneSpec::save(const std::filesystem::path& path) const {
  ConfigFile cfg;
  auto& sc = cfg.add("scan");
  sc.set("azimuth", join({scan.azimuth_min, scan.azimuth_max}));
  sc.set("inclination", join({scan.inclination_min, scan.inclination_max}));
  sc.set("resolution", join({scan.alpha_a, scan.alpha_i}));
  auto& ns = cfg.add("noise");
  ns.set("range_sigma", join({noise.range_sigma}));
  ns.set("intensity_sigma", join({noise.intensity_sigma}));
  cfg.add("dictionary").set("name", dictionary);
  for (const auto& p : planes) {
    auto& s = cfg.add("plane");
    s.set("origin", join({p.origin.x(), p.origin.y(), p.origin.z()}));
    s.set("normal", join({p.normal.x(), p.normal.y(), p.normal.z()}));
    s.set("up", join({p.up.x(), p.up.y(), p.up.z()}));
    s.set("half_extent", join({p.half_width, p.half_height}));
    s.set("intensity", join({p.intensity}));
  }
  for (const auto& m : markers) {
    auto& s = cfg.add("marker");
    s.set("id", std::to_string(m.id));
    s.set("side", join({m.side}));
    s.set("plane", std::to_string(m.plane));
    s.set("center", join({m.center.x(), m.center.y()}));
    s.set("roll", join({m.roll}));
    s.set("bright", join({m.bright}));
    s.set("dark", join({m.dark}));
  }
  for (const auto& p : sensor_poses) cfg.add("sensor").set("pose", format_pose(p));
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  cfg.write(out);
}

void write_ground_truth(const std::filesystem::path& dir, const GroundTruth& truth) {
  std::vector<ScanPose> scans;
  for (std::size_t k = 0; k < truth.scan_poses.size(); ++k) {
    scans.push_back({static_cast<int>(k), truth.scan_poses[k]});
  }
  write_pose_file(dir / "gt_poses.txt", scans);
  std::vector<ScanPose> markers;
  for (const auto& [id, p] : truth.marker_poses) markers.push_back({id, p});
  write_pose_file(dir / "gt_markers.txt", markers);
}

}  // namespace fidreg
