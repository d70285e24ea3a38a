#include "fidreg/cloud_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "fidreg/errors.hpp"
#include "fidreg/log.hpp"

namespace fidreg {
namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::string normalized = line;
  std::replace(normalized.begin(), normalized.end(), ',', ' ');
  std::istringstream is(normalized);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

double to_double(const std::string& tok, const std::filesystem::path& path, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::out_of_range&) {
    return tok.front() == '-' ? -HUGE_VAL : HUGE_VAL;
  } catch (const std::exception&) {
  }
  throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Accepts a point unless it is non-finite; clamps negative intensity.
void admit(PointCloud& cloud, ParseReport& rep, double x, double y, double z, double i) {
  ++rep.rows;
  if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(i)) {
    ++rep.dropped;
    return;
  }
  if (i < 0.0) {
    ++rep.clamped;
    i = 0.0;
  }
  cloud.points.push_back({x, y, z, i});
}

void read_csv(std::istream& in, const std::filesystem::path& path, PointCloud& cloud,
              ParseReport& rep) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f.size() != 4) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 4 columns, got " +
                        std::to_string(f.size()));
    }
    admit(cloud, rep, to_double(f[0], path, line_no), to_double(f[1], path, line_no),
          to_double(f[2], path, line_no), to_double(f[3], path, line_no));
  }
}

void read_pcd(std::istream& in, const std::filesystem::path& path, PointCloud& cloud,
              ParseReport& rep) {
  std::map<std::string, std::vector<std::string>> header;
  std::string line;
  std::size_t line_no = 0;
  bool have_data = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto f = split_fields(line);
    if (f.empty()) continue;
    const std::string key = f.front();
    f.erase(f.begin());
    header[key] = f;
    if (key == "DATA") {
      if (f.size() != 1 || lower(f[0]) != "ascii") {
        throw FormatError(path.string() + ": only 'DATA ascii' PCD files are supported");
      }
      have_data = true;
      break;
    }
    static const char* kKnown[] = {"VERSION", "FIELDS", "SIZE",      "TYPE",  "COUNT",
                                   "WIDTH",   "HEIGHT", "VIEWPOINT", "POINTS"};
    if (std::none_of(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return key == k; })) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unknown PCD header key '" +
                        key + "'");
    }
  }
  if (!have_data) throw FormatError(path.string() + ": PCD header has no DATA line");
  const auto fields_it = header.find("FIELDS");
  if (fields_it == header.end()) throw FormatError(path.string() + ": PCD header has no FIELDS");
  const auto& fields = fields_it->second;
  auto column = [&](const std::string& name) -> int {
    const auto it = std::find(fields.begin(), fields.end(), name);
    return it == fields.end() ? -1 : static_cast<int>(it - fields.begin());
  };
  const int cx = column("x"), cy = column("y"), cz = column("z"), ci = column("intensity");
  if (cx < 0 || cy < 0 || cz < 0 || ci < 0) {
    throw FormatError(path.string() + ": PCD FIELDS must contain x y z intensity");
  }
  if (auto c = header.find("COUNT"); c != header.end()) {
    for (const auto& n : c->second) {
      if (n != "1") throw FormatError(path.string() + ": PCD COUNT other than 1 is not supported");
    }
  }
  long declared = -1;
  if (auto p = header.find("POINTS"); p != header.end() && !p->second.empty()) {
    declared = static_cast<long>(to_double(p->second[0], path, 0));
  }

  long rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = split_fields(line);
    if (f.empty()) continue;
    if (f.size() != fields.size()) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(fields.size()) + " values, got " + std::to_string(f.size()));
    }
    ++rows;
    admit(cloud, rep, to_double(f[cx], path, line_no), to_double(f[cy], path, line_no),
          to_double(f[cz], path, line_no), to_double(f[ci], path, line_no));
  }
  if (declared >= 0 && rows != declared) {
    throw FormatError(path.string() + ": PCD declares " + std::to_string(declared) +
                      " points but contains " + std::to_string(rows));
  }
}

}  // namespace

CloudFormat parse_cloud_format(const std::string& name) {
  const std::string n = lower(name);
  if (n == "pcd" || n == "pcd_ascii") return CloudFormat::pcd_ascii;
  if (n == "csv" || n == "xyzi_csv" || n == "xyz" || n == "txt") return CloudFormat::xyzI_csv;
  throw FormatError("unknown cloud format '" + name + "'");
}

CloudFormat format_from_extension(const std::filesystem::path& path) {
  return lower(path.extension().string()) == ".pcd" ? CloudFormat::pcd_ascii : CloudFormat::xyzI_csv;
}

std::string extension_for(CloudFormat format) {
  return format == CloudFormat::pcd_ascii ? ".pcd" : ".csv";
}

PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format, ParseReport* report,
                      int scan_id) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  PointCloud cloud;
  cloud.scan_id = scan_id;
  ParseReport rep;
  if (format == CloudFormat::pcd_ascii) {
    read_pcd(in, path, cloud, rep);
  } else {
    read_csv(in, path, cloud, rep);
  }
  if (rep.clamped > 0) {
    log_warn(path.string() + ": clamped " + std::to_string(rep.clamped) +
             " negative intensities to 0");
  }
  if (report != nullptr) *report = rep;
  if (cloud.empty()) throw EmptyCloud(path.string() + ": no valid points");
  return cloud;
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << std::setprecision(10);
  if (format == CloudFormat::pcd_ascii) {
    out << "# .PCD v0.7 - Point Cloud Data file format\n"
        << "VERSION 0.7\n"
        << "FIELDS x y z intensity\n"
        << "SIZE 4 4 4 4\n"
        << "TYPE F F F F\n"
        << "COUNT 1 1 1 1\n"
        << "WIDTH " << cloud.size() << "\n"
        << "HEIGHT 1\n"
        << "VIEWPOINT 0 0 0 1 0 0 0\n"
        << "POINTS " << cloud.size() << "\n"
        << "DATA ascii\n";
  }
  for (const Point& p : cloud.points) {
    out << p.x << ' ' << p.y << ' ' << p.z << ' ' << p.intensity << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.scan_id = cloud.scan_id;
  out.points.reserve(cloud.size());
  for (const Point& p : cloud.points) {
    const Vec3 q = apply(pose, p.xyz());
    out.points.push_back({q.x(), q.y(), q.z(), p.intensity});
  }
  return out;
}

void write_merged(const std::vector<PointCloud>& clouds, const std::vector<Pose>& poses,
                  const std::filesystem::path& path, CloudFormat format) {
  if (clouds.size() != poses.size()) {
    throw Error("write_merged: " + std::to_string(clouds.size()) + " clouds but " +
                std::to_string(poses.size()) + " poses");
  }
  PointCloud merged;
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    const PointCloud moved = transform_cloud(clouds[k], poses[k]);
    merged.points.insert(merged.points.end(), moved.points.begin(), moved.points.end());
  }
  write_cloud(merged, path, format);
}

void write_pose_file(const std::filesystem::path& path, const std::vector<ScanPose>& poses) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& sp : poses) out << sp.scan_id << ' ' << format_pose(sp.pose) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<ScanPose> read_pose_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<ScanPose> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream is(line);
    int id = 0;
    if (!(is >> id)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw FormatError(path.string() + ": pose line must start with a scan id");
    }
    std::string rest;
    std::getline(is, rest);
    out.push_back({id, parse_pose(rest)});
  }
  return out;
}

}  // namespace fidreg
