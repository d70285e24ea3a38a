#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fidreg/geometry.hpp"

namespace fidreg {

struct Point {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double intensity = 0.0;

  Vec3 xyz() const { return {x, y, z}; }
};

struct PointCloud {
  std::vector<Point> points;
  int scan_id = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

enum class CloudFormat { pcd_ascii, xyzI_csv };

/// Maps "pcd" / "csv" (and the enum spellings) to a format.
CloudFormat parse_cloud_format(const std::string& name);
/// Guesses from the file extension; ".pcd" is PCD, everything else CSV.
CloudFormat format_from_extension(const std::filesystem::path& path);
std::string extension_for(CloudFormat format);

struct ParseReport {
  std::size_t rows = 0;
  std::size_t dropped = 0;  // non-finite rows
  std::size_t clamped = 0;  // negative intensities raised to 0
};

/// Throws FormatError on malformed header/rows, EmptyCloud when no finite
/// point survives, IoError when the file cannot be opened.
PointCloud read_cloud(const std::filesystem::path& path, CloudFormat format,
                      ParseReport* report = nullptr, int scan_id = 0);

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);

/// Transforms every cloud by its index-aligned pose and writes one file.
void write_merged(const std::vector<PointCloud>& clouds, const std::vector<Pose>& poses,
                  const std::filesystem::path& path, CloudFormat format);

PointCloud transform_cloud(const PointCloud& cloud, const Pose& pose);

/// Pose files: one line per scan, "<scan_id> <12 values>". '#' comments allowed.
struct ScanPose {
  int scan_id = 0;
  Pose pose;
};
void write_pose_file(const std::filesystem::path& path, const std::vector<ScanPose>& poses);
std::vector<ScanPose> read_pose_file(const std::filesystem::path& path);

}  // namespace fidreg
