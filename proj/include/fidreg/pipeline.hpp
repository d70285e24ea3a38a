#pragma once

// End-to-end registration: per-scan projection, adaptive tag detection,
// corner lifting and marker pose fits, followed by the first-level graph
// initialization and the second-level factor graph refinement.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fidreg/cloud_io.hpp"
#include "fidreg/fgo.hpp"
#include "fidreg/geometry.hpp"
#include "fidreg/initgraph.hpp"
#include "fidreg/projection.hpp"
#include "fidreg/tagdetect.hpp"

namespace fidreg {

enum class RunMode { full, no_first_graph, no_second_graph };

RunMode parse_run_mode(const std::string& name);  // full | no-first | no-second
const char* to_string(RunMode mode);

struct RunConfig {
  std::filesystem::path input_dir;
  CloudFormat format = CloudFormat::pcd_ascii;
  double marker_side = 0.692;
  std::string dictionary = "default16";
  double alpha_a = 0.002;
  double alpha_i = 0.002;
  ThresholdSearchOptions search;
  double square_tolerance = 0.05;  // fraction of the side
  NoiseConfig noise;
  LmOptions lm;
  RunMode mode = RunMode::full;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  /// Skip detection and use these observations (detections.json layout).
  std::optional<std::filesystem::path> detections_import;
  int workers = 0;  // 0 = hardware concurrency

  /// Throws ConfigError for l <= 0, bad resolutions, scope or step.
  void validate() const;

  /// Overrides fields present in sections [input], [projection], [search],
  /// [noise], [solver], [run] of `path`.
  void apply_file(const std::filesystem::path& path);
};

struct ScanDetections {
  int scan_id = 0;
  ProjectionParams params;
  ProjectionReport projection;
  double optimal_threshold = 0.0;
  std::vector<Detection2D> detections;
  std::size_t lift_failures = 0;
  std::size_t non_square = 0;
};

struct StageTimings {
  std::vector<std::pair<std::string, double>> stages;  // seconds, in run order

  double total() const;
};

struct RegistrationReport {
  RunMode mode = RunMode::full;
  int anchor = 0;
  std::map<int, Pose> scan_poses;
  std::map<int, Pose> marker_poses;
  std::map<int, std::array<Vec3, 4>> corners;
  std::vector<ScanDetections> per_scan;
  std::vector<MarkerObservation> observations;
  InitialEstimate initial;
  std::vector<int> dropped_scans;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::string termination;
  std::vector<LmIteration> lm_log;
  StageTimings timings;
  double wall_seconds = 0.0;
};

/// Detection front end for one scan: projection, normalization, adaptive
/// threshold search, corner lifting and per-marker pose fits.
std::vector<MarkerObservation> observe_scan(const PointCloud& cloud, const TagDictionary& dict,
                                            const RunConfig& cfg, ScanDetections* info = nullptr);

/// Registers in-memory clouds (scan ids taken from the clouds). Throws
/// NoObservations when no marker is seen at all.
RegistrationReport register_clouds(const std::vector<PointCloud>& clouds, const RunConfig& cfg);

/// Reads every cloud of cfg.format in cfg.input_dir (sorted by file name,
/// scan ids 0..n-1), registers them and writes outputs when output_dir is set.
RegistrationReport run_pipeline(const RunConfig& cfg);

/// Sorted cloud files of a format in a directory. Throws IoError when none.
std::vector<std::filesystem::path> list_clouds(const std::filesystem::path& dir, CloudFormat format);

/// poses.txt, detections.json, merged.<ext>, report.txt and lm_log.txt.
void write_outputs(const RegistrationReport& report, const std::vector<PointCloud>& clouds,
                   const RunConfig& cfg);

std::string format_report(const RegistrationReport& report);

struct RmseResult {
  double trans = 0.0;  // m
  double rot = 0.0;    // rad
  std::size_t terms = 0;
};

/// Anchor-relative RMSE over non-anchor scans. Throws ScanSetMismatch when
/// the scan id sets differ or the anchor is missing.
RmseResult rmse(const std::map<int, Pose>& est, const std::map<int, Pose>& gt, int anchor);

}  // namespace fidreg
