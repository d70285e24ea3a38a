#pragma once

// Square fiducial detection on binarized intensity images.
//
// Tag layout: a (grid_n + 2)^2 cell grid whose outer ring is dark; the inner
// grid_n x grid_n cells carry the payload (bright = 1). In marker coordinates
// (x right, y up when facing the tag) payload bit k = row * grid_n + col is
// read MSB first, row 0 being the top row and col 0 the left column.
//
// Corner s of a detection corresponds to the canonical marker corner s:
// (-l/2,-l/2), (l/2,-l/2), (l/2,l/2), (-l/2,l/2), counter-clockwise in the
// marker frame.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fidreg/geometry.hpp"
#include "fidreg/projection.hpp"

namespace fidreg {

class TagDictionary {
 public:
  struct Code {
    int id;
    std::uint64_t bits;
  };

  TagDictionary(int grid_n, std::vector<Code> codes, int max_hamming);

  /// grid_n = 4, codes from a greedy ascending scan of 16-bit integers keeping
  /// those at rotational Hamming distance >= 4 from every accepted code and
  /// from their own rotations; max_hamming = 1.
  static TagDictionary default16();
  /// One code per line: "id hex_bits". '#' comments allowed.
  static TagDictionary load(const std::filesystem::path& path, int grid_n = 4,
                            int max_hamming = 1);
  /// "default16" or a file path.
  static TagDictionary from_name(const std::string& name_or_path);
  void save(const std::filesystem::path& path) const;

  int grid_n() const { return grid_n_; }
  int max_hamming() const { return max_hamming_; }
  const std::vector<Code>& codes() const { return codes_; }
  std::uint64_t bits_of(int id) const;
  bool contains(int id) const;

  /// Quarter-turn of the payload grid: cell (r, c) moves to (c, n - 1 - r).
  std::uint64_t rotate90(std::uint64_t bits) const;
  /// min over the four rotations of b of hamming(a, rot^k(b)).
  int rotational_distance(std::uint64_t a, std::uint64_t b) const;
  /// Smallest pairwise rotational distance, including each code against its
  /// own non-trivial rotations.
  int min_pairwise_distance() const;

  struct Match {
    int id = -1;
    int distance = 0;
    int rotation = 0;  // quarter-turns applied to the code to match the reading
  };
  /// Best match over all codes and rotations; id = -1 when none is within
  /// max_hamming.
  Match decode(std::uint64_t reading) const;

 private:
  int grid_n_;
  int max_hamming_;
  std::vector<Code> codes_;
};

struct BinaryImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // 1 = bright

  BinaryImage() = default;
  BinaryImage(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  std::uint8_t& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  bool in_bounds(int u, int v) const { return u >= 0 && v >= 0 && u < width && v < height; }
};

/// 1 where intensity > lambda, 0 elsewhere (empty pixels are 0).
BinaryImage binarize(const IntensityImage& img, double lambda);
/// Same rule applied to an already binary image (values 0/1).
BinaryImage binarize(const BinaryImage& img, double lambda);

struct Detection2D {
  int id = -1;
  std::array<Vec2, 4> corners;
  double decision_threshold = 0.0;
  double run_low = 0.0;   // contiguous range of thresholds that decode this id
  double run_high = 0.0;
  int hamming = 0;

  double area() const;
};

struct DetectorOptions {
  int min_edge_px = 8;
  /// Image u axis runs opposite to the marker's x axis (true for the
  /// spherical projection, where azimuth grows to the sensor's left).
  bool mirrored = true;
  int max_border_errors = 2;
  int refine_iterations = 2;
};

/// Dark-border quads: connected components of dark pixels, convex hull,
/// extremal-vertex quad, edge refinement by least-squares lines through
/// dark/bright transition midpoints, homography grid sampling, dictionary
/// decoding over four rotations. At most one detection per id.
std::vector<Detection2D> detect_tags(const BinaryImage& bin, const TagDictionary& dict,
                                     const DetectorOptions& opts = {});

enum class AppendMode { verbatim, always_union };

struct MemoryQueue {
  std::vector<Detection2D> entries;
  double optimal_threshold = 0.0;

  bool contains(int id) const;
  std::size_t size() const { return entries.size(); }
};

struct ThresholdSearchOptions {
  int scope = 256;      // S
  double step = 1.0;    // delta
  AppendMode append_mode = AppendMode::verbatim;
  /// Take each queued id's corners from the middle of its contiguous decodable
  /// threshold run. Queue membership and the optimal threshold are unaffected.
  bool center_in_run = true;
  DetectorOptions detector;
};

struct ThresholdSearchResult {
  MemoryQueue queue;
  double optimal_threshold = 0.0;
  std::vector<std::size_t> detections_per_step;
  std::vector<std::size_t> queue_length_per_step;
};

/// Sweeps lambda = step * i for i in [0, scope), binarizing the raw image at
/// every step. When a step detects at least as many markers as the queue
/// holds, unseen ids are appended and lambda* = lambda (always_union appends
/// unconditionally but updates lambda* under the same condition).
ThresholdSearchResult adaptive_threshold_search(const IntensityImage& raw,
                                                const TagDictionary& dict,
                                                const ThresholdSearchOptions& opts = {});

struct LiftedDetection {
  Detection2D detection;
  std::array<Vec3, 4> corners3d;
};

/// Lifts every detection with lift_quad_corners; detections without range
/// support are dropped with a warning.
std::vector<LiftedDetection> lift_detections(const std::vector<Detection2D>& dets,
                                             const IntensityImage& img, const PointCloud& cloud,
                                             const ProjectionParams& params);

struct MarkerObservation {
  int marker_id = -1;
  int scan_id = 0;
  std::array<Vec3, 4> corners3d;
  Pose pose;           // marker frame -> scan frame
  double e_pp = 0.0;   // m^2
};

/// JSON: [{scan_id, marker_id, corners3d: [[x,y,z] x4], e_pp}, ...].
void write_detections_json(const std::filesystem::path& path,
                           const std::vector<MarkerObservation>& obs);
/// Reads the same schema; "e_pp" is optional. Poses are left at identity and
/// must be recomputed by the caller.
std::vector<MarkerObservation> read_detections_json(const std::filesystem::path& path);

}  // namespace fidreg
