#pragma once

// First-level graph: scans and markers as nodes, one edge per (scan, marker)
// observation weighted by its point-to-point error. Shortest paths from the
// anchor scan drive the initial pose propagation.

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "fidreg/geometry.hpp"
#include "fidreg/pose_svd.hpp"
#include "fidreg/tagdetect.hpp"

namespace fidreg {

enum class NodeType { scan = 0, marker = 1 };

struct NodeKey {
  NodeType type;
  int id;

  auto operator<=>(const NodeKey&) const = default;
};

struct InitEdge {
  double weight = 0.0;  // e_pp, m^2
  Pose marker_in_scan;  // T^j_i
};

class InitGraph {
 public:
  /// Keeps the smaller e_pp when (scan, marker) repeats. The anchor is the
  /// smallest scan id unless given. Throws NoObservations on empty input.
  static InitGraph build(const std::vector<MarkerObservation>& observations,
                         std::optional<int> anchor = std::nullopt);

  const std::set<int>& scan_nodes() const { return scans_; }
  const std::set<int>& marker_nodes() const { return markers_; }
  /// Keyed by (scan id, marker id).
  const std::map<std::pair<int, int>, InitEdge>& edges() const { return edges_; }
  int anchor() const { return anchor_; }

  std::vector<std::pair<NodeKey, double>> neighbours(const NodeKey& node) const;
  const InitEdge& edge(int scan, int marker) const;

  void write_dot(const std::filesystem::path& path) const;

 private:
  std::set<int> scans_;
  std::set<int> markers_;
  std::map<std::pair<int, int>, InitEdge> edges_;
  std::map<NodeKey, std::vector<std::pair<NodeKey, double>>> adjacency_;
  int anchor_ = 0;
};

struct ScanPath {
  std::vector<NodeKey> nodes;  // anchor scan ... target scan, alternating types
  double weight = 0.0;         // sum of e_pp along the path
};

struct ShortestPaths {
  std::map<int, ScanPath> paths;  // every reachable scan, anchor included
  std::vector<int> unreachable;   // scans with no path to the anchor
  /// Tree predecessor of every reached marker (the scan it was reached from).
  std::map<int, int> marker_parent;
};

/// Dijkstra from the anchor. Ties on distance are broken by the smaller
/// (node type, id). Unreachable scans are listed, not fatal.
ShortestPaths shortest_paths(const InitGraph& g);

/// Throws DisconnectedScan when shortest_paths found unreachable scans.
void require_connected(const ShortestPaths& sp);

struct InitialEstimate {
  std::map<int, Pose> scan_poses;    // G_T_i: scan frame -> global frame
  std::map<int, Pose> marker_poses;  // G_T^j: marker frame -> global frame
  std::map<int, std::array<Vec3, 4>> corners;  // global corner positions
  std::map<int, double> path_weight;           // accumulated e_pp per scan
};

/// Propagates poses along the shortest paths. A hop scan a -> marker j ->
/// scan b composes G_T_b = G_T_a * T^j_a * (T^j_b)^-1. Markers take the
/// observation from the scan preceding them on a returned path, or their
/// lowest-e_pp observation among reached scans when no path passes through
/// them.
InitialEstimate propagate_poses(const InitGraph& g, const ShortestPaths& sp,
                                const CanonicalCorners& canonical);

}  // namespace fidreg
