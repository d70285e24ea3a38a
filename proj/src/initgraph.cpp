#include "fidreg/initgraph.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <queue>
#include <tuple>

#include "fidreg/errors.hpp"

namespace fidreg {

InitGraph InitGraph::build(const std::vector<MarkerObservation>& observations,
                           std::optional<int> anchor) {
  if (observations.empty()) throw NoObservations("first-level graph: no marker observations");
  InitGraph g;
  for (const auto& o : observations) {
    if (!(o.e_pp >= 0.0)) throw Error("observation with negative or NaN e_pp");
    g.scans_.insert(o.scan_id);
    g.markers_.insert(o.marker_id);
    const auto key = std::make_pair(o.scan_id, o.marker_id);
    auto it = g.edges_.find(key);
    if (it == g.edges_.end() || o.e_pp < it->second.weight) g.edges_[key] = {o.e_pp, o.pose};
  }
  g.anchor_ = anchor.value_or(*g.scans_.begin());
  if (!g.scans_.contains(g.anchor_)) {
    throw Error("anchor scan " + std::to_string(g.anchor_) + " has no observations");
  }
  for (const auto& [key, e] : g.edges_) {
    const NodeKey s{NodeType::scan, key.first}, m{NodeType::marker, key.second};
    g.adjacency_[s].push_back({m, e.weight});
    g.adjacency_[m].push_back({s, e.weight});
  }
  return g;
}

std::vector<std::pair<NodeKey, double>> InitGraph::neighbours(const NodeKey& node) const {
  const auto it = adjacency_.find(node);
  return it == adjacency_.end() ? std::vector<std::pair<NodeKey, double>>{} : it->second;
}

const InitEdge& InitGraph::edge(int scan, int marker) const {
  const auto it = edges_.find({scan, marker});
  if (it == edges_.end()) {
    throw Error("no edge between scan " + std::to_string(scan) + " and marker " +
                std::to_string(marker));
  }
  return it->second;
}

void InitGraph::write_dot(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "graph first_level {\n";
  for (int s : scans_) {
    out << "  f" << s << " [shape=box" << (s == anchor_ ? ", style=bold" : "") << "];\n";
  }
  for (int m : markers_) out << "  m" << m << " [shape=ellipse];\n";
  for (const auto& [key, e] : edges_) {
    out << "  f" << key.first << " -- m" << key.second << " [label=\"" << e.weight << "\"];\n";
  }
  out << "}\n";
}

ShortestPaths shortest_paths(const InitGraph& g) {
  using Entry = std::tuple<double, NodeType, int>;
  std::map<NodeKey, double> dist;
  std::map<NodeKey, NodeKey> pred;
  std::set<NodeKey> done;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> pq;

  const NodeKey root{NodeType::scan, g.anchor()};
  dist[root] = 0.0;
  pq.push({0.0, root.type, root.id});
  while (!pq.empty()) {
    const auto [d, type, id] = pq.top();
    pq.pop();
    const NodeKey u{type, id};
    if (done.contains(u) || d > dist[u]) continue;
    done.insert(u);
    for (const auto& [v, w] : g.neighbours(u)) {
      if (done.contains(v)) continue;
      const double nd = d + w;
      const auto it = dist.find(v);
      if (it == dist.end() || nd < it->second || (nd == it->second && u < pred.at(v))) {
        dist[v] = nd;
        pred[v] = u;
        pq.push({nd, v.type, v.id});
      }
    }
  }

  ShortestPaths sp;
  for (int s : g.scan_nodes()) {
    const NodeKey target{NodeType::scan, s};
    if (!done.contains(target)) {
      sp.unreachable.push_back(s);
      continue;
    }
    ScanPath path;
    for (NodeKey n = target;; n = pred.at(n)) {
      path.nodes.push_back(n);
      if (n == root) break;
    }
    std::reverse(path.nodes.begin(), path.nodes.end());
    for (std::size_t k = 0; k + 1 < path.nodes.size(); ++k) {
      const NodeKey& a = path.nodes[k];
      const NodeKey& b = path.nodes[k + 1];
      path.weight += a.type == NodeType::scan ? g.edge(a.id, b.id).weight : g.edge(b.id, a.id).weight;
    }
    sp.paths[s] = std::move(path);
  }
  for (int m : g.marker_nodes()) {
    const NodeKey mk{NodeType::marker, m};
    if (done.contains(mk)) sp.marker_parent[m] = pred.at(mk).id;
  }
  return sp;
}

void require_connected(const ShortestPaths& sp) {
  if (sp.unreachable.empty()) return;
  std::string ids;
  for (int s : sp.unreachable) ids += (ids.empty() ? "" : ", ") + std::to_string(s);
  throw DisconnectedScan("scans unreachable from the anchor: " + ids, sp.unreachable);
}

InitialEstimate propagate_poses(const InitGraph& g, const ShortestPaths& sp,
                                const CanonicalCorners& canonical) {
  InitialEstimate est;
  std::map<int, int> marker_on_path;  // marker -> scan preceding it on a path
  for (const auto& [scan, path] : sp.paths) {
    Pose current = Pose::identity();
    for (std::size_t k = 0; k + 2 < path.nodes.size(); k += 2) {
      const int a = path.nodes[k].id, j = path.nodes[k + 1].id, b = path.nodes[k + 2].id;
      // p_a = T^j_a * p_M and p_b = T^j_b * p_M, so p_a = T^j_a (T^j_b)^-1 p_b
      const Pose step = compose(g.edge(a, j).marker_in_scan, inverse(g.edge(b, j).marker_in_scan));
      current = compose(current, step);
      marker_on_path.emplace(j, a);
    }
    est.scan_poses[scan] = current;
    est.path_weight[scan] = path.weight;
  }

  for (int m : g.marker_nodes()) {
    std::optional<int> via;
    if (auto it = marker_on_path.find(m); it != marker_on_path.end()) {
      via = it->second;
    } else {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [key, e] : g.edges()) {
        if (key.second != m || !est.scan_poses.contains(key.first)) continue;
        if (e.weight < best) {
          best = e.weight;
          via = key.first;
        }
      }
    }
    if (!via) continue;  // only seen by unreachable scans
    const Pose marker = compose(est.scan_poses.at(*via), g.edge(*via, m).marker_in_scan);
    est.marker_poses[m] = marker;
    std::array<Vec3, 4> c;
    for (int s = 0; s < 4; ++s) c[s] = apply(marker, canonical.corners[s]);
    est.corners[m] = c;
  }
  return est;
}

}  // namespace fidreg
