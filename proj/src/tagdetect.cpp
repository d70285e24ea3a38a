#include "fidreg/tagdetect.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <json.hpp>
#include <set>
#include <sstream>

#include "fidreg/errors.hpp"
#include "fidreg/log.hpp"

namespace fidreg {

// ---------------------------------------------------------------------------
// dictionary

TagDictionary::TagDictionary(int grid_n, std::vector<Code> codes, int max_hamming)
    : grid_n_(grid_n), max_hamming_(max_hamming), codes_(std::move(codes)) {
  if (grid_n_ < 2 || grid_n_ > 8) throw ConfigError("tag grid_n must be in [2, 8]");
  if (max_hamming_ < 0) throw ConfigError("max_hamming must be >= 0");
  std::set<int> ids;
  for (const Code& c : codes_) {
    if (!ids.insert(c.id).second) throw ConfigError("duplicate tag id " + std::to_string(c.id));
    if (grid_n_ * grid_n_ < 64 && (c.bits >> (grid_n_ * grid_n_)) != 0) {
      throw ConfigError("tag code " + std::to_string(c.id) + " has bits beyond the grid");
    }
  }
}

TagDictionary TagDictionary::default16() {
  TagDictionary probe(4, {}, 1);
  std::vector<Code> accepted;
  for (std::uint64_t c = 0; c < (1u << 16) && accepted.size() < 16; ++c) {
    std::uint64_t r = c;
    bool ok = true;
    for (int k = 1; k < 4 && ok; ++k) {
      r = probe.rotate90(r);
      ok = std::popcount(c ^ r) >= 4;
    }
    for (const Code& a : accepted) {
      if (!ok) break;
      ok = probe.rotational_distance(c, a.bits) >= 4;
    }
    if (ok) accepted.push_back({static_cast<int>(accepted.size()), c});
  }
  return TagDictionary(4, std::move(accepted), 1);
}

TagDictionary TagDictionary::load(const std::filesystem::path& path, int grid_n, int max_hamming) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dictionary " + path.string());
  std::vector<Code> codes;
  std::string line;
  while (std::getline(in, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream is(line);
    int id = 0;
    std::string hex;
    if (!(is >> id)) continue;
    if (!(is >> hex)) throw FormatError(path.string() + ": missing bits for id " + std::to_string(id));
    try {
      codes.push_back({id, std::stoull(hex, nullptr, 16)});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad hex '" + hex + "'");
    }
  }
  TagDictionary dict(grid_n, std::move(codes), max_hamming);
  if (dict.codes().size() > 1 && dict.min_pairwise_distance() < 2 * max_hamming + 2) {
    throw ConfigError(path.string() + ": codes are too close for max_hamming " +
                      std::to_string(max_hamming));
  }
  return dict;
}

TagDictionary TagDictionary::from_name(const std::string& name_or_path) {
  if (name_or_path.empty() || name_or_path == "default16") return default16();
  return load(name_or_path);
}

void TagDictionary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Code& c : codes_) out << c.id << " " << std::hex << c.bits << std::dec << "\n";
}

std::uint64_t TagDictionary::bits_of(int id) const {
  for (const Code& c : codes_) {
    if (c.id == id) return c.bits;
  }
  throw ConfigError("tag id " + std::to_string(id) + " not in dictionary");
}

bool TagDictionary::contains(int id) const {
  return std::any_of(codes_.begin(), codes_.end(), [id](const Code& c) { return c.id == id; });
}

std::uint64_t TagDictionary::rotate90(std::uint64_t bits) const {
  const int n = grid_n_, total = n * n;
  std::uint64_t out = 0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const std::uint64_t bit = (bits >> (total - 1 - (r * n + c))) & 1u;
      const int dst = c * n + (n - 1 - r);
      out |= bit << (total - 1 - dst);
    }
  }
  return out;
}

int TagDictionary::rotational_distance(std::uint64_t a, std::uint64_t b) const {
  int best = std::numeric_limits<int>::max();
  for (int k = 0; k < 4; ++k) {
    best = std::min(best, std::popcount(a ^ b));
    b = rotate90(b);
  }
  return best;
}

int TagDictionary::min_pairwise_distance() const {
  int best = std::numeric_limits<int>::max();
  for (std::size_t i = 0; i < codes_.size(); ++i) {
    std::uint64_t r = codes_[i].bits;
    for (int k = 1; k < 4; ++k) {
      r = rotate90(r);
      best = std::min(best, std::popcount(codes_[i].bits ^ r));
    }
    for (std::size_t j = i + 1; j < codes_.size(); ++j) {
      best = std::min(best, rotational_distance(codes_[i].bits, codes_[j].bits));
    }
  }
  return best;
}

TagDictionary::Match TagDictionary::decode(std::uint64_t reading) const {
  Match best{-1, std::numeric_limits<int>::max(), 0};
  for (const Code& c : codes_) {
    std::uint64_t r = c.bits;
    for (int k = 0; k < 4; ++k) {
      const int d = std::popcount(reading ^ r);
      if (d < best.distance) best = {c.id, d, k};
      r = rotate90(r);
    }
  }
  if (best.distance > max_hamming_) best.id = -1;
  return best;
}

// ---------------------------------------------------------------------------
// binarization

BinaryImage binarize(const IntensityImage& img, double lambda) {
  BinaryImage out(img.width(), img.height());
  for (int v = 0; v < img.height(); ++v) {
    for (int u = 0; u < img.width(); ++u) {
      out.at(u, v) = (img.has(u, v) && img.intensity(u, v) > lambda) ? 1 : 0;
    }
  }
  return out;
}

BinaryImage binarize(const BinaryImage& img, double lambda) {
  BinaryImage out = img;
  for (auto& b : out.data) b = (static_cast<double>(b) > lambda) ? 1 : 0;
  return out;
}

double Detection2D::area() const {
  double a = 0.0;
  for (int k = 0; k < 4; ++k) {
    const Vec2& p = corners[k];
    const Vec2& q = corners[(k + 1) % 4];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

// ---------------------------------------------------------------------------
// quad detection

namespace {

struct Pixel {
  int u;
  int v;
};

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const Vec2& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;  // counter-clockwise
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 d = b - a;
  const double t = std::clamp((p - a).dot(d) / std::max(d.squaredNorm(), 1e-300), 0.0, 1.0);
  return (a + t * d - p).norm();
}

// Extremal four hull vertices, counter-clockwise.
bool quad_from_hull(const std::vector<Vec2>& hull, std::array<Vec2, 4>& quad) {
  if (hull.size() < 4) return false;
  Vec2 centroid = Vec2::Zero();
  for (const Vec2& p : hull) centroid += p;
  centroid /= static_cast<double>(hull.size());
  auto farthest = [&](const Vec2& from) {
    std::size_t best = 0;
    double bd = -1;
    for (std::size_t k = 0; k < hull.size(); ++k) {
      const double d = (hull[k] - from).squaredNorm();
      if (d > bd) {
        bd = d;
        best = k;
      }
    }
    return best;
  };
  const std::size_t i0 = farthest(centroid);
  const std::size_t i2 = farthest(hull[i0]);
  const Vec2 a = hull[i0], b = hull[i2];
  std::size_t i1 = i0, i3 = i0;
  double d1 = 0, d3 = 0;
  for (std::size_t k = 0; k < hull.size(); ++k) {
    const double c = cross(a, b, hull[k]);
    if (c < d1) {
      d1 = c;
      i1 = k;
    }
    if (c > d3) {
      d3 = c;
      i3 = k;
    }
  }
  if (i1 == i0 || i3 == i0) return false;
  // a, then the right side, b, left side: cross(a,b,p) < 0 means p is clockwise
  // of ab, so ordering a, i3(left), b, i1(right) is counter-clockwise.
  quad = {a, hull[i3], b, hull[i1]};
  if (cross(quad[0], quad[1], quad[2]) < 0) std::swap(quad[1], quad[3]);
  return true;
}

struct Line {
  Vec2 point;
  Vec2 dir;  // unit
};

std::optional<Line> fit_line(const std::vector<Vec2>& pts) {
  if (pts.size() < 3) return std::nullopt;
  Vec2 c = Vec2::Zero();
  for (const Vec2& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const Vec2& p : pts) cov += (p - c) * (p - c).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
  return Line{c, es.eigenvectors().col(1).normalized()};
}

std::optional<Vec2> intersect(const Line& l1, const Line& l2) {
  const double det = l1.dir.x() * (-l2.dir.y()) - l1.dir.y() * (-l2.dir.x());
  if (std::abs(det) < 1e-9) return std::nullopt;
  const Vec2 rhs = l2.point - l1.point;
  const double t = (rhs.x() * (-l2.dir.y()) - rhs.y() * (-l2.dir.x())) / det;
  return l1.point + t * l1.dir;
}

// Homography taking marker-plane coordinates to image coordinates.
std::optional<Eigen::Matrix3d> homography(const std::array<Vec2, 4>& src,
                                          const std::array<Vec2, 4>& dst) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int k = 0; k < 4; ++k) {
    const double x = src[k].x(), y = src[k].y(), u = dst[k].x(), v = dst[k].y();
    a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b(2 * k) = u;
    b(2 * k + 1) = v;
  }
  Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) return std::nullopt;
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Eigen::Matrix3d hm;
  hm << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
  return hm;
}

Vec2 map_point(const Eigen::Matrix3d& h, double x, double y) {
  const Eigen::Vector3d p = h * Eigen::Vector3d(x, y, 1.0);
  return {p.x() / p.z(), p.y() / p.z()};
}

// Majority of a 3x3 sample pattern inside the cell centred at (x, y).
int sample_cell(const BinaryImage& bin, const Eigen::Matrix3d& h, double x, double y) {
  int bright = 0;
  for (int i = -1; i <= 1; ++i) {
    for (int j = -1; j <= 1; ++j) {
      const Vec2 p = map_point(h, x + 0.25 * i, y + 0.25 * j);
      const int u = static_cast<int>(std::lround(p.x()));
      const int v = static_cast<int>(std::lround(p.y()));
      if (bin.in_bounds(u, v) && bin.at(u, v)) ++bright;
    }
  }
  return bright >= 5 ? 1 : 0;
}

class QuadDetector {
 public:
  QuadDetector(const BinaryImage& bin, const TagDictionary& dict, const DetectorOptions& opts)
      : bin_(bin), dict_(dict), opts_(opts), label_(bin.data.size(), -1) {}

  std::vector<Detection2D> run() {
    std::map<int, Detection2D> best;
    int next_label = 0;
    std::vector<Pixel> stack;
    std::vector<Pixel> comp;
    for (int v = 0; v < bin_.height; ++v) {
      for (int u = 0; u < bin_.width; ++u) {
        if (bin_.at(u, v) != 0 || label_[idx(u, v)] >= 0) continue;
        const int lab = next_label++;
        comp.clear();
        bool touches_border = false;
        stack.push_back({u, v});
        label_[idx(u, v)] = lab;
        while (!stack.empty()) {
          const Pixel p = stack.back();
          stack.pop_back();
          comp.push_back(p);
          if (p.u == 0 || p.v == 0 || p.u == bin_.width - 1 || p.v == bin_.height - 1) {
            touches_border = true;
          }
          static constexpr int kDu[4] = {1, -1, 0, 0};
          static constexpr int kDv[4] = {0, 0, 1, -1};
          for (int k = 0; k < 4; ++k) {
            const int nu = p.u + kDu[k], nv = p.v + kDv[k];
            if (!bin_.in_bounds(nu, nv) || bin_.at(nu, nv) != 0) continue;
            auto& l = label_[idx(nu, nv)];
            if (l >= 0) continue;
            l = lab;
            stack.push_back({nu, nv});
          }
        }
        if (touches_border) continue;
        if (auto det = examine(comp)) {
          auto it = best.find(det->id);
          if (it == best.end() || det->area() > it->second.area()) best[det->id] = *det;
        }
      }
    }
    std::vector<Detection2D> out;
    out.reserve(best.size());
    for (auto& [id, d] : best) out.push_back(d);
    return out;
  }

 private:
  std::size_t idx(int u, int v) const { return static_cast<std::size_t>(v) * bin_.width + u; }

  bool bright(int u, int v) const { return bin_.in_bounds(u, v) && bin_.at(u, v) != 0; }

  std::optional<Detection2D> examine(const std::vector<Pixel>& comp) {
    const int min_edge = opts_.min_edge_px;
    if (static_cast<int>(comp.size()) < 2 * min_edge) return std::nullopt;
    int umin = comp[0].u, umax = umin, vmin = comp[0].v, vmax = vmin;
    for (const Pixel& p : comp) {
      umin = std::min(umin, p.u);
      umax = std::max(umax, p.u);
      vmin = std::min(vmin, p.v);
      vmax = std::max(vmax, p.v);
    }
    if (umax - umin + 1 < min_edge / 2 || vmax - vmin + 1 < min_edge / 2) return std::nullopt;

    std::vector<Pixel> boundary;
    std::vector<Vec2> boundary_pts;
    for (const Pixel& p : comp) {
      if (bright(p.u + 1, p.v) || bright(p.u - 1, p.v) || bright(p.u, p.v + 1) ||
          bright(p.u, p.v - 1)) {
        boundary.push_back(p);
        boundary_pts.emplace_back(p.u, p.v);
      }
    }
    const std::vector<Vec2> hull = convex_hull(boundary_pts);
    std::array<Vec2, 4> quad;
    if (!quad_from_hull(hull, quad)) return std::nullopt;
    double shortest = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 4; ++k) shortest = std::min(shortest, (quad[(k + 1) % 4] - quad[k]).norm());
    if (shortest + 1.0 < min_edge) return std::nullopt;
    // the hull must hug the quad
    const double tol = std::max(2.0, 0.08 * shortest);
    for (const Vec2& h : hull) {
      double d = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 4; ++k) d = std::min(d, point_segment_distance(h, quad[k], quad[(k + 1) % 4]));
      if (d > tol) return std::nullopt;
    }

    if (!refine(boundary, quad)) return std::nullopt;
    for (int k = 0; k < 4; ++k) {
      if ((quad[(k + 1) % 4] - quad[k]).norm() < min_edge) return std::nullopt;
      if (cross(quad[k], quad[(k + 1) % 4], quad[(k + 2) % 4]) <= 0) return std::nullopt;
    }
    return decode(quad);
  }

  // quad is counter-clockwise in (u, v); refines it in place.
  bool refine(const std::vector<Pixel>& boundary, std::array<Vec2, 4>& quad) const {
    static constexpr int kDu[4] = {1, -1, 0, 0};
    static constexpr int kDv[4] = {0, 0, 1, -1};
    for (int iter = 0; iter < std::max(1, opts_.refine_iterations); ++iter) {
      const double band = iter == 0 ? 2.5 : 1.5;
      std::array<Line, 4> lines;
      for (int k = 0; k < 4; ++k) {
        const Vec2 a = quad[k], b = quad[(k + 1) % 4];
        const double len = (b - a).norm();
        const Vec2 d = (b - a) / len;
        const Vec2 n(d.y(), -d.x());  // outward for a counter-clockwise quad
        const double margin = std::max(1.5, 0.08 * len);
        std::vector<Vec2> pts;
        for (const Pixel& p : boundary) {
          const Vec2 pc(p.u, p.v);
          const double t = (pc - a).dot(d);
          if (t < margin || t > len - margin) continue;
          if (std::abs((pc - a).dot(n)) > band) continue;
          for (int j = 0; j < 4; ++j) {
            const int qu = p.u + kDu[j], qv = p.v + kDv[j];
            if (!bright(qu, qv)) continue;
            if (kDu[j] * n.x() + kDv[j] * n.y() <= 0.3) continue;
            pts.emplace_back(p.u + 0.5 * kDu[j], p.v + 0.5 * kDv[j]);
          }
        }
        const auto line = fit_line(pts);
        if (!line) return false;
        lines[k] = *line;
      }
      std::array<Vec2, 4> refined;
      for (int k = 0; k < 4; ++k) {
        const auto c = intersect(lines[(k + 3) % 4], lines[k]);
        if (!c) return false;
        refined[k] = *c;
      }
      quad = refined;
    }
    return true;
  }

  std::optional<Detection2D> decode(const std::array<Vec2, 4>& ccw) const {
    // Canonical corners are counter-clockwise in the marker frame; a mirrored
    // image shows them clockwise.
    std::array<Vec2, 4> ordered = ccw;
    if (opts_.mirrored) ordered = {ccw[0], ccw[3], ccw[2], ccw[1]};
    const int n = dict_.grid_n();
    const double h = 0.5 * (n + 2);
    const std::array<Vec2, 4> canon = {Vec2(-h, -h), Vec2(h, -h), Vec2(h, h), Vec2(-h, h)};

    std::optional<Detection2D> best;
    for (int shift = 0; shift < 4; ++shift) {
      std::array<Vec2, 4> dst;
      for (int k = 0; k < 4; ++k) dst[k] = ordered[(k + shift) % 4];
      const auto hm = homography(canon, dst);
      if (!hm) return std::nullopt;
      if (shift == 0) {
        int border_errors = 0;
        for (int r = 0; r < n + 2; ++r) {
          for (int c = 0; c < n + 2; ++c) {
            if (r != 0 && c != 0 && r != n + 1 && c != n + 1) continue;
            border_errors += sample_cell(bin_, *hm, -h + c + 0.5, h - r - 0.5);
          }
        }
        if (border_errors > opts_.max_border_errors) return std::nullopt;
      }
      std::uint64_t reading = 0;
      for (int r = 0; r < n; ++r) {
        for (int c = 0; c < n; ++c) {
          reading = (reading << 1) |
                    static_cast<std::uint64_t>(sample_cell(bin_, *hm, -h + c + 1.5, h - r - 1.5));
        }
      }
      for (const auto& code : dict_.codes()) {
        const int d = std::popcount(reading ^ code.bits);
        if (d > dict_.max_hamming()) continue;
        if (!best || d < best->hamming) {
          Detection2D det;
          det.id = code.id;
          det.corners = dst;
          det.hamming = d;
          best = det;
        }
      }
    }
    return best;
  }

  const BinaryImage& bin_;
  const TagDictionary& dict_;
  const DetectorOptions& opts_;
  std::vector<int> label_;
};

}  // namespace

std::vector<Detection2D> detect_tags(const BinaryImage& bin, const TagDictionary& dict,
                                     const DetectorOptions& opts) {
  return QuadDetector(bin, dict, opts).run();
}

// ---------------------------------------------------------------------------
// adaptive threshold search

bool MemoryQueue::contains(int id) const {
  return std::any_of(entries.begin(), entries.end(), [id](const Detection2D& d) { return d.id == id; });
}

ThresholdSearchResult adaptive_threshold_search(const IntensityImage& raw,
                                                const TagDictionary& dict,
                                                const ThresholdSearchOptions& opts) {
  if (opts.scope < 1) throw ConfigError("threshold search scope must be >= 1");
  if (!(opts.step > 0.0)) throw ConfigError("threshold search step must be > 0");
  ThresholdSearchResult res;
  std::map<int, std::map<int, Detection2D>> seen;  // id -> step -> detection
  std::map<int, int> appended_at;                  // id -> step
  for (int i = 0; i < opts.scope; ++i) {
    const double lambda = opts.step * i;
    // always from the raw image: a binary image re-thresholded at lambda >= 1 is empty
    const BinaryImage bin = binarize(raw, lambda);
    std::vector<Detection2D> found = detect_tags(bin, dict, opts.detector);
    for (auto& d : found) {
      d.decision_threshold = d.run_low = d.run_high = lambda;
      if (opts.center_in_run) seen[d.id].emplace(i, d);
    }
    res.detections_per_step.push_back(found.size());
    const bool improves = found.size() >= res.queue.size();
    if (improves || opts.append_mode == AppendMode::always_union) {
      for (const auto& d : found) {
        if (!res.queue.contains(d.id)) {
          res.queue.entries.push_back(d);
          appended_at[d.id] = i;
        }
      }
    }
    if (improves) res.optimal_threshold = lambda;
    res.queue_length_per_step.push_back(res.queue.size());
  }
  if (opts.center_in_run) {
    // corners from the middle of the contiguous run of thresholds that decode
    // the id, rather than from its (often marginal) first decoding
    for (auto& e : res.queue.entries) {
      const auto& steps = seen.at(e.id);
      int lo = appended_at.at(e.id), hi = lo;
      while (steps.contains(lo - 1)) --lo;
      while (steps.contains(hi + 1)) ++hi;
      e = steps.at(lo + (hi - lo) / 2);
      e.run_low = opts.step * lo;
      e.run_high = opts.step * hi;
    }
  }
  res.queue.optimal_threshold = res.optimal_threshold;
  return res;
}

std::vector<LiftedDetection> lift_detections(const std::vector<Detection2D>& dets,
                                             const IntensityImage& img, const PointCloud& cloud,
                                             const ProjectionParams& params) {
  std::vector<LiftedDetection> out;
  for (const auto& d : dets) {
    try {
      out.push_back({d, lift_quad_corners(img, cloud, params, d.corners)});
    } catch (const NoRangeSupport& e) {
      log_warn("scan " + std::to_string(cloud.scan_id) + ": dropping marker " +
               std::to_string(d.id) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// detection JSON

void write_detections_json(const std::filesystem::path& path,
                           const std::vector<MarkerObservation>& obs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& o : obs) {
    nlohmann::json corners = nlohmann::json::array();
    for (const Vec3& c : o.corners3d) corners.push_back({c.x(), c.y(), c.z()});
    arr.push_back({{"scan_id", o.scan_id},
                   {"marker_id", o.marker_id},
                   {"corners3d", corners},
                   {"e_pp", o.e_pp}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

std::vector<MarkerObservation> read_detections_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<MarkerObservation> out;
  try {
    const nlohmann::json arr = nlohmann::json::parse(in);
    if (!arr.is_array()) throw FormatError(path.string() + ": expected a JSON array");
    for (const auto& e : arr) {
      MarkerObservation o;
      o.scan_id = e.at("scan_id").get<int>();
      o.marker_id = e.at("marker_id").get<int>();
      const auto& cs = e.at("corners3d");
      if (!cs.is_array() || cs.size() != 4) {
        throw FormatError(path.string() + ": corners3d must hold 4 points");
      }
      for (int k = 0; k < 4; ++k) {
        if (cs[k].size() != 3) throw FormatError(path.string() + ": corner needs 3 coordinates");
        o.corners3d[k] = Vec3(cs[k][0].get<double>(), cs[k][1].get<double>(), cs[k][2].get<double>());
      }
      o.e_pp = e.value("e_pp", 0.0);
      out.push_back(o);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace fidreg
