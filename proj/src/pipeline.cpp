#include "fidreg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "fidreg/config.hpp"
#include "fidreg/errors.hpp"
#include "fidreg/log.hpp"
#include "fidreg/pose_svd.hpp"

namespace fidreg {

RunMode parse_run_mode(const std::string& name) {
  if (name == "full") return RunMode::full;
  if (name == "no-first" || name == "no_first_graph") return RunMode::no_first_graph;
  if (name == "no-second" || name == "no_second_graph") return RunMode::no_second_graph;
  throw ConfigError("unknown mode '" + name + "' (expected full, no-first or no-second)");
}

const char* to_string(RunMode mode) {
  switch (mode) {
    case RunMode::full:
      return "full";
    case RunMode::no_first_graph:
      return "no-first";
    case RunMode::no_second_graph:
      return "no-second";
  }
  return "?";
}

void RunConfig::validate() const {
  if (!(marker_side > 0.0)) throw ConfigError("marker side must be > 0");
  if (!(alpha_a > 0.0 && alpha_i > 0.0)) throw ConfigError("projection resolutions must be > 0");
  if (search.scope < 1) throw ConfigError("threshold scope must be >= 1");
  if (!(search.step > 0.0)) throw ConfigError("threshold step must be > 0");
  if (!(square_tolerance > 0.0)) throw ConfigError("square tolerance must be > 0");
  noise.validate();
}

void RunConfig::apply_file(const std::filesystem::path& path) {
  const ConfigFile cfg = ConfigFile::load(path);
  if (const auto* s = cfg.first("input")) {
    if (s->has("dir")) input_dir = s->get_string("dir");
    if (s->has("format")) format = parse_cloud_format(s->get_string("format"));
    marker_side = s->get_double("marker_size", marker_side);
    dictionary = s->get_string("dict", dictionary);
    if (s->has("detections")) detections_import = s->get_string("detections");
  }
  if (const auto* s = cfg.first("projection")) {
    alpha_a = s->get_double("alpha_a", alpha_a);
    alpha_i = s->get_double("alpha_i", alpha_i);
  }
  if (const auto* s = cfg.first("search")) {
    search.scope = s->get_int("scope", search.scope);
    search.step = s->get_double("step", search.step);
    if (s->has("append_mode")) {
      const std::string m = s->get_string("append_mode");
      if (m == "verbatim") {
        search.append_mode = AppendMode::verbatim;
      } else if (m == "always_union") {
        search.append_mode = AppendMode::always_union;
      } else {
        throw ConfigError("append_mode must be verbatim or always_union");
      }
    }
    search.detector.min_edge_px = s->get_int("min_edge_px", search.detector.min_edge_px);
    search.detector.mirrored = s->get_bool("mirrored", search.detector.mirrored);
    search.center_in_run = s->get_bool("center_in_run", search.center_in_run);
    square_tolerance = s->get_double("square_tolerance", square_tolerance);
  }
  if (const auto* s = cfg.first("noise")) {
    noise.sigma_corner_scan = s->get_double("corner_scan", noise.sigma_corner_scan);
    noise.sigma_corner_marker = s->get_double("corner_marker", noise.sigma_corner_marker);
    noise.sigma_marker_rot = s->get_double("marker_rot", noise.sigma_marker_rot);
    noise.sigma_marker_trans = s->get_double("marker_trans", noise.sigma_marker_trans);
    noise.sigma_rel_rot = s->get_double("rel_rot", noise.sigma_rel_rot);
    noise.sigma_rel_trans = s->get_double("rel_trans", noise.sigma_rel_trans);
    noise.sigma_prior = s->get_double("prior", noise.sigma_prior);
    noise.weight_rel_by_path = s->get_bool("weight_rel_by_path", noise.weight_rel_by_path);
  }
  if (const auto* s = cfg.first("solver")) {
    lm.max_iters = s->get_int("max_iters", lm.max_iters);
    lm.lambda0 = s->get_double("lambda0", lm.lambda0);
    lm.lambda_up = s->get_double("lambda_up", lm.lambda_up);
    lm.lambda_down = s->get_double("lambda_down", lm.lambda_down);
    lm.tol_cost = s->get_double("tol_cost", lm.tol_cost);
    lm.tol_step = s->get_double("tol_step", lm.tol_step);
    lm.fd_step = s->get_double("fd_step", lm.fd_step);
  }
  if (const auto* s = cfg.first("run")) {
    if (s->has("mode")) mode = parse_run_mode(s->get_string("mode"));
    seed = static_cast<std::uint64_t>(s->get_int("seed", static_cast<int>(seed)));
    workers = s->get_int("workers", workers);
    if (s->has("out")) output_dir = s->get_string("out");
  }
}

double StageTimings::total() const {
  double t = 0.0;
  for (const auto& [name, s] : stages) t += s;
  return t;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs fn(0..n-1) on up to `workers` threads and rethrows the first failure.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::size_t w = workers > 0 ? static_cast<std::size_t>(workers)
                              : std::max(1u, std::thread::hardware_concurrency());
  w = std::min(w, n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < w; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct ScanWork {
  const PointCloud* cloud = nullptr;
  ScanDetections info;
  IntensityImage image;
  std::vector<LiftedDetection> lifted;
  std::vector<MarkerObservation> obs;
};

void stage_project(ScanWork& w, const RunConfig& cfg) {
  w.info.scan_id = w.cloud->scan_id;
  w.info.params = ProjectionParams::fit_to(*w.cloud, cfg.alpha_a, cfg.alpha_i);
  w.image = normalize_intensity(project(*w.cloud, w.info.params, &w.info.projection));
}

void stage_detect(ScanWork& w, const TagDictionary& dict, const RunConfig& cfg) {
  const auto res = adaptive_threshold_search(w.image, dict, cfg.search);
  w.info.optimal_threshold = res.optimal_threshold;
  w.info.detections = res.queue.entries;
}

void stage_lift(ScanWork& w, const RunConfig&) {
  w.lifted = lift_detections(w.info.detections, w.image, *w.cloud, w.info.params);
  w.info.lift_failures = w.info.detections.size() - w.lifted.size();
}

void stage_fit(ScanWork& w, const RunConfig& cfg) {
  const CanonicalCorners canon(cfg.marker_side);
  for (const auto& l : w.lifted) {
    if (!is_square(l.corners3d, cfg.marker_side, cfg.square_tolerance * cfg.marker_side)) {
      ++w.info.non_square;
      log_warn("scan " + std::to_string(w.info.scan_id) + ": marker " +
               std::to_string(l.detection.id) + " rejected, lifted corners are not a square of side " +
               std::to_string(cfg.marker_side));
      continue;
    }
    try {
      const MarkerPoseFit fit = solve_marker_pose(canon, l.corners3d);
      w.obs.push_back({l.detection.id, w.info.scan_id, l.corners3d, fit.pose, fit.e_pp});
    } catch (const DegenerateCorners& e) {
      ++w.info.non_square;
      log_warn(e.what());
    }
  }
}

InitialEstimate identity_initial(const std::vector<MarkerObservation>& obs,
                                 const CanonicalCorners& canon) {
  InitialEstimate est;
  std::map<int, const MarkerObservation*> best;
  for (const auto& o : obs) {
    est.scan_poses[o.scan_id] = Pose::identity();
    auto& b = best[o.marker_id];
    if (!b || o.e_pp < b->e_pp || (o.e_pp == b->e_pp && o.scan_id < b->scan_id)) b = &o;
  }
  for (const auto& [id, o] : best) {
    est.marker_poses[id] = o->pose;
    std::array<Vec3, 4> c;
    for (int s = 0; s < 4; ++s) c[s] = apply(o->pose, canon.corners[s]);
    est.corners[id] = c;
  }
  return est;
}

}  // namespace

std::vector<MarkerObservation> observe_scan(const PointCloud& cloud, const TagDictionary& dict,
                                            const RunConfig& cfg, ScanDetections* info) {
  ScanWork w;
  w.cloud = &cloud;
  stage_project(w, cfg);
  stage_detect(w, dict, cfg);
  stage_lift(w, cfg);
  stage_fit(w, cfg);
  if (info) *info = w.info;
  return w.obs;
}

RegistrationReport register_clouds(const std::vector<PointCloud>& clouds, const RunConfig& cfg) {
  cfg.validate();
  const auto t_start = Clock::now();
  RegistrationReport rep;
  rep.mode = cfg.mode;
  const CanonicalCorners canon(cfg.marker_side);

  std::vector<ScanWork> work(clouds.size());
  for (std::size_t k = 0; k < clouds.size(); ++k) {
    work[k].cloud = &clouds[k];
    work[k].info.scan_id = clouds[k].scan_id;
  }
  auto timed = [&](const std::string& name, const std::function<void()>& fn) {
    const auto t0 = Clock::now();
    fn();
    rep.timings.stages.emplace_back(name, seconds_since(t0));
  };

  if (cfg.detections_import) {
    timed("import", [&] {
      for (auto o : read_detections_json(*cfg.detections_import)) {
        const MarkerPoseFit fit = solve_marker_pose(canon, o.corners3d);
        o.pose = fit.pose;
        o.e_pp = fit.e_pp;
        rep.observations.push_back(o);
      }
    });
  } else {
    const TagDictionary dict = TagDictionary::from_name(cfg.dictionary);
    const auto n = work.size();
    timed("project", [&] { parallel_for(n, cfg.workers, [&](std::size_t k) { stage_project(work[k], cfg); }); });
    timed("detect", [&] { parallel_for(n, cfg.workers, [&](std::size_t k) { stage_detect(work[k], dict, cfg); }); });
    timed("lift", [&] { parallel_for(n, cfg.workers, [&](std::size_t k) { stage_lift(work[k], cfg); }); });
    timed("pose_svd", [&] { parallel_for(n, cfg.workers, [&](std::size_t k) { stage_fit(work[k], cfg); }); });
    for (auto& w : work) {
      rep.per_scan.push_back(w.info);
      rep.observations.insert(rep.observations.end(), w.obs.begin(), w.obs.end());
    }
  }
  if (rep.observations.empty()) throw NoObservations("no marker detected in any scan");

  std::set<int> observed;
  for (const auto& o : rep.observations) observed.insert(o.scan_id);
  for (const auto& c : clouds) {
    if (!observed.contains(c.scan_id)) {
      rep.dropped_scans.push_back(c.scan_id);
      log_warn("scan " + std::to_string(c.scan_id) + " has no usable marker and is dropped");
    }
  }

  timed("initgraph", [&] {
    if (cfg.mode == RunMode::no_first_graph) {
      rep.initial = identity_initial(rep.observations, canon);
      rep.anchor = *observed.begin();
      return;
    }
    const InitGraph g = InitGraph::build(rep.observations);
    const ShortestPaths sp = shortest_paths(g);
    for (int s : sp.unreachable) {
      rep.dropped_scans.push_back(s);
      log_warn("scan " + std::to_string(s) + " is not connected to the anchor and is dropped");
    }
    rep.initial = propagate_poses(g, sp, canon);
    rep.anchor = g.anchor();
  });
  std::sort(rep.dropped_scans.begin(), rep.dropped_scans.end());

  std::vector<MarkerObservation> admitted;
  for (const auto& o : rep.observations) {
    if (rep.initial.scan_poses.contains(o.scan_id)) admitted.push_back(o);
  }

  timed("fgo", [&] {
    const FactorGraph fg = build_graph(admitted, rep.initial, canon, rep.anchor, cfg.noise);
    if (cfg.mode == RunMode::no_second_graph) {
      rep.initial_cost = rep.final_cost = total_cost(fg, fg.values);
      rep.termination = "skipped";
      rep.scan_poses = rep.initial.scan_poses;
      rep.marker_poses = rep.initial.marker_poses;
      rep.corners = rep.initial.corners;
      return;
    }
    const LmResult res = solve_lm(fg, cfg.lm);
    rep.initial_cost = res.initial_cost;
    rep.final_cost = res.final_cost;
    rep.termination = res.termination;
    rep.lm_log = res.log;
    rep.scan_poses = res.values.scan_poses;
    rep.marker_poses = res.values.marker_poses;
    for (const auto& [key, p] : res.values.corners) rep.corners[key.first][key.second] = p;
  });
  rep.wall_seconds = seconds_since(t_start);
  return rep;
}

std::vector<std::filesystem::path> list_clouds(const std::filesystem::path& dir, CloudFormat format) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  const std::string ext = extension_for(format);
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ext) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no " + ext + " files in " + dir.string());
  return files;
}

RegistrationReport run_pipeline(const RunConfig& cfg) {
  cfg.validate();
  const auto t0 = Clock::now();
  std::vector<PointCloud> clouds;
  for (const auto& f : list_clouds(cfg.input_dir, cfg.format)) {
    ParseReport pr;
    clouds.push_back(read_cloud(f, cfg.format, &pr, static_cast<int>(clouds.size())));
    if (pr.dropped > 0) {
      log_warn(f.filename().string() + ": dropped " + std::to_string(pr.dropped) + " non-finite rows");
    }
  }
  const double read_s = seconds_since(t0);
  RegistrationReport rep = register_clouds(clouds, cfg);
  rep.timings.stages.insert(rep.timings.stages.begin(), {"read", read_s});
  if (!cfg.output_dir.empty()) {
    const auto t1 = Clock::now();
    write_outputs(rep, clouds, cfg);
    rep.timings.stages.emplace_back("write", seconds_since(t1));
  }
  rep.wall_seconds = seconds_since(t0);
  if (!cfg.output_dir.empty()) {
    std::ofstream out(cfg.output_dir / "report.txt");
    out << format_report(rep);
  }
  return rep;
}

void write_outputs(const RegistrationReport& report, const std::vector<PointCloud>& clouds,
                   const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create " + cfg.output_dir.string() + ": " + ec.message());

  std::vector<ScanPose> poses;
  for (const auto& [id, p] : report.scan_poses) poses.push_back({id, p});
  write_pose_file(cfg.output_dir / "poses.txt", poses);

  std::vector<ScanPose> markers;
  for (const auto& [id, p] : report.marker_poses) markers.push_back({id, p});
  write_pose_file(cfg.output_dir / "markers.txt", markers);

  write_detections_json(cfg.output_dir / "detections.json", report.observations);

  std::vector<PointCloud> kept;
  std::vector<Pose> kept_poses;
  for (const auto& c : clouds) {
    const auto it = report.scan_poses.find(c.scan_id);
    if (it == report.scan_poses.end()) continue;
    kept.push_back(c);
    kept_poses.push_back(it->second);
  }
  write_merged(kept, kept_poses, cfg.output_dir / ("merged" + extension_for(cfg.format)), cfg.format);

  std::ofstream log(cfg.output_dir / "lm_log.txt");
  if (!log) throw IoError("cannot write lm_log.txt");
  log << format_iteration_log(report.lm_log);

  std::ofstream out(cfg.output_dir / "report.txt");
  if (!out) throw IoError("cannot write report.txt");
  out << format_report(report);
}

std::string format_report(const RegistrationReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "mode " << to_string(r.mode) << "\n";
  os << "anchor " << r.anchor << "\n";
  os << "scans_registered " << r.scan_poses.size() << "\n";
  os << "scans_dropped";
  for (int s : r.dropped_scans) os << ' ' << s;
  os << "\n";
  os << "markers " << r.marker_poses.size() << "\n";
  os << "observations " << r.observations.size() << "\n";
  for (const auto& s : r.per_scan) {
    os << "scan " << s.scan_id << " threshold " << s.optimal_threshold << " detections "
       << s.detections.size() << " ids";
    for (const auto& d : s.detections) os << ' ' << d.id;
    os << " lift_failures " << s.lift_failures << " non_square " << s.non_square << "\n";
  }
  os << "initial_cost " << r.initial_cost << "\n";
  os << "final_cost " << r.final_cost << "\n";
  os << "termination " << r.termination << "\n";
  os << "lm_iterations " << r.lm_log.size() << "\n";
  for (const auto& [name, s] : r.timings.stages) os << "time_" << name << " " << s << "\n";
  os << "time_total " << r.timings.total() << "\n";
  os << "time_wall " << r.wall_seconds << "\n";
  return os.str();
}

RmseResult rmse(const std::map<int, Pose>& est, const std::map<int, Pose>& gt, int anchor) {
  std::set<int> a, b;
  for (const auto& [id, p] : est) a.insert(id);
  for (const auto& [id, p] : gt) b.insert(id);
  if (a != b) throw ScanSetMismatch("estimated and ground-truth scan sets differ");
  if (!a.contains(anchor)) throw ScanSetMismatch("anchor scan " + std::to_string(anchor) + " missing");
  const Pose est_inv = inverse(est.at(anchor));
  const Pose gt_inv = inverse(gt.at(anchor));
  RmseResult r;
  double st = 0.0, sr = 0.0;
  for (const auto& [id, p] : est) {
    if (id == anchor) continue;
    const Twist d = pose_ominus(compose(est_inv, p), compose(gt_inv, gt.at(id)));
    st += d.trans_part.squaredNorm();
    sr += d.rot_part.squaredNorm();
    ++r.terms;
  }
  if (r.terms > 0) {
    r.trans = std::sqrt(st / static_cast<double>(r.terms));
    r.rot = std::sqrt(sr / static_cast<double>(r.terms));
  }
  return r;
}

}  // namespace fidreg
