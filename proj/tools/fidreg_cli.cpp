// fidreg: marker-based multi-scan registration.
//
//   fidreg register --input DIR --format pcd --marker-size 0.692 --out OUT
//   fidreg synth --scene scene.ini --seed 7 --out DIR
//   fidreg eval --est OUT/poses.txt --gt DIR/gt_poses.txt

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>

#include "fidreg/cloud_io.hpp"
#include "fidreg/errors.hpp"
#include "fidreg/log.hpp"
#include "fidreg/pipeline.hpp"
#include "fidreg/synth.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kPartial = 2, kNoMarkers = 3, kIo = 4, kSolver = 5 };

int run_register(fidreg::RunConfig cfg, const std::string& config_file, const std::string& format,
                 const std::string& mode) {
  if (!config_file.empty()) cfg.apply_file(config_file);
  if (!format.empty()) cfg.format = fidreg::parse_cloud_format(format);
  if (!mode.empty()) cfg.mode = fidreg::parse_run_mode(mode);
  const auto rep = fidreg::run_pipeline(cfg);
  std::cout << fidreg::format_report(rep);
  return rep.dropped_scans.empty() ? kOk : kPartial;
}

int run_synth(const std::string& scene, std::uint64_t seed, const std::filesystem::path& out,
              const std::string& format) {
  const auto spec = fidreg::SceneSpec::load(scene);
  const auto res = fidreg::render_scans(spec, seed);
  std::filesystem::create_directories(out);
  const auto fmt = fidreg::parse_cloud_format(format);
  for (const auto& c : res.clouds) {
    char name[32];
    std::snprintf(name, sizeof name, "scan_%03d", c.scan_id);
    fidreg::write_cloud(c, out / (name + fidreg::extension_for(fmt)), fmt);
  }
  fidreg::write_ground_truth(out, res.truth);
  std::cout << "wrote " << res.clouds.size() << " scans to " << out.string() << "\n";
  return kOk;
}

int run_eval(const std::filesystem::path& est_file, const std::filesystem::path& gt_file,
             std::optional<int> anchor) {
  std::map<int, fidreg::Pose> est, gt;
  for (const auto& p : fidreg::read_pose_file(est_file)) est[p.scan_id] = p.pose;
  for (const auto& p : fidreg::read_pose_file(gt_file)) gt[p.scan_id] = p.pose;
  // ground truth may cover scans that registration dropped
  std::map<int, fidreg::Pose> gt_common;
  for (const auto& [id, p] : est) {
    if (gt.contains(id)) gt_common[id] = gt.at(id);
  }
  if (est.empty()) throw fidreg::ScanSetMismatch("no estimated poses");
  const int a = anchor.value_or(est.begin()->first);
  const auto r = fidreg::rmse(est, gt_common, a);
  std::cout.precision(10);
  std::cout << "anchor " << a << "\nscans " << r.terms << "\nRMSE_T " << r.trans << "\nRMSE_R "
            << r.rot << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fiducial-marker registration of unordered LiDAR scans"};
  app.require_subcommand(1);
  bool verbose = false, quiet = false;
  app.add_flag("-v,--verbose", verbose, "Log progress");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  fidreg::RunConfig cfg;
  std::string config_file, format, mode, input, out_dir, detections;
  auto* reg = app.add_subcommand("register", "Register the scans of a directory");
  reg->add_option("--input", input, "Directory of scans")->required();
  reg->add_option("--format", format, "pcd or csv");
  reg->add_option("--marker-size", cfg.marker_side, "Marker side length in meters");
  reg->add_option("--dict", cfg.dictionary, "Dictionary file or default16");
  reg->add_option("--mode", mode, "full, no-first or no-second");
  reg->add_option("--config", config_file, "Config file");
  reg->add_option("--detections", detections, "Import detections.json instead of detecting");
  reg->add_option("--workers", cfg.workers, "Worker threads (0 = all cores)");
  reg->add_option("--out", out_dir, "Output directory");

  std::string scene, synth_out, synth_format = "pcd";
  std::uint64_t seed = 0;
  auto* syn = app.add_subcommand("synth", "Render a synthetic scene");
  syn->add_option("--scene", scene, "Scene file")->required();
  syn->add_option("--seed", seed, "Noise seed");
  syn->add_option("--out", synth_out, "Output directory")->required();
  syn->add_option("--format", synth_format, "pcd or csv");

  std::string est_file, gt_file;
  std::optional<int> anchor;
  auto* ev = app.add_subcommand("eval", "Anchor-relative RMSE against ground truth");
  ev->add_option("--est", est_file, "Estimated poses")->required();
  ev->add_option("--gt", gt_file, "Ground-truth poses")->required();
  ev->add_option("--anchor", anchor, "Anchor scan id (default: smallest estimated id)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // CLI11 has its own code per parse error; --help stays 0
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  fidreg::set_log_level(quiet ? fidreg::LogLevel::quiet
                              : verbose ? fidreg::LogLevel::info : fidreg::LogLevel::warn);

  try {
    if (*reg) {
      cfg.input_dir = input;
      cfg.output_dir = out_dir;
      if (!detections.empty()) cfg.detections_import = detections;
      return run_register(cfg, config_file, format, mode);
    }
    if (*syn) return run_synth(scene, seed, synth_out, synth_format);
    return run_eval(est_file, gt_file, anchor);
  } catch (const fidreg::NoObservations& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNoMarkers;
  } catch (const fidreg::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fidreg::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fidreg::EmptyCloud& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const fidreg::SingularNormalEquations& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSolver;
  } catch (const fidreg::NonFiniteCost& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kSolver;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
