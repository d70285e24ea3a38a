#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fidreg/errors.hpp"
#include "fidreg/fgo.hpp"
#include "fixtures.hpp"

using namespace fidreg;

namespace {

struct Problem {
  std::vector<MarkerObservation> obs;
  VariableSet truth;  // anchor-relative ground truth
  InitialEstimate init;
  CanonicalCorners canon{0.692};
};

// Scans on a loose ring around markers; scan i sees markers i and i+1 (mod M).
Problem make_problem(std::mt19937_64& rng, int scans, int markers, double corner_sigma) {
  Problem p;
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Pose> ws, wm;
  for (int i = 0; i < scans; ++i) ws.push_back(fixtures::random_pose(rng, 1.0, 3.0));
  for (int j = 0; j < markers; ++j) wm.push_back(fixtures::random_pose(rng, 1.0, 3.0));
  const Pose to_anchor = inverse(ws[0]);
  for (int i = 0; i < scans; ++i) {
    p.truth.scan_poses[i] = compose(to_anchor, ws[i]);
    std::set<int> seen = {i % markers, (i + 1) % markers};
    for (int j : seen) {
      MarkerObservation o;
      o.scan_id = i;
      o.marker_id = j;
      const Pose t = compose(inverse(ws[i]), wm[j]);
      for (int s = 0; s < 4; ++s) {
        o.corners3d[s] = apply(t, p.canon.corners[s]) + corner_sigma * Vec3(n(rng), n(rng), n(rng));
      }
      const MarkerPoseFit fit = solve_marker_pose(p.canon, o.corners3d);
      o.pose = fit.pose;
      o.e_pp = fit.e_pp;
      p.obs.push_back(o);
    }
  }
  for (int j = 0; j < markers; ++j) {
    p.truth.marker_poses[j] = compose(to_anchor, wm[j]);
    for (int s = 0; s < 4; ++s) p.truth.corners[{j, s}] = apply(p.truth.marker_poses[j], p.canon.corners[s]);
  }
  const InitGraph g = InitGraph::build(p.obs);
  p.init = propagate_poses(g, shortest_paths(g), p.canon);
  return p;
}

VariableSet perturbed(const VariableSet& v, std::mt19937_64& rng, double rot, double trans, int anchor) {
  std::normal_distribution<double> n(0.0, 1.0);
  auto vec = [&](double s) { return Vec3(n(rng), n(rng), n(rng)) * s; };
  VariableSet out = v;
  for (auto& [id, pose] : out.scan_poses) {
    if (id != anchor) pose = retract(pose, Twist{vec(rot), vec(trans)});
  }
  for (auto& [id, pose] : out.marker_poses) pose = retract(pose, Twist{vec(rot), vec(trans)});
  for (auto& [id, c] : out.corners) c += vec(trans);
  return out;
}

double max_var_diff(const VariableSet& a, const VariableSet& b) {
  double d = 0.0;
  for (const auto& [id, p] : a.scan_poses) d = std::max(d, max_abs_diff(p, b.scan_poses.at(id)));
  for (const auto& [id, p] : a.marker_poses) d = std::max(d, max_abs_diff(p, b.marker_poses.at(id)));
  for (const auto& [id, c] : a.corners) d = std::max(d, (c - b.corners.at(id)).cwiseAbs().maxCoeff());
  return d;
}

Eigen::MatrixXd random_spd(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd a(dim, dim);
  for (int r = 0; r < dim; ++r) {
    for (int c = 0; c < dim; ++c) a(r, c) = n(rng);
  }
  return a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(dim, dim);
}

}  // namespace

TEST_CASE("build_graph: one scan, one marker") {
  std::mt19937_64 rng(41);
  const Problem p = make_problem(rng, 1, 1, 0.0);
  const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  CHECK(g.values.scan_poses.size() == 1);
  CHECK(g.values.marker_poses.size() == 1);
  CHECK(g.values.corners.size() == 4);
  CHECK(g.factors.size() == 10);
  CHECK(g.count(FactorKind::prior_anchor) == 1);
  CHECK(g.count(FactorKind::marker_pose_obs) == 1);
  CHECK(g.count(FactorKind::corner_in_scan) == 4);
  CHECK(g.count(FactorKind::corner_in_marker) == 4);
  CHECK(g.count(FactorKind::anchor_relative) == 0);
}

TEST_CASE("build_graph: a second scan sharing the marker") {
  std::mt19937_64 rng(42);
  Problem p = make_problem(rng, 2, 1, 0.0);
  const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  CHECK(g.values.scan_poses.size() == 2);
  CHECK(g.factors.size() == 16);
  CHECK(g.count(FactorKind::marker_pose_obs) == 2);
  CHECK(g.count(FactorKind::corner_in_scan) == 8);
  CHECK(g.count(FactorKind::corner_in_marker) == 4);
  CHECK(g.count(FactorKind::anchor_relative) == 1);
}

TEST_CASE("build_graph: missing initial values") {
  std::mt19937_64 rng(43);
  Problem p = make_problem(rng, 2, 2, 0.0);
  InitialEstimate no_scan = p.init;
  no_scan.scan_poses.erase(1);
  CHECK_THROWS_AS(build_graph(p.obs, no_scan, p.canon, 0, NoiseConfig{}), MissingInitial);
  InitialEstimate no_marker = p.init;
  no_marker.marker_poses.erase(1);
  CHECK_THROWS_AS(build_graph(p.obs, no_marker, p.canon, 0, NoiseConfig{}), MissingInitial);
}

TEST_CASE("residuals vanish at ground truth on noise-free data") {
  std::mt19937_64 rng(44);
  const Problem p = make_problem(rng, 4, 3, 0.0);
  const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  for (const auto& f : g.factors) CHECK(f.raw_residual(p.truth).norm() < 1e-9);
  CHECK(total_cost(g, p.truth) < 1e-12);
  CHECK(max_var_diff(g.values, p.truth) < 1e-9);
}

TEST_CASE("whitened residual norm equals the Mahalanobis norm") {
  std::mt19937_64 rng(45);
  const Problem p = make_problem(rng, 2, 2, 0.0);
  const VariableSet v = perturbed(p.truth, rng, 0.05, 0.05, 0);
  const Vec3 pt(0.3, -0.2, 1.0);
  for (int k = 0; k < 50; ++k) {
    const Eigen::MatrixXd c6 = random_spd(rng, 6), c3 = random_spd(rng, 3);
    const std::vector<Factor> fs = {
        Factor(FactorKind::prior_anchor, {{VarType::scan_pose, 0}}, Pose::identity(), c6),
        Factor(FactorKind::marker_pose_obs, {{VarType::scan_pose, 1}, {VarType::marker_pose, 0}},
               fixtures::random_pose(rng, 1.0), c6),
        Factor(FactorKind::corner_in_scan, {{VarType::scan_pose, 1}, {VarType::corner, 1, 2}}, pt, c3),
        Factor(FactorKind::corner_in_marker, {{VarType::marker_pose, 1}, {VarType::corner, 1, 2}}, pt, c3),
        Factor(FactorKind::anchor_relative, {{VarType::scan_pose, 0}, {VarType::scan_pose, 1}},
               fixtures::random_pose(rng, 1.0), c6)};
    for (const auto& f : fs) {
      const Eigen::VectorXd r = f.raw_residual(v);
      const double maha = r.dot(f.covariance().ldlt().solve(r));
      CHECK(f.residual(v).squaredNorm() == doctest::Approx(maha).epsilon(1e-12));
    }
  }
}

TEST_CASE("corner residuals are plain subtractions") {
  VariableSet v;
  v.scan_poses[0] = Pose::from_translation(Vec3(1, 0, 0));
  v.marker_poses[2] = Pose::identity();
  v.corners[{2, 1}] = Vec3(2, 3, 4);
  const Eigen::MatrixXd c = Eigen::MatrixXd::Identity(3, 3);
  const Factor fs(FactorKind::corner_in_scan, {{VarType::scan_pose, 0}, {VarType::corner, 2, 1}}, Vec3(1, 1, 1), c);
  CHECK((fs.raw_residual(v) - Eigen::Vector3d(0, 2, 3)).norm() < 1e-15);
  const Factor fm(FactorKind::corner_in_marker, {{VarType::marker_pose, 2}, {VarType::corner, 2, 1}}, Vec3(2, 3, 3), c);
  CHECK((fm.raw_residual(v) - Eigen::Vector3d(0, 0, 1)).norm() < 1e-15);
  const Factor prior(FactorKind::prior_anchor, {{VarType::scan_pose, 0}}, Pose::identity(), Eigen::MatrixXd::Identity(6, 6));
  CHECK((prior.raw_residual(v) - (Eigen::VectorXd(6) << 0, 0, 0, 1, 0, 0).finished()).norm() < 1e-15);
}

TEST_CASE("factor construction is validated") {
  const Eigen::MatrixXd i3 = Eigen::MatrixXd::Identity(3, 3), i6 = Eigen::MatrixXd::Identity(6, 6);
  CHECK_THROWS_AS(Factor(FactorKind::prior_anchor, {{VarType::scan_pose, 0}, {VarType::scan_pose, 1}}, Pose::identity(), i6), Error);
  CHECK_THROWS_AS(Factor(FactorKind::prior_anchor, {{VarType::scan_pose, 0}}, Vec3(0, 0, 0), i6), Error);
  CHECK_THROWS_AS(Factor(FactorKind::prior_anchor, {{VarType::scan_pose, 0}}, Pose::identity(), i3), Error);
  Eigen::MatrixXd asym = i6;
  asym(0, 1) = 0.5;
  CHECK_THROWS_AS(Factor(FactorKind::prior_anchor, {{VarType::scan_pose, 0}}, Pose::identity(), asym), Error);
  CHECK_THROWS_AS(Factor(FactorKind::prior_anchor, {{VarType::scan_pose, 0}}, Pose::identity(), -i6), Error);
  CHECK_THROWS_AS(Factor(FactorKind::corner_in_scan, {{VarType::marker_pose, 0}, {VarType::corner, 0, 0}}, Vec3(0, 0, 0), i3), Error);
  NoiseConfig bad;
  bad.sigma_prior = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("perturbing one scan only changes the factors touching it") {
  std::mt19937_64 rng(46);
  const Problem p = make_problem(rng, 4, 3, 0.0);
  const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  VariableSet moved = p.truth;
  moved.scan_poses[2] = compose(Pose::from_translation(Vec3(0.1, 0, 0)), moved.scan_poses[2]);
  const VarKey k{VarType::scan_pose, 2};
  int touched = 0;
  for (const auto& f : g.factors) {
    const double change = (f.residual(moved) - f.residual(p.truth)).norm();
    if (f.touches(k)) {
      ++touched;
      CHECK(change > 0.0);
    } else {
      CHECK(change == 0.0);
    }
  }
  CHECK(touched == 2 * (1 + 4) + 1);
}

TEST_CASE("central and forward difference Jacobians agree") {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 5; ++trial) {
    const Problem p = make_problem(rng, 3, 2, 0.01);
    const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
    const VariableSet v = perturbed(g.values, rng, 0.05, 0.05, 0);
    const Linearization c = linearize(g, v, DiffScheme::central);
    const Linearization f = linearize(g, v, DiffScheme::forward, 1e-7);
    REQUIRE(c.jacobian.rows() == f.jacobian.rows());
    REQUIRE(c.jacobian.cols() == f.jacobian.cols());
    CHECK((c.jacobian - f.jacobian).norm() <= 1e-4 * c.jacobian.norm());
    CHECK(c.residual.size() == c.jacobian.rows());
  }
}

TEST_CASE("Jacobian columns of corners are exact") {
  // corner_in_scan is linear in the corner: the block is sqrt_info * R^T
  std::mt19937_64 rng(48);
  const Problem p = make_problem(rng, 1, 1, 0.0);
  NoiseConfig noise;
  const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, noise);
  const Linearization lin = linearize(g, g.values);
  int col = 0;
  for (const auto& k : lin.keys) {
    if (k.type == VarType::corner && k.corner == 0) break;
    col += k.dim();
  }
  int row = 0;
  for (const auto& f : g.factors) {
    if (f.kind() == FactorKind::corner_in_scan && f.keys()[1].corner == 0) break;
    row += f.dim();
  }
  const Mat3 expected = g.values.scan_poses.at(0).rotation().matrix().transpose() / noise.sigma_corner_scan;
  CHECK((lin.jacobian.block(row, col, 3, 3) - expected).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("solve_lm recovers ground truth from a perturbed start") {
  std::mt19937_64 rng(49);
  const Problem p = make_problem(rng, 3, 3, 0.0);
  FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  g.values = perturbed(g.values, rng, 0.05, 0.1, 0);
  const LmResult r = solve_lm(g);
  CHECK(r.initial_cost > 1.0);
  CHECK(r.final_cost < 1e-12);
  CHECK(max_var_diff(r.values, p.truth) < 1e-6);
  double prev = r.initial_cost;
  for (const auto& it : r.log) {
    if (!it.accepted) continue;
    CHECK(it.cost < prev);
    prev = it.cost;
  }
  CHECK(r.final_cost == prev);
}

TEST_CASE("solve_lm at the optimum stops within two iterations") {
  std::mt19937_64 rng(50);
  const Problem p = make_problem(rng, 3, 2, 0.01);
  const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  const LmResult first = solve_lm(g);
  FactorGraph again = g;
  again.values = first.values;
  const LmResult second = solve_lm(again);
  CHECK(second.iterations <= 2);
  CHECK(second.final_cost <= second.initial_cost);
  for (const auto& it : second.log) CHECK((!it.accepted || it.cost <= second.initial_cost));
}

TEST_CASE("solve_lm on noisy data never increases the cost") {
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 5; ++trial) {
    const Problem p = make_problem(rng, 4, 3, 0.02);
    FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
    g.values = perturbed(g.values, rng, 0.02, 0.05, 0);
    const LmResult r = solve_lm(g);
    CHECK(r.final_cost <= r.initial_cost);
    double prev = r.initial_cost;
    for (const auto& it : r.log) {
      if (!it.accepted) continue;
      CHECK(it.cost < prev);
      prev = it.cost;
    }
    CHECK(r.termination != "max_iters");
  }
}

TEST_CASE("solve_lm rejects non-finite costs") {
  std::mt19937_64 rng(52);
  const Problem p = make_problem(rng, 2, 1, 0.0);
  FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  g.values.corners[{0, 0}] = Vec3(std::nan(""), 0, 0);
  CHECK_THROWS_AS(solve_lm(g), NonFiniteCost);
}

TEST_CASE("gauge: without the anchor prior the Hessian has a 6-dim null space") {
  std::mt19937_64 rng(53);
  const Problem p = make_problem(rng, 3, 2, 0.005);
  const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  const LmResult r = solve_lm(g);
  auto spectrum = [&](const FactorGraph& graph) {
    const Linearization lin = linearize(graph, r.values);
    const Eigen::MatrixXd h = lin.jacobian.transpose() * lin.jacobian;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    Eigen::VectorXd ev = es.eigenvalues();
    return Eigen::VectorXd(ev / ev.maxCoeff());
  };
  const Eigen::VectorXd with_prior = spectrum(g);
  FactorGraph free = g;
  free.factors.erase(std::remove_if(free.factors.begin(), free.factors.end(),
                                    [](const Factor& f) { return f.kind() == FactorKind::prior_anchor; }),
                     free.factors.end());
  const Eigen::VectorXd without = spectrum(free);
  CHECK(with_prior(0) > 1e-9);
  CHECK(without(5) < 1e-12);
  CHECK(without(6) > 1e4 * std::max(without(5), 1e-300));
  CHECK(without(6) > 1e-9);
}

TEST_CASE("uniform covariance scaling leaves the optimum unchanged") {
  std::mt19937_64 rng(54);
  const Problem p = make_problem(rng, 3, 3, 0.01);
  LmOptions opts;
  opts.tol_cost = 1e-15;
  opts.tol_step = 1e-14;
  std::vector<VariableSet> sols;
  for (double f : {0.1, 1.0, 10.0}) {
    const FactorGraph g = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{}.scaled(f));
    sols.push_back(solve_lm(g, opts).values);
  }
  CHECK(max_var_diff(sols[0], sols[1]) < 1e-8);
  CHECK(max_var_diff(sols[2], sols[1]) < 1e-8);
}

TEST_CASE("path weighting inflates anchor-relative covariances") {
  std::mt19937_64 rng(55);
  const Problem p = make_problem(rng, 3, 3, 0.01);
  NoiseConfig n;
  n.weight_rel_by_path = true;
  const FactorGraph a = build_graph(p.obs, p.init, p.canon, 0, NoiseConfig{});
  const FactorGraph b = build_graph(p.obs, p.init, p.canon, 0, n);
  for (std::size_t k = 0; k < a.factors.size(); ++k) {
    if (a.factors[k].kind() != FactorKind::anchor_relative) {
      CHECK((a.factors[k].covariance() - b.factors[k].covariance()).norm() == 0.0);
      continue;
    }
    const int scan = a.factors[k].keys()[1].id;
    double mean = 0.0;
    for (const auto& o : p.obs) mean += o.e_pp / p.obs.size();
    const double ratio = b.factors[k].covariance()(0, 0) / a.factors[k].covariance()(0, 0);
    CHECK(ratio == doctest::Approx(1.0 + p.init.path_weight.at(scan) / mean));
  }
}

TEST_CASE("iteration log format") {
  const std::string s = format_iteration_log({{1, 2.5, 1e-4, 0.1, true}, {2, 2.5, 1e-3, 0.05, false}});
  std::istringstream in(s);
  int iter, acc;
  double cost, lambda, step;
  in >> iter >> cost >> lambda >> step >> acc;
  CHECK(iter == 1);
  CHECK(cost == 2.5);
  CHECK(acc == 1);
  in >> iter >> cost >> lambda >> step >> acc;
  CHECK(iter == 2);
  CHECK(acc == 0);
}
