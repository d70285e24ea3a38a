#include "fidreg/fgo.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "fidreg/errors.hpp"

namespace fidreg {

std::string VarKey::str() const {
  switch (type) {
    case VarType::scan_pose:
      return "T_" + std::to_string(id);
    case VarType::marker_pose:
      return "M_" + std::to_string(id);
    case VarType::corner:
      return "p_" + std::to_string(id) + "." + std::to_string(corner);
  }
  return "?";
}

bool VariableSet::has(const VarKey& k) const {
  switch (k.type) {
    case VarType::scan_pose:
      return scan_poses.contains(k.id);
    case VarType::marker_pose:
      return marker_poses.contains(k.id);
    case VarType::corner:
      return corners.contains({k.id, k.corner});
  }
  return false;
}

std::vector<VarKey> VariableSet::keys() const {
  std::vector<VarKey> out;
  for (const auto& [id, p] : scan_poses) out.push_back({VarType::scan_pose, id});
  for (const auto& [id, p] : marker_poses) out.push_back({VarType::marker_pose, id});
  for (const auto& [key, p] : corners) out.push_back({VarType::corner, key.first, key.second});
  return out;
}

const char* to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::prior_anchor:
      return "prior_anchor";
    case FactorKind::marker_pose_obs:
      return "marker_pose_obs";
    case FactorKind::corner_in_marker:
      return "corner_in_marker";
    case FactorKind::corner_in_scan:
      return "corner_in_scan";
    case FactorKind::anchor_relative:
      return "anchor_relative";
  }
  return "?";
}

namespace {

const Pose& pose_of(const VariableSet& vars, const VarKey& k) {
  if (k.type == VarType::scan_pose) return vars.scan_poses.at(k.id);
  return vars.marker_poses.at(k.id);
}

Eigen::VectorXd stack(const Twist& t) {
  Eigen::VectorXd v(6);
  v << t.rot_part, t.trans_part;
  return v;
}

}  // namespace

Factor::Factor(FactorKind kind, std::vector<VarKey> keys, Measurement z,
               const Eigen::MatrixXd& covariance)
    : kind_(kind), keys_(std::move(keys)), z_(std::move(z)), cov_(covariance) {
  const bool pose_kind = kind == FactorKind::prior_anchor || kind == FactorKind::marker_pose_obs ||
                         kind == FactorKind::anchor_relative;
  const std::size_t arity = kind == FactorKind::prior_anchor ? 1 : 2;
  const std::string name = to_string(kind);
  if (keys_.size() != arity) throw Error(name + ": wrong number of variables");
  if (pose_kind != std::holds_alternative<Pose>(z_)) throw Error(name + ": wrong measurement type");
  const int dim = pose_kind ? 6 : 3;
  if (cov_.rows() != dim || cov_.cols() != dim) throw Error(name + ": wrong covariance size");
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * cov_.cwiseAbs().maxCoeff()) {
    throw Error(name + ": covariance is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov_);
  if (llt.info() != Eigen::Success) throw Error(name + ": covariance is not positive definite");
  const Eigen::MatrixXd l = llt.matrixL();
  sqrt_info_ = l.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(dim, dim));

  auto expect = [&](std::size_t i, VarType t) {
    if (keys_[i].type != t) throw Error(name + ": variable " + keys_[i].str() + " has the wrong type");
  };
  switch (kind) {
    case FactorKind::prior_anchor:
      expect(0, VarType::scan_pose);
      break;
    case FactorKind::marker_pose_obs:
      expect(0, VarType::scan_pose);
      expect(1, VarType::marker_pose);
      break;
    case FactorKind::corner_in_marker:
      expect(0, VarType::marker_pose);
      expect(1, VarType::corner);
      break;
    case FactorKind::corner_in_scan:
      expect(0, VarType::scan_pose);
      expect(1, VarType::corner);
      break;
    case FactorKind::anchor_relative:
      expect(0, VarType::scan_pose);
      expect(1, VarType::scan_pose);
      break;
  }
}

bool Factor::touches(const VarKey& k) const {
  return std::find(keys_.begin(), keys_.end(), k) != keys_.end();
}

Eigen::VectorXd Factor::raw_residual(const VariableSet& vars) const {
  switch (kind_) {
    case FactorKind::prior_anchor:
      return stack(pose_ominus(pose_of(vars, keys_[0]), std::get<Pose>(z_)));
    case FactorKind::marker_pose_obs:
    case FactorKind::anchor_relative: {
      const Pose h = compose(inverse(pose_of(vars, keys_[0])), pose_of(vars, keys_[1]));
      return stack(pose_ominus(h, std::get<Pose>(z_)));
    }
    case FactorKind::corner_in_marker:
    case FactorKind::corner_in_scan: {
      const Vec3& p = vars.corners.at({keys_[1].id, keys_[1].corner});
      return apply(inverse(pose_of(vars, keys_[0])), p) - std::get<Vec3>(z_);
    }
  }
  return {};
}

Eigen::VectorXd Factor::residual(const VariableSet& vars) const {
  return sqrt_info_ * raw_residual(vars);
}

void NoiseConfig::validate() const {
  for (double s : {sigma_corner_scan, sigma_corner_marker, sigma_marker_rot, sigma_marker_trans,
                   sigma_rel_rot, sigma_rel_trans, sigma_prior}) {
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("noise sigmas must be finite and > 0");
  }
}

NoiseConfig NoiseConfig::scaled(double variance_factor) const {
  NoiseConfig n = *this;
  const double f = std::sqrt(variance_factor);
  for (double* s : {&n.sigma_corner_scan, &n.sigma_corner_marker, &n.sigma_marker_rot,
                    &n.sigma_marker_trans, &n.sigma_rel_rot, &n.sigma_rel_trans, &n.sigma_prior}) {
    *s *= f;
  }
  return n;
}

std::size_t FactorGraph::count(FactorKind kind) const {
  return static_cast<std::size_t>(std::count_if(
      factors.begin(), factors.end(), [kind](const Factor& f) { return f.kind() == kind; }));
}

namespace {

Eigen::MatrixXd pose_cov(double sigma_rot, double sigma_trans) {
  Eigen::VectorXd d(6);
  d << Vec3::Constant(sigma_rot * sigma_rot), Vec3::Constant(sigma_trans * sigma_trans);
  return d.asDiagonal();
}

Eigen::MatrixXd point_cov(double sigma) { return Eigen::MatrixXd::Identity(3, 3) * sigma * sigma; }

}  // namespace

FactorGraph build_graph(const std::vector<MarkerObservation>& observations,
                        const InitialEstimate& init, const CanonicalCorners& canonical,
                        int anchor, const NoiseConfig& noise) {
  noise.validate();
  FactorGraph g;
  g.anchor = anchor;

  std::vector<MarkerObservation> obs = observations;
  std::stable_sort(obs.begin(), obs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.scan_id, a.marker_id) < std::tie(b.scan_id, b.marker_id);
  });

  std::set<int> scans{anchor};
  for (const auto& o : obs) scans.insert(o.scan_id);
  for (int s : scans) {
    const auto it = init.scan_poses.find(s);
    if (it == init.scan_poses.end()) {
      throw MissingInitial("no initial pose for scan " + std::to_string(s));
    }
    g.values.scan_poses[s] = it->second;
  }

  std::set<int> markers_done;
  for (const auto& o : obs) {
    const int i = o.scan_id, j = o.marker_id;
    if (!markers_done.contains(j)) {
      const auto mp = init.marker_poses.find(j);
      const auto cp = init.corners.find(j);
      if (mp == init.marker_poses.end() || cp == init.corners.end()) {
        throw MissingInitial("no initial pose/corners for marker " + std::to_string(j));
      }
      g.values.marker_poses[j] = mp->second;
      for (int s = 0; s < 4; ++s) g.values.corners[{j, s}] = cp->second[s];
    }
    g.factors.emplace_back(FactorKind::marker_pose_obs,
                           std::vector<VarKey>{{VarType::scan_pose, i}, {VarType::marker_pose, j}},
                           o.pose, pose_cov(noise.sigma_marker_rot, noise.sigma_marker_trans));
    for (int s = 0; s < 4; ++s) {
      g.factors.emplace_back(FactorKind::corner_in_scan,
                             std::vector<VarKey>{{VarType::scan_pose, i}, {VarType::corner, j, s}},
                             o.corners3d[s], point_cov(noise.sigma_corner_scan));
    }
    if (markers_done.insert(j).second) {
      for (int s = 0; s < 4; ++s) {
        g.factors.emplace_back(FactorKind::corner_in_marker,
                               std::vector<VarKey>{{VarType::marker_pose, j}, {VarType::corner, j, s}},
                               canonical.corners[s], point_cov(noise.sigma_corner_marker));
      }
    }
  }

  g.factors.emplace_back(FactorKind::prior_anchor, std::vector<VarKey>{{VarType::scan_pose, anchor}},
                         Pose::identity(), pose_cov(noise.sigma_prior, noise.sigma_prior));

  double mean_epp = 0.0;
  for (const auto& o : obs) mean_epp += o.e_pp;
  if (!obs.empty()) mean_epp /= static_cast<double>(obs.size());
  const Pose& anchor_init = g.values.scan_poses.at(anchor);
  for (int s : scans) {
    if (s == anchor) continue;
    double inflate = 1.0;
    if (noise.weight_rel_by_path && mean_epp > 0.0) {
      const auto w = init.path_weight.find(s);
      if (w != init.path_weight.end()) inflate += w->second / mean_epp;
    }
    const Pose rel = compose(inverse(anchor_init), g.values.scan_poses.at(s));
    g.factors.emplace_back(FactorKind::anchor_relative,
                           std::vector<VarKey>{{VarType::scan_pose, anchor}, {VarType::scan_pose, s}},
                           rel, pose_cov(noise.sigma_rel_rot, noise.sigma_rel_trans) * inflate);
  }
  return g;
}

double total_cost(const FactorGraph& g, const VariableSet& vars) {
  double c = 0.0;
  for (const auto& f : g.factors) c += f.residual(vars).squaredNorm();
  return 0.5 * c;
}

namespace {

void perturb(VariableSet& vars, const VarKey& k, const Eigen::VectorXd& d) {
  switch (k.type) {
    case VarType::scan_pose: {
      Pose& p = vars.scan_poses.at(k.id);
      p = retract(p, Twist::from_vector(d));
      break;
    }
    case VarType::marker_pose: {
      Pose& p = vars.marker_poses.at(k.id);
      p = retract(p, Twist::from_vector(d));
      break;
    }
    case VarType::corner:
      vars.corners.at({k.id, k.corner}) += d.head<3>();
      break;
  }
}

}  // namespace

VariableSet apply_delta(const VariableSet& vars, const std::vector<VarKey>& keys,
                        const Eigen::VectorXd& delta) {
  VariableSet out = vars;
  Eigen::Index off = 0;
  for (const VarKey& k : keys) {
    perturb(out, k, delta.segment(off, k.dim()));
    off += k.dim();
  }
  return out;
}

Linearization linearize(const FactorGraph& g, const VariableSet& vars, DiffScheme scheme,
                        double step) {
  Linearization lin;
  lin.keys = vars.keys();
  std::vector<Eigen::Index> row_off(g.factors.size() + 1, 0);
  for (std::size_t f = 0; f < g.factors.size(); ++f) row_off[f + 1] = row_off[f] + g.factors[f].dim();
  Eigen::Index cols = 0;
  for (const VarKey& k : lin.keys) cols += k.dim();

  lin.residual.resize(row_off.back());
  for (std::size_t f = 0; f < g.factors.size(); ++f) {
    lin.residual.segment(row_off[f], g.factors[f].dim()) = g.factors[f].residual(vars);
  }
  lin.jacobian = Eigen::MatrixXd::Zero(row_off.back(), cols);

  std::map<VarKey, std::vector<std::size_t>> touching;
  for (std::size_t f = 0; f < g.factors.size(); ++f) {
    for (const VarKey& k : g.factors[f].keys()) touching[k].push_back(f);
  }

  VariableSet work = vars;
  Eigen::Index col = 0;
  for (const VarKey& k : lin.keys) {
    const auto& fs = touching[k];
    for (int d = 0; d < k.dim(); ++d, ++col) {
      if (fs.empty()) continue;
      Eigen::VectorXd e = Eigen::VectorXd::Zero(k.dim());
      e(d) = step;
      perturb(work, k, e);
      std::vector<Eigen::VectorXd> plus;
      for (std::size_t f : fs) plus.push_back(g.factors[f].residual(work));
      work = vars;
      if (scheme == DiffScheme::central) {
        perturb(work, k, -e);
        for (std::size_t n = 0; n < fs.size(); ++n) {
          const std::size_t f = fs[n];
          lin.jacobian.block(row_off[f], col, g.factors[f].dim(), 1) =
              (plus[n] - g.factors[f].residual(work)) / (2.0 * step);
        }
        work = vars;
      } else {
        for (std::size_t n = 0; n < fs.size(); ++n) {
          const std::size_t f = fs[n];
          lin.jacobian.block(row_off[f], col, g.factors[f].dim(), 1) =
              (plus[n] - lin.residual.segment(row_off[f], g.factors[f].dim())) / step;
        }
      }
    }
  }
  return lin;
}

LmResult solve_lm(const FactorGraph& g, const LmOptions& opts) {
  for (const auto& f : g.factors) {
    for (const VarKey& k : f.keys()) {
      if (!g.values.has(k)) throw MissingInitial("factor references missing variable " + k.str());
    }
  }
  LmResult res;
  res.values = g.values;
  double cost = total_cost(g, res.values);
  if (!std::isfinite(cost)) throw NonFiniteCost("initial cost is not finite");
  res.initial_cost = cost;
  double lambda = opts.lambda0;
  res.termination = "max_iters";

  auto state_norm = [](const VariableSet& v) {
    double s = 0.0;
    for (const auto& [id, p] : v.scan_poses) s += p.translation().squaredNorm();
    for (const auto& [id, p] : v.marker_poses) s += p.translation().squaredNorm();
    for (const auto& [id, p] : v.corners) s += p.squaredNorm();
    return std::sqrt(s);
  };

  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    if (cost == 0.0) {
      res.termination = "zero_cost";
      break;
    }
    const Linearization lin = linearize(g, res.values, DiffScheme::central, opts.fd_step);
    const Eigen::MatrixXd h = lin.jacobian.transpose() * lin.jacobian;
    const Eigen::VectorXd grad = lin.jacobian.transpose() * lin.residual;
    const Eigen::VectorXd diag = h.diagonal().cwiseMax(1e-12 * std::max(1.0, h.diagonal().maxCoeff()));
    res.iterations = iter;

    bool accepted = false;
    bool converged = false;
    for (int attempt = 0; attempt < 80 && !accepted; ++attempt) {
      Eigen::MatrixXd damped = h;
      damped.diagonal() += lambda * diag;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(damped);
      Eigen::VectorXd delta;
      bool solved = ldlt.info() == Eigen::Success;
      if (solved) {
        delta = ldlt.solve(-grad);
        solved = delta.allFinite();
      }
      if (!solved) {
        lambda *= opts.lambda_up;
        if (lambda > 1e30) throw SingularNormalEquations("normal equations stay singular under damping");
        continue;
      }
      const double step_norm = delta.norm();
      double new_cost = std::numeric_limits<double>::infinity();
      VariableSet trial;
      try {
        trial = apply_delta(res.values, lin.keys, delta);
        new_cost = total_cost(g, trial);
      } catch (const AngleNearPi&) {
        // relative rotation left the principal branch; treat as a failed step
      }
      accepted = std::isfinite(new_cost) && new_cost < cost;
      res.log.push_back({iter, accepted ? new_cost : cost, lambda, step_norm, accepted});
      const double rel_step = step_norm / (state_norm(res.values) + opts.tol_step);
      if (accepted) {
        const double decrease = cost - new_cost;
        res.values = std::move(trial);
        cost = new_cost;
        lambda = std::max(lambda * opts.lambda_down, 1e-15);
        if (decrease <= opts.tol_cost * (cost + decrease)) {
          res.termination = "cost_converged";
          converged = true;
        } else if (rel_step <= opts.tol_step) {
          res.termination = "step_converged";
          converged = true;
        }
      } else {
        if (rel_step <= opts.tol_step) {
          res.termination = "step_converged";
          converged = true;
          break;
        }
        lambda *= opts.lambda_up;
        if (lambda > 1e30) {
          res.termination = "damping_exhausted";
          converged = true;
          break;
        }
      }
    }
    if (converged) break;
    if (!accepted) {
      res.termination = "no_decrease";
      break;
    }
  }
  res.final_cost = cost;
  if (!std::isfinite(cost)) throw NonFiniteCost("final cost is not finite");
  return res;
}

std::string format_iteration_log(const std::vector<LmIteration>& log) {
  std::ostringstream os;
  os << std::setprecision(12);
  for (const auto& it : log) {
    os << it.iter << ' ' << it.cost << ' ' << it.lambda << ' ' << it.step_norm << ' '
       << (it.accepted ? 1 : 0) << '\n';
  }
  return os.str();
}

}  // namespace fidreg
