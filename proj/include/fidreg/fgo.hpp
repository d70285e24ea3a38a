#pragma once

// Second-level factor graph over scan poses, marker poses and marker corners
// in the global frame, solved by Levenberg-Marquardt on whitened residuals.

#include <Eigen/Core>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "fidreg/geometry.hpp"
#include "fidreg/initgraph.hpp"
#include "fidreg/pose_svd.hpp"
#include "fidreg/tagdetect.hpp"

namespace fidreg {

enum class VarType { scan_pose = 0, marker_pose = 1, corner = 2 };

struct VarKey {
  VarType type;
  int id;          // scan or marker id
  int corner = 0;  // 0..3 for corners

  auto operator<=>(const VarKey&) const = default;
  int dim() const { return type == VarType::corner ? 3 : 6; }
  std::string str() const;
};

struct VariableSet {
  std::map<int, Pose> scan_poses;                 // G_T_i
  std::map<int, Pose> marker_poses;               // G_T^j
  std::map<std::pair<int, int>, Vec3> corners;    // p^{j,s}, s in 0..3

  bool has(const VarKey& k) const;
  /// All keys in (type, id, corner) order.
  std::vector<VarKey> keys() const;
};

enum class FactorKind { prior_anchor, marker_pose_obs, corner_in_marker, corner_in_scan, anchor_relative };

const char* to_string(FactorKind kind);

class Factor {
 public:
  using Measurement = std::variant<Pose, Vec3>;

  /// Throws Error when the arity, the measurement type or the covariance
  /// (size, symmetry, positive definiteness) does not fit the kind.
  Factor(FactorKind kind, std::vector<VarKey> keys, Measurement z, const Eigen::MatrixXd& covariance);

  FactorKind kind() const { return kind_; }
  const std::vector<VarKey>& keys() const { return keys_; }
  const Measurement& measurement() const { return z_; }
  const Eigen::MatrixXd& covariance() const { return cov_; }
  int dim() const { return static_cast<int>(cov_.rows()); }

  /// h(vars) ⊖ z before whitening.
  Eigen::VectorXd raw_residual(const VariableSet& vars) const;
  /// sqrt_info * raw_residual, so that |r_w|^2 = r^T Sigma^-1 r.
  Eigen::VectorXd residual(const VariableSet& vars) const;

  bool touches(const VarKey& k) const;

 private:
  FactorKind kind_;
  std::vector<VarKey> keys_;
  Measurement z_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd sqrt_info_;  // L^-1 with Sigma = L L^T
};

struct NoiseConfig {
  double sigma_corner_scan = 0.02;
  double sigma_corner_marker = 0.002;
  double sigma_marker_rot = 0.02;
  double sigma_marker_trans = 0.01;
  double sigma_rel_rot = 0.05;
  double sigma_rel_trans = 0.03;
  double sigma_prior = 1e-6;
  /// Inflate anchor-relative covariances by (1 + path e_pp / mean e_pp).
  bool weight_rel_by_path = false;

  void validate() const;
  NoiseConfig scaled(double variance_factor) const;
};

struct FactorGraph {
  VariableSet values;
  std::vector<Factor> factors;
  int anchor = 0;

  std::size_t count(FactorKind kind) const;
};

/// Stage one/two: per observation one marker-pose factor and four scan-frame
/// corner factors, per marker four marker-frame corner factors. Stage three:
/// the anchor prior and one anchor-relative factor per non-anchor scan whose
/// measurement is the propagated pose. Throws MissingInitial when `init`
/// lacks a scan or marker referenced by an observation.
FactorGraph build_graph(const std::vector<MarkerObservation>& observations,
                        const InitialEstimate& init, const CanonicalCorners& canonical,
                        int anchor, const NoiseConfig& noise);

/// 0.5 * sum of squared whitened residuals.
double total_cost(const FactorGraph& g, const VariableSet& vars);

/// Applies a stacked tangent-space delta laid out as `keys` (poses by
/// retract, corners additively).
VariableSet apply_delta(const VariableSet& vars, const std::vector<VarKey>& keys,
                        const Eigen::VectorXd& delta);

enum class DiffScheme { central, forward };

struct Linearization {
  std::vector<VarKey> keys;      // column blocks, in order
  Eigen::VectorXd residual;      // stacked whitened residuals
  Eigen::MatrixXd jacobian;      // d residual / d delta
};

/// Finite-difference Jacobian in the local parameterization.
Linearization linearize(const FactorGraph& g, const VariableSet& vars,
                        DiffScheme scheme = DiffScheme::central, double step = 1e-6);

struct LmOptions {
  int max_iters = 100;
  double lambda0 = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.5;
  double tol_cost = 1e-10;  // relative cost decrease
  double tol_step = 1e-10;  // relative step norm
  double fd_step = 1e-6;
};

struct LmIteration {
  int iter;
  double cost;
  double lambda;
  double step_norm;
  bool accepted;
};

struct LmResult {
  VariableSet values;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::vector<LmIteration> log;
  std::string termination;
};

/// Throws NonFiniteCost for non-finite initial cost and
/// SingularNormalEquations when no damping level yields a solvable system.
LmResult solve_lm(const FactorGraph& g, const LmOptions& opts = {});

/// "iter cost lambda step_norm accepted" per line.
std::string format_iteration_log(const std::vector<LmIteration>& log);

}  // namespace fidreg
