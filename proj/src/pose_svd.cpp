#include "fidreg/pose_svd.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "fidreg/errors.hpp"

namespace fidreg {

CanonicalCorners::CanonicalCorners(double side_length) : side(side_length) {
  const double h = 0.5 * side_length;
  corners = {Vec3(-h, -h, 0), Vec3(h, -h, 0), Vec3(h, h, 0), Vec3(-h, h, 0)};
}

double point_to_point_error(const Pose& pose, const CanonicalCorners& canonical,
                            const std::array<Vec3, 4>& observed) {
  double e = 0.0;
  for (int s = 0; s < 4; ++s) e += (apply(pose, canonical.corners[s]) - observed[s]).squaredNorm();
  return e;
}

MarkerPoseFit solve_marker_pose(const CanonicalCorners& canonical,
                                const std::array<Vec3, 4>& observed) {
  Vec3 mc = Vec3::Zero(), oc = Vec3::Zero();
  for (int s = 0; s < 4; ++s) {
    mc += canonical.corners[s];
    oc += observed[s];
  }
  mc /= 4.0;
  oc /= 4.0;

  Eigen::Matrix<double, 3, 4> centered;
  Mat3 cross_cov = Mat3::Zero();
  for (int s = 0; s < 4; ++s) {
    centered.col(s) = observed[s] - oc;
    cross_cov += (observed[s] - oc) * (canonical.corners[s] - mc).transpose();
  }
  const Eigen::JacobiSVD<Eigen::Matrix<double, 3, 4>> spread(centered);
  const Vec3 sv = spread.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-9 * sv(0)) {
    throw DegenerateCorners("solve_marker_pose: observed corners are collinear or coincident");
  }

  Eigen::JacobiSVD<Mat3> svd(cross_cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat3 r = svd.matrixU() * d * svd.matrixV().transpose();
  const Pose pose(Rotation(r), oc - r * mc);
  return {pose, point_to_point_error(pose, canonical, observed)};
}

bool is_square(const std::array<Vec3, 4>& corners, double side, double tol) {
  for (int s = 0; s < 4; ++s) {
    if (std::abs((corners[(s + 1) % 4] - corners[s]).norm() - side) > tol) return false;
  }
  const double diag = side * std::sqrt(2.0);
  return std::abs((corners[2] - corners[0]).norm() - diag) <= tol &&
         std::abs((corners[3] - corners[1]).norm() - diag) <= tol;
}

}  // namespace fidreg
