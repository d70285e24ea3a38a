#include "fidreg/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "fidreg/errors.hpp"

namespace fidreg {

Rotation Rotation::about_axis(const Vec3& axis, double angle) {
  return exp_rotation(axis.normalized() * angle);
}

double Rotation::angle() const {
  const Vec3 w(m_(2, 1) - m_(1, 2), m_(0, 2) - m_(2, 0), m_(1, 0) - m_(0, 1));
  return std::atan2(0.5 * w.norm(), 0.5 * (m_.trace() - 1.0));
}

double Rotation::orthonormality_error() const {
  const double ortho = (m_ * m_.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return std::max(ortho, std::abs(m_.determinant() - 1.0));
}

Eigen::Matrix4d Pose::homogeneous() const {
  Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
  h.topLeftCorner<3, 3>() = rotation_.matrix();
  h.topRightCorner<3, 1>() = translation_;
  return h;
}

Vec3 apply(const Pose& p, const Vec3& x) {
  return p.rotation().matrix() * x + p.translation();
}

Pose compose(const Pose& a, const Pose& b) {
  return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

Pose inverse(const Pose& p) {
  const Rotation rt = p.rotation().transpose();
  return {rt, -(rt * p.translation())};
}

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0, -v.z(),  v.y(),
       v.z(),      0, -v.x(),
      -v.y(),  v.x(),      0;
  // clang-format on
  return s;
}

Rotation exp_rotation(const Vec3& xi) {
  const double theta = xi.norm();
  const Mat3 k = skew(xi);
  double a;  // sin(theta) / theta
  double b;  // (1 - cos(theta)) / theta^2
  if (theta < 1e-5) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
  }
  return Rotation(Mat3::Identity() + a * k + b * k * k);
}

Vec3 log_rotation(const Rotation& r) {
  const Mat3& m = r.matrix();
  // vee(R - R^T) = 2 sin(theta) * axis
  const Vec3 w(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
  const double sin_part = 0.5 * w.norm();
  const double cos_part = 0.5 * (m.trace() - 1.0);
  const double theta = std::atan2(sin_part, cos_part);
  if (theta >= std::numbers::pi - kLogPiMargin) {
    throw AngleNearPi("log_rotation: geodesic angle " + std::to_string(theta) +
                      " is too close to pi");
  }
  if (theta < kLogSmallAngle) return 0.5 * w;
  return (theta / (2.0 * sin_part)) * w;
}

Pose exp_twist(const Twist& delta) {
  return {exp_rotation(delta.rot_part), delta.trans_part};
}

Twist pose_ominus(const Pose& a, const Pose& b) {
  const Pose rel = compose(inverse(b), a);
  return {log_rotation(rel.rotation()), rel.translation()};
}

Pose retract(const Pose& p, const Twist& delta) { return compose(p, exp_twist(delta)); }

double max_abs_diff(const Pose& a, const Pose& b) {
  const double dr = (a.rotation().matrix() - b.rotation().matrix()).cwiseAbs().maxCoeff();
  const double dt = (a.translation() - b.translation()).cwiseAbs().maxCoeff();
  return std::max(dr, dt);
}

std::string format_pose(const Pose& p) {
  std::ostringstream os;
  os << std::setprecision(17);
  const Mat3& r = p.rotation().matrix();
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) os << r(row, col) << ' ';
    os << p.translation()(row);
    if (row < 2) os << ' ';
  }
  return os.str();
}

Pose parse_pose(const std::string& line) {
  std::istringstream is(line);
  double v[12];
  for (double& x : v) {
    std::string tok;
    if (!(is >> tok)) throw FormatError("pose line needs 12 values: '" + line + "'");
    try {
      std::size_t used = 0;
      x = std::stod(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw FormatError("bad number '" + tok + "' in pose line");
    }
  }
  std::string extra;
  if (is >> extra) throw FormatError("pose line has more than 12 values: '" + line + "'");
  Mat3 r;
  Vec3 t;
  for (int row = 0; row < 3; ++row) {
    for (int col = 0; col < 3; ++col) r(row, col) = v[row * 4 + col];
    t(row) = v[row * 4 + 3];
  }
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return {Rotation(svd.matrixU() * d * svd.matrixV().transpose()), t};
}

}  // namespace fidreg
