#pragma once

// SO(3) / SE(3) value types with the exponential and logarithm maps.
//
// Conventions:
//   * Pose maps points of its source frame into its target frame:
//     apply(T, x) = R * x + t.
//   * Twist stores the rotation part first, then the translation part.
//   * retract() is a right-multiplicative update, p * Exp(delta).

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <iosfwd>
#include <string>
#include <vector>

namespace fidreg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Geodesic angle at which the closed-form logarithm is considered singular.
inline constexpr double kLogPiMargin = 1e-6;
/// Below this angle the logarithm uses the series limit theta / (2 sin theta) -> 1/2.
inline constexpr double kLogSmallAngle = 1e-7;

class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}
  /// Wraps a matrix that the caller guarantees is orthonormal with det +1.
  explicit Rotation(const Mat3& m) : m_(m) {}

  static Rotation identity() { return Rotation(); }
  static Rotation about_axis(const Vec3& axis, double angle);

  const Mat3& matrix() const { return m_; }
  Rotation transpose() const { return Rotation(m_.transpose()); }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }
  Vec3 operator*(const Vec3& x) const { return m_ * x; }

  /// Geodesic angle in [0, pi].
  double angle() const;
  /// Max entrywise deviation of m*m^T from I and of det(m) from 1.
  double orthonormality_error() const;

 private:
  Mat3 m_;
};

struct Twist {
  Vec3 rot_part = Vec3::Zero();    // radians
  Vec3 trans_part = Vec3::Zero();  // meters

  static Twist from_vector(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
  Vec6 vector() const {
    Vec6 v;
    v << rot_part, trans_part;
    return v;
  }
  double norm() const { return vector().norm(); }
};

class Pose {
 public:
  Pose() = default;
  Pose(const Rotation& r, const Vec3& t) : rotation_(r), translation_(t) {}

  static Pose identity() { return {}; }
  static Pose from_translation(const Vec3& t) { return {Rotation(), t}; }

  const Rotation& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Eigen::Matrix4d homogeneous() const;

 private:
  Rotation rotation_;
  Vec3 translation_ = Vec3::Zero();
};

[[nodiscard]] Vec3 apply(const Pose& p, const Vec3& x);
[[nodiscard]] Pose compose(const Pose& a, const Pose& b);
[[nodiscard]] Pose inverse(const Pose& p);

/// so(3) -> SO(3) (Rodrigues).
[[nodiscard]] Rotation exp_rotation(const Vec3& xi);
/// SO(3) -> so(3). Throws AngleNearPi when the geodesic angle is within
/// kLogPiMargin of pi.
[[nodiscard]] Vec3 log_rotation(const Rotation& r);

/// Builds the increment pose (exp_rotation(rot_part), trans_part).
[[nodiscard]] Pose exp_twist(const Twist& delta);

/// a ⊖ b = [log(Rot(b^-1 a)), Trans(b^-1 a)].
[[nodiscard]] Twist pose_ominus(const Pose& a, const Pose& b);

/// p * Exp(delta).
[[nodiscard]] Pose retract(const Pose& p, const Twist& delta);

[[nodiscard]] Mat3 skew(const Vec3& v);

/// Largest absolute entrywise difference of the 3x4 [R|t] blocks.
[[nodiscard]] double max_abs_diff(const Pose& a, const Pose& b);

// Text form: 12 whitespace separated decimals, row-major 3x4 [R | t].
[[nodiscard]] std::string format_pose(const Pose& p);
/// Parses 12 decimals (scientific notation accepted). The rotation block is
/// re-orthonormalized by SVD so that printed precision loss does not violate
/// the rotation invariants.
[[nodiscard]] Pose parse_pose(const std::string& line);

}  // namespace fidreg
