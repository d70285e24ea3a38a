#pragma once

// Closed-form marker pose from four corner correspondences and the
// point-to-point fit error used as first-level graph edge weight.

#include <array>

#include "fidreg/geometry.hpp"

namespace fidreg {

/// The four marker corners in the marker frame, counter-clockwise:
/// (-l/2,-l/2,0), (l/2,-l/2,0), (l/2,l/2,0), (-l/2,l/2,0).
struct CanonicalCorners {
  double side = 0.0;
  std::array<Vec3, 4> corners;

  explicit CanonicalCorners(double side_length);
};

struct MarkerPoseFit {
  Pose pose;          // marker frame -> observing frame
  double e_pp = 0.0;  // m^2
};

/// Sum of squared distances between pose-mapped canonical corners and the
/// observed corners.
double point_to_point_error(const Pose& pose, const CanonicalCorners& canonical,
                            const std::array<Vec3, 4>& observed);

/// Kabsch alignment of the canonical corners onto the observed ones.
/// Throws DegenerateCorners when the observed corners are collinear or
/// coincident.
MarkerPoseFit solve_marker_pose(const CanonicalCorners& canonical,
                                const std::array<Vec3, 4>& observed);

/// True when the four sides are within `tol` of l and the diagonals within
/// `tol` of l*sqrt(2).
bool is_square(const std::array<Vec3, 4>& corners, double side, double tol);

}  // namespace fidreg
