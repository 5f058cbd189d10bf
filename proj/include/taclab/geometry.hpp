#pragma once

#include <cmath>

namespace taclab {

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// Cylindrical contact surface of the fingertip sensor plus the calibration
/// grid laid over it. Contacts live on the cylindrical band only; the dome
/// cap is not part of the coordinate chart.
struct SensorGeometry {
  double radius_mm = 10.0;
  double height_mm = 20.0;
  int grid_cols = 5;  // n
  int grid_rows = 5;  // m
  double spacing_x_mm = 2.0;
  double spacing_y_mm = 3.0;
  double rotation_increment_rad = kTwoPi / 12.0;

  /// Number of rotation steps in a full turn (rotation_increment_rad must
  /// divide 2*pi evenly).
  int rotation_count() const;

  /// Throws ConfigError if any invariant is violated.
  void validate() const;
};

/// Point on the cylindrical band in physical units.
struct SurfacePoint {
  double angle_rad = 0.0;  // normalized to [0, 2*pi)
  double height_mm = 0.0;  // [0, height_mm of the sensor]
};

/// Point in normalized coordinates: u = angle/2pi is circular (u=0 and u=1
/// identify the same generatrix), v = height/h in [0, 1].
struct NormalizedPoint {
  double u = 0.0;
  double v = 0.0;
};

/// Wrap an angle into [0, 2*pi).
double wrap_angle(double angle_rad);

/// Wrap a circular coordinate into [0, 1).
double wrap_unit(double u);

/// Surface point probed at grid cell (i, j) after k rotation steps:
/// angle = asin((n - 2i) * d_x / (2r)) + k * dtheta, height = j * d_y.
/// Throws std::domain_error when the asin argument leaves [-1, 1].
SurfacePoint grid_to_surface(const SensorGeometry& geom, int i, int j, int k);

NormalizedPoint normalize(const SensorGeometry& geom, const SurfacePoint& p);

/// Signed minimal angular difference delta in (-0.5, 0.5] with
/// u1 == u2 + delta (mod 1). Antipodal pairs resolve to +0.5.
double circular_delta(double u1, double u2);

/// Straight-line (chord) distance in mm between two normalized points
/// embedded on the 3D cylinder.
double surface_distance_mm(const SensorGeometry& geom, const NormalizedPoint& a,
                           const NormalizedPoint& b);

}  // namespace taclab
