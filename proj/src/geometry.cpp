#include "taclab/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "taclab/errors.hpp"

namespace taclab {

int SensorGeometry::rotation_count() const {
  return static_cast<int>(std::llround(kTwoPi / rotation_increment_rad));
}

void SensorGeometry::validate() const {
  if (radius_mm < 8.0) {
    throw ConfigError("geometry: radius_mm must be >= 8.0 (fiber bend limit), got " +
                      std::to_string(radius_mm));
  }
  if (height_mm <= 0.0 || spacing_x_mm <= 0.0 || spacing_y_mm <= 0.0) {
    throw ConfigError("geometry: height and grid spacings must be positive");
  }
  if (grid_cols < 1 || grid_rows < 1) {
    throw ConfigError("geometry: grid must be at least 1x1");
  }
  if (grid_cols * spacing_x_mm > 2.0 * radius_mm + 1e-12) {
    throw ConfigError("geometry: n*d_x must not exceed the cylinder diameter");
  }
  if ((grid_rows - 1) * spacing_y_mm > height_mm + 1e-12) {
    throw ConfigError("geometry: (m-1)*d_y must not exceed the sensor height");
  }
  if (rotation_increment_rad <= 0.0) {
    throw ConfigError("geometry: rotation increment must be positive");
  }
  const double steps = kTwoPi / rotation_increment_rad;
  if (std::abs(steps - std::llround(steps)) > 1e-9) {
    throw ConfigError("geometry: rotation increment must divide 2*pi evenly");
  }
}

double wrap_angle(double angle_rad) {
  double a = std::fmod(angle_rad, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  return a;
}

double wrap_unit(double u) {
  double w = u - std::floor(u);
  if (w >= 1.0) w = 0.0;  // guards against floor rounding at the seam
  return w;
}

SurfacePoint grid_to_surface(const SensorGeometry& geom, int i, int j, int k) {
  const double arg = (geom.grid_cols - 2.0 * i) * geom.spacing_x_mm /
                     (2.0 * geom.radius_mm);
  if (arg < -1.0 || arg > 1.0) {
    throw std::domain_error("grid_to_surface: column index " + std::to_string(i) +
                            " puts the asin argument outside [-1, 1]");
  }
  const double angle = std::asin(arg) + k * geom.rotation_increment_rad;
  return SurfacePoint{wrap_angle(angle), j * geom.spacing_y_mm};
}

NormalizedPoint normalize(const SensorGeometry& geom, const SurfacePoint& p) {
  return NormalizedPoint{wrap_angle(p.angle_rad) / kTwoPi,
                         p.height_mm / geom.height_mm};
}

double circular_delta(double u1, double u2) {
  double d = u1 - u2;
  if (d > 0.5) {
    d -= 1.0;
  } else if (d <= -0.5) {
    d += 1.0;
  }
  return d;
}

double surface_distance_mm(const SensorGeometry& geom, const NormalizedPoint& a,
                           const NormalizedPoint& b) {
  const double ta = kTwoPi * a.u;
  const double tb = kTwoPi * b.u;
  const double dx = geom.radius_mm * (std::cos(ta) - std::cos(tb));
  const double dz = geom.radius_mm * (std::sin(ta) - std::sin(tb));
  const double dy = geom.height_mm * (a.v - b.v);
  return std::sqrt(dx * dx + dz * dz + dy * dy);
}

}  // namespace taclab
