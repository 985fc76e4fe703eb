#include "mlsim/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace mlsim {

namespace {

double wrap_coordinate(double v, double size) {
  double r = std::fmod(v, size);
  if (r < 0.0) r += size;
  // fmod of a tiny negative value plus size can round up to size itself.
  if (r >= size) r -= size;
  return r;
}

double shortest_delta(double d, double size) {
  d = std::fmod(d, size);
  if (d > size / 2) d -= size;
  else if (d < -size / 2) d += size;
  return d;
}

}  // namespace

WorldExtent WorldExtent::from_density(std::size_t num_entities, double area_per_entity) {
  const double side = std::sqrt(static_cast<double>(num_entities) * area_per_entity);
  return {side, side};
}

double plane_distance(PlanePoint a, PlanePoint b) { return std::hypot(a.x - b.x, a.y - b.y); }

TorusPoint wrap(double x, double y, WorldExtent extent) {
  return {wrap_coordinate(x, extent.width), wrap_coordinate(y, extent.height)};
}

PlanePoint torus_displacement(TorusPoint from, TorusPoint to, WorldExtent extent) {
  return {shortest_delta(to.x - from.x, extent.width), shortest_delta(to.y - from.y, extent.height)};
}

double distance_squared(TorusPoint a, TorusPoint b, WorldExtent extent) {
  double dx = std::abs(a.x - b.x);
  double dy = std::abs(a.y - b.y);
  dx = std::min(dx, extent.width - dx);
  dy = std::min(dy, extent.height - dy);
  return dx * dx + dy * dy;
}

double distance(TorusPoint a, TorusPoint b, WorldExtent extent) {
  return std::sqrt(distance_squared(a, b, extent));
}

}  // namespace mlsim
