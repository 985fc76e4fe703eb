#pragma once

#include <cstddef>

namespace mlsim {

/// Dimensions of the wrap-around world, in spaceunits.
struct WorldExtent {
  double width = 0.0;
  double height = 0.0;

  /// Square torus holding `num_entities` at one entity per `area_per_entity`
  /// square spaceunits.
  static WorldExtent from_density(std::size_t num_entities, double area_per_entity = 10000.0);

  bool valid() const { return width > 0.0 && height > 0.0; }
};

/// A position on the torus; always satisfies 0 <= x < width, 0 <= y < height.
struct TorusPoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const TorusPoint&, const TorusPoint&) = default;
};

/// A position in an unbounded planar frame (the fine scenario's local frame).
struct PlanePoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const PlanePoint&, const PlanePoint&) = default;
};

double plane_distance(PlanePoint a, PlanePoint b);

TorusPoint wrap(double x, double y, WorldExtent extent);
inline TorusPoint wrap(TorusPoint p, WorldExtent extent) { return wrap(p.x, p.y, extent); }

/// Shortest signed displacement from `from` to `to` under wrap-around.
PlanePoint torus_displacement(TorusPoint from, TorusPoint to, WorldExtent extent);

/// Euclidean length of the shortest wrap-around displacement.
double distance(TorusPoint a, TorusPoint b, WorldExtent extent);

double distance_squared(TorusPoint a, TorusPoint b, WorldExtent extent);

}  // namespace mlsim
