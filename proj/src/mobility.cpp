#include "mlsim/mobility.hpp"

#include <cmath>

namespace mlsim {

MobilityState rwp_pick(RandomStream& rng, WorldExtent extent) {
  MobilityState s;
  s.kind = MobilityKind::RandomWaypoint;
  const double x = rng.uniform(0.0, extent.width);
  const double y = rng.uniform(0.0, extent.height);
  s.waypoint = wrap(x, y, extent);
  s.speed = rng.uniform(kMinRwpSpeed, kMaxRwpSpeed);
  return s;
}

Motion advance(TorusPoint position, const MobilityState& state, RandomStream& rng, WorldExtent extent) {
  if (state.kind == MobilityKind::Static) return {position, state};

  const double dx = state.waypoint.x - position.x;
  const double dy = state.waypoint.y - position.y;
  const double remaining = std::hypot(dx, dy);
  if (remaining <= state.speed) {
    return {state.waypoint, rwp_pick(rng, extent)};
  }
  const double f = state.speed / remaining;
  return {wrap(position.x + dx * f, position.y + dy * f, extent), state};
}

}  // namespace mlsim
