#pragma once

#include "mlsim/geometry.hpp"
#include "mlsim/random.hpp"

namespace mlsim {

enum class MobilityKind { Static, RandomWaypoint };

inline constexpr double kMinRwpSpeed = 1.0;
inline constexpr double kMaxRwpSpeed = 14.0;

struct MobilityState {
  MobilityKind kind = MobilityKind::Static;
  TorusPoint waypoint{};  // RandomWaypoint only
  double speed = 0.0;     // spaceunits per timestep, RandomWaypoint only

  friend bool operator==(const MobilityState&, const MobilityState&) = default;
};

struct Motion {
  TorusPoint position;
  MobilityState state;
};

/// Fresh waypoint uniform over the world rectangle and speed uniform in [1, 14].
MobilityState rwp_pick(RandomStream& rng, WorldExtent extent);

/// One timestep of movement. Random Waypoint entities travel along the direct
/// in-rectangle segment; on reaching the waypoint they stop there for the rest
/// of the step and pick the next leg (sleep time 0).
Motion advance(TorusPoint position, const MobilityState& state, RandomStream& rng, WorldExtent extent);

}  // namespace mlsim
