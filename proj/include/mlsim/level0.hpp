#pragma once

// Coarse, time-stepped agent-based kernel. Entities are partitioned among
// workers (logical processes); each step runs delivery, mobility and
// generation in parallel per worker, then all workers meet at a barrier where
// outboxes are exchanged and the clock advances.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "mlsim/dissemination.hpp"
#include "mlsim/geometry.hpp"
#include "mlsim/mobility.hpp"
#include "mlsim/random.hpp"
#include "mlsim/spatial_grid.hpp"

namespace mlsim {

class WorkerPool;

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t num_entities = 1000;
  double mobile_fraction = 0.5;
  Timestep total_steps = 900;
  PbBConfig pbb{};
  std::size_t cache_capacity = 0;
  unsigned num_workers = 1;
  bool adaptive_partitioning = false;
  Timestep rebalance_period = 25;
  /// Migrate only when strictly more than this share of recent partners is remote.
  double migration_threshold = 0.6;
  std::uint64_t seed = 1;

  /// Throws ConfigError.
  void validate() const;
};

struct Entity {
  EntityId id = 0;
  TorusPoint position{};
  MobilityState mobility{};
  RandomStream mobility_rng;
  PbBState pbb;
  /// True while the entity is managed by a fine-grained instance.
  bool handed_off = false;
};

/// Broadcast of one message copy, stamped with the sender's position at send time.
struct Transmission {
  EntityId sender = 0;
  TorusPoint sender_position{};
  Message message{};
  /// Worker that owned the sender when the copy was sent.
  std::uint32_t sender_worker = 0;
};

/// Deterministic exchange order: sender id, then message id, then hop count.
bool transmission_order(const Transmission& a, const Transmission& b);

struct StepStats {
  Timestep step = 0;
  std::uint64_t originated = 0;
  std::uint64_t delivered = 0;
  std::uint64_t forwarded = 0;
  std::uint64_t discarded_by_cache = 0;
  /// on_receive invocations.
  std::uint64_t receptions = 0;
  /// Receptions addressed to handed-off entities, held until they return.
  std::uint64_t buffered = 0;
  std::uint16_t max_delivered_hops = 0;
  /// Delivered copies whose hop count exceeds the initial TTL (must stay 0).
  std::uint64_t hop_violations = 0;
  /// Receptions whose sender lives on another worker, indexed by receiving worker.
  std::vector<std::uint64_t> inter_worker;
  std::uint64_t migrations = 0;

  std::uint64_t inter_worker_total() const;
  void accumulate(const StepStats& other);
};

/// Owner index per entity id.
using Assignment = std::vector<std::uint32_t>;

/// Vertical stripes of equal width; entity at x goes to floor(x / (W / n)).
Assignment partition_static(std::span<const Entity> entities, WorldExtent extent, unsigned num_workers);

/// Recent interaction tally of one entity: receptions per sender-owning worker.
struct PartnerTally {
  std::vector<std::uint32_t> per_worker;
};

/// Majority-of-recent-partners rule with a hysteresis margin. Returns the
/// worker the entity should move to, or `current` to stay.
std::uint32_t migration_target(const PartnerTally& tally, std::uint32_t current, double threshold);

class CoarseWorld {
 public:
  /// build_world: density-derived extent, floor(mobile_fraction * n) Random
  /// Waypoint entities (the lowest ids), uniform initial positions, static stripe
  /// partition. Throws ConfigError.
  explicit CoarseWorld(const ModelConfig& config);
  ~CoarseWorld();
  CoarseWorld(CoarseWorld&&) noexcept;
  CoarseWorld& operator=(CoarseWorld&&) noexcept;

  const ModelConfig& config() const { return config_; }
  WorldExtent extent() const { return extent_; }
  Timestep clock() const { return clock_; }
  bool finished() const { return clock_ >= config_.total_steps; }
  /// False between compute_phases() and commit().
  bool at_boundary() const { return !mid_step_; }

  std::span<const Entity> entities() const { return entities_; }
  const Entity& entity(EntityId id) const { return entities_.at(id); }
  const Assignment& owners() const { return owner_; }
  const std::vector<std::vector<EntityId>>& owned() const { return owned_; }
  const std::vector<Transmission>& pending() const { return pending_; }
  const std::vector<StepStats>& history() const { return history_; }

  std::size_t active_count() const;
  std::size_t handed_off_count() const;

  /// Ids (excluding `exclude`) of active entities within the interaction range of `center`.
  std::vector<EntityId> broadcast_set(TorusPoint center, std::int64_t exclude = -1) const;

  /// One full step: compute_phases() then commit().
  StepStats step();
  /// Phases 1-4 on every worker: delivery, mobility, generation, outbox sort.
  void compute_phases();
  /// Barrier side of the step: exchange, clock + 1, periodic rebalance.
  StepStats commit();

  /// Moves the listed entities out of the active set. Boundary only.
  void hand_off(std::span<const EntityId> ids);
  /// Returns a handed-off entity at `position`; its cache and random streams
  /// are as they were when it left. Boundary only.
  void reabsorb(EntityId id, TorusPoint position);

  /// Replaces ownership (e.g. to test migration). Boundary only.
  void set_assignment(Assignment assignment);

  /// Counts of steps each worker has executed; equal at every boundary.
  const std::vector<Timestep>& worker_step_counts() const { return worker_steps_; }

 private:
  struct WorkerState;

  void require_boundary(const char* what) const;
  void rebuild_owned();
  void run_worker(unsigned w);
  void deliver(unsigned w, Entity& receiver, const Transmission& tx, double squared_distance);
  std::uint64_t rebalance();

  ModelConfig config_;
  WorldExtent extent_;
  Timestep clock_ = 0;
  bool mid_step_ = false;
  std::vector<Entity> entities_;
  Assignment owner_;
  std::vector<std::vector<EntityId>> owned_;
  std::vector<Transmission> pending_;
  std::vector<std::vector<Transmission>> parked_;  // per entity, while handed off
  std::vector<PartnerTally> partners_;
  std::vector<WorkerState> workers_;
  std::vector<Timestep> worker_steps_;
  std::vector<StepStats> history_;
  std::unique_ptr<WorkerPool> pool_;
};

}  // namespace mlsim
