#include "mlsim/level0.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mlsim/worker_pool.hpp"

namespace mlsim {

void ModelConfig::validate() const {
  if (num_entities == 0) throw ConfigError("model needs at least one entity");
  if (num_entities > UINT32_MAX) throw ConfigError("entity count exceeds the 32-bit id space");
  if (num_workers == 0) throw ConfigError("model needs at least one worker");
  if (total_steps == 0) throw ConfigError("total steps must be at least 1");
  if (!(mobile_fraction >= 0.0 && mobile_fraction <= 1.0)) throw ConfigError("mobile fraction must lie in [0, 1]");
  if (rebalance_period == 0) throw ConfigError("rebalance period must be at least 1 step");
  if (!(migration_threshold >= 0.0 && migration_threshold < 1.0))
    throw ConfigError("migration threshold must lie in [0, 1)");
  try {
    pbb.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

bool transmission_order(const Transmission& a, const Transmission& b) {
  if (a.sender != b.sender) return a.sender < b.sender;
  if (a.message.id != b.message.id) return a.message.id < b.message.id;
  return a.message.hop_count < b.message.hop_count;
}

std::uint64_t StepStats::inter_worker_total() const {
  std::uint64_t total = 0;
  for (auto v : inter_worker) total += v;
  return total;
}

void StepStats::accumulate(const StepStats& o) {
  originated += o.originated;
  delivered += o.delivered;
  forwarded += o.forwarded;
  discarded_by_cache += o.discarded_by_cache;
  receptions += o.receptions;
  buffered += o.buffered;
  max_delivered_hops = std::max(max_delivered_hops, o.max_delivered_hops);
  hop_violations += o.hop_violations;
  if (inter_worker.size() < o.inter_worker.size()) inter_worker.resize(o.inter_worker.size(), 0);
  for (std::size_t i = 0; i < o.inter_worker.size(); ++i) inter_worker[i] += o.inter_worker[i];
  migrations += o.migrations;
}

Assignment partition_static(std::span<const Entity> entities, WorldExtent extent, unsigned num_workers) {
  if (num_workers == 0) throw ConfigError("partition needs at least one worker");
  Assignment owner(entities.size(), 0);
  const double stripe = extent.width / num_workers;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto w = static_cast<std::uint32_t>(std::floor(entities[i].position.x / stripe));
    owner[i] = std::min(w, num_workers - 1);
  }
  return owner;
}

std::uint32_t migration_target(const PartnerTally& tally, std::uint32_t current, double threshold) {
  std::uint64_t total = 0;
  for (auto c : tally.per_worker) total += c;
  if (total == 0 || current >= tally.per_worker.size()) return current;
  const std::uint64_t own = tally.per_worker[current];
  std::uint32_t best = current;
  std::uint64_t best_count = 0;
  for (std::uint32_t w = 0; w < tally.per_worker.size(); ++w) {
    if (w != current && tally.per_worker[w] > best_count) {
      best = w;
      best_count = tally.per_worker[w];
    }
  }
  const double remote = static_cast<double>(total - own);
  if (best != current && remote > threshold * static_cast<double>(total) && best_count > own) return best;
  return current;
}

struct CoarseWorld::WorkerState {
  SpatialGrid grid;
  std::vector<SpatialGrid::Item> items;
  std::vector<Transmission> outbox;
  StepStats stats;
};

CoarseWorld::CoarseWorld(const ModelConfig& config) : config_(config) {
  config_.validate();
  extent_ = WorldExtent::from_density(config_.num_entities);

  const std::size_t n = config_.num_entities;
  const auto mobile = static_cast<std::size_t>(std::floor(config_.mobile_fraction * static_cast<double>(n)));
  entities_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Entity& e = entities_[i];
    e.id = static_cast<EntityId>(i);
    auto placement = RandomStream::for_entity(config_.seed, i, StreamTag::Placement);
    e.position = wrap(placement.uniform(0.0, extent_.width), placement.uniform(0.0, extent_.height), extent_);
    e.mobility_rng = RandomStream::for_entity(config_.seed, i, StreamTag::Mobility);
    if (i < mobile) e.mobility = rwp_pick(e.mobility_rng, extent_);
    e.pbb.cache = DedupCache(config_.cache_capacity);
    e.pbb.generation_rng = RandomStream::for_entity(config_.seed, i, StreamTag::Generation);
    e.pbb.gossip_rng = RandomStream::for_entity(config_.seed, i, StreamTag::Gossip);
  }
  parked_.resize(n);
  if (config_.adaptive_partitioning) {
    partners_.assign(n, PartnerTally{std::vector<std::uint32_t>(config_.num_workers, 0)});
  }

  owner_ = partition_static(entities_, extent_, config_.num_workers);
  rebuild_owned();

  workers_.resize(config_.num_workers);
  for (auto& ws : workers_) ws.grid = SpatialGrid(extent_, config_.pbb.interaction_range);
  worker_steps_.assign(config_.num_workers, 0);
  pool_ = std::make_unique<WorkerPool>(config_.num_workers);
}

CoarseWorld::~CoarseWorld() = default;
CoarseWorld::CoarseWorld(CoarseWorld&&) noexcept = default;
CoarseWorld& CoarseWorld::operator=(CoarseWorld&&) noexcept = default;

std::size_t CoarseWorld::handed_off_count() const {
  return static_cast<std::size_t>(
      std::count_if(entities_.begin(), entities_.end(), [](const Entity& e) { return e.handed_off; }));
}

std::size_t CoarseWorld::active_count() const { return entities_.size() - handed_off_count(); }

std::vector<EntityId> CoarseWorld::broadcast_set(TorusPoint center, std::int64_t exclude) const {
  std::vector<SpatialGrid::Item> items;
  items.reserve(entities_.size());
  for (const auto& e : entities_)
    if (!e.handed_off) items.push_back({e.id, e.position});
  SpatialGrid grid(extent_, config_.pbb.interaction_range);
  grid.rebuild(items);
  std::vector<EntityId> out;
  grid.for_each_within(center, config_.pbb.interaction_range, [&](const SpatialGrid::Item& it, double) {
    if (static_cast<std::int64_t>(it.id) != exclude) out.push_back(it.id);
  });
  std::sort(out.begin(), out.end());
  return out;
}

void CoarseWorld::require_boundary(const char* what) const {
  if (mid_step_) throw std::logic_error(std::string(what) + " is only allowed at a coarse step boundary");
}

void CoarseWorld::rebuild_owned() {
  owned_.assign(config_.num_workers, {});
  for (std::size_t i = 0; i < owner_.size(); ++i) owned_[owner_[i]].push_back(static_cast<EntityId>(i));
}

StepStats CoarseWorld::step() {
  compute_phases();
  return commit();
}

void CoarseWorld::compute_phases() {
  require_boundary("compute_phases");
  if (finished()) throw std::logic_error("simulation already reached its final step");
  mid_step_ = true;
  pool_->run([this](unsigned w) { run_worker(w); });
}

void CoarseWorld::deliver(unsigned w, Entity& receiver, const Transmission& tx, double squared_distance) {
  auto& st = workers_[w].stats;
  ++st.receptions;
  if (tx.sender_worker != w) ++st.inter_worker[w];
  if (!partners_.empty()) ++partners_[receiver.id].per_worker[tx.sender_worker];

  const auto outcome = on_receive(receiver.pbb, tx.message, squared_distance, config_.pbb);
  if (outcome == ReceiveOutcome::Discarded) {
    ++st.discarded_by_cache;
    return;
  }
  ++st.delivered;
  st.max_delivered_hops = std::max(st.max_delivered_hops, tx.message.hop_count);
  if (tx.message.hop_count > config_.pbb.ttl_init) ++st.hop_violations;
  if (outcome == ReceiveOutcome::DeliveredAndForward) {
    ++st.forwarded;
    workers_[w].outbox.push_back(Transmission{receiver.id, {}, forwarded_copy(tx.message), w});
  }
}

void CoarseWorld::run_worker(unsigned w) {
  WorkerState& ws = workers_[w];
  ws.stats = StepStats{};
  ws.stats.step = clock_;
  ws.stats.inter_worker.assign(config_.num_workers, 0);
  ws.outbox.clear();

  // Phase 1: deliver what was exchanged at the previous boundary. Handed-off
  // entities stay in the grid so their receptions can be held for them.
  ws.items.clear();
  for (EntityId id : owned_[w]) ws.items.push_back({id, entities_[id].position});
  ws.grid.rebuild(ws.items);

  for (EntityId id : owned_[w]) {
    Entity& e = entities_[id];
    if (e.handed_off || parked_[id].empty()) continue;
    for (const auto& tx : parked_[id]) deliver(w, e, tx, distance_squared(tx.sender_position, e.position, extent_));
    parked_[id].clear();
  }
  const double range = config_.pbb.interaction_range;
  for (const Transmission& tx : pending_) {
    ws.grid.for_each_within(tx.sender_position, range, [&](const SpatialGrid::Item& item, double d2) {
      if (item.id == tx.sender) return;
      Entity& r = entities_[item.id];
      if (r.handed_off) {
        parked_[item.id].push_back(tx);
        ++ws.stats.buffered;
        return;
      }
      deliver(w, r, tx, d2);
    });
  }

  // Phase 2: mobility.
  for (EntityId id : owned_[w]) {
    Entity& e = entities_[id];
    if (e.handed_off) continue;
    const Motion m = advance(e.position, e.mobility, e.mobility_rng, extent_);
    e.position = m.position;
    e.mobility = m.state;
  }

  // Phase 3: generation.
  for (EntityId id : owned_[w]) {
    Entity& e = entities_[id];
    if (e.handed_off) continue;
    if (auto m = generate(id, clock_, e.pbb, config_.pbb)) {
      ++ws.stats.originated;
      ws.outbox.push_back(Transmission{id, {}, *m, w});
    }
  }

  // Phase 4: stamp send positions and order the outbox for the exchange.
  for (auto& tx : ws.outbox) tx.sender_position = entities_[tx.sender].position;
  std::sort(ws.outbox.begin(), ws.outbox.end(), transmission_order);
  ++worker_steps_[w];
}

StepStats CoarseWorld::commit() {
  if (!mid_step_) throw std::logic_error("commit without a computed step");
  for (std::size_t w = 0; w < worker_steps_.size(); ++w) {
    if (worker_steps_[w] != clock_ + 1)
      throw std::logic_error("lock-step audit failed: worker " + std::to_string(w) + " is at step " +
                             std::to_string(worker_steps_[w]) + ", expected " + std::to_string(clock_ + 1));
  }

  // Exchange: each outbox is sorted, so a pairwise merge yields the global order.
  std::vector<Transmission> merged;
  std::vector<Transmission> scratch;
  StepStats stats;
  stats.step = clock_;
  stats.inter_worker.assign(config_.num_workers, 0);
  for (auto& ws : workers_) {
    stats.accumulate(ws.stats);
    scratch.clear();
    scratch.reserve(merged.size() + ws.outbox.size());
    std::merge(merged.begin(), merged.end(), ws.outbox.begin(), ws.outbox.end(), std::back_inserter(scratch),
               transmission_order);
    merged.swap(scratch);
  }
  pending_ = std::move(merged);

  ++clock_;
  mid_step_ = false;
  if (config_.adaptive_partitioning && clock_ % config_.rebalance_period == 0) stats.migrations = rebalance();
  history_.push_back(stats);
  return stats;
}

std::uint64_t CoarseWorld::rebalance() {
  std::uint64_t migrations = 0;
  for (std::size_t i = 0; i < entities_.size(); ++i) {
    const std::uint32_t target = migration_target(partners_[i], owner_[i], config_.migration_threshold);
    if (target != owner_[i]) {
      owner_[i] = target;
      ++migrations;
    }
    std::fill(partners_[i].per_worker.begin(), partners_[i].per_worker.end(), 0);
  }
  if (migrations > 0) rebuild_owned();
  return migrations;
}

void CoarseWorld::hand_off(std::span<const EntityId> ids) {
  require_boundary("hand_off");
  for (EntityId id : ids) {
    if (id >= entities_.size()) throw std::out_of_range("hand_off: unknown entity " + std::to_string(id));
    if (entities_[id].handed_off) throw std::logic_error("hand_off: entity " + std::to_string(id) + " already handed off");
  }
  for (EntityId id : ids) entities_[id].handed_off = true;
}

void CoarseWorld::reabsorb(EntityId id, TorusPoint position) {
  require_boundary("reabsorb");
  Entity& e = entities_.at(id);
  if (!e.handed_off) throw std::logic_error("reabsorb: entity " + std::to_string(id) + " is not handed off");
  e.position = wrap(position, extent_);
  e.handed_off = false;
  // A Random Waypoint entity resumes toward its old waypoint from the new position.
}

void CoarseWorld::set_assignment(Assignment assignment) {
  require_boundary("set_assignment");
  if (assignment.size() != entities_.size()) throw std::invalid_argument("assignment size mismatch");
  for (auto w : assignment)
    if (w >= config_.num_workers) throw std::invalid_argument("assignment names a nonexistent worker");
  owner_ = std::move(assignment);
  rebuild_owned();
}

}  // namespace mlsim
