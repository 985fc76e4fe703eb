#include <doctest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "mlsim/level0.hpp"

using namespace mlsim;

namespace {

ModelConfig small_config(std::size_t n, std::size_t cache, unsigned workers, std::uint64_t seed = 3) {
  ModelConfig c;
  c.num_entities = n;
  c.cache_capacity = cache;
  c.num_workers = workers;
  c.total_steps = 40;
  c.seed = seed;
  return c;
}

struct Counters {
  std::uint64_t originated, delivered, forwarded, discarded, receptions;
  friend bool operator==(const Counters&, const Counters&) = default;
};

Counters counters_of(const StepStats& s) {
  return {s.originated, s.delivered, s.forwarded, s.discarded_by_cache, s.receptions};
}

// Oracle: the step semantics spelled out with an all-pairs neighbor scan and
// no partitioning. Starts from the world's initial entity state.
std::vector<Counters> reference_run(const ModelConfig& cfg) {
  const CoarseWorld initial(cfg);
  std::vector<Entity> es(initial.entities().begin(), initial.entities().end());
  const WorldExtent ext = initial.extent();
  const double r2 = cfg.pbb.interaction_range * cfg.pbb.interaction_range;
  std::vector<Transmission> pending;
  std::vector<Counters> out;
  for (Timestep t = 0; t < cfg.total_steps; ++t) {
    Counters c{};
    std::vector<Transmission> next;
    for (auto& r : es) {
      for (const auto& tx : pending) {
        if (tx.sender == r.id) continue;
        const double d2 = distance_squared(tx.sender_position, r.position, ext);
        if (d2 > r2) continue;
        ++c.receptions;
        switch (on_receive(r.pbb, tx.message, d2, cfg.pbb)) {
          case ReceiveOutcome::Discarded: ++c.discarded; break;
          case ReceiveOutcome::Delivered: ++c.delivered; break;
          case ReceiveOutcome::DeliveredAndForward:
            ++c.delivered;
            ++c.forwarded;
            next.push_back({r.id, {}, forwarded_copy(tx.message), 0});
            break;
        }
      }
    }
    for (auto& e : es) {
      const auto m = advance(e.position, e.mobility, e.mobility_rng, ext);
      e.position = m.position;
      e.mobility = m.state;
    }
    for (auto& e : es) {
      if (auto m = generate(e.id, t, e.pbb, cfg.pbb)) {
        ++c.originated;
        next.push_back({e.id, {}, *m, 0});
      }
    }
    for (auto& tx : next) tx.sender_position = es[tx.sender].position;
    std::sort(next.begin(), next.end(), transmission_order);
    pending = std::move(next);
    out.push_back(c);
  }
  return out;
}

std::vector<Counters> run_counters(CoarseWorld& w) {
  std::vector<Counters> out;
  while (!w.finished()) out.push_back(counters_of(w.step()));
  return out;
}

}  // namespace

TEST_CASE("config validation rejects bad values") {
  ModelConfig c;
  c.num_entities = 0;
  CHECK_THROWS_AS(CoarseWorld{c}, ConfigError);
  c = {};
  c.num_workers = 0;
  CHECK_THROWS_AS(CoarseWorld{c}, ConfigError);
  c = {};
  c.pbb.gossip_probability = 2.0;
  CHECK_THROWS_AS(CoarseWorld{c}, ConfigError);
  c = {};
  c.mobile_fraction = 1.5;
  CHECK_THROWS_AS(CoarseWorld{c}, ConfigError);
}

TEST_CASE("world construction") {
  auto cfg = small_config(200, 0, 1);
  CoarseWorld w(cfg);
  CHECK(w.extent().width == doctest::Approx(WorldExtent::from_density(200).width));
  std::size_t mobile = 0;
  for (const auto& e : w.entities()) {
    CHECK(e.position.x >= 0.0);
    CHECK(e.position.x < w.extent().width);
    CHECK(e.position.y >= 0.0);
    CHECK(e.position.y < w.extent().height);
    if (e.mobility.kind == MobilityKind::RandomWaypoint) {
      CHECK(e.id < 100);
      ++mobile;
    }
  }
  CHECK(mobile == 100);
  CHECK(w.active_count() == 200);
}

TEST_CASE("per-step counters match the all-pairs reference") {
  for (std::size_t cache : {0u, 256u}) {
    for (unsigned workers : {1u, 3u}) {
      CAPTURE(cache);
      CAPTURE(workers);
      auto cfg = small_config(150, cache, workers);
      CoarseWorld w(cfg);
      CHECK(run_counters(w) == reference_run(cfg));
    }
  }
}

TEST_CASE("results do not depend on the worker count") {
  auto cfg = small_config(400, 256, 1, 17);
  cfg.total_steps = 30;
  CoarseWorld base(cfg);
  const auto expected = run_counters(base);
  for (unsigned workers : {2u, 4u, 7u}) {
    cfg.num_workers = workers;
    CoarseWorld w(cfg);
    CHECK(run_counters(w) == expected);
    for (std::size_t i = 0; i < cfg.num_entities; ++i) {
      REQUIRE(w.entities()[i].position == base.entities()[i].position);
      REQUIRE(std::equal(w.entities()[i].pbb.cache.entries().begin(), w.entities()[i].pbb.cache.entries().end(),
                         base.entities()[i].pbb.cache.entries().begin(), base.entities()[i].pbb.cache.entries().end()));
    }
  }
}

TEST_CASE("stats accounting and hop bound hold every step") {
  for (std::size_t cache : {0u, 256u}) {
    auto cfg = small_config(300, cache, 2);
    CoarseWorld w(cfg);
    while (!w.finished()) {
      const auto s = w.step();
      CHECK(s.delivered + s.discarded_by_cache == s.receptions);
      CHECK(s.forwarded <= s.delivered);
      CHECK(s.max_delivered_hops <= cfg.pbb.ttl_init);
      CHECK(s.hop_violations == 0);
      for (auto c : w.worker_step_counts()) CHECK(c == w.clock());
    }
    if (cache == 0) CHECK(w.history().back().discarded_by_cache == 0);
  }
}

TEST_CASE("a large cache stops every node from forwarding an id twice") {
  auto cfg = small_config(250, 1u << 20, 2);
  CoarseWorld w(cfg);
  std::set<std::pair<EntityId, MessageId>> forwarded;
  while (!w.finished()) {
    w.step();
    for (const auto& tx : w.pending()) {
      if (tx.message.hop_count == 0) continue;
      CHECK(forwarded.insert({tx.sender, tx.message.id}).second);
    }
  }
  CHECK_FALSE(forwarded.empty());
}

TEST_CASE("broadcast set agrees with a brute-force scan") {
  auto cfg = small_config(500, 0, 1);
  CoarseWorld w(cfg);
  RandomStream rng(8);
  for (int q = 0; q < 50; ++q) {
    const TorusPoint c{rng.uniform(0.0, w.extent().width), rng.uniform(0.0, w.extent().height)};
    std::vector<EntityId> expected;
    for (const auto& e : w.entities())
      if (distance(c, e.position, w.extent()) <= cfg.pbb.interaction_range && e.id != 3) expected.push_back(e.id);
    CHECK(w.broadcast_set(c, 3) == expected);
  }
}

TEST_CASE("static partition uses equal vertical stripes") {
  std::vector<Entity> es(5);
  const WorldExtent e{100.0, 10.0};
  const double xs[] = {0.0, 24.9, 25.0, 74.99, 99.99};
  for (int i = 0; i < 5; ++i) es[i].position = {xs[i], 1.0};
  CHECK(partition_static(es, e, 4) == Assignment{0, 0, 1, 2, 3});
  CHECK(partition_static(es, e, 1) == Assignment{0, 0, 0, 0, 0});
}

TEST_CASE("migration rule") {
  CHECK(migration_target({{2, 8, 0}}, 0, 0.6) == 1);
  CHECK(migration_target({{4, 6, 0}}, 0, 0.6) == 0);   // remote share not above the threshold
  CHECK(migration_target({{3, 4, 3}}, 0, 0.6) == 1);   // 0.7 remote, largest partner wins
  CHECK(migration_target({{4, 3, 3}}, 0, 0.5) == 0);   // no remote worker beats the own count
  CHECK(migration_target({{0, 0, 0}}, 2, 0.6) == 2);
}

TEST_CASE("adaptive rebalancing leaves trajectories and caches unchanged") {
  auto cfg = small_config(600, 64, 3, 5);
  cfg.total_steps = 60;
  cfg.rebalance_period = 10;
  CoarseWorld fixed(cfg);
  cfg.adaptive_partitioning = true;
  CoarseWorld adaptive(cfg);
  std::uint64_t migrations = 0;
  while (!fixed.finished()) {
    CHECK(counters_of(fixed.step()) == counters_of(adaptive.step()));
    migrations += adaptive.history().back().migrations;
  }
  for (std::size_t i = 0; i < cfg.num_entities; ++i) {
    REQUIRE(fixed.entities()[i].position == adaptive.entities()[i].position);
    REQUIRE(std::equal(fixed.entities()[i].pbb.cache.entries().begin(), fixed.entities()[i].pbb.cache.entries().end(),
                       adaptive.entities()[i].pbb.cache.entries().begin(),
                       adaptive.entities()[i].pbb.cache.entries().end()));
  }
  CHECK(migrations > 0);
}

TEST_CASE("boundary-only operations are refused mid-step") {
  auto cfg = small_config(50, 0, 2);
  CoarseWorld w(cfg);
  w.compute_phases();
  CHECK_FALSE(w.at_boundary());
  const EntityId ids[] = {1};
  CHECK_THROWS_AS(w.hand_off(ids), std::logic_error);
  CHECK_THROWS_AS(w.compute_phases(), std::logic_error);
  w.commit();
  CHECK_THROWS_AS(w.commit(), std::logic_error);
  CHECK_NOTHROW(w.hand_off(ids));
  CHECK_THROWS_AS(w.hand_off(ids), std::logic_error);
}

TEST_CASE("handed-off entities are frozen, then come back with their receptions") {
  auto cfg = small_config(300, 256, 2, 21);
  cfg.pbb.generation_probability = 1.0;
  cfg.total_steps = 20;
  CoarseWorld w(cfg);
  w.step();
  const EntityId ids[] = {0, 1, 2};
  const auto before = w.entity(0);
  w.hand_off(ids);
  CHECK(w.active_count() == 297);
  CHECK(w.handed_off_count() == 3);
  std::uint64_t buffered = 0;
  for (int i = 0; i < 3; ++i) {
    const auto s = w.step();
    buffered += s.buffered;
    for (const auto& tx : w.pending()) CHECK(tx.sender > 2);
  }
  CHECK(w.entity(0).position == before.position);
  CHECK(w.entity(0).pbb.next_sequence == before.pbb.next_sequence);
  CHECK(buffered > 0);

  w.reabsorb(0, {10.0, 10.0});
  w.reabsorb(1, w.entity(1).position);
  w.reabsorb(2, {-5.0, w.extent().height + 5.0});
  CHECK(w.entity(2).position.x == doctest::Approx(w.extent().width - 5.0));
  CHECK(w.entity(2).position.y == doctest::Approx(5.0));
  CHECK(w.active_count() == 300);
  CHECK_THROWS_AS(w.reabsorb(0, {1.0, 1.0}), std::logic_error);

  // The parked receptions are processed in the next step, on top of the fresh ones.
  const auto next = w.step();
  CHECK(next.delivered + next.discarded_by_cache == next.receptions);
}

TEST_CASE("set_assignment validates its input") {
  auto cfg = small_config(20, 0, 2);
  CoarseWorld w(cfg);
  CHECK_THROWS_AS(w.set_assignment(Assignment(19, 0)), std::invalid_argument);
  CHECK_THROWS_AS(w.set_assignment(Assignment(20, 2)), std::invalid_argument);
  w.set_assignment(Assignment(20, 1));
  CHECK(w.owned()[0].empty());
  CHECK(w.owned()[1].size() == 20);
}
