#pragma once

// Fine-grained event-driven wireless kernel: seller nodes on a fixed grid and
// pedestrians looking for a target seller, all routing over a reactive
// request/reply MANET protocol on a unit-disk radio. One instance is strictly
// single-threaded and advances only when asked to run up to a boundary.

#include <cstdint>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <tuple>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlsim/geometry.hpp"
#include "mlsim/scenario.hpp"

namespace mlsim::fine {

using Tick = std::int64_t;
using NodeIndex = std::uint32_t;

struct FineOptions {
  int hop_limit = 32;
  /// Fresh route requests sent after the first one times out.
  int discovery_retries = 2;
  /// Ticks before a route request is retried; 0 derives 2 * hop_limit + 2.
  Tick discovery_timeout = 0;
  /// Ticks an application query waits for its reply before retrying; 0 derives
  /// (discovery_retries + 2) * discovery_timeout.
  Tick query_timeout = 0;
  Tick hop_latency = 1;
  double arrival_radius = 1.0;
};

enum class PacketKind : std::uint8_t { RouteRequest, RouteReply, AppQuery, AppReply };

struct RoutePacket {
  PacketKind kind = PacketKind::RouteRequest;
  NodeIndex origin = 0;
  NodeIndex destination = 0;
  std::uint32_t sequence = 0;
  int hop_limit = 0;
  /// RouteRequest: nodes traversed so far, origin first. RouteReply: the full
  /// discovered path, request origin first.
  std::vector<NodeIndex> path;
  std::uint64_t query_id = 0;
  PlanePoint seller_position;  // AppReply
};

enum class EventKind : std::uint8_t { PacketArrival = 0, MovementTick = 1, AppTimer = 2 };
enum class TimerKind : std::uint8_t { QueryStart, QueryTimeout, DiscoveryTimeout };

struct FineEvent {
  Tick timestamp = 0;
  EventKind kind = EventKind::PacketArrival;
  std::uint64_t sequence = 0;
  NodeIndex node = 0;  // receiver, walker, or timer owner
  NodeIndex from = 0;  // PacketArrival: link-layer sender
  RoutePacket packet;
  TimerKind timer = TimerKind::QueryStart;
  NodeIndex timer_target = 0;
  std::uint64_t token = 0;
};

struct DiscoveredRoute {
  NodeIndex source = 0;
  NodeIndex destination = 0;
  int hops = 0;
  Tick at = 0;
};

struct FineCounters {
  std::uint64_t packets_sent = 0;
  std::uint64_t packets_received = 0;
  std::uint64_t packets_dropped = 0;
  std::uint64_t route_requests_processed = 0;
  std::uint64_t routes_discovered = 0;
  std::uint64_t discoveries_failed = 0;
  std::uint64_t queries_sent = 0;
  std::uint64_t queries_answered = 0;
  std::uint64_t queries_undelivered = 0;
  std::uint64_t events_processed = 0;

  friend bool operator==(const FineCounters&, const FineCounters&) = default;
};

struct PedestrianReport {
  std::uint64_t entity_id = 0;
  PlanePoint position;
  bool reached = false;
  bool seller_known = false;

  friend bool operator==(const PedestrianReport&, const PedestrianReport&) = default;
};

struct FineReport {
  Tick clock = 0;
  std::vector<PedestrianReport> pedestrians;
  FineCounters counters;

  friend bool operator==(const FineReport&, const FineReport&) = default;
};

struct EventQueueError : std::logic_error {
  using std::logic_error::logic_error;
};

class FineSimulation {
 public:
  explicit FineSimulation(const FineScenario& scenario, FineOptions options = {});

  /// Bare routing topology: static relay nodes, no pedestrians.
  static FineSimulation from_topology(std::span<const PlanePoint> positions, double radio_range,
                                      FineOptions options = {});

  Tick clock() const { return clock_; }
  Tick ticks_per_step() const { return ticks_per_step_; }
  double time() const { return static_cast<double>(clock_) * fine_resolution_; }

  /// Processes every event stamped at or before `boundary`, then sets the clock
  /// to it. Events beyond the boundary stay queued.
  FineReport run_until(Tick boundary);
  /// run_until(clock + one coarse step).
  FineReport run_coarse_step();
  FineReport report() const;

  /// Starts route discovery from `source` toward `destination` at the current clock.
  void discover_route(NodeIndex source, NodeIndex destination);
  /// Installed hop count from `from` to `to`, if any (0 for from == to).
  std::optional<int> route_hops(NodeIndex from, NodeIndex to) const;
  std::optional<NodeIndex> next_hop(NodeIndex from, NodeIndex to) const;

  std::size_t node_count() const { return nodes_.size(); }
  PlanePoint node_position(NodeIndex n) const { return nodes_.at(n).position; }
  std::optional<NodeIndex> seller_node(std::uint64_t seller_id) const;
  std::optional<NodeIndex> pedestrian_node(std::uint64_t entity_id) const;

  const FineCounters& counters() const { return counters_; }
  const std::vector<DiscoveredRoute>& discovered_routes() const { return routes_found_; }
  /// Route request processing count per (origin, sequence).
  const std::map<std::pair<NodeIndex, std::uint32_t>, std::uint64_t>& request_processing() const {
    return rreq_processed_;
  }
  /// Distance to the target seller after each movement tick, per pedestrian.
  const std::vector<std::vector<double>>& approach_trace() const { return approach_trace_; }

 private:
  struct Route {
    NodeIndex next_hop;
    int hops;
  };
  struct PendingDiscovery {
    std::uint32_t sequence = 0;
    int attempt = 0;
    Tick timeout = 0;
    std::vector<RoutePacket> queued;
  };
  struct Node {
    PlanePoint position;
    std::optional<std::size_t> pedestrian;
    std::unordered_map<NodeIndex, Route> routes;
    std::set<std::pair<NodeIndex, std::uint32_t>> seen_requests;
    std::map<NodeIndex, PendingDiscovery> discoveries;
    std::uint32_t next_sequence = 0;
  };
  struct Walker {
    std::uint64_t entity_id = 0;
    NodeIndex node = 0;
    NodeIndex target = 0;
    bool reached = false;
    std::optional<PlanePoint> seller_position;
    std::uint64_t active_query = 0;
    Tick backoff = 0;
  };
  struct EventAfter {
    bool operator()(const FineEvent& a, const FineEvent& b) const;
  };

  FineSimulation(FineOptions options, double radio_range, double walk_speed, double fine_resolution,
                 Tick ticks_per_step);

  void schedule(FineEvent ev);
  void schedule_timer(Tick at, NodeIndex owner, TimerKind kind, NodeIndex target, std::uint64_t token);
  void process(const FineEvent& ev);
  bool in_range(NodeIndex a, NodeIndex b) const;
  void broadcast(NodeIndex from, const RoutePacket& p);
  bool unicast(NodeIndex from, NodeIndex to, const RoutePacket& p);
  void send_data(NodeIndex at, RoutePacket p);
  void start_discovery(NodeIndex source, NodeIndex destination, int attempt);
  void install_route(NodeIndex at, NodeIndex destination, NodeIndex next_hop, int hops);
  void on_arrival(NodeIndex at, NodeIndex from, const RoutePacket& p);
  void on_local_delivery(NodeIndex at, const RoutePacket& p);
  void on_timer(const FineEvent& ev);
  void on_movement(NodeIndex walker_node);
  void issue_query(std::size_t walker);

  FineOptions options_;
  double radio_range_;
  double walk_speed_;
  double fine_resolution_;
  Tick ticks_per_step_;
  Tick clock_ = 0;
  std::uint64_t next_event_sequence_ = 0;
  std::uint64_t next_query_id_ = 1;
  std::priority_queue<FineEvent, std::vector<FineEvent>, EventAfter> queue_;
  std::optional<std::tuple<Tick, EventKind, std::uint64_t>> last_popped_;
  std::vector<Node> nodes_;
  std::vector<Walker> walkers_;
  std::map<std::uint64_t, NodeIndex> seller_nodes_;
  FineCounters counters_;
  std::vector<DiscoveredRoute> routes_found_;
  std::map<std::pair<NodeIndex, std::uint32_t>, std::uint64_t> rreq_processed_;
  std::vector<std::vector<double>> approach_trace_;
};

}  // namespace mlsim::fine
