#include "mlsim/level1.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mlsim::fine {

bool FineSimulation::EventAfter::operator()(const FineEvent& a, const FineEvent& b) const {
  return std::tie(a.timestamp, a.kind, a.sequence) > std::tie(b.timestamp, b.kind, b.sequence);
}

FineSimulation::FineSimulation(FineOptions options, double radio_range, double walk_speed, double fine_resolution,
                               Tick ticks_per_step)
    : options_(options),
      radio_range_(radio_range),
      walk_speed_(walk_speed),
      fine_resolution_(fine_resolution),
      ticks_per_step_(ticks_per_step) {
  if (options_.hop_limit < 1) throw std::invalid_argument("hop limit must be at least 1");
  if (options_.hop_latency < 1) throw std::invalid_argument("hop latency must be at least 1 tick");
  if (options_.discovery_retries < 0) throw std::invalid_argument("discovery retries must be non-negative");
  if (options_.discovery_timeout <= 0)
    options_.discovery_timeout = (2 * static_cast<Tick>(options_.hop_limit) + 2) * options_.hop_latency;
  if (options_.query_timeout <= 0)
    options_.query_timeout = static_cast<Tick>(options_.discovery_retries + 2) * options_.discovery_timeout;
}

FineSimulation::FineSimulation(const FineScenario& scenario, FineOptions options)
    : FineSimulation(options, scenario.radio_range, scenario.walk_speed, scenario.fine_resolution,
                     (scenario.validate(), scenario.ticks_per_step())) {
  for (const auto& s : scenario.sellers) {
    seller_nodes_.emplace(s.id, static_cast<NodeIndex>(nodes_.size()));
    nodes_.push_back(Node{s.position, std::nullopt, {}, {}, {}, 0});
  }
  for (const auto& p : scenario.pedestrians) {
    const auto node = static_cast<NodeIndex>(nodes_.size());
    nodes_.push_back(Node{p.start, walkers_.size(), {}, {}, {}, 0});
    walkers_.push_back(Walker{p.entity_id, node, seller_nodes_.at(p.target_seller), false, std::nullopt, 0,
                              options_.discovery_timeout});
  }
  approach_trace_.resize(walkers_.size());
  for (const auto& w : walkers_) schedule_timer(0, w.node, TimerKind::QueryStart, w.target, 0);
}

FineSimulation FineSimulation::from_topology(std::span<const PlanePoint> positions, double radio_range,
                                             FineOptions options) {
  FineSimulation sim(options, radio_range, 0.0, 1.0, 1);
  for (const auto& p : positions) sim.nodes_.push_back(Node{p, std::nullopt, {}, {}, {}, 0});
  return sim;
}

std::optional<NodeIndex> FineSimulation::seller_node(std::uint64_t seller_id) const {
  if (auto it = seller_nodes_.find(seller_id); it != seller_nodes_.end()) return it->second;
  return std::nullopt;
}

std::optional<NodeIndex> FineSimulation::pedestrian_node(std::uint64_t entity_id) const {
  for (const auto& w : walkers_)
    if (w.entity_id == entity_id) return w.node;
  return std::nullopt;
}

void FineSimulation::schedule(FineEvent ev) {
  if (ev.timestamp < clock_) throw EventQueueError("event scheduled in the past");
  ev.sequence = next_event_sequence_++;
  queue_.push(std::move(ev));
}

void FineSimulation::schedule_timer(Tick at, NodeIndex owner, TimerKind kind, NodeIndex target, std::uint64_t token) {
  FineEvent ev;
  ev.timestamp = at;
  ev.kind = EventKind::AppTimer;
  ev.node = owner;
  ev.timer = kind;
  ev.timer_target = target;
  ev.token = token;
  schedule(std::move(ev));
}

FineReport FineSimulation::run_until(Tick boundary) {
  if (boundary < clock_) throw std::invalid_argument("run_until boundary lies before the fine clock");
  while (!queue_.empty() && queue_.top().timestamp <= boundary) {
    FineEvent ev = queue_.top();
    queue_.pop();
    const auto key = std::make_tuple(ev.timestamp, ev.kind, ev.sequence);
    if (last_popped_ && key < *last_popped_) throw EventQueueError("event queue popped out of order");
    last_popped_ = key;
    clock_ = ev.timestamp;
    ++counters_.events_processed;
    process(ev);
  }
  clock_ = boundary;
  return report();
}

FineReport FineSimulation::run_coarse_step() { return run_until(clock_ + ticks_per_step_); }

FineReport FineSimulation::report() const {
  FineReport r;
  r.clock = clock_;
  r.counters = counters_;
  for (const auto& w : walkers_)
    r.pedestrians.push_back({w.entity_id, nodes_[w.node].position, w.reached, w.seller_position.has_value()});
  return r;
}

void FineSimulation::process(const FineEvent& ev) {
  switch (ev.kind) {
    case EventKind::PacketArrival:
      ++counters_.packets_received;
      on_arrival(ev.node, ev.from, ev.packet);
      break;
    case EventKind::MovementTick:
      on_movement(ev.node);
      break;
    case EventKind::AppTimer:
      on_timer(ev);
      break;
  }
}

bool FineSimulation::in_range(NodeIndex a, NodeIndex b) const {
  return plane_distance(nodes_[a].position, nodes_[b].position) <= radio_range_;
}

void FineSimulation::broadcast(NodeIndex from, const RoutePacket& p) {
  ++counters_.packets_sent;
  for (NodeIndex n = 0; n < nodes_.size(); ++n) {
    if (n == from || !in_range(from, n)) continue;
    FineEvent ev;
    ev.timestamp = clock_ + options_.hop_latency;
    ev.kind = EventKind::PacketArrival;
    ev.node = n;
    ev.from = from;
    ev.packet = p;
    schedule(std::move(ev));
  }
}

bool FineSimulation::unicast(NodeIndex from, NodeIndex to, const RoutePacket& p) {
  ++counters_.packets_sent;
  if (!in_range(from, to)) {
    ++counters_.packets_dropped;
    return false;
  }
  FineEvent ev;
  ev.timestamp = clock_ + options_.hop_latency;
  ev.kind = EventKind::PacketArrival;
  ev.node = to;
  ev.from = from;
  ev.packet = p;
  schedule(std::move(ev));
  return true;
}

void FineSimulation::send_data(NodeIndex at, RoutePacket p) {
  if (p.destination == at) {
    on_local_delivery(at, p);
    return;
  }
  Node& node = nodes_[at];
  if (auto it = node.routes.find(p.destination); it != node.routes.end()) {
    if (!unicast(at, it->second.next_hop, p)) node.routes.erase(it);  // link broke
    return;
  }
  auto [pending, fresh] = node.discoveries.try_emplace(p.destination);
  pending->second.queued.push_back(std::move(p));
  if (fresh) start_discovery(at, pending->first, 0);
}

void FineSimulation::discover_route(NodeIndex source, NodeIndex destination) {
  if (source >= nodes_.size() || destination >= nodes_.size()) throw std::out_of_range("discover_route: unknown node");
  if (source == destination) return;
  auto [pending, fresh] = nodes_[source].discoveries.try_emplace(destination);
  if (fresh) start_discovery(source, destination, 0);
}

void FineSimulation::start_discovery(NodeIndex source, NodeIndex destination, int attempt) {
  Node& node = nodes_[source];
  PendingDiscovery& pending = node.discoveries.at(destination);
  pending.sequence = ++node.next_sequence;
  pending.attempt = attempt;
  pending.timeout = options_.discovery_timeout << attempt;
  node.seen_requests.insert({source, pending.sequence});

  RoutePacket rreq;
  rreq.kind = PacketKind::RouteRequest;
  rreq.origin = source;
  rreq.destination = destination;
  rreq.sequence = pending.sequence;
  rreq.hop_limit = options_.hop_limit;
  rreq.path = {source};
  broadcast(source, rreq);
  schedule_timer(clock_ + pending.timeout, source, TimerKind::DiscoveryTimeout, destination, pending.sequence);
}

void FineSimulation::install_route(NodeIndex at, NodeIndex destination, NodeIndex next_hop, int hops) {
  if (at == destination) return;
  auto& routes = nodes_[at].routes;
  auto it = routes.find(destination);
  if (it == routes.end() || hops <= it->second.hops) routes[destination] = Route{next_hop, hops};
}

void FineSimulation::on_arrival(NodeIndex at, NodeIndex from, const RoutePacket& p) {
  switch (p.kind) {
    case PacketKind::RouteRequest: {
      Node& node = nodes_[at];
      if (!node.seen_requests.insert({p.origin, p.sequence}).second) return;
      ++counters_.route_requests_processed;
      ++rreq_processed_[{p.origin, p.sequence}];
      install_route(at, p.origin, from, static_cast<int>(p.path.size()));
      if (at == p.destination) {
        RoutePacket rrep;
        rrep.kind = PacketKind::RouteReply;
        rrep.origin = at;
        rrep.destination = p.origin;
        rrep.sequence = p.sequence;
        rrep.hop_limit = p.hop_limit;
        rrep.path = p.path;
        rrep.path.push_back(at);
        unicast(at, from, rrep);
        return;
      }
      if (static_cast<int>(p.path.size()) < p.hop_limit) {
        RoutePacket fwd = p;
        fwd.path.push_back(at);
        broadcast(at, fwd);
      }
      return;
    }
    case PacketKind::RouteReply: {
      const auto pos = std::find(p.path.begin(), p.path.end(), at);
      if (pos == p.path.end()) return;
      const auto index = static_cast<int>(pos - p.path.begin());
      const int hops_to_target = static_cast<int>(p.path.size()) - 1 - index;
      install_route(at, p.path.back(), from, hops_to_target);
      if (index == 0) {
        Node& node = nodes_[at];
        auto it = node.discoveries.find(p.path.back());
        if (it == node.discoveries.end() || it->second.sequence != p.sequence) return;  // stale reply
        ++counters_.routes_discovered;
        routes_found_.push_back({at, p.path.back(), hops_to_target, clock_});
        auto queued = std::move(it->second.queued);
        node.discoveries.erase(it);
        for (auto& q : queued) send_data(at, std::move(q));
        return;
      }
      unicast(at, p.path[index - 1], p);
      return;
    }
    case PacketKind::AppQuery:
    case PacketKind::AppReply:
      send_data(at, p);
      return;
  }
}

void FineSimulation::on_local_delivery(NodeIndex at, const RoutePacket& p) {
  if (p.kind == PacketKind::AppQuery) {
    RoutePacket reply;
    reply.kind = PacketKind::AppReply;
    reply.origin = at;
    reply.destination = p.origin;
    reply.query_id = p.query_id;
    reply.seller_position = nodes_[at].position;
    send_data(at, std::move(reply));
    return;
  }
  if (p.kind != PacketKind::AppReply) return;
  const auto& node = nodes_[at];
  if (!node.pedestrian) return;
  Walker& w = walkers_[*node.pedestrian];
  if (w.seller_position || p.query_id != w.active_query) return;
  w.seller_position = p.seller_position;
  ++counters_.queries_answered;
  FineEvent ev;
  ev.timestamp = clock_ + 1;
  ev.kind = EventKind::MovementTick;
  ev.node = w.node;
  schedule(std::move(ev));
}

void FineSimulation::issue_query(std::size_t index) {
  Walker& w = walkers_[index];
  w.active_query = next_query_id_++;
  ++counters_.queries_sent;
  RoutePacket q;
  q.kind = PacketKind::AppQuery;
  q.origin = w.node;
  q.destination = w.target;
  q.query_id = w.active_query;
  schedule_timer(clock_ + options_.query_timeout, w.node, TimerKind::QueryTimeout, w.target, w.active_query);
  send_data(w.node, std::move(q));
}

void FineSimulation::on_timer(const FineEvent& ev) {
  Node& node = nodes_[ev.node];
  switch (ev.timer) {
    case TimerKind::QueryStart: {
      if (!node.pedestrian) return;
      const Walker& w = walkers_[*node.pedestrian];
      if (w.reached || w.seller_position) return;
      issue_query(*node.pedestrian);
      return;
    }
    case TimerKind::QueryTimeout: {
      if (!node.pedestrian) return;
      Walker& w = walkers_[*node.pedestrian];
      if (w.reached || w.seller_position || ev.token != w.active_query) return;
      ++counters_.queries_undelivered;
      schedule_timer(clock_ + w.backoff, w.node, TimerKind::QueryStart, w.target, 0);
      w.backoff = std::min<Tick>(w.backoff * 2, 64 * options_.discovery_timeout);
      return;
    }
    case TimerKind::DiscoveryTimeout: {
      auto it = node.discoveries.find(ev.timer_target);
      if (it == node.discoveries.end() || it->second.sequence != ev.token) return;
      if (it->second.attempt < options_.discovery_retries) {
        start_discovery(ev.node, ev.timer_target, it->second.attempt + 1);
        return;
      }
      ++counters_.discoveries_failed;
      counters_.packets_dropped += it->second.queued.size();
      node.discoveries.erase(it);
      return;
    }
  }
}

void FineSimulation::on_movement(NodeIndex walker_node) {
  Node& node = nodes_[walker_node];
  Walker& w = walkers_[*node.pedestrian];
  if (w.reached || !w.seller_position) return;
  const PlanePoint goal = *w.seller_position;
  const double step = walk_speed_ * fine_resolution_;
  const double remaining = plane_distance(node.position, goal);
  if (remaining <= step) {
    node.position = goal;
  } else {
    const double f = step / remaining;
    node.position = {node.position.x + (goal.x - node.position.x) * f,
                     node.position.y + (goal.y - node.position.y) * f};
  }
  const double left = plane_distance(node.position, goal);
  approach_trace_[*node.pedestrian].push_back(left);
  if (left <= options_.arrival_radius) {
    w.reached = true;
    return;
  }
  FineEvent ev;
  ev.timestamp = clock_ + 1;
  ev.kind = EventKind::MovementTick;
  ev.node = walker_node;
  schedule(std::move(ev));
}

std::optional<int> FineSimulation::route_hops(NodeIndex from, NodeIndex to) const {
  if (from == to) return 0;
  const auto& routes = nodes_.at(from).routes;
  if (auto it = routes.find(to); it != routes.end()) return it->second.hops;
  return std::nullopt;
}

std::optional<NodeIndex> FineSimulation::next_hop(NodeIndex from, NodeIndex to) const {
  const auto& routes = nodes_.at(from).routes;
  if (auto it = routes.find(to); it != routes.end()) return it->second.next_hop;
  return std::nullopt;
}

}  // namespace mlsim::fine
