#include "mlsim/dissemination.hpp"

#include <stdexcept>
#include <string>

namespace mlsim {

Message forwarded_copy(const Message& m) {
  Message copy = m;
  --copy.ttl_remaining;
  ++copy.hop_count;
  return copy;
}

void PbBConfig::validate() const {
  if (!(gossip_probability >= 0.0 && gossip_probability <= 1.0))
    throw std::invalid_argument("gossip probability must lie in [0, 1]");
  if (!(generation_probability >= 0.0 && generation_probability <= 1.0))
    throw std::invalid_argument("generation probability must lie in [0, 1]");
  if (!(forward_threshold > 0.0 && forward_threshold < interaction_range))
    throw std::invalid_argument("forward threshold must satisfy 0 < threshold < interaction range");
}

DedupCache::DedupCache(const DedupCache& other) : capacity_(other.capacity_), order_(other.order_) {
  for (auto it = order_.begin(); it != order_.end(); ++it) index_.emplace(*it, it);
}

DedupCache& DedupCache::operator=(const DedupCache& other) {
  if (this != &other) {
    DedupCache tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

bool DedupCache::lookup(const MessageId& id) {
  auto it = index_.find(id);
  if (it == index_.end()) return false;
  order_.splice(order_.begin(), order_, it->second);
  return true;
}

void DedupCache::insert(const MessageId& id) {
  if (capacity_ == 0) return;
  if (lookup(id)) return;
  if (order_.size() == capacity_) {
    index_.erase(order_.back());
    order_.pop_back();
  }
  order_.push_front(id);
  index_.emplace(id, order_.begin());
}

std::optional<Message> generate(EntityId origin, Timestep step, PbBState& node, const PbBConfig& config) {
  const double draw = node.generation_rng.uniform();
  if (!(draw < config.generation_probability)) return std::nullopt;
  Message m;
  m.id = MessageId{origin, step, node.next_sequence++};
  m.ttl_remaining = config.ttl_init;
  m.hop_count = 0;
  node.cache.insert(m.id);
  return m;
}

ReceiveOutcome on_receive(PbBState& receiver, TorusPoint receiver_position, const Message& message,
                          TorusPoint sender_position, WorldExtent extent, const PbBConfig& config) {
  return on_receive(receiver, message, distance_squared(sender_position, receiver_position, extent), config);
}

ReceiveOutcome on_receive(PbBState& receiver, const Message& message, double squared_distance,
                          const PbBConfig& config) {
  if (receiver.cache.enabled()) {
    if (receiver.cache.lookup(message.id)) return ReceiveOutcome::Discarded;
    receiver.cache.insert(message.id);
  }

  if (message.ttl_remaining == 0) return ReceiveOutcome::Delivered;
  if (!(squared_distance > config.forward_threshold * config.forward_threshold)) return ReceiveOutcome::Delivered;
  if (receiver.gossip_rng.uniform() < config.gossip_probability) return ReceiveOutcome::DeliveredAndForward;
  return ReceiveOutcome::Delivered;
}

}  // namespace mlsim
