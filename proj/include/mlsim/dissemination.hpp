#pragma once

// Priority-based Broadcast (PbB): proximity broadcast where each receiver
// relays a message only when it still has hops left, sits far enough from the
// sender, and wins a gossip draw. Duplicates are filtered by a per-node LRU
// cache of message ids.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <list>
#include <optional>
#include <unordered_map>

#include "mlsim/geometry.hpp"
#include "mlsim/random.hpp"

namespace mlsim {

using EntityId = std::uint32_t;
using Timestep = std::uint32_t;

struct MessageId {
  EntityId origin = 0;
  Timestep step = 0;
  std::uint32_t sequence = 0;

  friend auto operator<=>(const MessageId&, const MessageId&) = default;
};

struct MessageIdHash {
  std::size_t operator()(const MessageId& id) const noexcept {
    std::uint64_t h = (static_cast<std::uint64_t>(id.origin) << 32) ^ id.sequence;
    h ^= static_cast<std::uint64_t>(id.step) * 0x9e3779b97f4a7c15ULL;
    h ^= h >> 29;
    return static_cast<std::size_t>(h * 0xbf58476d1ce4e5b9ULL);
  }
};

struct Message {
  MessageId id;
  std::uint16_t ttl_remaining = 0;
  std::uint16_t hop_count = 0;

  EntityId origin() const { return id.origin; }
  Timestep created_at() const { return id.step; }

  friend bool operator==(const Message&, const Message&) = default;
};

/// The copy a relaying node rebroadcasts: one hop spent.
Message forwarded_copy(const Message& m);

struct PbBConfig {
  std::uint16_t ttl_init = 4;
  double gossip_probability = 0.6;
  double interaction_range = 250.0;
  double forward_threshold = 200.0;
  double generation_probability = 0.2;

  /// Throws std::invalid_argument on out-of-range parameters.
  void validate() const;
};

/// Bounded set of message ids with least-recently-used eviction.
/// Capacity 0 disables the cache: every lookup misses and inserts are dropped.
class DedupCache {
 public:
  explicit DedupCache(std::size_t capacity = 0) : capacity_(capacity) {}
  DedupCache(const DedupCache& other);
  DedupCache& operator=(const DedupCache& other);
  DedupCache(DedupCache&&) noexcept = default;
  DedupCache& operator=(DedupCache&&) noexcept = default;

  /// Hit test; a hit marks the id most recently used.
  bool lookup(const MessageId& id);
  /// Inserts (or refreshes) `id` as most recently used, evicting the LRU
  /// entry when full.
  void insert(const MessageId& id);
  bool contains(const MessageId& id) const { return index_.contains(id); }

  std::size_t size() const { return order_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool enabled() const { return capacity_ > 0; }

  /// Ids from most to least recently used.
  const std::list<MessageId>& entries() const { return order_; }

 private:
  std::size_t capacity_ = 0;
  std::list<MessageId> order_;
  std::unordered_map<MessageId, std::list<MessageId>::iterator, MessageIdHash> index_;
};

/// Per-node dissemination state.
struct PbBState {
  DedupCache cache;
  RandomStream generation_rng;
  RandomStream gossip_rng;
  std::uint32_t next_sequence = 0;
};

/// Bernoulli origination. The node's own id goes into its cache so echoes of
/// its messages are discarded.
std::optional<Message> generate(EntityId origin, Timestep step, PbBState& node, const PbBConfig& config);

enum class ReceiveOutcome { Discarded, Delivered, DeliveredAndForward };

/// Receiver-side processing. Checks run in the fixed order cache, TTL,
/// distance (strictly greater than the threshold), gossip draw. The gossip
/// draw is consumed only when the first three allow a forward.
ReceiveOutcome on_receive(PbBState& receiver, TorusPoint receiver_position, const Message& message,
                          TorusPoint sender_position, WorldExtent extent, const PbBConfig& config);

/// Same as above with the squared sender-receiver distance already known.
ReceiveOutcome on_receive(PbBState& receiver, const Message& message, double squared_distance,
                          const PbBConfig& config);

}  // namespace mlsim
