#pragma once

// Coupling envelopes and their line-oriented wire format. Every envelope is a
// single JSON object on one line, terminated by '\n', with the fields in this
// order:
//
//   {"kind":"StateReport","instance":3,"step":41,"payload":{...}}
//
// Payloads: Hello {"pid","ticks_per_step"}; StateReport and FinalState
// {"fine_clock","entities":[{"id","x","y","reached","seller_known"}],
// "counters":{...}}; Continue and End {}.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mlsim/level1.hpp"

namespace mlsim::coupling {

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class EnvelopeKind { Hello, StateReport, Continue, End, FinalState };

const char* to_string(EnvelopeKind kind);

struct HelloPayload {
  std::int64_t pid = 0;
  std::int64_t ticks_per_step = 0;

  friend bool operator==(const HelloPayload&, const HelloPayload&) = default;
};

struct EntityState {
  std::uint64_t id = 0;
  double x = 0.0;  // fine local frame
  double y = 0.0;
  bool reached = false;
  bool seller_known = false;

  friend bool operator==(const EntityState&, const EntityState&) = default;
};

struct FineStatePayload {
  std::int64_t fine_clock = 0;
  std::vector<EntityState> entities;
  fine::FineCounters counters;

  friend bool operator==(const FineStatePayload&, const FineStatePayload&) = default;
};

struct EmptyPayload {
  friend bool operator==(const EmptyPayload&, const EmptyPayload&) = default;
};

using Payload = std::variant<EmptyPayload, HelloPayload, FineStatePayload>;

struct Envelope {
  EnvelopeKind kind = EnvelopeKind::Hello;
  std::uint64_t instance = 0;
  std::uint64_t step = 0;
  Payload payload;

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

Envelope make_hello(std::uint64_t instance, std::uint64_t step, HelloPayload hello);
Envelope make_state(EnvelopeKind kind, std::uint64_t instance, std::uint64_t step, FineStatePayload state);
Envelope make_control(EnvelopeKind kind, std::uint64_t instance, std::uint64_t step);

FineStatePayload state_from_report(const fine::FineReport& report);

/// One line without the trailing newline. Throws ProtocolError if the payload
/// type does not match the kind.
std::string encode(const Envelope& envelope);
/// Inverse of encode(); a trailing '\n' is tolerated. Throws ProtocolError.
Envelope decode(std::string_view line);

}  // namespace mlsim::coupling
