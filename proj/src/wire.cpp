#include "mlsim/wire.hpp"

#include <json.hpp>

namespace mlsim::coupling {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::pair<EnvelopeKind, const char*> kKindNames[] = {
    {EnvelopeKind::Hello, "Hello"},         {EnvelopeKind::StateReport, "StateReport"},
    {EnvelopeKind::Continue, "Continue"},   {EnvelopeKind::End, "End"},
    {EnvelopeKind::FinalState, "FinalState"},
};

EnvelopeKind kind_from_string(const std::string& s) {
  for (auto [k, name] : kKindNames)
    if (s == name) return k;
  throw ProtocolError("unknown envelope kind '" + s + "'");
}

bool carries_state(EnvelopeKind k) { return k == EnvelopeKind::StateReport || k == EnvelopeKind::FinalState; }

void check_payload(const Envelope& e) {
  const bool ok = e.kind == EnvelopeKind::Hello ? std::holds_alternative<HelloPayload>(e.payload)
                  : carries_state(e.kind)        ? std::holds_alternative<FineStatePayload>(e.payload)
                                                 : std::holds_alternative<EmptyPayload>(e.payload);
  if (!ok) throw ProtocolError(std::string("payload does not match envelope kind ") + to_string(e.kind));
}

ojson counters_json(const fine::FineCounters& c) {
  ojson j = ojson::object();
  j["packets_sent"] = c.packets_sent;
  j["packets_received"] = c.packets_received;
  j["packets_dropped"] = c.packets_dropped;
  j["route_requests_processed"] = c.route_requests_processed;
  j["routes_discovered"] = c.routes_discovered;
  j["discoveries_failed"] = c.discoveries_failed;
  j["queries_sent"] = c.queries_sent;
  j["queries_answered"] = c.queries_answered;
  j["queries_undelivered"] = c.queries_undelivered;
  j["events_processed"] = c.events_processed;
  return j;
}

std::uint64_t unsigned_field(const ojson& j, const char* key) {
  const ojson& v = j.at(key);
  if (!v.is_number_unsigned()) throw ProtocolError(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<std::uint64_t>();
}

fine::FineCounters counters_from(const ojson& j) {
  fine::FineCounters c;
  c.packets_sent = unsigned_field(j, "packets_sent");
  c.packets_received = unsigned_field(j, "packets_received");
  c.packets_dropped = unsigned_field(j, "packets_dropped");
  c.route_requests_processed = unsigned_field(j, "route_requests_processed");
  c.routes_discovered = unsigned_field(j, "routes_discovered");
  c.discoveries_failed = unsigned_field(j, "discoveries_failed");
  c.queries_sent = unsigned_field(j, "queries_sent");
  c.queries_answered = unsigned_field(j, "queries_answered");
  c.queries_undelivered = unsigned_field(j, "queries_undelivered");
  c.events_processed = unsigned_field(j, "events_processed");
  return c;
}

}  // namespace

const char* to_string(EnvelopeKind kind) {
  for (auto [k, name] : kKindNames)
    if (k == kind) return name;
  return "?";
}

Envelope make_hello(std::uint64_t instance, std::uint64_t step, HelloPayload hello) {
  return Envelope{EnvelopeKind::Hello, instance, step, hello};
}

Envelope make_state(EnvelopeKind kind, std::uint64_t instance, std::uint64_t step, FineStatePayload state) {
  if (!carries_state(kind)) throw ProtocolError("make_state needs StateReport or FinalState");
  return Envelope{kind, instance, step, std::move(state)};
}

Envelope make_control(EnvelopeKind kind, std::uint64_t instance, std::uint64_t step) {
  if (kind != EnvelopeKind::Continue && kind != EnvelopeKind::End)
    throw ProtocolError("make_control needs Continue or End");
  return Envelope{kind, instance, step, EmptyPayload{}};
}

FineStatePayload state_from_report(const fine::FineReport& report) {
  FineStatePayload s;
  s.fine_clock = report.clock;
  s.counters = report.counters;
  for (const auto& p : report.pedestrians)
    s.entities.push_back({p.entity_id, p.position.x, p.position.y, p.reached, p.seller_known});
  return s;
}

std::string encode(const Envelope& e) {
  check_payload(e);
  ojson j = ojson::object();
  j["kind"] = to_string(e.kind);
  j["instance"] = e.instance;
  j["step"] = e.step;
  ojson payload = ojson::object();
  if (const auto* h = std::get_if<HelloPayload>(&e.payload)) {
    payload["pid"] = h->pid;
    payload["ticks_per_step"] = h->ticks_per_step;
  } else if (const auto* s = std::get_if<FineStatePayload>(&e.payload)) {
    payload["fine_clock"] = s->fine_clock;
    ojson entities = ojson::array();
    for (const auto& es : s->entities) {
      ojson item = ojson::object();
      item["id"] = es.id;
      item["x"] = es.x;
      item["y"] = es.y;
      item["reached"] = es.reached;
      item["seller_known"] = es.seller_known;
      entities.push_back(std::move(item));
    }
    payload["entities"] = std::move(entities);
    payload["counters"] = counters_json(s->counters);
  }
  j["payload"] = std::move(payload);
  return j.dump();
}

Envelope decode(std::string_view line) {
  if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
  if (line.find('\n') != std::string_view::npos) throw ProtocolError("envelope spans more than one line");
  try {
    const ojson j = ojson::parse(line);
    if (!j.is_object()) throw ProtocolError("envelope is not a JSON object");
    Envelope e;
    e.kind = kind_from_string(j.at("kind").get<std::string>());
    e.instance = unsigned_field(j, "instance");
    e.step = unsigned_field(j, "step");
    const ojson& p = j.at("payload");
    if (!p.is_object()) throw ProtocolError("payload is not an object");
    if (e.kind == EnvelopeKind::Hello) {
      e.payload = HelloPayload{p.at("pid").get<std::int64_t>(), p.at("ticks_per_step").get<std::int64_t>()};
    } else if (carries_state(e.kind)) {
      FineStatePayload s;
      s.fine_clock = p.at("fine_clock").get<std::int64_t>();
      for (const auto& item : p.at("entities")) {
        s.entities.push_back({unsigned_field(item, "id"), item.at("x").get<double>(),
                              item.at("y").get<double>(), item.at("reached").get<bool>(),
                              item.at("seller_known").get<bool>()});
      }
      s.counters = counters_from(p.at("counters"));
      e.payload = std::move(s);
    } else {
      if (!p.empty()) throw ProtocolError(std::string(to_string(e.kind)) + " carries an unexpected payload");
      e.payload = EmptyPayload{};
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ProtocolError(std::string("malformed envelope: ") + ex.what());
  }
}

}  // namespace mlsim::coupling
