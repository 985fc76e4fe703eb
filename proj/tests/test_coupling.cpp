#include <doctest.h>

#include <filesystem>
#include <thread>

#include "mlsim/coupling.hpp"

using namespace mlsim;
using namespace mlsim::coupling;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mlsim-test-" + name);
  fs::remove_all(dir);
  return dir;
}

ModelConfig coupled_config() {
  ModelConfig c;
  c.num_entities = 300;
  c.num_workers = 2;
  c.total_steps = 12;
  c.cache_capacity = 256;
  c.seed = 4;
  return c;
}

std::vector<EntityId> first_active(const CoarseWorld& w, unsigned worker, std::size_t n) {
  std::vector<EntityId> out;
  for (EntityId id : w.owned()[worker])
    if (!w.entity(id).handed_off && out.size() < n) out.push_back(id);
  return out;
}

// Says Hello, then hangs up.
class HangUpLauncher : public InstanceLauncher {
 public:
  std::unique_ptr<RunningInstance> launch(const fs::path& dir, std::uint16_t port) override {
    struct Runner : RunningInstance {
      std::thread t;
      ~Runner() override { wait(); }
      int wait() override {
        if (t.joinable()) t.join();
        return 0;
      }
      void terminate() override { wait(); }
    };
    auto r = std::make_unique<Runner>();
    const auto info = load_instance_info(dir);
    r->t = std::thread([port, info] {
      auto ch = connect_loopback(port, Timeout{5000});
      ch.send_line(encode(make_hello(info.instance, info.start_step, {1, 100})));
    });
    return r;
  }
};

void run_cycle(InstanceLauncher& launcher, const std::string& name, int continues) {
  auto cfg = coupled_config();
  CoarseWorld world(cfg);
  world.step();
  CouplingOptions opt;
  opt.workdir = scratch(name);
  Coordinator coord(world, launcher, opt);
  const auto ids = first_active(world, 1, 4);
  auto tmpl = fine::FineScenario::grid(4, 4, 20.0);
  auto& h = coord.spawn(ids, tmpl);
  CHECK(h.status == InstanceStatus::Running);
  CHECK(h.ticks_per_step == 100);
  CHECK(fs::exists(h.directory / fine::kScenarioFileName));
  CHECK(world.handed_off_count() == ids.size());
  CHECK(coord.conservation_holds());

  std::optional<FineStatePayload> final_state;
  int sent = 0;
  while (h.status == InstanceStatus::Running) {
    coord.step([&](const InstanceHandle&) { return sent++ < continues ? Decision::Continue : Decision::End; });
    CHECK(coord.conservation_holds());
  }
  CHECK(h.continues == static_cast<std::uint64_t>(continues));
  CHECK(h.fine_clock_high_water == (continues + 1) * 100);
  CHECK(h.fine_time_high_water() == doctest::Approx(continues + 1.0));
  REQUIRE(h.last_state);
  CHECK(world.active_count() == cfg.num_entities);
  for (const auto& s : h.last_state->entities) {
    const auto expected = wrap(s.x + h.offset.x, s.y + h.offset.y, world.extent());
    CHECK(world.entity(static_cast<EntityId>(s.id)).position == expected);
  }
  fs::remove_all(opt.workdir);
}

}  // namespace

TEST_CASE("timestep alignment") {
  CHECK(align(1.0, 0.01).ratio == 100);
  CHECK(align(2.0, 0.5).ratio == 4);
  CHECK_THROWS_AS(align(1.0, 0.3), ConfigError);
  CHECK_THROWS_AS(align(1.0, 2.0), ConfigError);
  CHECK_THROWS_AS(align(0.0, 0.1), ConfigError);
}

TEST_CASE("line channel frames lines and reports EOF and timeouts") {
  auto listener = Listener::bind_loopback();
  CHECK(listener.port() != 0);
  std::thread client([port = listener.port()] {
    auto ch = connect_loopback(port, Timeout{5000});
    ch.send_line("first");
    ch.send_line("");
    ch.send_line(std::string(100000, 'x'));
    CHECK(ch.read_line(Timeout{5000}) == std::optional<std::string>("ack"));
  });
  auto server = listener.accept(Timeout{5000});
  CHECK(server.read_line(Timeout{5000}) == std::optional<std::string>("first"));
  CHECK(server.read_line(Timeout{5000}) == std::optional<std::string>(""));
  CHECK(server.read_line(Timeout{5000})->size() == 100000);
  server.send_line("ack");
  client.join();
  CHECK_FALSE(server.read_line(Timeout{5000}));

  auto idle = Listener::bind_loopback();
  CHECK_THROWS_AS(idle.accept(Timeout{50}), TimeoutError);
}

TEST_CASE("instance info round trip") {
  const auto dir = scratch("info");
  fs::create_directories(dir);
  save_instance_info(dir, {7, 33});
  const auto info = load_instance_info(dir);
  CHECK(info.instance == 7);
  CHECK(info.start_step == 33);
  fs::remove_all(dir);
  CHECK(load_instance_info(dir).instance == 0);
}

TEST_CASE("in-process instance: spawn, continue, end, reabsorb") {
  InProcessLauncher launcher;
  run_cycle(launcher, "inproc", 2);
}

TEST_CASE("child-process instance runs the same protocol") {
  ProcessLauncher launcher(MLSIM_CLI_PATH);
  run_cycle(launcher, "proc", 1);
}

TEST_CASE("spawn failure returns the entities") {
  auto cfg = coupled_config();
  CoarseWorld world(cfg);
  ProcessLauncher launcher("/nonexistent/mlsim");
  CouplingOptions opt;
  opt.workdir = scratch("fail");
  opt.connect_timeout = Timeout{500};
  Coordinator coord(world, launcher, opt);
  const auto ids = first_active(world, 0, 2);
  const auto before = world.entity(ids[0]).position;
  CHECK_THROWS_AS(coord.spawn(ids, fine::FineScenario::grid(2, 2, 20.0)), SpawnError);
  CHECK(world.handed_off_count() == 0);
  CHECK(world.entity(ids[0]).position == before);
  CHECK(coord.conservation_holds());
  fs::remove_all(opt.workdir);
}

TEST_CASE("spawn is refused off-boundary and for unknown or busy entities") {
  auto cfg = coupled_config();
  CoarseWorld world(cfg);
  InProcessLauncher launcher;
  CouplingOptions opt;
  opt.workdir = scratch("refuse");
  Coordinator coord(world, launcher, opt);
  const auto tmpl = fine::FineScenario::grid(2, 2, 20.0);
  const EntityId unknown[] = {100000};
  CHECK_THROWS_AS(coord.spawn(unknown, tmpl), SpawnError);
  const EntityId one[] = {5};
  world.compute_phases();
  CHECK_THROWS_AS(coord.spawn(one, tmpl), std::logic_error);
  world.commit();
  coord.spawn(one, tmpl);
  CHECK_THROWS_AS(coord.spawn(one, tmpl), SpawnError);
  auto misaligned = tmpl;
  misaligned.fine_resolution = 0.3;
  const EntityId other[] = {6};
  CHECK_THROWS_AS(coord.spawn(other, misaligned), ConfigError);
  CHECK(world.handed_off_count() == 1);
  fs::remove_all(opt.workdir);
}

TEST_CASE("a lost connection aborts the coupled step") {
  auto cfg = coupled_config();
  CoarseWorld world(cfg);
  HangUpLauncher launcher;
  CouplingOptions opt;
  opt.workdir = scratch("hangup");
  opt.report_timeout = Timeout{5000};
  Coordinator coord(world, launcher, opt);
  const EntityId ids[] = {1, 2};
  auto& h = coord.spawn(ids, fine::FineScenario::grid(2, 2, 20.0));
  CHECK_THROWS_AS(coord.step([](const InstanceHandle&) { return Decision::End; }), CouplingError);
  CHECK(h.status == InstanceStatus::Ended);
  fs::remove_all(opt.workdir);
}
