#include "mlsim/coupling.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

extern char** environ;

namespace mlsim::coupling {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class ChildProcess : public RunningInstance {
 public:
  explicit ChildProcess(pid_t pid) : pid_(pid) {}
  ~ChildProcess() override {
    if (pid_ > 0) terminate();
  }

  int wait() override {
    if (pid_ <= 0) return status_;
    int st = 0;
    while (::waitpid(pid_, &st, 0) < 0) {
      if (errno != EINTR) {
        pid_ = -1;
        return status_ = -1;
      }
    }
    pid_ = -1;
    status_ = WIFEXITED(st) ? WEXITSTATUS(st) : 128 + (WIFSIGNALED(st) ? WTERMSIG(st) : 0);
    return status_;
  }

  void terminate() override {
    if (pid_ <= 0) return;
    ::kill(pid_, SIGTERM);
    wait();
  }

 private:
  pid_t pid_;
  int status_ = 0;
};

class FineThread : public RunningInstance {
 public:
  FineThread(std::filesystem::path dir, std::uint16_t port, fine::FineOptions options)
      : thread_([this, dir = std::move(dir), port, options] {
          try {
            status_ = run_fine_instance(dir, port, options);
          } catch (const std::exception& e) {
            std::cerr << "level1 (in-process): " << e.what() << '\n';
            status_ = 1;
          }
        }) {}
  ~FineThread() override {
    if (thread_.joinable()) thread_.join();
  }

  int wait() override {
    if (thread_.joinable()) thread_.join();
    return status_;
  }
  // A thread cannot be killed; it exits once its connection goes away.
  void terminate() override { wait(); }

 private:
  int status_ = 0;
  std::thread thread_;
};

}  // namespace

TimestepAlignment align(double coarse_step, double fine_resolution) {
  if (!(coarse_step > 0.0) || !(fine_resolution > 0.0))
    throw ConfigError("coarse step and fine resolution must both be positive");
  const double ratio = coarse_step / fine_resolution;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * rounded) {
    std::ostringstream msg;
    msg << "coarse step " << coarse_step << " is not a multiple of fine resolution " << fine_resolution;
    throw ConfigError(msg.str());
  }
  return {coarse_step, fine_resolution, static_cast<std::int64_t>(rounded)};
}

std::unique_ptr<RunningInstance> ProcessLauncher::launch(const std::filesystem::path& directory, std::uint16_t port) {
  const std::string exe = executable_.string();
  const std::string dir = directory.string();
  const std::string port_arg = std::to_string(port);
  std::vector<char*> argv = {const_cast<char*>(exe.c_str()), const_cast<char*>("run-l1"),
                             const_cast<char*>(dir.c_str()), const_cast<char*>(port_arg.c_str()), nullptr};
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, exe.c_str(), nullptr, nullptr, argv.data(), environ);
  if (rc != 0) throw SpawnError("cannot start " + exe + ": " + std::strerror(rc));
  return std::make_unique<ChildProcess>(pid);
}

std::unique_ptr<RunningInstance> InProcessLauncher::launch(const std::filesystem::path& directory,
                                                           std::uint16_t port) {
  return std::make_unique<FineThread>(directory, port, options_);
}

void save_instance_info(const std::filesystem::path& directory, const InstanceInfo& info) {
  std::ofstream out(directory / kInstanceFileName);
  if (!out) throw SpawnError("cannot write " + (directory / kInstanceFileName).string());
  out << "INSTANCE " << info.instance << "\nSTART_STEP " << info.start_step << '\n';
}

InstanceInfo load_instance_info(const std::filesystem::path& directory) {
  InstanceInfo info;
  std::ifstream in(directory / kInstanceFileName);
  std::string key;
  std::uint64_t value = 0;
  while (in >> key >> value) {
    if (key == "INSTANCE") info.instance = value;
    else if (key == "START_STEP") info.start_step = value;
  }
  return info;
}

int run_fine_instance(const std::filesystem::path& directory, std::uint16_t port, fine::FineOptions options) {
  const auto scenario = fine::load_scenario(directory);
  const auto info = load_instance_info(directory);
  fine::FineSimulation sim(scenario, options);

  LineChannel channel = connect_loopback(port, Timeout{10000});
  channel.send_line(encode(make_hello(info.instance, info.start_step,
                                      HelloPayload{static_cast<std::int64_t>(::getpid()), sim.ticks_per_step()})));

  for (std::uint64_t step = info.start_step;; ++step) {
    const auto report = sim.run_coarse_step();
    channel.send_line(encode(make_state(EnvelopeKind::StateReport, info.instance, step, state_from_report(report))));
    const auto line = channel.read_line();
    if (!line) {
      std::cerr << "level1 instance " << info.instance << ": level 0 closed the connection at step " << step << '\n';
      return 2;
    }
    const Envelope decision = decode(*line);
    if (decision.instance != info.instance || decision.step != step ||
        (decision.kind != EnvelopeKind::Continue && decision.kind != EnvelopeKind::End)) {
      std::cerr << "level1 instance " << info.instance << ": unexpected " << to_string(decision.kind) << " for step "
                << decision.step << '\n';
      return 3;
    }
    if (decision.kind == EnvelopeKind::End) {
      channel.send_line(encode(make_state(EnvelopeKind::FinalState, info.instance, step, state_from_report(report))));
      return 0;
    }
  }
}

Coordinator::Coordinator(CoarseWorld& world, InstanceLauncher& launcher, CouplingOptions options)
    : world_(world), launcher_(launcher), options_(std::move(options)) {
  if (options_.workdir.empty()) throw ConfigError("coupling needs a working directory for instance scenarios");
  std::filesystem::create_directories(options_.workdir);
}

Coordinator::~Coordinator() {
  for (auto& h : instances_) {
    if (h->status == InstanceStatus::Ended) continue;
    h->channel_.close();
    if (h->runner_) h->runner_->terminate();
  }
}

InstanceHandle& Coordinator::spawn(std::span<const EntityId> entities, const fine::FineScenario& scenario_template) {
  if (!world_.at_boundary()) throw std::logic_error("spawn is only allowed at a coarse step boundary");
  if (entities.empty()) throw SpawnError("spawn needs at least one entity");
  for (EntityId id : entities) {
    if (id >= world_.entities().size()) throw SpawnError("spawn: unknown entity " + std::to_string(id));
    if (world_.entity(id).handed_off) throw SpawnError("spawn: entity " + std::to_string(id) + " is already handed off");
  }
  const auto alignment = align(scenario_template.coarse_step, scenario_template.fine_resolution);
  if (scenario_template.sellers.empty()) throw SpawnError("spawn: scenario template has no sellers");

  const auto t0 = std::chrono::steady_clock::now();
  auto handle = std::make_unique<InstanceHandle>();
  InstanceHandle& h = *handle;
  h.id = next_instance_++;
  h.directory = options_.workdir / ("instance-" + std::to_string(h.id));
  h.entities.assign(entities.begin(), entities.end());
  h.ticks_per_step = alignment.ratio;
  h.fine_resolution = alignment.fine_resolution;
  h.spawn_step = world_.clock();

  // Map the entities into the fine frame around the entry point.
  const WorldExtent extent = world_.extent();
  const TorusPoint anchor = world_.entity(entities.front()).position;
  h.offset = {anchor.x - options_.entry.x, anchor.y - options_.entry.y};
  fine::FineScenario scenario = scenario_template;
  scenario.pedestrians.clear();
  std::vector<TorusPoint> original;
  for (EntityId id : entities) {
    const TorusPoint p = world_.entity(id).position;
    original.push_back(p);
    const PlanePoint d = torus_displacement(anchor, p, extent);
    const auto& seller = scenario.sellers[id % scenario.sellers.size()];
    scenario.pedestrians.push_back({id, {options_.entry.x + d.x, options_.entry.y + d.y}, seller.id});
  }

  if (std::filesystem::exists(h.directory)) std::filesystem::remove_all(h.directory);
  fine::save_scenario(h.directory, scenario);
  save_instance_info(h.directory, {h.id, h.spawn_step});

  world_.hand_off(entities);
  try {
    Listener listener = Listener::bind_loopback();
    h.port = listener.port();
    h.runner_ = launcher_.launch(h.directory, h.port);
    h.channel_ = listener.accept(options_.connect_timeout);
    const auto line = h.channel_.read_line(options_.connect_timeout);
    if (!line) throw SpawnError("instance closed the connection before Hello");
    const Envelope hello = decode(*line);
    if (hello.kind != EnvelopeKind::Hello || hello.instance != h.id)
      throw SpawnError(std::string("expected Hello from instance ") + std::to_string(h.id) + ", got " +
                       to_string(hello.kind));
  } catch (const std::exception& e) {
    h.channel_.close();
    if (h.runner_) h.runner_->terminate();
    for (std::size_t i = 0; i < h.entities.size(); ++i) world_.reabsorb(h.entities[i], original[i]);
    throw SpawnError("spawn of instance " + std::to_string(h.id) + " failed: " + e.what());
  }
  h.status = InstanceStatus::Running;
  h.spawn_seconds = seconds_since(t0);
  instances_.push_back(std::move(handle));
  return h;
}

void Coordinator::fail_instance(InstanceHandle& h) {
  h.status = InstanceStatus::Ended;
  h.channel_.close();
  if (h.runner_) h.runner_->terminate();
}

FineStatePayload Coordinator::read_state(InstanceHandle& h, EnvelopeKind expected, std::uint64_t step) {
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<std::string> line;
  try {
    line = h.channel_.read_line(options_.report_timeout);
  } catch (const SocketError& e) {
    fail_instance(h);
    throw CouplingError("instance " + std::to_string(h.id) + ": " + e.what());
  }
  h.wait_seconds += seconds_since(t0);
  if (!line) {
    fail_instance(h);
    throw CouplingError("instance " + std::to_string(h.id) + ": connection lost while waiting for " +
                        to_string(expected) + " of step " + std::to_string(step) + "; run aborted");
  }
  Envelope env;
  try {
    env = decode(*line);
  } catch (const ProtocolError& e) {
    fail_instance(h);
    throw CouplingError("instance " + std::to_string(h.id) + ": " + e.what());
  }
  if (env.kind != expected || env.instance != h.id || env.step != step) {
    fail_instance(h);
    throw CouplingError("instance " + std::to_string(h.id) + ": expected " + to_string(expected) + " for step " +
                        std::to_string(step) + ", got " + to_string(env.kind) + " for step " +
                        std::to_string(env.step));
  }
  auto state = std::get<FineStatePayload>(std::move(env.payload));
  h.fine_clock_high_water = std::max(h.fine_clock_high_water, state.fine_clock);
  h.last_state = state;
  return state;
}

const FineStatePayload& Coordinator::await_report(InstanceHandle& h) {
  if (h.status != InstanceStatus::Running) throw std::logic_error("await_report on an instance that is not running");
  if (!h.report_ready_) {
    read_state(h, EnvelopeKind::StateReport, h.spawn_step + h.continues);
    h.report_ready_ = true;
  }
  return *h.last_state;
}

std::optional<FineStatePayload> Coordinator::boundary_sync(InstanceHandle& h, Decision decision) {
  if (h.status != InstanceStatus::Running) throw std::logic_error("boundary_sync on an instance that is not running");
  if (!h.report_ready_) throw std::logic_error("boundary_sync before the instance reported its step");
  if (!world_.at_boundary()) throw std::logic_error("boundary_sync is only allowed at a coarse step boundary");
  const std::uint64_t step = h.spawn_step + h.continues;
  const auto kind = decision == Decision::Continue ? EnvelopeKind::Continue : EnvelopeKind::End;
  try {
    h.channel_.send_line(encode(make_control(kind, h.id, step)));
  } catch (const SocketError& e) {
    fail_instance(h);
    throw CouplingError("instance " + std::to_string(h.id) + ": " + e.what());
  }
  h.report_ready_ = false;
  if (decision == Decision::Continue) {
    ++h.continues;
    return std::nullopt;
  }

  FineStatePayload final_state = read_state(h, EnvelopeKind::FinalState, step);
  const WorldExtent extent = world_.extent();
  for (EntityId id : h.entities) {
    auto it = std::find_if(final_state.entities.begin(), final_state.entities.end(),
                           [id](const EntityState& s) { return s.id == id; });
    if (it == final_state.entities.end()) {
      fail_instance(h);
      throw CouplingError("instance " + std::to_string(h.id) + ": FinalState lacks entity " + std::to_string(id));
    }
    world_.reabsorb(id, wrap(it->x + h.offset.x, it->y + h.offset.y, extent));
  }
  h.status = InstanceStatus::Ended;
  h.channel_.close();
  if (h.runner_) h.runner_->wait();
  return final_state;
}

StepStats Coordinator::step(const std::function<Decision(const InstanceHandle&)>& decide) {
  world_.compute_phases();
  for (auto& h : instances_)
    if (h->status == InstanceStatus::Running) await_report(*h);
  StepStats stats = world_.commit();
  for (auto& h : instances_)
    if (h->status == InstanceStatus::Running) boundary_sync(*h, decide(*h));
  return stats;
}

std::size_t Coordinator::running_count() const {
  return static_cast<std::size_t>(std::count_if(instances_.begin(), instances_.end(), [](const auto& h) {
    return h->status == InstanceStatus::Running;
  }));
}

std::size_t Coordinator::handed_off_total() const {
  std::size_t total = 0;
  for (const auto& h : instances_)
    if (h->status == InstanceStatus::Running) total += h->entities.size();
  return total;
}

bool Coordinator::conservation_holds() const {
  return world_.active_count() + handed_off_total() == world_.config().num_entities &&
         world_.handed_off_count() == handed_off_total();
}

}  // namespace mlsim::coupling
