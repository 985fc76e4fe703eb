#pragma once

// Level 0 <-> Level 1 coupling. Level 0 is the server: for every fine
// instance it binds a fresh loopback port, writes the scenario into a fresh
// directory, and starts Level 1 with (directory, port). The instance then runs
// one coarse step at a time in isolation, reporting at each coarse boundary
// and waiting for Continue or End.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mlsim/level0.hpp"
#include "mlsim/level1.hpp"
#include "mlsim/scenario.hpp"
#include "mlsim/socket.hpp"
#include "mlsim/wire.hpp"

namespace mlsim::coupling {

inline constexpr const char* kInstanceFileName = "instance.txt";

struct CouplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SpawnError : CouplingError {
  using CouplingError::CouplingError;
};

struct TimestepAlignment {
  double coarse_step = 0.0;
  double fine_resolution = 0.0;
  std::int64_t ratio = 0;
};

/// Accepts the pair iff the coarse step is an integer multiple of the fine
/// resolution; throws ConfigError otherwise.
TimestepAlignment align(double coarse_step, double fine_resolution);

/// A started Level 1 instance (child process or in-process thread).
class RunningInstance {
 public:
  virtual ~RunningInstance() = default;
  /// Blocks until the instance has exited; returns its exit status.
  virtual int wait() = 0;
  virtual void terminate() = 0;
};

class InstanceLauncher {
 public:
  virtual ~InstanceLauncher() = default;
  virtual std::unique_ptr<RunningInstance> launch(const std::filesystem::path& directory, std::uint16_t port) = 0;
};

/// Runs `<executable> run-l1 <directory> <port>` as a child process.
class ProcessLauncher : public InstanceLauncher {
 public:
  explicit ProcessLauncher(std::filesystem::path executable) : executable_(std::move(executable)) {}
  std::unique_ptr<RunningInstance> launch(const std::filesystem::path& directory, std::uint16_t port) override;

 private:
  std::filesystem::path executable_;
};

/// Runs run_fine_instance() on a thread of this process; same wire protocol.
class InProcessLauncher : public InstanceLauncher {
 public:
  explicit InProcessLauncher(fine::FineOptions options = {}) : options_(options) {}
  std::unique_ptr<RunningInstance> launch(const std::filesystem::path& directory, std::uint16_t port) override;

 private:
  fine::FineOptions options_;
};

/// Identity of an instance, written next to the scenario file.
struct InstanceInfo {
  std::uint64_t instance = 0;
  std::uint64_t start_step = 0;
};

void save_instance_info(const std::filesystem::path& directory, const InstanceInfo& info);
/// Missing file yields the defaults.
InstanceInfo load_instance_info(const std::filesystem::path& directory);

/// Level 1 main loop: load the scenario, connect, say Hello, then report after
/// every coarse step until told to End. Returns 0 after sending FinalState.
int run_fine_instance(const std::filesystem::path& directory, std::uint16_t port, fine::FineOptions options = {});

enum class InstanceStatus { Starting, Running, Ended };
enum class Decision { Continue, End };

struct InstanceHandle {
  std::uint64_t id = 0;
  std::uint16_t port = 0;
  std::filesystem::path directory;
  std::vector<EntityId> entities;
  /// Coarse position = wrap(local position + offset).
  PlanePoint offset;
  fine::Tick ticks_per_step = 0;
  double fine_resolution = 0.0;
  /// Highest fine clock reported so far, in ticks.
  fine::Tick fine_clock_high_water = 0;
  InstanceStatus status = InstanceStatus::Starting;
  Timestep spawn_step = 0;
  std::uint64_t continues = 0;
  std::optional<FineStatePayload> last_state;
  double spawn_seconds = 0.0;  // directory, launch and Hello
  double wait_seconds = 0.0;   // Level 0 blocked on reports and FinalState

  double fine_time_high_water() const { return static_cast<double>(fine_clock_high_water) * fine_resolution; }

 private:
  friend class Coordinator;
  LineChannel channel_;
  std::unique_ptr<RunningInstance> runner_;
  bool report_ready_ = false;
};

struct CouplingOptions {
  std::filesystem::path workdir;
  Timeout connect_timeout{10000};
  Timeout report_timeout{120000};
  /// Local-frame point the first handed-off entity is mapped to.
  PlanePoint entry{0.0, 0.0};
};

class Coordinator {
 public:
  Coordinator(CoarseWorld& world, InstanceLauncher& launcher, CouplingOptions options);
  ~Coordinator();
  Coordinator(const Coordinator&) = delete;
  Coordinator& operator=(const Coordinator&) = delete;

  /// Hands `entities` to a new fine instance built from `scenario_template`
  /// (its pedestrians are replaced by the entities). Boundary only; throws
  /// std::logic_error off-boundary and SpawnError if the instance never says
  /// Hello, in which case the entities are back at Level 0.
  InstanceHandle& spawn(std::span<const EntityId> entities, const fine::FineScenario& scenario_template);

  /// Blocks until the instance's StateReport for the step in progress arrives.
  const FineStatePayload& await_report(InstanceHandle& handle);

  /// Sends the boundary decision. End returns the FinalState after reabsorbing
  /// the entities; Continue lets the instance run one more coarse step.
  std::optional<FineStatePayload> boundary_sync(InstanceHandle& handle, Decision decision);

  /// A coupled coarse step: compute Level 0 phases while instances run, wait
  /// for every report, commit the boundary, then deliver decisions.
  StepStats step(const std::function<Decision(const InstanceHandle&)>& decide);

  CoarseWorld& world() { return world_; }
  const std::vector<std::unique_ptr<InstanceHandle>>& instances() const { return instances_; }
  std::size_t running_count() const;
  std::size_t handed_off_total() const;
  /// Level 0 active entities plus entities held by running instances equals
  /// the configured entity count.
  bool conservation_holds() const;

 private:
  FineStatePayload read_state(InstanceHandle& h, EnvelopeKind expected, std::uint64_t step);
  void fail_instance(InstanceHandle& h);

  CoarseWorld& world_;
  InstanceLauncher& launcher_;
  CouplingOptions options_;
  std::uint64_t next_instance_ = 1;
  std::vector<std::unique_ptr<InstanceHandle>> instances_;
};

}  // namespace mlsim::coupling
