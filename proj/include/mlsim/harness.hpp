#pragma once

// Experiment runner: executes configuration cells (optionally with a schedule
// of fine-grained spawns), records wall-clock time and message counters, and
// writes flat CSV files.
//
// runs CSV header (one row per cell repetition):
//   scenario,ses,workers,cache,adaptive,gen_prob,steps,seed,repetition,status,
//   wct_s,originated,delivered,forwarded,discarded_by_cache,receptions,
//   inter_worker,migrations,max_hops,hop_violations,spawns,spawn_wct_s,
//   fine_wait_s,peak_rss_kb,error
// per-step CSV header (long format, <runs stem>.steps.csv):
//   scenario,ses,workers,cache,adaptive,seed,repetition,step,originated,
//   delivered,forwarded,discarded_by_cache,receptions,inter_worker,migrations

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mlsim/level0.hpp"
#include "mlsim/scenario.hpp"

namespace mlsim::harness {

/// One modeler-triggered spawn: at boundary `step`, the `count` lowest-id
/// active entities owned by `worker` move to a fine instance for `duration`
/// coarse steps.
struct SpawnEvent {
  Timestep step = 0;
  unsigned worker = 0;
  std::size_t count = 1;
  Timestep duration = 1;
  std::filesystem::path scenario_template;  // empty: the built-in grid

  friend bool operator==(const SpawnEvent&, const SpawnEvent&) = default;
};

/// Schedule file: one `step worker count duration [template_dir]` per line,
/// '#' comments. Throws std::runtime_error naming the line.
std::vector<SpawnEvent> parse_spawn_schedule(std::istream& in);
std::vector<SpawnEvent> load_spawn_schedule(const std::filesystem::path& file);

enum class LaunchMode { Process, InProcess };

struct ExperimentSpec {
  std::string name = "default";
  ModelConfig config{};
  unsigned repetitions = 1;
  std::vector<SpawnEvent> spawns;
  /// Fine scenario used when a spawn names no template.
  fine::FineScenario fine_template = fine::FineScenario::grid(10, 10, 20.0);
  LaunchMode launch = LaunchMode::Process;
  /// Level 1 executable for LaunchMode::Process.
  std::filesystem::path executable;
  std::filesystem::path workdir;
  /// Runs CSV; empty disables file output.
  std::filesystem::path output;

  /// Throws ConfigError.
  void validate() const;
};

struct SpawnTiming {
  Timestep step = 0;
  std::uint64_t instance = 0;
  std::size_t entities = 0;
  double spawn_seconds = 0.0;
  double wait_seconds = 0.0;
};

struct RunRecord {
  std::string scenario;
  ModelConfig config{};
  std::uint64_t seed = 0;
  unsigned repetition = 0;
  bool ok = false;
  std::string error;
  double wct_seconds = 0.0;
  StepStats totals;
  std::vector<StepStats> steps;
  std::vector<SpawnTiming> spawns;
  /// Entity conservation held at every coarse boundary.
  bool conservation_ok = true;
  /// Process peak resident set, as reported by the OS (best effort).
  long peak_rss_kb = 0;
};

/// Runs one repetition (seed = config.seed + repetition). Failures are
/// captured in the record, not thrown.
RunRecord run_single(const ExperimentSpec& spec, unsigned repetition);

/// Runs every repetition; appends rows to the CSV files as each finishes.
std::vector<RunRecord> run_experiment(const ExperimentSpec& spec);

/// Runs cells in order, all writing into `output` (empty: no files).
std::vector<RunRecord> run_cells(const std::vector<ExperimentSpec>& cells, const std::filesystem::path& output);

void write_runs_header(std::ostream& out);
void write_run_row(std::ostream& out, const RunRecord& r);
void write_steps_header(std::ostream& out);
void write_step_rows(std::ostream& out, const RunRecord& r);
std::filesystem::path steps_path_for(const std::filesystem::path& runs_csv);

struct SummaryRow {
  std::string scenario;
  std::size_t ses = 0;
  unsigned workers = 1;
  std::size_t cache = 0;
  bool adaptive = false;
  double gen_prob = 0.0;
  Timestep steps = 0;
  std::size_t spawns = 0;
  std::size_t runs = 0;
  double wct_mean = 0.0;
  double wct_std = 0.0;
  double originated_mean = 0.0;
  double delivered_mean = 0.0;
  double forwarded_mean = 0.0;
  double discarded_mean = 0.0;
  double inter_worker_mean = 0.0;
  /// WCT of the matching 1-worker cell over this cell's WCT.
  std::optional<double> speedup;
  /// This cell's WCT minus the matching cell without spawns.
  std::optional<double> delta_wct;
};

/// Groups successful records by configuration cell. Cells without a
/// successful record are omitted with a warning on `warnings` (if given).
std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, std::ostream* warnings = nullptr);
void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows);

}  // namespace mlsim::harness
