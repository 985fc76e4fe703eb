// mlsim: command line front end for the coarse kernel, fine instances and the
// experiment harness.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mlsim/coupling.hpp"
#include "mlsim/harness.hpp"
#include "mlsim/level1.hpp"
#include "mlsim/scenario.hpp"

namespace fs = std::filesystem;
using namespace mlsim;

namespace {

struct CellFlags {
  std::vector<std::size_t> ses{1000};
  std::vector<unsigned> workers{1};
  std::vector<std::size_t> cache{0};
  std::uint64_t seed = 1;
  Timestep steps = 900;
  double gen_prob = 0.2;
  bool adaptive = false;
  unsigned reps = 1;
  std::string spawn_schedule;
  std::string out;
  std::string workdir;
  bool in_process = false;
};

void add_cell_flags(CLI::App* app, CellFlags& f, bool lists) {
  if (lists) {
    app->add_option("--ses", f.ses, "Entity counts to sweep")->delimiter(',');
    app->add_option("--workers", f.workers, "Worker counts to sweep")->delimiter(',');
    app->add_option("--cache", f.cache, "Cache capacities to sweep (0 = off)")->delimiter(',');
  } else {
    app->add_option("--ses", f.ses[0], "Number of simulated entities");
    app->add_option("--workers", f.workers[0], "Worker threads");
    app->add_option("--cache", f.cache[0], "Dedup cache capacity (0 = off)");
  }
  app->add_option("--seed", f.seed, "Base seed");
  app->add_option("--steps", f.steps, "Coarse steps per run");
  app->add_option("--gen-prob", f.gen_prob, "Per-entity generation probability per step");
  app->add_flag("--adaptive", f.adaptive, "Enable adaptive partitioning");
  app->add_option("--reps", f.reps, "Repetitions per cell (seed = base + repetition)");
  app->add_option("--out", f.out, "Runs CSV (per-step file written alongside)");
}

fs::path self_executable(const char* argv0) {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::absolute(argv0) : p;
}

std::vector<harness::ExperimentSpec> expand(const CellFlags& f, const std::string& name, const fs::path& exe) {
  std::vector<harness::SpawnEvent> spawns;
  if (!f.spawn_schedule.empty()) spawns = harness::load_spawn_schedule(f.spawn_schedule);
  std::vector<harness::ExperimentSpec> cells;
  for (auto ses : f.ses)
    for (auto cache : f.cache)
      for (auto workers : f.workers) {
        harness::ExperimentSpec spec;
        spec.name = name;
        spec.config.num_entities = ses;
        spec.config.num_workers = workers;
        spec.config.cache_capacity = cache;
        spec.config.seed = f.seed;
        spec.config.total_steps = f.steps;
        spec.config.pbb.generation_probability = f.gen_prob;
        spec.config.adaptive_partitioning = f.adaptive;
        spec.repetitions = f.reps;
        spec.spawns = spawns;
        spec.launch = f.in_process ? harness::LaunchMode::InProcess : harness::LaunchMode::Process;
        spec.executable = exe;
        spec.workdir = f.workdir.empty() ? fs::temp_directory_path() / "mlsim-instances" : fs::path(f.workdir);
        cells.push_back(std::move(spec));
      }
  return cells;
}

int run_and_report(const std::vector<harness::ExperimentSpec>& cells, const CellFlags& f) {
  const auto records = harness::run_cells(cells, f.out);
  int failed = 0;
  for (const auto& r : records) {
    if (r.ok && !r.conservation_ok) {
      std::cerr << "run seed " << r.seed << ": entity conservation violated\n";
      ++failed;
    } else if (!r.ok) {
      std::cerr << "run seed " << r.seed << " failed: " << r.error << '\n';
      ++failed;
    }
  }
  if (f.out.empty()) {
    harness::write_runs_header(std::cout);
    for (const auto& r : records) harness::write_run_row(std::cout, r);
  }
  const auto rows = harness::summarize(records, &std::cerr);
  harness::write_summary(f.out.empty() ? std::cerr : std::cout, rows);
  return failed == 0 ? 0 : 1;
}

int run_standalone_fine(const fs::path& dir, Timestep steps) {
  const auto scenario = fine::load_scenario(dir);
  fine::FineSimulation sim(scenario);
  for (Timestep s = 0; s < steps; ++s) sim.run_coarse_step();
  const auto report = sim.report();
  std::cout << "fine_clock " << report.clock << '\n';
  for (const auto& p : report.pedestrians)
    std::cout << "pedestrian " << p.entity_id << ' ' << p.position.x << ' ' << p.position.y << " reached "
              << p.reached << " seller_known " << p.seller_known << '\n';
  const auto& c = report.counters;
  std::cout << "packets_sent " << c.packets_sent << "\npackets_received " << c.packets_received
            << "\nroutes_discovered " << c.routes_discovered << "\ndiscoveries_failed " << c.discoveries_failed
            << "\nqueries_answered " << c.queries_answered << "\nevents_processed " << c.events_processed << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level smart-city simulation"};
  app.require_subcommand(1);

  CellFlags l0, multi, sweep;
  auto* run_l0 = app.add_subcommand("run-l0", "Run the coarse kernel alone");
  add_cell_flags(run_l0, l0, false);

  auto* run_multi = app.add_subcommand("run-multi", "Run the coarse kernel with scheduled fine instances");
  add_cell_flags(run_multi, multi, false);
  run_multi->add_option("--spawn-schedule", multi.spawn_schedule, "Spawn schedule file")->required()->check(CLI::ExistingFile);
  run_multi->add_option("--workdir", multi.workdir, "Directory for instance scenario directories");
  run_multi->add_flag("--in-process", multi.in_process, "Run fine instances on threads instead of processes");

  auto* run_sweep = app.add_subcommand("sweep", "Run the cross product of the listed cell values");
  add_cell_flags(run_sweep, sweep, true);
  run_sweep->add_option("--spawn-schedule", sweep.spawn_schedule, "Spawn schedule file")->check(CLI::ExistingFile);
  run_sweep->add_option("--workdir", sweep.workdir, "Directory for instance scenario directories");
  run_sweep->add_flag("--in-process", sweep.in_process, "Run fine instances on threads instead of processes");

  std::string l1_dir;
  int l1_port = -1;
  Timestep l1_steps = 1;
  auto* run_l1 = app.add_subcommand("run-l1", "Run a fine instance on a scenario directory");
  run_l1->add_option("dir", l1_dir, "Scenario directory")->required()->check(CLI::ExistingDirectory);
  run_l1->add_option("port", l1_port, "Coordinator port; omit for a standalone run")->check(CLI::Range(1, 65535));
  run_l1->add_option("--steps", l1_steps, "Coarse steps to simulate when standalone");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_l1) {
      if (l1_port > 0) return coupling::run_fine_instance(l1_dir, static_cast<std::uint16_t>(l1_port));
      return run_standalone_fine(l1_dir, l1_steps);
    }
    const auto exe = self_executable(argv[0]);
    if (*run_l0) return run_and_report(expand(l0, "run-l0", exe), l0);
    if (*run_multi) return run_and_report(expand(multi, "run-multi", exe), multi);
    if (*run_sweep) return run_and_report(expand(sweep, "sweep", exe), sweep);
  } catch (const std::exception& e) {
    std::cerr << "mlsim: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
