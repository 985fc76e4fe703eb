#include "mlsim/harness.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <tuple>

#include "mlsim/coupling.hpp"

namespace mlsim::harness {

namespace {

long peak_rss_kb() {
  rusage usage{};
  if (::getrusage(RUSAGE_SELF, &usage) != 0) return 0;
  return usage.ru_maxrss;  // kilobytes on Linux
}

std::vector<EntityId> select_entities(const CoarseWorld& world, const SpawnEvent& ev) {
  if (ev.worker >= world.owned().size())
    throw ConfigError("spawn at step " + std::to_string(ev.step) + " names nonexistent worker " +
                      std::to_string(ev.worker));
  std::vector<EntityId> picked;
  for (EntityId id : world.owned()[ev.worker]) {
    if (picked.size() == ev.count) break;
    if (!world.entity(id).handed_off) picked.push_back(id);
  }
  if (picked.empty())
    throw ConfigError("worker " + std::to_string(ev.worker) + " has no active entity to spawn at step " +
                      std::to_string(ev.step));
  return picked;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::unique_ptr<coupling::InstanceLauncher> make_launcher(const ExperimentSpec& spec) {
  if (spec.launch == LaunchMode::InProcess) return std::make_unique<coupling::InProcessLauncher>();
  return std::make_unique<coupling::ProcessLauncher>(spec.executable);
}

void run_coupled(const ExperimentSpec& spec, CoarseWorld& world, RunRecord& rec, unsigned repetition) {
  auto launcher = make_launcher(spec);
  coupling::CouplingOptions options;
  options.workdir = spec.workdir / (spec.name + "-seed" + std::to_string(world.config().seed) + "-rep" +
                                    std::to_string(repetition));
  // Handed-off entities enter the fine area at the middle of the seller grid.
  if (!spec.fine_template.sellers.empty()) {
    double lo_x = spec.fine_template.sellers.front().position.x, hi_x = lo_x;
    double lo_y = spec.fine_template.sellers.front().position.y, hi_y = lo_y;
    for (const auto& s : spec.fine_template.sellers) {
      lo_x = std::min(lo_x, s.position.x);
      hi_x = std::max(hi_x, s.position.x);
      lo_y = std::min(lo_y, s.position.y);
      hi_y = std::max(hi_y, s.position.y);
    }
    options.entry = {0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y)};
  }
  coupling::Coordinator coordinator(world, *launcher, options);

  std::map<std::filesystem::path, fine::FineScenario> templates;
  std::map<std::uint64_t, Timestep> end_step;
  const auto decide = [&](const coupling::InstanceHandle& h) {
    return world.clock() >= end_step.at(h.id) || world.finished() ? coupling::Decision::End
                                                                   : coupling::Decision::Continue;
  };

  while (!world.finished()) {
    for (const auto& ev : spec.spawns) {
      if (ev.step != world.clock()) continue;
      const fine::FineScenario* tmpl = &spec.fine_template;
      if (!ev.scenario_template.empty()) {
        auto it = templates.find(ev.scenario_template);
        if (it == templates.end()) it = templates.emplace(ev.scenario_template, fine::load_scenario(ev.scenario_template)).first;
        tmpl = &it->second;
      }
      auto& h = coordinator.spawn(select_entities(world, ev), *tmpl);
      end_step[h.id] = world.clock() + ev.duration;
    }
    if (!coordinator.conservation_holds()) rec.conservation_ok = false;
    rec.steps.push_back(coordinator.step(decide));
    if (!coordinator.conservation_holds()) rec.conservation_ok = false;
  }
  for (const auto& h : coordinator.instances())
    rec.spawns.push_back({h->spawn_step, h->id, h->entities.size(), h->spawn_seconds, h->wait_seconds});
  if (world.active_count() != world.config().num_entities) rec.conservation_ok = false;
}

}  // namespace

std::vector<SpawnEvent> parse_spawn_schedule(std::istream& in) {
  std::vector<SpawnEvent> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::vector<std::string> fields;
    for (std::string tok; ss >> tok;) fields.push_back(tok);
    if (fields.empty()) continue;
    if (fields.size() < 4 || fields.size() > 5)
      throw std::runtime_error("spawn schedule line " + std::to_string(lineno) +
                               ": expected 'step worker count duration [template_dir]'");
    try {
      SpawnEvent ev;
      ev.step = static_cast<Timestep>(std::stoul(fields[0]));
      ev.worker = static_cast<unsigned>(std::stoul(fields[1]));
      ev.count = std::stoul(fields[2]);
      ev.duration = static_cast<Timestep>(std::stoul(fields[3]));
      if (fields.size() == 5) ev.scenario_template = fields[4];
      if (ev.count == 0 || ev.duration == 0) throw std::invalid_argument("count and duration must be positive");
      out.push_back(ev);
    } catch (const std::exception& e) {
      throw std::runtime_error("spawn schedule line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<SpawnEvent> load_spawn_schedule(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open spawn schedule " + file.string());
  return parse_spawn_schedule(in);
}

void ExperimentSpec::validate() const {
  config.validate();
  if (repetitions == 0) throw ConfigError("repetitions must be at least 1");
  for (const auto& ev : spawns) {
    if (ev.step >= config.total_steps)
      throw ConfigError("spawn step " + std::to_string(ev.step) + " is not before the last step");
    if (ev.worker >= config.num_workers) throw ConfigError("spawn names worker " + std::to_string(ev.worker));
  }
  if (!spawns.empty()) {
    if (workdir.empty()) throw ConfigError("spawns need a working directory");
    if (launch == LaunchMode::Process && executable.empty()) throw ConfigError("process launch needs an executable");
  }
}

RunRecord run_single(const ExperimentSpec& spec, unsigned repetition) {
  RunRecord rec;
  rec.scenario = spec.name;
  rec.config = spec.config;
  rec.config.seed = spec.config.seed + repetition;
  rec.seed = rec.config.seed;
  rec.repetition = repetition;
  rec.totals.inter_worker.assign(rec.config.num_workers, 0);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    spec.validate();
    CoarseWorld world(rec.config);
    if (spec.spawns.empty()) {
      while (!world.finished()) rec.steps.push_back(world.step());
    } else {
      run_coupled(spec, world, rec, repetition);
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.wct_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& s : rec.steps) rec.totals.accumulate(s);
  rec.peak_rss_kb = peak_rss_kb();
  return rec;
}

std::filesystem::path steps_path_for(const std::filesystem::path& runs_csv) {
  auto p = runs_csv;
  p.replace_extension();
  return p.string() + ".steps.csv";
}

void write_runs_header(std::ostream& out) {
  out << "scenario,ses,workers,cache,adaptive,gen_prob,steps,seed,repetition,status,wct_s,originated,delivered,"
         "forwarded,discarded_by_cache,receptions,inter_worker,migrations,max_hops,hop_violations,spawns,"
         "spawn_wct_s,fine_wait_s,peak_rss_kb,error\n";
}

void write_run_row(std::ostream& out, const RunRecord& r) {
  double spawn_s = 0.0, wait_s = 0.0;
  for (const auto& s : r.spawns) {
    spawn_s += s.spawn_seconds;
    wait_s += s.wait_seconds;
  }
  const auto& t = r.totals;
  const auto& c = r.config;
  out << csv_escape(r.scenario) << ',' << c.num_entities << ',' << c.num_workers << ',' << c.cache_capacity << ','
      << (c.adaptive_partitioning ? 1 : 0) << ',' << c.pbb.generation_probability << ',' << c.total_steps << ','
      << r.seed << ',' << r.repetition << ',' << (r.ok ? "ok" : "failed") << ',' << std::fixed
      << std::setprecision(6) << r.wct_seconds << std::defaultfloat << ',' << t.originated << ',' << t.delivered
      << ',' << t.forwarded << ',' << t.discarded_by_cache << ',' << t.receptions << ',' << t.inter_worker_total()
      << ',' << t.migrations << ',' << t.max_delivered_hops << ',' << t.hop_violations << ',' << r.spawns.size()
      << ',' << std::fixed << std::setprecision(6) << spawn_s << ',' << wait_s << std::defaultfloat << ','
      << r.peak_rss_kb << ',' << csv_escape(r.error) << '\n';
}

void write_steps_header(std::ostream& out) {
  out << "scenario,ses,workers,cache,adaptive,seed,repetition,step,originated,delivered,forwarded,"
         "discarded_by_cache,receptions,inter_worker,migrations\n";
}

void write_step_rows(std::ostream& out, const RunRecord& r) {
  const auto& c = r.config;
  for (const auto& s : r.steps) {
    out << csv_escape(r.scenario) << ',' << c.num_entities << ',' << c.num_workers << ',' << c.cache_capacity << ','
        << (c.adaptive_partitioning ? 1 : 0) << ',' << r.seed << ',' << r.repetition << ',' << s.step << ','
        << s.originated << ',' << s.delivered << ',' << s.forwarded << ',' << s.discarded_by_cache << ','
        << s.receptions << ',' << s.inter_worker_total() << ',' << s.migrations << '\n';
  }
}

std::vector<RunRecord> run_cells(const std::vector<ExperimentSpec>& cells, const std::filesystem::path& output) {
  std::ofstream runs, steps;
  if (!output.empty()) {
    if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
    runs.open(output);
    steps.open(steps_path_for(output));
    if (!runs || !steps) throw std::runtime_error("cannot write " + output.string());
    write_runs_header(runs);
    write_steps_header(steps);
  }
  std::vector<RunRecord> records;
  for (const auto& cell : cells) {
    for (unsigned rep = 0; rep < cell.repetitions; ++rep) {
      records.push_back(run_single(cell, rep));
      if (runs.is_open()) {
        write_run_row(runs, records.back());
        write_step_rows(steps, records.back());
        runs.flush();
        steps.flush();
      }
    }
  }
  return records;
}

std::vector<RunRecord> run_experiment(const ExperimentSpec& spec) { return run_cells({spec}, spec.output); }

std::vector<SummaryRow> summarize(const std::vector<RunRecord>& records, std::ostream* warnings) {
  using Key = std::tuple<std::string, std::size_t, unsigned, std::size_t, bool, double, Timestep, std::size_t>;
  std::map<Key, std::vector<const RunRecord*>> cells;
  std::vector<Key> order;
  for (const auto& r : records) {
    const auto& c = r.config;
    Key k{r.scenario,       c.num_entities,  c.num_workers,   c.cache_capacity,
          c.adaptive_partitioning, c.pbb.generation_probability, c.total_steps, r.spawns.size()};
    if (!cells.contains(k)) order.push_back(k);
    auto& bucket = cells[k];
    if (r.ok) bucket.push_back(&r);
  }

  std::vector<SummaryRow> rows;
  for (const auto& k : order) {
    const auto& bucket = cells[k];
    if (bucket.empty()) {
      if (warnings) *warnings << "warning: cell '" << std::get<0>(k) << "' (" << std::get<1>(k) << " SEs, "
                              << std::get<2>(k) << " workers) has no successful run; omitted\n";
      continue;
    }
    SummaryRow row;
    std::tie(row.scenario, row.ses, row.workers, row.cache, row.adaptive, row.gen_prob, row.steps, row.spawns) = k;
    row.runs = bucket.size();
    const double n = static_cast<double>(bucket.size());
    for (const auto* r : bucket) {
      row.wct_mean += r->wct_seconds / n;
      row.originated_mean += static_cast<double>(r->totals.originated) / n;
      row.delivered_mean += static_cast<double>(r->totals.delivered) / n;
      row.forwarded_mean += static_cast<double>(r->totals.forwarded) / n;
      row.discarded_mean += static_cast<double>(r->totals.discarded_by_cache) / n;
      row.inter_worker_mean += static_cast<double>(r->totals.inter_worker_total()) / n;
    }
    if (bucket.size() > 1) {
      double ss = 0.0;
      for (const auto* r : bucket) ss += (r->wct_seconds - row.wct_mean) * (r->wct_seconds - row.wct_mean);
      row.wct_std = std::sqrt(ss / (n - 1.0));
    }
    rows.push_back(row);
  }

  const auto same_except = [](const SummaryRow& a, const SummaryRow& b, bool ignore_workers, bool ignore_spawns) {
    return a.ses == b.ses && (ignore_workers || a.workers == b.workers) && a.cache == b.cache &&
           a.adaptive == b.adaptive && a.gen_prob == b.gen_prob && a.steps == b.steps &&
           (ignore_spawns || a.spawns == b.spawns);
  };
  for (auto& row : rows) {
    for (const auto& other : rows) {
      if (other.workers == 1 && other.spawns == row.spawns && same_except(row, other, true, false) &&
          other.adaptive == false && other.wct_mean > 0.0 && row.wct_mean > 0.0)
        row.speedup = other.wct_mean / row.wct_mean;
      if (row.spawns > 0 && other.spawns == 0 && same_except(row, other, false, true))
        row.delta_wct = row.wct_mean - other.wct_mean;
    }
  }
  return rows;
}

void write_summary(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "scenario,ses,workers,cache,adaptive,gen_prob,steps,spawns,runs,wct_mean_s,wct_std_s,originated,delivered,"
         "forwarded,discarded_by_cache,inter_worker,speedup,delta_wct_s\n";
  for (const auto& r : rows) {
    out << csv_escape(r.scenario) << ',' << r.ses << ',' << r.workers << ',' << r.cache << ',' << (r.adaptive ? 1 : 0)
        << ',' << r.gen_prob << ',' << r.steps << ',' << r.spawns << ',' << r.runs << ',' << std::fixed
        << std::setprecision(4) << r.wct_mean << ',' << r.wct_std << ',' << std::setprecision(1) << r.originated_mean
        << ',' << r.delivered_mean << ',' << r.forwarded_mean << ',' << r.discarded_mean << ','
        << r.inter_worker_mean << ',' << std::setprecision(4);
    if (r.speedup) out << *r.speedup;
    out << ',';
    if (r.delta_wct) out << *r.delta_wct;
    out << std::defaultfloat << '\n';
  }
}

}  // namespace mlsim::harness
