#include "mlsim/scenario.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace mlsim::fine {

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

class LineParser {
 public:
  LineParser(std::string source, int line, const std::vector<std::string>& fields)
      : source_(std::move(source)), line_(line), fields_(fields) {}

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ScenarioError(source_ + ":" + std::to_string(line_) + ": field '" + field + "': " + what);
  }

  void expect_count(std::size_t n, const std::string& record) const {
    if (fields_.size() != n)
      fail(record, "expected " + std::to_string(n - 1) + " values, found " + std::to_string(fields_.size() - 1));
  }

  double number(std::size_t i, const std::string& field) const {
    const std::string& s = fields_[i];
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) fail(field, "not a number: '" + s + "'");
    return v;
  }

  std::uint64_t id(std::size_t i, const std::string& field) const {
    const std::string& s = fields_[i];
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail(field, "not a non-negative integer: '" + s + "'");
    return v;
  }

  int count(std::size_t i, const std::string& field) const {
    const auto v = id(i, field);
    if (v == 0 || v > 100000) fail(field, "must be a positive integer");
    return static_cast<int>(v);
  }

 private:
  std::string source_;
  int line_;
  const std::vector<std::string>& fields_;
};

}  // namespace

FineScenario FineScenario::grid(int rows, int cols, double spacing) {
  FineScenario s;
  s.grid_rows = rows;
  s.grid_cols = cols;
  s.spacing = spacing;
  s.radio_range = spacing * 1.5;
  s.coarse_step = 1.0;
  s.walk_speed = spacing / s.coarse_step;
  s.fine_resolution = s.coarse_step / 100.0;
  std::uint64_t id = 1;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) s.sellers.push_back({id++, {c * spacing, r * spacing}});
  return s;
}

std::int64_t FineScenario::ticks_per_step() const {
  if (!(coarse_step > 0.0) || !(fine_resolution > 0.0))
    throw ScenarioError("coarse step and fine resolution must be positive");
  const double ratio = coarse_step / fine_resolution;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * rounded)
    throw ScenarioError("coarse step " + std::to_string(coarse_step) + " is not a multiple of fine resolution " +
                        std::to_string(fine_resolution));
  return static_cast<std::int64_t>(rounded);
}

void FineScenario::validate() const {
  if (grid_rows <= 0 || grid_cols <= 0) throw ScenarioError("grid dimensions must be positive");
  if (!(spacing > 0.0) || !(radio_range > 0.0) || !(walk_speed >= 0.0))
    throw ScenarioError("spacing and radio range must be positive, walk speed non-negative");
  ticks_per_step();
  if (sellers.size() != static_cast<std::size_t>(grid_rows) * static_cast<std::size_t>(grid_cols))
    throw ScenarioError("grid " + std::to_string(grid_rows) + "x" + std::to_string(grid_cols) + " needs " +
                        std::to_string(grid_rows * grid_cols) + " sellers, found " + std::to_string(sellers.size()));
  std::set<std::uint64_t> seller_ids;
  for (const auto& s : sellers)
    if (!seller_ids.insert(s.id).second) throw ScenarioError("duplicated seller id " + std::to_string(s.id));
  std::set<std::uint64_t> ped_ids;
  for (const auto& p : pedestrians) {
    if (!ped_ids.insert(p.entity_id).second)
      throw ScenarioError("duplicated pedestrian id " + std::to_string(p.entity_id));
    if (!seller_ids.contains(p.target_seller))
      throw ScenarioError("pedestrian " + std::to_string(p.entity_id) + " targets unknown seller " +
                          std::to_string(p.target_seller));
  }
}

FineScenario parse_scenario(std::istream& in, const std::string& source) {
  FineScenario s;
  s.sellers.clear();
  bool have_grid = false;
  std::set<std::uint64_t> seller_ids;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    LineParser p(source, lineno, fields);
    const std::string& kind = fields[0];
    if (kind == "GRID") {
      if (have_grid) p.fail("GRID", "duplicated header");
      p.expect_count(8, "GRID");
      s.grid_rows = p.count(1, "rows");
      s.grid_cols = p.count(2, "cols");
      s.spacing = p.number(3, "spacing");
      s.radio_range = p.number(4, "radio_range");
      s.walk_speed = p.number(5, "walk_speed");
      s.coarse_step = p.number(6, "coarse_step");
      s.fine_resolution = p.number(7, "fine_res");
      if (!(s.spacing > 0.0)) p.fail("spacing", "must be positive");
      if (!(s.radio_range > 0.0)) p.fail("radio_range", "must be positive");
      if (!(s.walk_speed >= 0.0)) p.fail("walk_speed", "must be non-negative");
      if (!(s.coarse_step > 0.0)) p.fail("coarse_step", "must be positive");
      if (!(s.fine_resolution > 0.0)) p.fail("fine_res", "must be positive");
      try {
        s.ticks_per_step();
      } catch (const ScenarioError& e) {
        p.fail("fine_res", e.what());
      }
      have_grid = true;
    } else if (kind == "SELLER") {
      if (!have_grid) p.fail("SELLER", "record before the GRID header");
      p.expect_count(4, "SELLER");
      Seller seller{p.id(1, "id"), {p.number(2, "x"), p.number(3, "y")}};
      if (!seller_ids.insert(seller.id).second) p.fail("id", "duplicated seller id " + fields[1]);
      s.sellers.push_back(seller);
    } else if (kind == "PED") {
      if (!have_grid) p.fail("PED", "record before the GRID header");
      p.expect_count(5, "PED");
      s.pedestrians.push_back({p.id(1, "id"), {p.number(2, "x"), p.number(3, "y")}, p.id(4, "target_seller_id")});
    } else {
      p.fail("record", "unknown record type '" + kind + "'");
    }
  }
  if (!have_grid) throw ScenarioError(source + ": missing GRID header");
  try {
    s.validate();
  } catch (const ScenarioError& e) {
    throw ScenarioError(source + ": " + e.what());
  }
  return s;
}

void write_scenario(std::ostream& out, const FineScenario& s) {
  std::ostringstream o;
  o << std::setprecision(17);
  o << "GRID " << s.grid_rows << ' ' << s.grid_cols << ' ' << s.spacing << ' ' << s.radio_range << ' '
    << s.walk_speed << ' ' << s.coarse_step << ' ' << s.fine_resolution << '\n';
  for (const auto& seller : s.sellers)
    o << "SELLER " << seller.id << ' ' << seller.position.x << ' ' << seller.position.y << '\n';
  for (const auto& p : s.pedestrians)
    o << "PED " << p.entity_id << ' ' << p.start.x << ' ' << p.start.y << ' ' << p.target_seller << '\n';
  out << o.str();
}

FineScenario load_scenario(const std::filesystem::path& directory) {
  const auto file = directory / kScenarioFileName;
  std::ifstream in(file);
  if (!in) throw ScenarioError(file.string() + ": cannot open scenario file");
  return parse_scenario(in, file.string());
}

void save_scenario(const std::filesystem::path& directory, const FineScenario& scenario) {
  std::filesystem::create_directories(directory);
  const auto file = directory / kScenarioFileName;
  std::ofstream out(file);
  if (!out) throw ScenarioError(file.string() + ": cannot write scenario file");
  write_scenario(out, scenario);
}

}  // namespace mlsim::fine
