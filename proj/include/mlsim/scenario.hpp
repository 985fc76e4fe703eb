#pragma once

// Fine-grained scenario description and its on-disk text format:
//
//   GRID rows cols spacing radio_range walk_speed coarse_step fine_res
//   SELLER id x y          (rows * cols lines)
//   PED id x y target_seller_id
//
// '#' starts a comment; blank lines are ignored.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlsim/geometry.hpp"

namespace mlsim::fine {

inline constexpr const char* kScenarioFileName = "scenario.txt";

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Seller {
  std::uint64_t id = 0;
  PlanePoint position;
};

struct PedestrianSpec {
  std::uint64_t entity_id = 0;
  PlanePoint start;
  std::uint64_t target_seller = 0;
};

struct FineScenario {
  int grid_rows = 10;
  int grid_cols = 10;
  double spacing = 20.0;
  double radio_range = 30.0;
  double walk_speed = 20.0;    // spaceunits per timeunit
  double coarse_step = 1.0;    // timeunits
  double fine_resolution = 0.01;  // timeunits per tick
  std::vector<Seller> sellers;
  std::vector<PedestrianSpec> pedestrians;

  /// rows x cols sellers at (col * spacing, row * spacing) with ids 1..rows*cols,
  /// radio range 1.5 * spacing, walk speed of one cell per coarse step, 100
  /// fine ticks per coarse step.
  static FineScenario grid(int rows, int cols, double spacing);

  /// Fine ticks in one coarse step. Throws ScenarioError when the coarse step
  /// is not an integer multiple of the fine resolution.
  std::int64_t ticks_per_step() const;

  /// Throws ScenarioError naming the violated invariant.
  void validate() const;
};

/// Parses the text format; `source` names the input in error messages.
FineScenario parse_scenario(std::istream& in, const std::string& source = kScenarioFileName);
void write_scenario(std::ostream& out, const FineScenario& scenario);

/// Reads `<directory>/scenario.txt`.
FineScenario load_scenario(const std::filesystem::path& directory);
void save_scenario(const std::filesystem::path& directory, const FineScenario& scenario);

}  // namespace mlsim::fine
