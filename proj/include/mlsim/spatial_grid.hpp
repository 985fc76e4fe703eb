#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mlsim/geometry.hpp"

namespace mlsim {

/// Uniform bucket grid over the torus with cells at least `radius` wide, so a
/// radius query only inspects the 3x3 block around the query cell.
class SpatialGrid {
 public:
  struct Item {
    std::uint32_t id;
    TorusPoint position;
  };

  SpatialGrid() = default;
  SpatialGrid(WorldExtent extent, double radius);

  /// Replaces the contents with `items` (bucketed with a counting sort).
  void rebuild(std::span<const Item> items);

  /// Calls visit(item, squared_distance) for every stored item within `radius`
  /// (inclusive) of `center`.
  template <class Visit>
  void for_each_within(TorusPoint center, double radius, Visit&& visit) const {
    const double r2 = radius * radius;
    const int cx = cell_x(center.x);
    const int cy = cell_y(center.y);
    for (int oy : offsets_y_) {
      const int y = wrap_index(cy + oy, cells_y_);
      for (int ox : offsets_x_) {
        const int x = wrap_index(cx + ox, cells_x_);
        const std::size_t cell = static_cast<std::size_t>(y) * cells_x_ + x;
        for (std::uint32_t k = starts_[cell]; k < starts_[cell + 1]; ++k) {
          const Item& item = items_[k];
          const double d2 = distance_squared(center, item.position, extent_);
          if (d2 <= r2) visit(item, d2);
        }
      }
    }
  }

  std::size_t size() const { return items_.size(); }

 private:
  static int wrap_index(int i, int n) { return ((i % n) + n) % n; }
  int cell_x(double x) const;
  int cell_y(double y) const;

  WorldExtent extent_{};
  int cells_x_ = 1;
  int cells_y_ = 1;
  // Distinct neighbor offsets; fewer than three when the grid is too small to
  // have three distinct columns/rows.
  std::vector<int> offsets_x_;
  std::vector<int> offsets_y_;
  std::vector<std::uint32_t> starts_;
  std::vector<Item> items_;
};

}  // namespace mlsim
