#include "mlsim/spatial_grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mlsim {

namespace {

std::vector<int> neighbor_offsets(int cells) {
  if (cells >= 3) return {-1, 0, 1};
  std::vector<int> out;
  for (int o = 0; o < cells; ++o) out.push_back(o);
  return out;
}

}  // namespace

SpatialGrid::SpatialGrid(WorldExtent extent, double radius) : extent_(extent) {
  if (!extent.valid() || !(radius > 0.0)) throw std::invalid_argument("spatial grid needs a valid extent and radius");
  cells_x_ = std::max(1, static_cast<int>(std::floor(extent.width / radius)));
  cells_y_ = std::max(1, static_cast<int>(std::floor(extent.height / radius)));
  offsets_x_ = neighbor_offsets(cells_x_);
  offsets_y_ = neighbor_offsets(cells_y_);
  starts_.assign(static_cast<std::size_t>(cells_x_) * cells_y_ + 1, 0);
}

int SpatialGrid::cell_x(double x) const {
  return std::min(cells_x_ - 1, static_cast<int>(x / extent_.width * cells_x_));
}

int SpatialGrid::cell_y(double y) const {
  return std::min(cells_y_ - 1, static_cast<int>(y / extent_.height * cells_y_));
}

void SpatialGrid::rebuild(std::span<const Item> items) {
  const std::size_t ncells = static_cast<std::size_t>(cells_x_) * cells_y_;
  std::vector<std::uint32_t> cell_of(items.size());
  std::fill(starts_.begin(), starts_.end(), 0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    cell_of[i] = static_cast<std::uint32_t>(cell_y(items[i].position.y) * cells_x_ + cell_x(items[i].position.x));
    ++starts_[cell_of[i] + 1];
  }
  for (std::size_t c = 0; c < ncells; ++c) starts_[c + 1] += starts_[c];
  items_.resize(items.size());
  std::vector<std::uint32_t> cursor(starts_.begin(), starts_.end() - 1);
  for (std::size_t i = 0; i < items.size(); ++i) items_[cursor[cell_of[i]]++] = items[i];
}

}  // namespace mlsim
