#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlsim/geometry.hpp"
#include "mlsim/random.hpp"

using namespace mlsim;

namespace {

// Oracle: the shortest of the nine lattice images.
double image_distance(TorusPoint a, TorusPoint b, WorldExtent e) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = -1; i <= 1; ++i)
    for (int j = -1; j <= 1; ++j)
      best = std::min(best, std::hypot(b.x + i * e.width - a.x, b.y + j * e.height - a.y));
  return best;
}

}  // namespace

TEST_CASE("extent follows entity density") {
  const auto e = WorldExtent::from_density(1000);
  CHECK(e.width == doctest::Approx(std::sqrt(1000.0 * 10000.0)));
  CHECK(e.height == e.width);
  CHECK(e.valid());
  CHECK_FALSE(WorldExtent{}.valid());
}

TEST_CASE("wrap maps into the half-open rectangle") {
  const WorldExtent e{100.0, 50.0};
  CHECK(wrap(-1.0, -1.0, e) == TorusPoint{99.0, 49.0});
  CHECK(wrap(100.0, 50.0, e) == TorusPoint{0.0, 0.0});
  CHECK(wrap(250.5, 120.0, e) == TorusPoint{50.5, 20.0});
  const auto tiny = wrap(-1e-18, 0.0, e);
  CHECK(tiny.x >= 0.0);
  CHECK(tiny.x < e.width);
}

TEST_CASE("distance across the seam") {
  const WorldExtent e{100.0, 100.0};
  CHECK(distance({1.0, 50.0}, {99.0, 50.0}, e) == doctest::Approx(2.0));
  CHECK(distance({1.0, 1.0}, {99.0, 99.0}, e) == doctest::Approx(std::sqrt(8.0)));
  const auto d = torus_displacement({1.0, 50.0}, {99.0, 50.0}, e);
  CHECK(d.x == doctest::Approx(-2.0));
  CHECK(d.y == doctest::Approx(0.0));
}

TEST_CASE("distance agrees with the lattice-image oracle") {
  RandomStream rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const WorldExtent e{rng.uniform(10.0, 5000.0), rng.uniform(10.0, 5000.0)};
    const TorusPoint a = wrap(rng.uniform(0.0, e.width), rng.uniform(0.0, e.height), e);
    const TorusPoint b = wrap(rng.uniform(0.0, e.width), rng.uniform(0.0, e.height), e);
    const double d = distance(a, b, e);
    REQUIRE(d == doctest::Approx(image_distance(a, b, e)).epsilon(1e-12));
    CHECK(distance_squared(a, b, e) == doctest::Approx(d * d));
  }
}

TEST_CASE("distance properties hold on random triples") {
  RandomStream rng(11);
  const WorldExtent e = WorldExtent::from_density(500);
  const double half_diagonal = 0.5 * std::hypot(e.width, e.height);
  for (int trial = 0; trial < 2000; ++trial) {
    TorusPoint p[3];
    for (auto& q : p) q = wrap(rng.uniform(-e.width, 2 * e.width), rng.uniform(-e.height, 2 * e.height), e);
    for (const auto& q : p) {
      REQUIRE(q.x >= 0.0);
      REQUIRE(q.x < e.width);
      REQUIRE(q.y >= 0.0);
      REQUIRE(q.y < e.height);
    }
    CHECK(distance(p[0], p[0], e) == 0.0);
    CHECK(distance(p[0], p[1], e) == doctest::Approx(distance(p[1], p[0], e)));
    CHECK(distance(p[0], p[1], e) <= half_diagonal + 1e-9);
    CHECK(distance(p[0], p[2], e) <= distance(p[0], p[1], e) + distance(p[1], p[2], e) + 1e-9);
  }
}
