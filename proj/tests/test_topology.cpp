#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cbr/topology.hpp"

using namespace cbr;
using Catch::Approx;

TEST_CASE("line topology places nodes at equal spacing") {
  SECTION("three relays over unit length") {
    const Topology t = build_line_topology(1.0, 3);
    REQUIRE(t.node_count() == 5);
    const std::vector<double> want{0.0, 0.25, 0.5, 0.75, 1.0};
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(t.positions[i] == Approx(want[i]).margin(1e-15));
  }
  SECTION("no relays") {
    const Topology t = build_line_topology(1.0, 0);
    REQUIRE(t.positions == std::vector<double>{0.0, 1.0});
    CHECK(t.source() == 0);
    CHECK(t.destination() == 1);
  }
  SECTION("four relays over half length") {
    const Topology t = build_line_topology(0.5, 4);
    const std::vector<double> want{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(t.positions[i] == Approx(want[i]).margin(1e-15));
  }
  SECTION("spacing invariants hold for a range of sizes") {
    for (int n = 0; n <= 12; ++n) {
      const Topology t = build_line_topology(0.7, n);
      REQUIRE(t.node_count() == static_cast<std::size_t>(n) + 2);
      CHECK(t.positions.front() == 0.0);
      CHECK(t.positions.back() == 0.7);
      for (std::size_t i = 0; i + 1 < t.node_count(); ++i) {
        CHECK(t.positions[i + 1] > t.positions[i]);
        CHECK(t.positions[i + 1] - t.positions[i] == Approx(0.7 / (n + 1)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("line topology rejects bad input") {
  CHECK_THROWS_AS(build_line_topology(0.0, 2), invalid_argument_error);
  CHECK_THROWS_AS(build_line_topology(-1.0, 2), invalid_argument_error);
  CHECK_THROWS_AS(build_line_topology(1.0, -1), invalid_argument_error);
}

TEST_CASE("path gain follows the power law") {
  CHECK(path_gain(1.0, {3.5, 1.0, false}) == 1.0);
  CHECK(path_gain(2.0, {3.0, 1.0, false}) == Approx(0.125).epsilon(1e-15));
  CHECK(path_gain(0.25, {3.5, 1.0, false}) == Approx(128.0).epsilon(1e-12));
  CHECK(path_gain(0.25, {3.5, 1.0, true}) == 1.0);
  CHECK(path_gain(2.0, {3.5, 1.0, true}) == Approx(std::pow(2.0, -3.5)));
}

TEST_CASE("path gain table") {
  const Topology t = build_line_topology(1.0, 3);
  const PathGainTable g = path_gain_table(t, {3.5, 1.0, false});
  REQUIRE(g.size() == 5);

  SECTION("symmetric, positive and finite off the diagonal") {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        if (i == j) continue;
        CHECK(g(i, j) == g(j, i));
        CHECK(g(i, j) > 0.0);
        CHECK(std::isfinite(g(i, j)));
      }
    }
  }
  SECTION("decreasing in distance") {
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        for (std::size_t k = 0; k < 5; ++k) {
          for (std::size_t l = 0; l < 5; ++l) {
            if (i == j || k == l) continue;
            const double dij = std::abs(t.positions[i] - t.positions[j]);
            const double dkl = std::abs(t.positions[k] - t.positions[l]);
            if (dij < dkl - 1e-12) CHECK(g(i, j) > g(k, l));
          }
        }
      }
    }
  }
  SECTION("permuting the nodes permutes the table") {
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    std::vector<double> shuffled;
    for (std::size_t p : perm) shuffled.push_back(t.positions[p]);
    const PathGainTable h = path_gain_table(shuffled, {3.5, 1.0, false});
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = 0; b < 5; ++b) {
        if (a != b) CHECK(h(a, b) == g(perm[a], perm[b]));
      }
    }
  }
  SECTION("clamping caps near-field gains only") {
    const PathGainTable c = path_gain_table(build_line_topology(2.0, 3), {3.5, 1.0, true});
    CHECK(c(0, 1) == 1.0);               // spacing 0.5 < d0
    CHECK(c(0, 2) == 1.0);               // exactly d0
    CHECK(c(0, 4) == Approx(std::pow(2.0, -3.5)));
  }
}

TEST_CASE("path gain table rejects bad input") {
  const Topology t = build_line_topology(1.0, 2);
  CHECK_THROWS_AS(path_gain_table(t, {2.0, 1.0, false}), invalid_argument_error);
  CHECK_THROWS_AS(path_gain_table(t, {3.5, 0.0, false}), invalid_argument_error);
  const std::vector<double> collocated{0.0, 0.5, 0.5};
  CHECK_THROWS_AS(path_gain_table(collocated, {3.5, 1.0, false}), invalid_argument_error);
}
