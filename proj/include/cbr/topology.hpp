#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cbr/error.hpp"

namespace cbr {

// Equally spaced line CBR. Node order is [source, relay 1..N, destination].
struct Topology {
  std::vector<double> positions;
  double cbr_length = 0.0;
  int relay_count = 0;

  std::size_t node_count() const noexcept { return positions.size(); }
  std::size_t source() const noexcept { return 0; }
  std::size_t destination() const noexcept { return positions.size() - 1; }
};

inline Topology build_line_topology(double d_cbr, int n_relays) {
  if (!(d_cbr > 0.0) || !std::isfinite(d_cbr)) {
    throw invalid_argument_error("CBR length must be positive and finite");
  }
  if (n_relays < 0) {
    throw invalid_argument_error("relay count must be non-negative");
  }
  Topology topo;
  topo.cbr_length = d_cbr;
  topo.relay_count = n_relays;
  const int hops = n_relays + 1;
  topo.positions.reserve(static_cast<std::size_t>(hops) + 1);
  for (int i = 0; i <= hops; ++i) {
    // The last position is pinned so the far endpoint is exactly d_cbr.
    topo.positions.push_back(i == hops ? d_cbr : static_cast<double>(i) * d_cbr / hops);
  }
  return topo;
}

// Relative path gains Omega(tx, rx) = (d/d0)^-alpha. The diagonal is unused
// and stored as zero.
class PathGainTable {
 public:
  PathGainTable() = default;
  explicit PathGainTable(std::size_t n) : n_(n), omega_(n * n, 0.0) {}

  std::size_t size() const noexcept { return n_; }

  double operator()(std::size_t tx, std::size_t rx) const noexcept {
    return omega_[tx * n_ + rx];
  }
  double& at(std::size_t tx, std::size_t rx) noexcept {
    return omega_[tx * n_ + rx];
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> omega_;
};

struct PathLossOptions {
  double alpha = 3.5;
  double d0 = 1.0;
  // Cap f(d) at 1 for d < d0 instead of extrapolating the power law.
  bool clamp_near_field = false;
};

inline double path_gain(double distance, const PathLossOptions& opts) {
  if (opts.clamp_near_field && distance < opts.d0) return 1.0;
  return std::pow(distance / opts.d0, -opts.alpha);
}

inline PathGainTable path_gain_table(std::span<const double> positions,
                                     const PathLossOptions& opts) {
  if (!(opts.alpha > 2.0)) {
    throw invalid_argument_error("path-loss exponent must exceed 2");
  }
  if (!(opts.d0 > 0.0)) {
    throw invalid_argument_error("reference distance must be positive");
  }
  const std::size_t n = positions.size();
  PathGainTable table(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = std::abs(positions[i] - positions[j]);
      const double g = path_gain(d, opts);
      if (!(d > 0.0) || !std::isfinite(g)) {
        throw invalid_argument_error("nodes " + std::to_string(i) + " and " +
                                     std::to_string(j) + " are collocated");
      }
      table.at(i, j) = g;
      table.at(j, i) = g;
    }
  }
  return table;
}

inline PathGainTable path_gain_table(const Topology& topo,
                                     const PathLossOptions& opts) {
  return path_gain_table(std::span<const double>(topo.positions), opts);
}

}  // namespace cbr
