#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "cbr/error.hpp"
#include "cbr/link_model.hpp"
#include "cbr/parallel.hpp"
#include "cbr/pipeline.hpp"
#include "cbr/topology.hpp"

namespace cbr {

struct DesignPoint {
  double rate = 1.0;  // bits/s/Hz
  int n_relays = 0;
  int frame_len = 1;

  friend bool operator==(const DesignPoint&, const DesignPoint&) = default;
};

// SINR threshold for a Shannon-rate code: beta = 2^R - 1.
inline double rate_to_threshold(double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw invalid_argument_error("rate must be positive");
  return std::exp2(rate) - 1.0;
}

// Meter-bits/s/Hz of forward progress: d (1 - eps) R / F.
inline double transport_capacity(double d_cbr, double epsilon, int frame_len, double rate) {
  if (frame_len < 1) throw invalid_argument_error("frame length must be at least 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw invalid_argument_error("epsilon must lie in [0,1]");
  return d_cbr * (1.0 - epsilon) * rate / static_cast<double>(frame_len);
}

struct CapacityResult {
  DesignPoint point;
  double epsilon_cbr = 0.0;
  double transport_capacity = 0.0;
};

// Everything about the link budget that stays fixed while {R, N, F} vary.
struct Scenario {
  double d_cbr = 1.0;
  double gamma = 1.0;  // linear SNR at unit distance
  double alpha = 3.5;
  double d0 = 1.0;
  bool clamp_near_field = false;

  void validate() const {
    if (!(d_cbr > 0.0)) throw invalid_argument_error("d_cbr must be positive");
    ChannelParams{alpha, d0, gamma, 0.0}.validate();
  }
};

// Pipeline settings used by the optimizer; the steady state is all it needs.
inline PipelineOptions default_search_pipeline() {
  PipelineOptions opt;
  opt.literal_transient = false;
  return opt;
}

inline CapacityResult evaluate_point_uncached(const DesignPoint& point, const Scenario& scenario,
                                              const PipelineOptions& pipeline) {
  scenario.validate();
  if (point.n_relays < 0) throw invalid_argument_error("relay count must be non-negative");
  if (point.frame_len < 1) throw invalid_argument_error("frame length must be at least 1");
  const ChannelParams params{scenario.alpha, scenario.d0, scenario.gamma, rate_to_threshold(point.rate)};
  const Topology topo = build_line_topology(scenario.d_cbr, point.n_relays);
  const PipelineResult res = iterate_fixed_point(topo, params, point.frame_len, pipeline,
                                                 scenario.clamp_near_field);
  return {point, res.steady_epsilon_cbr,
          transport_capacity(scenario.d_cbr, res.steady_epsilon_cbr, point.frame_len, point.rate)};
}

// Memoised capacity evaluation for one scenario. Safe to call concurrently.
class CapacityEvaluator {
 public:
  explicit CapacityEvaluator(Scenario scenario, PipelineOptions pipeline = default_search_pipeline())
      : scenario_(scenario), pipeline_(pipeline) {
    scenario_.validate();
  }

  CapacityResult operator()(const DesignPoint& point) {
    const Key key = key_of(point);
    {
      std::lock_guard lock(mutex_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    const CapacityResult r = evaluate_point_uncached(point, scenario_, pipeline_);
    std::lock_guard lock(mutex_);
    return memo_.emplace(key, r).first->second;
  }

  std::size_t cached() const {
    std::lock_guard lock(mutex_);
    return memo_.size();
  }
  const Scenario& scenario() const noexcept { return scenario_; }

 private:
  using Key = std::tuple<std::uint64_t, int, int>;
  static Key key_of(const DesignPoint& p) {
    return {std::bit_cast<std::uint64_t>(p.rate), p.n_relays, p.frame_len};
  }

  Scenario scenario_;
  PipelineOptions pipeline_;
  mutable std::mutex mutex_;
  std::map<Key, CapacityResult> memo_;
};

inline CapacityResult evaluate_point(const DesignPoint& point, const Scenario& scenario,
                                     const PipelineOptions& pipeline = default_search_pipeline()) {
  return evaluate_point_uncached(point, scenario, pipeline);
}

struct SearchBounds {
  double rate_lo = 0.25;
  double rate_hi = 12.0;
  int n_lo = 0;
  int n_hi = 10;
  int f_lo = 1;
  int f_hi = 8;
  double rate_tolerance = 0.01;
  int max_passes = 20;

  void validate() const {
    if (!(rate_lo > 0.0) || !(rate_hi >= rate_lo)) throw invalid_argument_error("bad rate bounds");
    if (n_lo < 0 || n_hi < n_lo) throw invalid_argument_error("empty relay-count range");
    if (f_lo < 1 || f_hi < f_lo) throw invalid_argument_error("empty frame-length range");
    if (!(rate_tolerance > 0.0)) throw invalid_argument_error("rate tolerance must be positive");
    if (max_passes < 1) throw invalid_argument_error("max_passes must be at least 1");
  }
};

// Tolerance of the rate search that scores a candidate relay count or frame
// length.
inline constexpr double kProfileRateTolerance = 0.05;

struct OptimizeResult {
  CapacityResult best;
  // Every distinct point evaluated, in evaluation order.
  std::vector<CapacityResult> log;
  int passes = 0;
};

namespace detail {

// Memo and log shared by one search run.
template <class Objective>
class SearchState {
 public:
  SearchState(Objective& objective, unsigned threads) : objective_(objective), threads_(threads) {}

  double value(const DesignPoint& p) { return eval_many({p}).front().transport_capacity; }

  std::vector<CapacityResult> eval_many(const std::vector<DesignPoint>& points) {
    std::vector<std::optional<CapacityResult>> out(points.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (auto it = find(points[i]); it != log_.end()) {
        out[i] = *it;
      } else if (std::none_of(missing.begin(), missing.end(),
                              [&](std::size_t m) { return points[m] == points[i]; })) {
        missing.push_back(i);
      }
    }
    std::vector<CapacityResult> fresh(missing.size());
    parallel_for(missing.size(), threads_, [&](std::size_t k) {
      fresh[k] = objective_(points[missing[k]]);
      fresh[k].point = points[missing[k]];
    });
    for (const CapacityResult& r : fresh) {
      log_.push_back(r);
      if (!best_ || r.transport_capacity > best_->transport_capacity) best_ = r;
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!out[i]) out[i] = *find(points[i]);
    }
    std::vector<CapacityResult> result;
    result.reserve(out.size());
    for (auto& o : out) result.push_back(*o);
    return result;
  }

  const CapacityResult& best() const { return *best_; }
  std::vector<CapacityResult>& log() { return log_; }

 private:
  std::vector<CapacityResult>::iterator find(const DesignPoint& p) {
    return std::find_if(log_.begin(), log_.end(), [&](const CapacityResult& r) { return r.point == p; });
  }

  Objective& objective_;
  unsigned threads_;
  std::vector<CapacityResult> log_;
  std::optional<CapacityResult> best_;
};

// Index of the largest value; ties favour the middle, then the lower end.
inline int pick(double lo, double mid, double hi) {
  if (mid >= lo && mid >= hi) return 1;
  return lo >= hi ? 0 : 2;
}

struct Probe {
  double x = 0.0;
  double value = -std::numeric_limits<double>::infinity();
};

// Bracket shrink along a continuous coordinate: evaluate both ends and the
// midpoint, move towards the better end, stop below `tol`. Returns the best
// point seen.
template <class F>
Probe line_search_real(F&& f, double lo, double hi, double tol) {
  Probe best;
  const auto g = [&](double x) {
    const double v = f(x);
    if (v > best.value) best = {x, v};
    return v;
  };
  if (hi - lo < tol) {
    g(0.5 * (lo + hi));
    return best;
  }
  while (hi - lo >= tol) {
    const double mid = 0.5 * (lo + hi);
    const double vl = g(lo), vm = g(mid), vh = g(hi);
    switch (pick(vl, vm, vh)) {
      case 0: hi = mid; break;
      case 2: lo = mid; break;
      default: {
        // Peak inside: the quarter points decide which half to keep.
        const double q1 = 0.5 * (lo + mid), q3 = 0.5 * (mid + hi);
        const double v1 = g(q1), v3 = g(q3);
        if (v1 > vm && v1 >= v3) {
          hi = mid;
        } else if (v3 > vm) {
          lo = mid;
        } else {
          lo = q1;
          hi = q3;
        }
      }
    }
  }
  return best;
}

// Golden-section maximisation on [lo, hi], both ends included.
template <class F>
Probe golden_section(F&& f, double lo, double hi, double tol) {
  Probe best;
  const auto g = [&](double x) {
    const double v = f(x);
    if (v > best.value) best = {x, v};
    return v;
  };
  g(lo);
  g(hi);
  constexpr double kInvPhi = 0.6180339887498949;
  double a = hi - kInvPhi * (hi - lo), b = lo + kInvPhi * (hi - lo);
  double va = g(a), vb = g(b);
  while (hi - lo >= tol) {
    if (va >= vb) {
      hi = b;
      b = a;
      vb = va;
      a = hi - kInvPhi * (hi - lo);
      va = g(a);
    } else {
      lo = a;
      a = b;
      va = vb;
      b = lo + kInvPhi * (hi - lo);
      vb = g(b);
    }
  }
  return best;
}

// Same on integers; brackets of width <= 4 are scanned exhaustively.
template <class F>
Probe line_search_int(F&& f, int lo, int hi) {
  Probe best;
  const auto g = [&](int x) {
    const double v = f(x);
    if (v > best.value) best = {static_cast<double>(x), v};
    return v;
  };
  while (hi - lo > 4) {
    const int mid = lo + (hi - lo) / 2;
    switch (pick(g(lo), g(mid), g(hi))) {
      case 0: hi = mid; break;
      case 2: lo = mid; break;
      default:
        lo = lo + (mid - lo) / 2;
        hi = mid + (hi - mid + 1) / 2;
    }
  }
  for (int x = lo; x <= hi; ++x) g(x);
  return best;
}

}  // namespace detail

// Endpoint/midpoint coordinate search for the {R, N, F} maximising the
// objective's transport_capacity.
//
// Starts from the best point of the 3x3x3 grid of bracket endpoints and
// midpoints, then runs passes of one bracket-shrinking line search per
// coordinate around the incumbent: R over its full bounds, then N, then F.
// The optimal rate moves with N and F, so a candidate N or F is scored by the
// best capacity over R, found by a coarser rate search. When a pass leaves
// the best capacity unchanged, the neighbouring frame lengths are searched
// jointly with N; the search stops once that fails to improve too.
// `objective` maps a DesignPoint to a CapacityResult and must be safe to call
// concurrently when threads != 1.
template <class Objective>
OptimizeResult coordinate_search(Objective&& objective, const SearchBounds& bounds,
                                 unsigned threads = 1) {
  bounds.validate();
  detail::SearchState<std::remove_reference_t<Objective>> state(objective, threads);

  const double rates[3] = {bounds.rate_lo, 0.5 * (bounds.rate_lo + bounds.rate_hi), bounds.rate_hi};
  const int ns[3] = {bounds.n_lo, bounds.n_lo + (bounds.n_hi - bounds.n_lo) / 2, bounds.n_hi};
  const int fs[3] = {bounds.f_lo, bounds.f_lo + (bounds.f_hi - bounds.f_lo) / 2, bounds.f_hi};
  std::vector<DesignPoint> grid;
  for (double r : rates) {
    for (int n : ns) {
      for (int f : fs) grid.push_back({r, n, f});
    }
  }
  state.eval_many(grid);

  // Best capacity over R for fixed (n, f), by a coarser golden-section search
  // over the full rate bracket. Scores are kept for the rest of the run.
  std::map<std::pair<int, int>, double> profiles;
  const double profile_tol = std::max(bounds.rate_tolerance, kProfileRateTolerance);
  const auto rate_profile = [&](int n, int f) {
    if (auto it = profiles.find({n, f}); it != profiles.end()) return it->second;
    const double v = detail::golden_section([&](double r) { return state.value({r, n, f}); },
                                            bounds.rate_lo, bounds.rate_hi, profile_tol)
                         .value;
    profiles.emplace(std::pair{n, f}, v);
    return v;
  };

  OptimizeResult result;
  double previous = state.best().transport_capacity;
  for (int pass = 1; pass <= bounds.max_passes; ++pass) {
    result.passes = pass;
    DesignPoint at = state.best().point;
    detail::line_search_real([&](double r) { return state.value({r, at.n_relays, at.frame_len}); },
                             bounds.rate_lo, bounds.rate_hi, bounds.rate_tolerance);
    at = state.best().point;
    detail::line_search_int([&](int n) { return rate_profile(n, at.frame_len); },
                            bounds.n_lo, bounds.n_hi);
    at = state.best().point;
    detail::line_search_int([&](int f) { return rate_profile(at.n_relays, f); },
                            bounds.f_lo, bounds.f_hi);
    double now = state.best().transport_capacity;
    if (now == previous) {
      // Coordinate moves are stuck. The optimal N depends strongly on F, so
      // try the neighbouring frame lengths with N re-optimised before giving up.
      at = state.best().point;
      for (int f : {at.frame_len - 1, at.frame_len + 1}) {
        if (f < bounds.f_lo || f > bounds.f_hi) continue;
        detail::line_search_int([&](int n) { return rate_profile(n, f); }, bounds.n_lo, bounds.n_hi);
      }
      now = state.best().transport_capacity;
      if (now == previous) break;
    }
    previous = now;
  }
  result.best = state.best();
  result.log = std::move(state.log());
  return result;
}

inline OptimizeResult optimize(const Scenario& scenario, const SearchBounds& bounds = {},
                               const PipelineOptions& pipeline = default_search_pipeline(),
                               unsigned threads = 1) {
  CapacityEvaluator evaluator(scenario, pipeline);
  return coordinate_search(evaluator, bounds, threads);
}

}  // namespace cbr
