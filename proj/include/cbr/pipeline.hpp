#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cbr/error.hpp"
#include "cbr/interference.hpp"
#include "cbr/link_model.hpp"
#include "cbr/markov.hpp"
#include "cbr/parallel.hpp"
#include "cbr/topology.hpp"

namespace cbr {

// Number of packets that can be in flight together: ceil((N+1)/F).
inline int active_packet_count(int n_relays, int frame_len) {
  if (frame_len < 1) throw invalid_argument_error("frame length must be at least 1");
  if (n_relays < 0) throw invalid_argument_error("relay count must be non-negative");
  return (n_relays + frame_len) / frame_len;
}

// Another packet's transmit profile, injected `offset` frames after the
// tracked one (negative: earlier).
struct OffsetProfile {
  int offset = 0;
  const TransmitProfile* profile = nullptr;
};

// At the tracked packet's relative slot tau, a packet offset by d frames is at
// its own relative slot tau - d*F. Every node i that may carry it contributes
// (Omega(i, rx), p_i) to each other receiver rx. Offset 0 is the tracked packet
// itself and is ignored.
inline InterferenceField build_interference_field(std::span<const OffsetProfile> others,
                                                  const PathGainTable& gains, int frame_len) {
  if (frame_len < 1) throw invalid_argument_error("frame length must be at least 1");
  std::size_t slots = 0;
  for (const auto& o : others) {
    if (o.profile) slots = std::max(slots, o.profile->slots());
  }
  const std::size_t nodes = gains.size();
  InterferenceField field(slots, nodes);
  for (std::size_t tau = 1; tau <= slots; ++tau) {
    for (const auto& o : others) {
      if (o.offset == 0 || !o.profile) continue;
      const long rel = static_cast<long>(tau) - static_cast<long>(o.offset) * frame_len;
      if (rel < 1 || rel > static_cast<long>(o.profile->slots())) continue;
      for (std::size_t i = 0; i < o.profile->nodes(); ++i) {
        const double p = (*o.profile)(i, static_cast<std::size_t>(rel));
        if (p <= 0.0) continue;
        for (std::size_t rx = 0; rx < nodes; ++rx) {
          if (rx == i) continue;
          field.add(tau, rx, InterfererEntry{static_cast<std::uint32_t>(i), gains(i, rx), p});
        }
      }
    }
  }
  return field;
}

enum class UpdateOrder {
  jacobi,                   // every packet sees the previous sweep's profiles
  gauss_seidel_oldest_first,
  gauss_seidel_newest_first,
};

struct PipelineOptions {
  double xi = 1e-6;
  int max_frames = 50;
  // Iteration near a saddle-node of the fixed point contracts slowly; a few
  // hundred sweeps are common there.
  int max_inner = 1000;
  UpdateOrder order = UpdateOrder::jacobi;
  unsigned threads = 1;
  bool record_trace = false;
  // Halve the profile step whenever consecutive steps reverse direction.
  bool adaptive_damping = true;
  // Run the start-up frames packet by packet. When off, frame 1 already
  // solves the steady roles from an interference-free start, which is much
  // cheaper for long windows and reaches the same fixed point.
  bool literal_transient = true;
};

struct TraceRow {
  int frame = 0;
  int inner_iter = 0;
  int packet = 0;  // 1-based injection index
  double frobenius_residual = 0.0;
  double epsilon_cbr = 0.0;
};

struct PipelineResult {
  TransmitProfile steady_profile;
  double steady_epsilon_cbr = 0.0;
  double steady_expected_slots = 0.0;
  int frames_to_converge = 0;
  // Outage of packet f as solved in frame f (its injection frame).
  std::vector<double> per_frame_epsilon;
  // Largest profile change between the steady packet and its predecessor.
  double shift_deviation = 0.0;
  // Decision residual per frame: largest Frobenius distance between
  // corresponding packets of consecutive frames (frame 1 has none: +inf).
  std::vector<double> frame_residuals;
  std::vector<TraceRow> trace;
};

namespace detail {

struct PacketEstimate {
  TransmitProfile profile;
  std::optional<SlotTransitionSet> transitions;
  double epsilon = 0.0;
  double expected_slots = 0.0;
  // Relaxation state: weight of the current profile step and the previous
  // undamped step, used to detect period-two oscillation.
  double omega = 1.0;
  double applied_omega = 1.0;
  std::vector<double> last_step;
  SlotTransitionSet scratch;  // storage recycled between rebuilds
};

inline PacketEstimate fresh_estimate(std::size_t nodes, std::size_t slots) {
  PacketEstimate pk;
  pk.profile = TransmitProfile(nodes, slots);
  return pk;
}

// Rebuilds one packet against the given neighbours and returns the Frobenius
// change of its transition set (+inf on the first build), scaled up by the
// relaxation weight of the profile step that caused it.
inline double refresh(PacketEstimate& pk, const ChainPtr& chain, const PathGainTable& gains,
                      const ChannelParams& params, int frame_len,
                      std::span<const OffsetProfile> others, bool adaptive_damping) {
  const InterferenceField field = build_interference_field(others, gains, frame_len);
  SlotTransitionSet set = std::move(pk.scratch);
  build_transition_set_into(set, chain, gains, params, field);
  ForwardPass pass = propagate(set, false);
  const double residual = pk.transitions
                              ? frobenius_distance(set, *pk.transitions) / pk.applied_omega
                              : std::numeric_limits<double>::infinity();
  const bool first = !pk.transitions.has_value();
  if (pk.transitions) pk.scratch = std::move(*pk.transitions);
  pk.transitions = std::move(set);
  pk.epsilon = pass.absorption.epsilon_cbr;
  pk.expected_slots = pass.absorption.expected_slots;

  if (!adaptive_damping || first) {
    pk.profile = std::move(pass.profile);
    pk.applied_omega = 1.0;
    return residual;
  }
  // Strong coupling (short frames, many relays) makes the plain update
  // overshoot and flip between a high- and a low-traffic profile. When two
  // consecutive steps point in opposite directions the step is halved; while
  // they agree it grows back towards the plain update.
  const auto next = pass.profile.values();
  auto cur = pk.profile.values();
  std::vector<double> step(cur.size());
  double dot = 0.0;
  for (std::size_t i = 0; i < cur.size(); ++i) {
    step[i] = next[i] - cur[i];
    if (!pk.last_step.empty()) dot += step[i] * pk.last_step[i];
  }
  if (dot < 0.0) {
    pk.omega = std::max(pk.omega * 0.5, 1.0 / 64.0);
  } else if (!pk.last_step.empty()) {
    pk.omega = std::min(pk.omega * 1.25, 1.0);
  }
  for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += pk.omega * step[i];
  pk.applied_omega = pk.omega;
  pk.last_step = std::move(step);
  return residual;
}

// Transition sets of one frame's packets, newest first. In steady frames all
// roles share one set, stored once.
struct FrameSets {
  std::vector<SlotTransitionSet> sets;
  std::size_t count = 0;
  const SlotTransitionSet& operator[](std::size_t k) const { return sets[sets.size() == 1 ? 0 : k]; }
};

inline double worst_pair_distance(const FrameSets& a, const FrameSets& b) {
  double worst = 0.0;
  const std::size_t common = std::min(a.count, b.count);
  // Identical sets on both sides need one comparison.
  const std::size_t distinct = std::min(common, std::max(a.sets.size(), b.sets.size()));
  for (std::size_t k = 0; k < distinct; ++k) {
    worst = std::max(worst, frobenius_distance(a[k], b[k]));
  }
  return worst;
}

}  // namespace detail

// Frame-by-frame fixed point between co-active packets' transition sets and
// transmit profiles.
//
// Frames 1..W (W = ceil((N+1)/F) co-active packets) follow the literal
// schedule: frame f injects packet f with a zero profile, and the packets of
// the last W frames are re-solved against each other until every transition
// set moves by less than xi. Packet 1 is therefore interference-free in
// frame 1.
//
// From frame W+1 on every frame holds a full window. Packets are then
// indistinguishable up to their injection offset, so the window is carried as
// W roles with cyclic offsets: role r sees role (r + d) mod W at offset d.
// The roles start from the oldest transient packet's profile, which makes them
// identical; the sweep keeps them identical, so one rebuild serves all roles.
//
// The process halts at the first frame f > 1 whose packets differ from the
// corresponding packets of frame f-1 by less than xi.
inline PipelineResult iterate_fixed_point(const ChainPtr& chain, const PathGainTable& gains,
                                          const ChannelParams& params, int frame_len,
                                          const PipelineOptions& opt = {}) {
  if (!(opt.xi > 0.0)) throw invalid_argument_error("xi must be positive");
  if (opt.max_frames < 2 || opt.max_inner < 1) {
    throw invalid_argument_error("max_frames must be >= 2 and max_inner >= 1");
  }
  const int window = active_packet_count(chain->n_relays(), frame_len);
  const std::size_t nodes = chain->node_count();
  const std::size_t slots = chain->slot_count();
  constexpr double kInf = std::numeric_limits<double>::infinity();

  PipelineResult result;
  detail::FrameSets previous_sets;
  TransmitProfile previous_oldest;

  const auto decide = [&](int frame, detail::FrameSets sets,
                          const detail::PacketEstimate& reference) {
    const double worst = frame > 1 ? detail::worst_pair_distance(sets, previous_sets) : kInf;
    result.frame_residuals.push_back(worst);
    if (frame > 1) result.shift_deviation = reference.profile.max_abs_difference(previous_oldest);
    previous_sets = std::move(sets);
    previous_oldest = reference.profile;
    if (worst < opt.xi) {
      result.frames_to_converge = frame;
      result.steady_profile = reference.profile;
      result.steady_epsilon_cbr = reference.epsilon;
      result.steady_expected_slots = reference.expected_slots;
      return true;
    }
    return false;
  };

  // Transient frames.
  std::vector<detail::PacketEstimate> packets;
  const int transient_frames = opt.literal_transient ? std::min(window, opt.max_frames) : 0;
  for (int frame = 1; frame <= transient_frames; ++frame) {
    packets.push_back(detail::fresh_estimate(nodes, slots));
    const int newest = frame - 1;
    const int oldest = std::max(0, frame - window);

    std::vector<int> order;
    for (int n = oldest; n <= newest; ++n) order.push_back(n);
    if (opt.order == UpdateOrder::gauss_seidel_newest_first) std::reverse(order.begin(), order.end());

    std::vector<double> residuals(order.size(), kInf);
    bool converged = false;
    for (int iter = 1; iter <= opt.max_inner && !converged; ++iter) {
      std::vector<TransmitProfile> snapshot;
      if (opt.order == UpdateOrder::jacobi) {
        for (int n = oldest; n <= newest; ++n) snapshot.push_back(packets[n].profile);
      }
      const auto profile_of = [&](int m) -> const TransmitProfile* {
        if (opt.order == UpdateOrder::jacobi && m >= oldest) return &snapshot[m - oldest];
        return &packets[m].profile;
      };
      const auto update = [&](std::size_t k) {
        const int n = order[k];
        std::vector<OffsetProfile> others;
        for (int m = std::max(0, n - window + 1); m <= std::min(newest, n + window - 1); ++m) {
          if (m != n) others.push_back({m - n, profile_of(m)});
        }
        residuals[k] = detail::refresh(packets[n], chain, gains, params, frame_len, others,
                                       opt.adaptive_damping);
      };
      if (opt.order == UpdateOrder::jacobi) {
        parallel_for(order.size(), opt.threads, update);
      } else {
        for (std::size_t k = 0; k < order.size(); ++k) update(k);
      }
      if (opt.record_trace) {
        for (std::size_t k = 0; k < order.size(); ++k) {
          result.trace.push_back({frame, iter, order[k] + 1, residuals[k], packets[order[k]].epsilon});
        }
      }
      converged = std::all_of(residuals.begin(), residuals.end(), [&](double r) { return r < opt.xi; });
    }
    if (!converged) {
      throw convergence_error("inner iteration did not converge in frame " + std::to_string(frame),
                              residuals);
    }
    result.per_frame_epsilon.push_back(packets[newest].epsilon);

    detail::FrameSets sets;
    for (int n = newest; n >= oldest; --n) sets.sets.push_back(*packets[n].transitions);
    sets.count = sets.sets.size();
    if (decide(frame, std::move(sets), packets[oldest])) return result;
  }

  // Steady frames over cyclic roles.
  detail::PacketEstimate role = packets.empty()
                                    ? detail::fresh_estimate(nodes, slots)
                                    : packets.front();
  std::vector<OffsetProfile> others;
  for (int d = -(window - 1); d <= window - 1; ++d) {
    if (d != 0) others.push_back({d, nullptr});
  }
  for (int frame = transient_frames + 1; frame <= opt.max_frames; ++frame) {
    double residual = kInf;
    for (int iter = 1; iter <= opt.max_inner && !(residual < opt.xi); ++iter) {
      const TransmitProfile snapshot = role.profile;
      for (auto& o : others) o.profile = &snapshot;
      residual = detail::refresh(role, chain, gains, params, frame_len, others, opt.adaptive_damping);
      if (opt.record_trace) {
        for (int r = 0; r < window; ++r) {
          result.trace.push_back({frame, iter, frame - r, residual, role.epsilon});
        }
      }
      // With no neighbours the field is empty and one build is exact.
      if (others.empty()) residual = 0.0;
    }
    if (!(residual < opt.xi)) {
      throw convergence_error("inner iteration did not converge in frame " + std::to_string(frame),
                              std::vector<double>(static_cast<std::size_t>(window), residual));
    }
    result.per_frame_epsilon.push_back(role.epsilon);
    detail::FrameSets sets{{*role.transitions}, static_cast<std::size_t>(window)};
    if (decide(frame, std::move(sets), role)) return result;
  }
  throw convergence_error("frame recursion did not settle within " +
                              std::to_string(opt.max_frames) + " frames",
                          result.frame_residuals.empty()
                              ? std::vector<double>{}
                              : std::vector<double>{result.frame_residuals.back()});
}

inline PipelineResult iterate_fixed_point(const Topology& topo, const ChannelParams& params,
                                          int frame_len, const PipelineOptions& opt = {},
                                          bool clamp_near_field = false) {
  params.validate();
  const PathGainTable gains =
      path_gain_table(topo, PathLossOptions{params.alpha, params.d0, clamp_near_field});
  return iterate_fixed_point(shared_chain(topo.relay_count), gains, params, frame_len, opt);
}

}  // namespace cbr
