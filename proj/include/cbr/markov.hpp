#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cbr/error.hpp"
#include "cbr/interference.hpp"
#include "cbr/link_model.hpp"
#include "cbr/topology.hpp"

namespace cbr {

enum class NodeState : std::uint8_t { not_decoded = 0, just_decoded = 1, done = 2 };

enum class StateClass { transient, outage, success };

// Per-node states of one packet, as two bitmasks over [source, relays, destination].
// A node in neither mask has not decoded the packet.
struct CbrState {
  std::uint32_t just_decoded = 0;
  std::uint32_t done = 0;

  NodeState at(std::size_t node) const noexcept {
    if ((just_decoded >> node) & 1u) return NodeState::just_decoded;
    if ((done >> node) & 1u) return NodeState::done;
    return NodeState::not_decoded;
  }
  std::uint64_t key() const noexcept {
    return (static_cast<std::uint64_t>(done) << 32) | just_decoded;
  }
  friend bool operator==(const CbrState&, const CbrState&) = default;
};

inline constexpr std::size_t kMaxNodes = 32;

inline std::uint32_t node_bit(std::size_t node) { return 1u << node; }

inline CbrState initial_state() { return CbrState{node_bit(0), 0}; }

inline StateClass classify(const CbrState& s, std::size_t node_count) {
  if (s.just_decoded & node_bit(node_count - 1)) return StateClass::success;
  if (s.just_decoded == 0) return StateClass::outage;
  return StateClass::transient;
}

// "1000"-style rendering, source first.
inline std::string to_string(const CbrState& s, std::size_t node_count) {
  std::string out(node_count, '0');
  for (std::size_t i = 0; i < node_count; ++i) {
    out[i] = static_cast<char>('0' + static_cast<int>(s.at(i)));
  }
  return out;
}

inline CbrState parse_state(const std::string& text) {
  if (text.empty() || text.size() > kMaxNodes) {
    throw invalid_argument_error("bad state string '" + text + "'");
  }
  CbrState s;
  for (std::size_t i = 0; i < text.size(); ++i) {
    switch (text[i]) {
      case '0': break;
      case '1': s.just_decoded |= node_bit(i); break;
      case '2': s.done |= node_bit(i); break;
      default: throw invalid_argument_error("bad state string '" + text + "'");
    }
  }
  return s;
}

// Reachable transient states of the single-packet chain. Index 0 is the
// initial state; the two absorbing meta-states follow the transient ones
// (outage first, then success).
struct StateSpace {
  int n_relays = 0;
  std::vector<CbrState> transient;
  std::unordered_map<std::uint64_t, std::uint32_t> index;
  // Distinct CBR states collapsed into each absorbing meta-state.
  std::size_t outage_class_count = 0;
  std::size_t success_class_count = 0;

  std::size_t node_count() const noexcept { return static_cast<std::size_t>(n_relays) + 2; }
  std::size_t transient_count() const noexcept { return transient.size(); }
  std::size_t outage_index() const noexcept { return transient.size(); }
  std::size_t success_index() const noexcept { return transient.size() + 1; }

  std::optional<std::uint32_t> find(const CbrState& s) const {
    auto it = index.find(s.key());
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

inline constexpr std::size_t kDefaultStateCap = 1'000'000;

namespace detail {

inline std::uint32_t all_nodes_mask(std::size_t node_count) {
  return node_count >= 32 ? ~0u : (node_bit(node_count) - 1u);
}

// Nodes that still listen for the packet, ascending.
inline std::vector<std::uint32_t> receivers_of(const CbrState& s, std::size_t node_count) {
  std::vector<std::uint32_t> rx;
  const std::uint32_t busy = s.just_decoded | s.done;
  for (std::uint32_t j = 0; j < node_count; ++j) {
    if (!((busy >> j) & 1u)) rx.push_back(j);
  }
  return rx;
}

}  // namespace detail

// Breadth-first closure from the initial state under the node-state rules:
// transmitters go to done, each listener independently decodes or not.
inline StateSpace enumerate_states(int n_relays, std::size_t cap = kDefaultStateCap) {
  if (n_relays < 0) throw invalid_argument_error("relay count must be non-negative");
  if (static_cast<std::size_t>(n_relays) + 2 > kMaxNodes) {
    throw capacity_error("at most " + std::to_string(kMaxNodes - 2) + " relays supported");
  }
  StateSpace space;
  space.n_relays = n_relays;
  const std::size_t nodes = space.node_count();
  std::unordered_set<std::uint64_t> outage_states;
  std::unordered_set<std::uint64_t> success_states;

  const CbrState init = initial_state();
  space.transient.push_back(init);
  space.index.emplace(init.key(), 0);
  for (std::size_t head = 0; head < space.transient.size(); ++head) {
    const CbrState s = space.transient[head];
    const auto rx = detail::receivers_of(s, nodes);
    const std::uint32_t done_next = s.done | s.just_decoded;
    const std::uint64_t outcomes = std::uint64_t{1} << rx.size();
    for (std::uint64_t b = 0; b < outcomes; ++b) {
      CbrState next{0, done_next};
      for (std::size_t r = 0; r < rx.size(); ++r) {
        if ((b >> r) & 1u) next.just_decoded |= node_bit(rx[r]);
      }
      switch (classify(next, nodes)) {
        case StateClass::success: success_states.insert(next.key()); break;
        case StateClass::outage: outage_states.insert(next.key()); break;
        case StateClass::transient:
          if (space.index.emplace(next.key(), static_cast<std::uint32_t>(space.transient.size())).second) {
            space.transient.push_back(next);
            if (space.transient.size() > cap) {
              throw capacity_error("state space exceeds cap of " + std::to_string(cap));
            }
          }
          break;
      }
    }
  }
  space.outage_class_count = outage_states.size();
  space.success_class_count = success_states.size();
  return space;
}

// Probability-free skeleton of the slot-indexed chain: for each relative slot,
// the transient states that can be occupied at its start and the successor of
// every relay-decoding outcome in which the destination fails.
class ChainStructure {
 public:
  static constexpr std::uint32_t kCapped = std::numeric_limits<std::uint32_t>::max();

  struct Row {
    std::uint32_t state = 0;
    std::uint32_t transmitters = 0;
    std::uint32_t receiver_offset = 0;  // into receivers()
    std::uint32_t receiver_count = 0;   // relays only; the destination is implicit
    std::uint32_t outcome_offset = 0;   // into successors(); 2^count entries, entry 0 unused
  };

  struct Slot {
    std::vector<Row> rows;
    std::vector<std::uint32_t> receivers;
    // Transient successor index per outcome, or kCapped at the lifetime cap.
    std::vector<std::uint32_t> successors;
  };

  explicit ChainStructure(StateSpace space) : space_(std::move(space)) { build(); }

  const StateSpace& space() const noexcept { return space_; }
  int n_relays() const noexcept { return space_.n_relays; }
  std::size_t node_count() const noexcept { return space_.node_count(); }
  // Lifetime cap N+1.
  std::size_t slot_count() const noexcept { return slots_.size(); }
  // `tau` is 1-based.
  const Slot& slot(std::size_t tau) const { return slots_.at(tau - 1); }

 private:
  void build() {
    const std::size_t nodes = space_.node_count();
    const std::size_t dest = nodes - 1;
    const std::size_t max_slots = static_cast<std::size_t>(space_.n_relays) + 1;
    std::vector<std::uint32_t> current{0};
    for (std::size_t tau = 1; tau <= max_slots; ++tau) {
      Slot slot;
      std::vector<std::uint32_t> next;
      std::vector<char> seen(space_.transient_count(), 0);
      for (std::uint32_t idx : current) {
        const CbrState& s = space_.transient[idx];
        Row row;
        row.state = idx;
        row.transmitters = s.just_decoded;
        row.receiver_offset = static_cast<std::uint32_t>(slot.receivers.size());
        for (std::uint32_t j : detail::receivers_of(s, nodes)) {
          if (j != dest) slot.receivers.push_back(j);
        }
        row.receiver_count = static_cast<std::uint32_t>(slot.receivers.size()) - row.receiver_offset;
        row.outcome_offset = static_cast<std::uint32_t>(slot.successors.size());
        const std::uint32_t outcomes = 1u << row.receiver_count;
        const std::uint32_t done_next = s.done | s.just_decoded;
        slot.successors.push_back(kCapped);  // b = 0: nobody decodes
        for (std::uint32_t b = 1; b < outcomes; ++b) {
          if (tau == max_slots) {
            slot.successors.push_back(kCapped);
            continue;
          }
          CbrState succ{0, done_next};
          for (std::uint32_t r = 0; r < row.receiver_count; ++r) {
            if ((b >> r) & 1u) succ.just_decoded |= node_bit(slot.receivers[row.receiver_offset + r]);
          }
          const auto found = space_.find(succ);
          if (!found) throw consistency_error("successor missing from state space");
          slot.successors.push_back(*found);
          if (!seen[*found]) {
            seen[*found] = 1;
            next.push_back(*found);
          }
        }
        slot.rows.push_back(row);
      }
      slots_.push_back(std::move(slot));
      std::sort(next.begin(), next.end());
      current = std::move(next);
      if (current.empty()) {
        // Remaining slots are unreachable; keep them as empty blocks so the
        // chain always spans N+1 slots.
        for (std::size_t t = tau + 1; t <= max_slots; ++t) slots_.emplace_back();
        break;
      }
    }
  }

  StateSpace space_;
  std::vector<Slot> slots_;
};

using ChainPtr = std::shared_ptr<const ChainStructure>;

inline ChainPtr make_chain(int n_relays, std::size_t cap = kDefaultStateCap) {
  return std::make_shared<const ChainStructure>(enumerate_states(n_relays, cap));
}

// Process-wide cache of chain skeletons keyed by relay count.
inline ChainPtr shared_chain(int n_relays) {
  static std::mutex mutex;
  static std::unordered_map<int, ChainPtr> cache;
  {
    std::lock_guard lock(mutex);
    if (auto it = cache.find(n_relays); it != cache.end()) return it->second;
  }
  ChainPtr built = make_chain(n_relays);
  std::lock_guard lock(mutex);
  return cache.emplace(n_relays, std::move(built)).first->second;
}

// Link outage for receiver `rx` given the transmitting set, memoised per
// (transmitters, receiver) for one relative slot.
//
// The interference product of a branch k runs over every interferer outside
// the transmitting set. Per receiver, the product over all interferers and the
// per-node partial products are tabulated once for each branch gain (and its
// tie-perturbed variant); a set's product is then the full one divided by the
// partials of its members, which makes an evaluation independent of the
// number of interferers.
class LinkEvaluator {
 public:
  LinkEvaluator(const PathGainTable& gains, const ChannelParams& params,
                const InterferenceField& field, std::size_t tau)
      : gains_(gains), params_(params), field_(field), tau_(tau), nodes_(gains.size()),
        receivers_(nodes_) {
    if (nodes_ <= kDenseCacheNodes) dense_.assign(nodes_ << nodes_, -1.0);
  }

  // Moves to another relative slot, keeping the allocated caches.
  void reset(std::size_t tau) {
    tau_ = tau;
    std::fill(dense_.begin(), dense_.end(), -1.0);
    sparse_.clear();
    for (ReceiverTables& t : receivers_) t.ready = false;
  }

  double outage(std::uint32_t transmitters, std::uint32_t rx) {
    double* slot = nullptr;
    if (!dense_.empty()) {
      slot = &dense_[static_cast<std::size_t>(transmitters) * nodes_ + rx];
      if (*slot >= 0.0) return *slot;
    } else if (auto it = sparse_.find(key(transmitters, rx)); it != sparse_.end()) {
      return it->second;
    }
    const double eps = evaluate(transmitters, rx);
    if (slot) {
      *slot = eps;
    } else {
      sparse_.emplace(key(transmitters, rx), eps);
    }
    return eps;
  }

 private:
  static constexpr std::size_t kDenseCacheNodes = 14;
  // Tie multiplicities handled by the tables (pairs of equal gains).
  static constexpr std::size_t kTieLevels = 2;

  struct ReceiverTables {
    bool ready = false;
    // [level][k]: exp(-beta/(W_k G)) times the product over all interferers.
    std::vector<long double> base;
    // [level][k][i]: product over the interferer entries carried by node i.
    std::vector<long double> partial;
  };

  static std::uint64_t key(std::uint32_t transmitters, std::uint32_t rx) {
    return (static_cast<std::uint64_t>(transmitters) << 6) | rx;
  }

  static double perturbed(double gain, std::size_t level) {
    return gain * (1.0 + static_cast<double>(level) * kTieStep);
  }

  const ReceiverTables& tables(std::uint32_t rx) {
    ReceiverTables& t = receivers_[rx];
    if (t.ready) return t;
    const long double b = params_.beta;
    const long double g = params_.gamma;
    t.base.assign(kTieLevels * nodes_, 1.0L);
    t.partial.assign(kTieLevels * nodes_ * nodes_, 1.0L);
    const auto entries = field_.at(tau_, rx);
    for (std::size_t level = 0; level < kTieLevels; ++level) {
      for (std::size_t k = 0; k < nodes_; ++k) {
        if (k == rx) continue;
        const long double wk = perturbed(gains_(k, rx), level);
        long double full = 1.0L;
        long double* part = &t.partial[(level * nodes_ + k) * nodes_];
        for (const InterfererEntry& e : entries) {
          if (e.node == rx || e.prob <= 0.0) continue;
          const long double f = detail::interference_factor(wk, b, Interferer{e.omega, e.prob});
          full *= f;
          part[e.node] *= f;
        }
        t.base[level * nodes_ + k] = std::exp(-b / (wk * g)) * full;
      }
    }
    t.ready = true;
    return t;
  }

  double evaluate(std::uint32_t transmitters, std::uint32_t rx) {
    if (transmitters == 0) throw invalid_argument_error("empty transmitting set");
    if (params_.beta == 0.0) return 0.0;
    members_.clear();
    barrage_.clear();
    levels_.clear();
    for (std::uint32_t k = 0; k < nodes_; ++k) {
      if ((transmitters >> k) & 1u) {
        members_.push_back(k);
        barrage_.push_back(gains_(k, rx));
      }
    }
    // Same perturbation as resolve_gain_ties: the m-th repeat is scaled by
    // 1 + m*step.
    bool tabulated = true;
    for (std::size_t i = 0; i < barrage_.size(); ++i) {
      std::size_t m = 0;
      for (std::size_t j = 0; j < i; ++j) {
        if (std::abs(barrage_[j] - barrage_[i]) <=
            kTieTolerance * std::max(std::abs(barrage_[j]), std::abs(barrage_[i]))) {
          ++m;
        }
      }
      if (m >= kTieLevels) tabulated = false;
      levels_.push_back(m);
    }
    if (tabulated) {
      for (std::size_t i = 0; i < barrage_.size(); ++i) barrage_[i] = perturbed(barrage_[i], levels_[i]);
      for (std::size_t i = 1; i < barrage_.size() && tabulated; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
          if (barrage_[i] == barrage_[j]) tabulated = false;
        }
      }
    }
    if (!tabulated) return evaluate_direct(transmitters, rx);

    const ReceiverTables& t = tables(rx);
    detail::CompensatedSum success;
    for (std::size_t a = 0; a < members_.size(); ++a) {
      const std::size_t k = members_[a];
      const std::size_t level = levels_[a];
      const long double wk = barrage_[a];
      long double term = t.base[level * nodes_ + k];
      for (std::size_t s = 0; s < members_.size(); ++s) {
        if (s != a) term *= wk / (wk - static_cast<long double>(barrage_[s]));
      }
      const long double* part = &t.partial[(level * nodes_ + k) * nodes_];
      for (std::uint32_t i : members_) term /= part[i];
      success.add(term);
    }
    return detail::finish_outage(success.value());
  }

  // Reference path for tie patterns the tables do not cover.
  double evaluate_direct(std::uint32_t transmitters, std::uint32_t rx) {
    barrage_.clear();
    interferers_.clear();
    for (std::uint32_t k = 0; k < nodes_; ++k) {
      if ((transmitters >> k) & 1u) barrage_.push_back(gains_(k, rx));
    }
    // Only nodes outside the barraging set count as interferers.
    for (const InterfererEntry& e : field_.at(tau_, rx)) {
      if (e.node == rx || ((transmitters >> e.node) & 1u) || e.prob <= 0.0) continue;
      interferers_.push_back(Interferer{e.omega, e.prob});
    }
    resolve_gain_ties_in_place(barrage_);
    return outage_distinct(barrage_, interferers_, params_.gamma, params_.beta);
  }

  const PathGainTable& gains_;
  const ChannelParams& params_;
  const InterferenceField& field_;
  std::size_t tau_;
  std::size_t nodes_;
  std::vector<ReceiverTables> receivers_;
  std::vector<double> dense_;
  std::unordered_map<std::uint64_t, double> sparse_;
  std::vector<std::uint32_t> members_;
  std::vector<double> barrage_;
  std::vector<std::size_t> levels_;
  std::vector<Interferer> interferers_;
};

struct Successor {
  CbrState state;
  double probability = 0.0;
};

// All 2^|listeners| outcomes of one slot from `state`, destination included.
inline std::vector<Successor> slot_transition(const CbrState& state, std::size_t tau,
                                              std::size_t node_count,
                                              const PathGainTable& gains,
                                              const ChannelParams& params,
                                              const InterferenceField& field = {}) {
  if (state.just_decoded == 0) {
    throw invalid_argument_error("state has no transmitters; it is absorbing");
  }
  if (gains.size() != node_count) throw invalid_argument_error("gain table size mismatch");
  LinkEvaluator links(gains, params, field, tau);
  const auto rx = detail::receivers_of(state, node_count);
  std::vector<double> eps(rx.size());
  for (std::size_t r = 0; r < rx.size(); ++r) eps[r] = links.outage(state.just_decoded, rx[r]);
  std::vector<Successor> out;
  const std::uint64_t outcomes = std::uint64_t{1} << rx.size();
  out.reserve(outcomes);
  const std::uint32_t done_next = state.done | state.just_decoded;
  for (std::uint64_t b = 0; b < outcomes; ++b) {
    Successor succ{CbrState{0, done_next}, 1.0};
    for (std::size_t r = 0; r < rx.size(); ++r) {
      if ((b >> r) & 1u) {
        succ.state.just_decoded |= node_bit(rx[r]);
        succ.probability *= 1.0 - eps[r];
      } else {
        succ.probability *= eps[r];
      }
    }
    out.push_back(succ);
  }
  return out;
}

// Numeric blocks for one relative slot, aligned with ChainStructure::Slot.
struct SlotBlock {
  std::vector<double> q;  // per outcome; zero where the successor is capped or b = 0
  std::vector<double> r;  // two per row: outage, success
};

// Slot-indexed transition blocks [Q_tau | R_tau] for one packet's lifetime.
struct SlotTransitionSet {
  ChainPtr chain;
  std::vector<SlotBlock> slots;

  std::size_t slot_count() const noexcept { return slots.size(); }

  // Dense Q_tau (transient x transient) and R_tau (transient x 2). Rows of
  // states that cannot be occupied at tau are zero.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> dense(std::size_t tau) const {
    const std::size_t n = chain->space().transient_count();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, 2);
    const auto& slot = chain->slot(tau);
    const auto& block = slots.at(tau - 1);
    for (std::size_t i = 0; i < slot.rows.size(); ++i) {
      const auto& row = slot.rows[i];
      const std::uint32_t outcomes = 1u << row.receiver_count;
      for (std::uint32_t b = 1; b < outcomes; ++b) {
        const auto succ = slot.successors[row.outcome_offset + b];
        if (succ != ChainStructure::kCapped) q(row.state, succ) += block.q[row.outcome_offset + b];
      }
      r(row.state, 0) = block.r[2 * i];
      r(row.state, 1) = block.r[2 * i + 1];
    }
    return {q, r};
  }
};

inline constexpr double kRowSumTolerance = 1e-9;

// Fills `set` in place, reusing its storage.
inline void build_transition_set_into(SlotTransitionSet& set, const ChainPtr& chain,
                                      const PathGainTable& gains, const ChannelParams& params,
                                      const InterferenceField& field = {}) {
  const std::size_t nodes = chain->node_count();
  if (gains.size() != nodes) throw invalid_argument_error("gain table size mismatch");
  const std::uint32_t dest = static_cast<std::uint32_t>(nodes - 1);
  set.chain = chain;
  set.slots.resize(chain->slot_count());
  std::vector<double> outcome;
  LinkEvaluator links(gains, params, field, 1);
  for (std::size_t tau = 1; tau <= chain->slot_count(); ++tau) {
    const auto& slot = chain->slot(tau);
    SlotBlock& block = set.slots[tau - 1];
    block.q.assign(slot.successors.size(), 0.0);
    block.r.assign(2 * slot.rows.size(), 0.0);
    links.reset(tau);
    for (std::size_t i = 0; i < slot.rows.size(); ++i) {
      const auto& row = slot.rows[i];
      const double eps_dest = links.outage(row.transmitters, dest);
      // Outcome probabilities over the relay listeners by doubling.
      const std::uint32_t outcomes = 1u << row.receiver_count;
      outcome.assign(outcomes, 0.0);
      outcome[0] = 1.0;
      for (std::uint32_t r = 0; r < row.receiver_count; ++r) {
        const double eps = links.outage(row.transmitters, slot.receivers[row.receiver_offset + r]);
        const std::uint32_t half = 1u << r;
        for (std::uint32_t b = 0; b < half; ++b) {
          outcome[b | half] = outcome[b] * (1.0 - eps);
          outcome[b] *= eps;
        }
      }
      double out_mass = eps_dest * outcome[0];
      double row_sum = out_mass + (1.0 - eps_dest);
      for (std::uint32_t b = 1; b < outcomes; ++b) {
        const double p = eps_dest * outcome[b];
        row_sum += p;
        if (slot.successors[row.outcome_offset + b] == ChainStructure::kCapped) {
          out_mass += p;
        } else {
          block.q[row.outcome_offset + b] = p;
        }
      }
      block.r[2 * i] = out_mass;
      block.r[2 * i + 1] = 1.0 - eps_dest;
      if (std::abs(row_sum - 1.0) > kRowSumTolerance) {
        throw consistency_error("transition row sums to " + std::to_string(row_sum));
      }
    }
  }
}

inline SlotTransitionSet build_transition_set(const ChainPtr& chain, const PathGainTable& gains,
                                              const ChannelParams& params,
                                              const InterferenceField& field = {}) {
  SlotTransitionSet set;
  build_transition_set_into(set, chain, gains, params, field);
  return set;
}

inline void validate_transition_set(const SlotTransitionSet& set) {
  if (!set.chain || set.slots.size() != set.chain->slot_count()) {
    throw invalid_argument_error("transition set does not match its chain");
  }
}

// Frobenius norm of the difference of two transition sets over the same
// chain, taken over all slot blocks jointly.
inline double frobenius_distance(const SlotTransitionSet& a, const SlotTransitionSet& b) {
  if (a.chain != b.chain || a.slots.size() != b.slots.size()) {
    throw invalid_argument_error("transition sets built on different chains");
  }
  double acc = 0.0;
  for (std::size_t t = 0; t < a.slots.size(); ++t) {
    const auto& x = a.slots[t];
    const auto& y = b.slots[t];
    for (std::size_t i = 0; i < x.q.size(); ++i) acc += (x.q[i] - y.q[i]) * (x.q[i] - y.q[i]);
    for (std::size_t i = 0; i < x.r.size(); ++i) acc += (x.r[i] - y.r[i]) * (x.r[i] - y.r[i]);
  }
  return std::sqrt(acc);
}

// p(i, tau): probability that node i transmits the tracked packet in relative
// slot tau (1-based).
class TransmitProfile {
 public:
  TransmitProfile() = default;
  TransmitProfile(std::size_t nodes, std::size_t slots)
      : nodes_(nodes), slots_(slots), p_(nodes * slots, 0.0) {}

  std::size_t nodes() const noexcept { return nodes_; }
  std::size_t slots() const noexcept { return slots_; }

  double operator()(std::size_t node, std::size_t tau) const noexcept {
    if (tau == 0 || tau > slots_) return 0.0;
    return p_[node * slots_ + (tau - 1)];
  }
  double& at(std::size_t node, std::size_t tau) { return p_.at(node * slots_ + (tau - 1)); }

  std::span<const double> values() const noexcept { return p_; }
  std::span<double> values() noexcept { return p_; }

  double max_abs_difference(const TransmitProfile& other) const {
    double m = 0.0;
    for (std::size_t i = 0; i < p_.size() && i < other.p_.size(); ++i) {
      m = std::max(m, std::abs(p_[i] - other.p_[i]));
    }
    return m;
  }

 private:
  std::size_t nodes_ = 0;
  std::size_t slots_ = 0;
  std::vector<double> p_;
};

struct AbsorptionResult {
  // b(s, 0): outage, b(s, 1): success, starting from transient state s at the
  // earliest slot it can be occupied.
  std::vector<std::array<double, 2>> b;
  double epsilon_cbr = 0.0;
  double success_prob = 0.0;
  double expected_slots = 0.0;
  // Mass absorbed during each relative slot (index tau-1).
  std::vector<double> absorbed_outage;
  std::vector<double> absorbed_success;
};

struct ForwardPass {
  AbsorptionResult absorption;
  TransmitProfile profile;
};

// Forward propagation of the state distribution through the slot blocks,
// accumulating absorbed mass and per-node transmit probabilities; then,
// unless disabled, a backward sweep for the per-state absorption table b.
inline ForwardPass propagate(const SlotTransitionSet& set, bool with_state_absorption = true) {
  validate_transition_set(set);
  const ChainStructure& chain = *set.chain;
  const std::size_t n = chain.space().transient_count();
  const std::size_t slots = chain.slot_count();
  ForwardPass out;
  out.profile = TransmitProfile(chain.node_count(), slots);
  AbsorptionResult& res = out.absorption;
  res.absorbed_outage.assign(slots, 0.0);
  res.absorbed_success.assign(slots, 0.0);

  std::vector<double> pi(n, 0.0), pi_next(n, 0.0);
  pi[0] = 1.0;
  for (std::size_t tau = 1; tau <= slots; ++tau) {
    const auto& slot = chain.slot(tau);
    const auto& block = set.slots[tau - 1];
    std::fill(pi_next.begin(), pi_next.end(), 0.0);
    for (std::size_t i = 0; i < slot.rows.size(); ++i) {
      const auto& row = slot.rows[i];
      const double mass = pi[row.state];
      if (mass == 0.0) continue;
      for (std::uint32_t tx = row.transmitters; tx != 0; tx &= tx - 1) {
        out.profile.at(static_cast<std::size_t>(std::countr_zero(tx)), tau) += mass;
      }
      res.absorbed_outage[tau - 1] += mass * block.r[2 * i];
      res.absorbed_success[tau - 1] += mass * block.r[2 * i + 1];
      const std::uint32_t outcomes = 1u << row.receiver_count;
      for (std::uint32_t b = 1; b < outcomes; ++b) {
        const auto succ = slot.successors[row.outcome_offset + b];
        if (succ != ChainStructure::kCapped) pi_next[succ] += mass * block.q[row.outcome_offset + b];
      }
    }
    std::swap(pi, pi_next);
  }
  for (std::size_t t = 0; t < slots; ++t) {
    res.epsilon_cbr += res.absorbed_outage[t];
    res.success_prob += res.absorbed_success[t];
    res.expected_slots += static_cast<double>(t + 1) * (res.absorbed_outage[t] + res.absorbed_success[t]);
  }
  // Residual mass is impossible by construction (the last slot routes every
  // transient successor to outage); anything left is a structural bug.
  double residual = 0.0;
  for (double m : pi) residual += m;
  if (residual > kRowSumTolerance) throw consistency_error("mass left after lifetime cap");
  if (!with_state_absorption) return out;

  std::vector<std::array<double, 2>> value(n, {0.0, 0.0}), value_next(n, {0.0, 0.0});
  res.b.assign(n, {0.0, 0.0});
  for (std::size_t tau = slots; tau >= 1; --tau) {
    const auto& slot = chain.slot(tau);
    const auto& block = set.slots[tau - 1];
    for (std::size_t i = 0; i < slot.rows.size(); ++i) {
      const auto& row = slot.rows[i];
      std::array<double, 2> v{block.r[2 * i], block.r[2 * i + 1]};
      const std::uint32_t outcomes = 1u << row.receiver_count;
      for (std::uint32_t b = 1; b < outcomes; ++b) {
        const auto succ = slot.successors[row.outcome_offset + b];
        if (succ == ChainStructure::kCapped) continue;
        const double q = block.q[row.outcome_offset + b];
        v[0] += q * value_next[succ][0];
        v[1] += q * value_next[succ][1];
      }
      value[row.state] = v;
      res.b[row.state] = v;
    }
    std::swap(value, value_next);
  }
  return out;
}

inline AbsorptionResult absorb(const SlotTransitionSet& set) { return propagate(set).absorption; }

inline TransmitProfile transmit_profile(const SlotTransitionSet& set) { return propagate(set).profile; }

// Slot-independent blocks over the full transient space, for chains with no
// interference. Used to check the forward pass against the fundamental matrix.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> homogeneous_blocks(const StateSpace& space,
                                                                      const PathGainTable& gains,
                                                                      const ChannelParams& params) {
  const std::size_t n = space.transient_count();
  const std::size_t nodes = space.node_count();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (const Successor& s : slot_transition(space.transient[i], 1, nodes, gains, params)) {
      switch (classify(s.state, nodes)) {
        case StateClass::outage: r(i, 0) += s.probability; break;
        case StateClass::success: r(i, 1) += s.probability; break;
        case StateClass::transient: q(i, *space.find(s.state)) += s.probability; break;
      }
    }
  }
  return {q, r};
}

// B = (I - Q)^-1 R.
inline Eigen::MatrixXd fundamental_absorption(const Eigen::MatrixXd& q, const Eigen::MatrixXd& r) {
  const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(q.rows(), q.cols()) - q;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) throw numerical_error("I - Q is singular");
  Eigen::MatrixXd b = lu.solve(r);
  if (!b.allFinite()) throw numerical_error("non-finite absorption probabilities");
  return b;
}

}  // namespace cbr
