#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "cbr/interference.hpp"
#include "cbr/link_model.hpp"
#include "cbr/markov.hpp"
#include "cbr/topology.hpp"

using namespace cbr;
using Catch::Approx;

namespace {

ChannelParams channel(double gamma, double beta) {
  ChannelParams p;
  p.gamma = gamma;
  p.beta = beta;
  return p;
}

PathGainTable line_gains(int n, double d = 1.0) {
  return path_gain_table(build_line_topology(d, n), {3.5, 1.0, false});
}

// Reachable transient vectors computed on strings, independently of the
// bitmask implementation.
std::set<std::string> brute_force_transient(int n) {
  const std::size_t len = static_cast<std::size_t>(n) + 2;
  std::string init(len, '0');
  init[0] = '1';
  std::set<std::string> seen{init};
  std::deque<std::string> queue{init};
  while (!queue.empty()) {
    const std::string s = queue.front();
    queue.pop_front();
    std::vector<std::size_t> listeners;
    std::string base = s;
    for (std::size_t i = 0; i < len; ++i) {
      if (s[i] == '1') base[i] = '2';
      if (s[i] == '0') listeners.push_back(i);
    }
    for (unsigned b = 0; b < (1u << listeners.size()); ++b) {
      std::string t = base;
      for (std::size_t r = 0; r < listeners.size(); ++r) {
        if ((b >> r) & 1u) t[listeners[r]] = '1';
      }
      const bool success = t.back() == '1';
      const bool outage = t.find('1') == std::string::npos;
      if (!success && !outage && seen.insert(t).second) queue.push_back(t);
    }
  }
  return seen;
}

// Random interferer lists for every (slot, receiver), including entries for
// nodes that will sometimes be in the barraging set.
InterferenceField random_field(std::size_t slots, std::size_t nodes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> prob(0.0, 1.0), gain(0.05, 50.0);
  std::uniform_int_distribution<std::uint32_t> node(0, static_cast<std::uint32_t>(nodes - 1));
  InterferenceField f(slots, nodes);
  for (std::size_t tau = 1; tau <= slots; ++tau) {
    for (std::size_t rx = 0; rx < nodes; ++rx) {
      for (int e = 0; e < 4; ++e) {
        const std::uint32_t i = node(rng);
        if (i == rx) continue;
        f.add(tau, rx, {i, gain(rng), prob(rng)});
      }
    }
  }
  return f;
}

double max_row_deviation(const SlotTransitionSet& set) {
  double worst = 0.0;
  for (std::size_t tau = 1; tau <= set.slot_count(); ++tau) {
    const auto& slot = set.chain->slot(tau);
    const auto& block = set.slots[tau - 1];
    for (std::size_t i = 0; i < slot.rows.size(); ++i) {
      const auto& row = slot.rows[i];
      double sum = block.r[2 * i] + block.r[2 * i + 1];
      for (std::uint32_t b = 1; b < (1u << row.receiver_count); ++b) {
        const double q = block.q[row.outcome_offset + b];
        CHECK(q >= 0.0);
        CHECK(q <= 1.0);
        sum += q;
      }
      CHECK(block.r[2 * i] >= 0.0);
      CHECK(block.r[2 * i + 1] >= 0.0);
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("state strings and classification") {
  const CbrState s = parse_state("0110");
  CHECK(to_string(s, 4) == "0110");
  CHECK(s.at(0) == NodeState::not_decoded);
  CHECK(s.at(1) == NodeState::just_decoded);
  CHECK(classify(s, 4) == StateClass::transient);
  CHECK(classify(parse_state("2221"), 4) == StateClass::success);
  CHECK(classify(parse_state("2220"), 4) == StateClass::outage);
  CHECK(classify(parse_state("2022"), 4) == StateClass::outage);
  CHECK(to_string(initial_state(), 3) == "100");
  CHECK_THROWS_AS(parse_state("0130"), invalid_argument_error);
  CHECK_THROWS_AS(parse_state(""), invalid_argument_error);
}

TEST_CASE("state space of the two-relay chain") {
  const StateSpace s = enumerate_states(2);
  CHECK(s.transient_count() == 6);
  CHECK(s.outage_class_count == 4);
  CHECK(s.success_class_count == 9);
  CHECK(to_string(s.transient[0], 4) == "1000");
  CHECK(s.outage_index() == 6);
  CHECK(s.success_index() == 7);
}

TEST_CASE("state space of the relay-free chain") {
  const StateSpace s = enumerate_states(0);
  REQUIRE(s.transient_count() == 1);
  CHECK(to_string(s.transient[0], 2) == "10");
  CHECK(s.outage_class_count == 1);
  CHECK(s.success_class_count == 1);
}

TEST_CASE("state space matches brute-force reachability") {
  for (int n = 0; n <= 3; ++n) {
    const StateSpace s = enumerate_states(n);
    const auto want = brute_force_transient(n);
    std::set<std::string> got;
    for (const auto& st : s.transient) got.insert(to_string(st, s.node_count()));
    CHECK(got == want);
    CHECK(got.size() == s.transient_count());
    CHECK(static_cast<double>(s.transient_count()) <= std::pow(3.0, n + 2));
  }
  for (int n = 4; n <= 8; ++n) {
    CHECK(static_cast<double>(enumerate_states(n).transient_count()) <= std::pow(3.0, n + 2));
  }
}

TEST_CASE("state enumeration errors") {
  CHECK_THROWS_AS(enumerate_states(-1), invalid_argument_error);
  CHECK_THROWS_AS(enumerate_states(6, 10), capacity_error);
  CHECK_THROWS_AS(enumerate_states(40), capacity_error);
}

TEST_CASE("slot transition of the quoted two-relay example") {
  const PathGainTable g = line_gains(2);
  const ChannelParams p = channel(10.0, 1.0);
  const auto succ = slot_transition(parse_state("0110"), 2, 4, g, p);
  REQUIRE(succ.size() == 4);  // source and destination listen
  double total = 0.0;
  for (const auto& s : succ) total += s.probability;
  CHECK(total == Approx(1.0).epsilon(1e-14));

  const double eps_d = closed_form_outage({{g(1, 3), g(2, 3)}, {}}, p);
  const double eps_s = closed_form_outage({{g(1, 0), g(2, 0)}, {}}, p);
  // The source listens here; the destination decoding while the source fails
  // leaves the source at 0.
  const auto it = std::find_if(succ.begin(), succ.end(),
                               [](const Successor& s) { return to_string(s.state, 4) == "0221"; });
  REQUIRE(it != succ.end());
  CHECK(it->probability == Approx((1.0 - eps_d) * eps_s).epsilon(1e-13));
}

TEST_CASE("slot transition extremes") {
  const PathGainTable g = line_gains(3);
  SECTION("no outage: everybody decodes") {
    const auto succ = slot_transition(parse_state("21000"), 2, 5, g, channel(1.0, 0.0));
    int certain = 0;
    for (const auto& s : succ) {
      if (s.probability == 1.0) {
        ++certain;
        CHECK(to_string(s.state, 5) == "22111");
      } else {
        CHECK(s.probability == 0.0);
      }
    }
    CHECK(certain == 1);
  }
  SECTION("certain outage: nobody decodes") {
    const auto succ = slot_transition(parse_state("21000"), 2, 5, g, channel(1e-6, 1e6));
    for (const auto& s : succ) {
      if (to_string(s.state, 5) == "22000") {
        CHECK(s.probability == 1.0);
      } else {
        CHECK(s.probability == 0.0);
      }
    }
  }
  SECTION("a state without transmitters is rejected") {
    CHECK_THROWS_AS(slot_transition(parse_state("22000"), 2, 5, g, channel(1.0, 1.0)),
                    invalid_argument_error);
  }
}

TEST_CASE("single-hop chain") {
  const PathGainTable g = line_gains(0);
  const ChannelParams p = channel(2.0, 1.5);
  const auto set = build_transition_set(make_chain(0), g, p);
  const auto [q, r] = set.dense(1);
  REQUIRE(q.rows() == 1);
  CHECK(q(0, 0) == 0.0);
  const double eps = closed_form_outage({{1.0}, {}}, p);
  CHECK(r(0, 0) == Approx(eps).epsilon(1e-15));
  CHECK(r(0, 1) == Approx(1.0 - eps).epsilon(1e-15));
  const AbsorptionResult a = absorb(set);
  CHECK(a.epsilon_cbr == Approx(eps).epsilon(1e-15));
  CHECK(a.expected_slots == Approx(1.0));
}

TEST_CASE("homogeneous single hop with outage 0.3") {
  const PathGainTable g = line_gains(0);
  const ChannelParams p = channel(1.0, -std::log(0.7));
  const AbsorptionResult a = absorb(build_transition_set(make_chain(0), g, p));
  CHECK(a.epsilon_cbr == Approx(0.3).epsilon(1e-12));
  CHECK(a.success_prob == Approx(0.7).epsilon(1e-12));
}

TEST_CASE("transition blocks are row-stochastic") {
  std::mt19937_64 rng(17);
  for (int n = 0; n <= 5; ++n) {
    const auto chain = make_chain(n);
    const PathGainTable g = line_gains(n, 0.5 + 0.25 * n);
    for (double beta : {0.3, 3.0, 30.0}) {
      const ChannelParams p = channel(db_to_linear(5.0), beta);
      CHECK(max_row_deviation(build_transition_set(chain, g, p)) < 1e-12);
      const InterferenceField f = random_field(chain->slot_count(), chain->node_count(), rng);
      CHECK(max_row_deviation(build_transition_set(chain, g, p, f)) < 1e-12);
    }
  }
}

TEST_CASE("forward propagation equals the fundamental matrix on homogeneous chains") {
  for (int n = 0; n <= 4; ++n) {
    const StateSpace space = enumerate_states(n);
    const auto chain = make_chain(n);
    for (double snr_db : {0.0, 10.0}) {
      for (double beta : {1.0, 3.0}) {
        const PathGainTable g = line_gains(n);
        const ChannelParams p = channel(db_to_linear(snr_db), beta);
        const auto [q, r] = homogeneous_blocks(space, g, p);
        const Eigen::MatrixXd b = fundamental_absorption(q, r);
        const AbsorptionResult fwd = absorb(build_transition_set(chain, g, p));
        CHECK(std::abs(fwd.epsilon_cbr - b(0, 0)) < 1e-9);
        CHECK(std::abs(fwd.success_prob - b(0, 1)) < 1e-9);
        for (std::size_t s = 0; s < space.transient_count(); ++s) {
          CHECK(std::abs(fwd.b[s][0] - b(static_cast<Eigen::Index>(s), 0)) < 1e-9);
          CHECK(std::abs(fwd.b[s][1] - b(static_cast<Eigen::Index>(s), 1)) < 1e-9);
          CHECK(std::abs(fwd.b[s][0] + fwd.b[s][1] - 1.0) < 1e-9);
        }
        CHECK(std::abs(fwd.epsilon_cbr + fwd.success_prob - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("fundamental matrix rejects a singular system") {
  Eigen::MatrixXd q = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(2, 2);
  CHECK_THROWS_AS(fundamental_absorption(q, r), numerical_error);
}

TEST_CASE("transmit profile") {
  SECTION("source transmits only in the first slot; the destination never") {
    for (int n = 0; n <= 4; ++n) {
      const TransmitProfile tp =
          transmit_profile(build_transition_set(make_chain(n), line_gains(n), channel(3.0, 2.0)));
      CHECK(tp(0, 1) == 1.0);
      for (std::size_t tau = 2; tau <= tp.slots(); ++tau) CHECK(tp(0, tau) == 0.0);
      for (std::size_t tau = 1; tau <= tp.slots(); ++tau) CHECK(tp(tp.nodes() - 1, tau) == 0.0);
      CHECK(tp(1, tp.slots() + 1) == 0.0);
    }
  }
  SECTION("relays that surely decode in slot 1 transmit in slot 2") {
    // The destination is out of the source's reach; both relays are in it.
    PathGainTable g(4);
    const auto set_pair = [&](std::size_t a, std::size_t b, double v) {
      g.at(a, b) = v;
      g.at(b, a) = v;
    };
    set_pair(0, 1, 1e9);
    set_pair(0, 2, 1e9);
    set_pair(0, 3, 1e-12);
    set_pair(1, 2, 1e9);
    set_pair(1, 3, 1e9);
    set_pair(2, 3, 1e9);
    const TransmitProfile tp = transmit_profile(build_transition_set(make_chain(2), g, channel(1.0, 1.0)));
    CHECK(tp(1, 2) == Approx(1.0).margin(1e-6));
    CHECK(tp(2, 2) == Approx(1.0).margin(1e-6));
    CHECK(tp(1, 3) == Approx(0.0).margin(1e-6));
  }
  SECTION("each node transmits at most once in expectation") {
    std::mt19937_64 rng(4);
    for (int n = 1; n <= 5; ++n) {
      const auto chain = make_chain(n);
      const InterferenceField f = random_field(chain->slot_count(), chain->node_count(), rng);
      const auto set = build_transition_set(chain, line_gains(n), channel(2.0, 1.0), f);
      const TransmitProfile tp = transmit_profile(set);
      for (std::size_t i = 0; i < tp.nodes(); ++i) {
        double total = 0.0;
        for (std::size_t tau = 1; tau <= tp.slots(); ++tau) {
          CHECK(tp(i, tau) >= 0.0);
          CHECK(tp(i, tau) <= 1.0 + 1e-12);
          total += tp(i, tau);
        }
        CHECK(total <= 1.0 + 1e-12);
      }
    }
  }
}

TEST_CASE("success probability grows with the SNR") {
  for (int n = 1; n <= 4; ++n) {
    const auto chain = make_chain(n);
    double prev = -1.0;
    for (double snr_db = -10.0; snr_db <= 30.0; snr_db += 2.5) {
      const double s = absorb(build_transition_set(chain, line_gains(n), channel(db_to_linear(snr_db), 4.0)))
                           .success_prob;
      CHECK(s >= prev - 1e-12);
      prev = s;
    }
  }
}

TEST_CASE("tabulated link outages match the closed form with barraging nodes removed") {
  std::mt19937_64 rng(99);
  for (int n = 1; n <= 4; ++n) {
    const auto chain = make_chain(n);
    const PathGainTable g = line_gains(n);
    const ChannelParams p = channel(db_to_linear(10.0), 5.0);
    const InterferenceField f = random_field(chain->slot_count(), chain->node_count(), rng);
    const auto set = build_transition_set(chain, g, p, f);
    const std::size_t dest = chain->node_count() - 1;
    for (std::size_t tau = 1; tau <= chain->slot_count(); ++tau) {
      const auto& slot = chain->slot(tau);
      for (std::size_t i = 0; i < slot.rows.size(); ++i) {
        const std::uint32_t tx = slot.rows[i].transmitters;
        LinkScenario sc;
        for (std::size_t k = 0; k < chain->node_count(); ++k) {
          if ((tx >> k) & 1u) sc.barrage_gains.push_back(g(k, dest));
        }
        for (const auto& e : f.at(tau, dest)) {
          if (!((tx >> e.node) & 1u)) sc.interferers.push_back({e.omega, e.prob});
        }
        const double eps = closed_form_outage(sc, p);
        CHECK(std::abs(set.slots[tau - 1].r[2 * i + 1] - (1.0 - eps)) < 1e-9);
      }
    }
  }
}

TEST_CASE("Frobenius distance") {
  const auto chain = make_chain(3);
  const auto a = build_transition_set(chain, line_gains(3), channel(2.0, 1.0));
  const auto b = build_transition_set(chain, line_gains(3), channel(2.0, 1.1));
  CHECK(frobenius_distance(a, a) == 0.0);
  CHECK(frobenius_distance(a, b) > 0.0);
  CHECK(frobenius_distance(a, b) == frobenius_distance(b, a));
  const auto other = build_transition_set(make_chain(2), line_gains(2), channel(2.0, 1.0));
  CHECK_THROWS_AS(frobenius_distance(a, other), invalid_argument_error);
}

TEST_CASE("shared chains are cached") {
  CHECK(shared_chain(3) == shared_chain(3));
  CHECK(shared_chain(3)->slot_count() == 4);
}
