#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cbr/markov.hpp"
#include "cbr/montecarlo.hpp"
#include "cbr/pipeline.hpp"

using namespace cbr;
using Catch::Approx;

namespace {

SimConfig config(int n, int f, double snr_db, double beta, std::uint64_t packets, std::uint64_t seed = 1) {
  SimConfig c;
  c.n_relays = n;
  c.frame_len = f;
  c.gamma = db_to_linear(snr_db);
  c.beta = beta;
  c.measured_packets = packets;
  c.seed = seed;
  return c;
}

double single_packet_epsilon(const SimConfig& c) {
  const ChannelParams p{c.alpha, c.d0, c.gamma, c.beta};
  const auto g = path_gain_table(build_line_topology(c.d_cbr, c.n_relays), {c.alpha, c.d0, c.clamp_near_field});
  return absorb(build_transition_set(shared_chain(c.n_relays), g, p)).epsilon_cbr;
}

// Error of a sample mean compared against a model value; the model's own
// binomial error is the floor when the sample saw no variation.
double sigma(double model, const SimReport& r) {
  return std::max(r.std_error, std::sqrt(model * (1.0 - model) / static_cast<double>(r.measured_packets)));
}

}  // namespace

TEST_CASE("zero threshold: no outage, one-slot delivery") {
  const SimReport r = simulate(config(4, 1, 0.0, 0.0, 2000));
  CHECK(r.epsilon_cbr_hat == 0.0);
  CHECK(r.outages == 0);
  CHECK(r.std_error == 0.0);
  CHECK(r.mean_delivery_slots == 1.0);
  CHECK(r.mean_delivery_slots <= 5.0);
}

TEST_CASE("simulation is deterministic given the seed") {
  const SimConfig c = config(3, 2, 5.0, 3.0, 5000, 42);
  const SimReport a = simulate(c);
  const SimReport b = simulate(c);
  CHECK(a.epsilon_cbr_hat == b.epsilon_cbr_hat);
  CHECK(a.outages == b.outages);
  CHECK(a.mean_delivery_slots == b.mean_delivery_slots);
  CHECK(a.per_link_success_counts == b.per_link_success_counts);
  CHECK(a.transmit_frequency == b.transmit_frequency);
}

TEST_CASE("different seeds agree statistically") {
  const SimReport a = simulate(config(3, 1, 5.0, 3.0, 50000, 1));
  const SimReport b = simulate(config(3, 1, 5.0, 3.0, 50000, 2));
  CHECK(a.epsilon_cbr_hat != b.epsilon_cbr_hat);
  CHECK(std::abs(a.epsilon_cbr_hat - b.epsilon_cbr_hat) <=
        4.0 * std::hypot(a.std_error, b.std_error));
}

TEST_CASE("standard error is the binomial one") {
  const SimReport r = simulate(config(2, 1, 0.0, 3.0, 20000));
  const double e = r.epsilon_cbr_hat;
  CHECK(r.std_error == Approx(std::sqrt(e * (1 - e) / 20000.0)).epsilon(1e-14));
  CHECK(r.outages == static_cast<std::uint64_t>(std::llround(e * 20000.0)));
}

TEST_CASE("single-packet regime matches the Markov chain") {
  for (const auto& [n, f] : std::vector<std::pair<int, int>>{{1, 2}, {2, 3}, {3, 4}}) {
    const SimConfig c = config(n, f, 0.0, 1.0, 100000, 7);
    const SimReport r = simulate(c);
    const double model = single_packet_epsilon(c);
    CHECK(std::abs(r.epsilon_cbr_hat - model) <= 3.0 * sigma(model, r));
  }
}

TEST_CASE("switching interference off recovers the single-packet result") {
  SimConfig c = config(3, 1, 0.0, 1.0, 100000, 3);
  c.interference = false;
  const SimReport r = simulate(c);
  const double model = single_packet_epsilon(c);
  CHECK(std::abs(r.epsilon_cbr_hat - model) <= 3.0 * sigma(model, r));

  c.interference = true;
  const SimReport with = simulate(c);
  CHECK(with.epsilon_cbr_hat > r.epsilon_cbr_hat);
}

TEST_CASE("warm-up length does not bias the estimate") {
  SimConfig c = config(4, 1, 10.0, 7.0, 50000, 11);
  c.warmup_frames = 20;
  const SimReport a = simulate(c);
  c.warmup_frames = 40;
  const SimReport b = simulate(c);
  CHECK(std::abs(a.epsilon_cbr_hat - b.epsilon_cbr_hat) <= 2.0 * std::hypot(a.std_error, b.std_error));
}

TEST_CASE("pipelined simulation is near the fixed-point analysis") {
  // The analysis treats interferers as independent Bernoulli sources, so only
  // rough agreement is expected.
  const SimConfig c = config(3, 1, 10.0, 3.0, 50000, 5);
  const SimReport r = simulate(c);
  const ChannelParams p{c.alpha, c.d0, c.gamma, c.beta};
  const double model = iterate_fixed_point(build_line_topology(1.0, 3), p, 1).steady_epsilon_cbr;
  CHECK(std::abs(r.epsilon_cbr_hat - model) < 0.25 * model + 0.01);
}

TEST_CASE("per-packet records") {
  std::vector<PacketRecord> recs;
  SimConfig c = config(3, 2, 0.0, 2.0, 3000, 9);
  c.warmup_frames = 5;
  const SimReport r = simulate(c, [&](const PacketRecord& p) { recs.push_back(p); });
  REQUIRE(recs.size() == 3000);
  std::uint64_t outages = 0;
  for (const auto& p : recs) {
    CHECK(p.id >= 5);
    CHECK(p.injection_slot == p.id * 2);
    CHECK(p.relative_slots >= 1);
    CHECK(p.relative_slots <= 4);
    if (p.delivery_slot) {
      CHECK(*p.delivery_slot == p.injection_slot + p.relative_slots - 1);
    } else {
      ++outages;
    }
  }
  CHECK(outages == r.outages);
}

TEST_CASE("transmit frequencies match the Markov transmit profile when packets are alone") {
  const SimConfig c = config(2, 3, 5.0, 1.0, 100000, 13);
  const SimReport r = simulate(c);
  const ChannelParams p{c.alpha, c.d0, c.gamma, c.beta};
  const auto g = path_gain_table(build_line_topology(1.0, 2), {c.alpha, c.d0, false});
  const TransmitProfile tp = transmit_profile(build_transition_set(shared_chain(2), g, p));
  for (std::size_t i = 0; i < tp.nodes(); ++i) {
    for (std::size_t tau = 1; tau <= tp.slots(); ++tau) {
      const double m = tp(i, tau);
      const double se = std::sqrt(std::max(m * (1 - m), 1e-12) / 1e5);
      CHECK(std::abs(r.transmit_frequency[i][tau - 1] - m) <= 4.0 * se + 1e-12);
    }
  }
  CHECK(r.transmit_frequency[0][0] == 1.0);
}

TEST_CASE("replications pool like one long run and ignore the worker count") {
  const SimConfig c = config(3, 1, 5.0, 2.0, 4000, 21);
  const SimReport one = simulate_replicated(c, 3, 1);
  const SimReport many = simulate_replicated(c, 3, 3);
  CHECK(one.outages == many.outages);
  CHECK(one.mean_delivery_slots == many.mean_delivery_slots);
  CHECK(one.measured_packets == 12000);

  std::vector<SimReport> parts;
  for (std::uint64_t s = 0; s < 3; ++s) {
    SimConfig x = c;
    x.stream = s;
    parts.push_back(simulate(x));
  }
  const SimReport merged = merge_reports(parts);
  CHECK(merged.outages == one.outages);
  CHECK(merged.outages == parts[0].outages + parts[1].outages + parts[2].outages);
  CHECK(merged.per_link_success_counts == one.per_link_success_counts);
}

TEST_CASE("half duplex matters only when packets overlap") {
  // Without overlap no node is ever busy with another packet.
  SimConfig c = config(3, 4, 10.0, 3.0, 20000, 4);
  const SimReport full = simulate(c);
  c.half_duplex = true;
  const SimReport half = simulate(c);
  CHECK(half.outages == full.outages);
  CHECK(half.per_link_success_counts == full.per_link_success_counts);

  // With overlap the outcome changes; its sign is not fixed, since a node that
  // misses a packet also stops relaying it and so interferes less.
  c = config(4, 1, 10.0, 3.0, 20000, 4);
  const SimReport full1 = simulate(c);
  c.half_duplex = true;
  const SimReport half1 = simulate(c);
  CHECK(half1.per_link_success_counts != full1.per_link_success_counts);
}

TEST_CASE("configuration validation") {
  SimConfig c = config(2, 1, 0.0, 1.0, 10);
  c.measured_packets = 0;
  CHECK_THROWS_AS(simulate(c), invalid_argument_error);
  c = config(2, 0, 0.0, 1.0, 10);
  CHECK_THROWS_AS(simulate(c), invalid_argument_error);
  c = config(2, 1, 0.0, 1.0, 10);
  c.warmup_frames = -1;
  CHECK_THROWS_AS(simulate(c), invalid_argument_error);
  c = config(-1, 1, 0.0, 1.0, 10);
  CHECK_THROWS_AS(simulate(c), invalid_argument_error);
  CHECK_THROWS_AS(merge_reports(std::vector<SimReport>{}), invalid_argument_error);
}
