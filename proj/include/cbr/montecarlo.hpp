#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "cbr/error.hpp"
#include "cbr/link_model.hpp"
#include "cbr/markov.hpp"
#include "cbr/parallel.hpp"
#include "cbr/random.hpp"
#include "cbr/topology.hpp"

namespace cbr {

struct SimConfig {
  double d_cbr = 1.0;
  int n_relays = 0;
  double alpha = 3.5;
  double d0 = 1.0;
  bool clamp_near_field = false;
  double gamma = 1.0;
  double beta = 1.0;
  int frame_len = 1;
  int warmup_frames = 20;
  std::uint64_t measured_packets = 10000;
  std::uint64_t seed = 1;
  // Substream of `seed`; replications of one seed use distinct streams.
  std::uint64_t stream = 0;
  // A node transmitting any packet in a slot cannot receive in that slot.
  bool half_duplex = false;
  // When false, transmissions of other packets are ignored entirely.
  bool interference = true;

  void validate() const {
    if (!(d_cbr > 0.0)) throw invalid_argument_error("d_cbr must be positive");
    if (n_relays < 0 || static_cast<std::size_t>(n_relays) + 2 > kMaxNodes) {
      throw invalid_argument_error("relay count out of range");
    }
    if (!(alpha > 2.0)) throw invalid_argument_error("alpha must exceed 2");
    if (!(d0 > 0.0)) throw invalid_argument_error("d0 must be positive");
    if (!(gamma > 0.0)) throw invalid_argument_error("gamma must be positive");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw invalid_argument_error("beta must be finite and non-negative");
    if (frame_len < 1) throw invalid_argument_error("frame length must be at least 1");
    if (warmup_frames < 0) throw invalid_argument_error("warmup frames must be non-negative");
    if (measured_packets < 1) throw invalid_argument_error("measured packets must be at least 1");
  }
};

struct PacketRecord {
  std::uint64_t id = 0;
  std::uint64_t injection_slot = 0;            // absolute, 0-based
  std::optional<std::uint64_t> delivery_slot;  // absolute; empty on outage
  std::uint64_t relative_slots = 0;            // slots played before absorption
};

struct SimReport {
  double epsilon_cbr_hat = 0.0;
  double std_error = 0.0;
  double mean_delivery_slots = 0.0;  // relative slots, delivered packets only
  std::uint64_t measured_packets = 0;
  std::uint64_t outages = 0;
  // links(tx, rx): decodes at rx in which tx was part of the barrage.
  std::vector<std::vector<std::uint64_t>> per_link_success_counts;
  // Empirical transmit profile of measured packets: fraction of them that
  // node i transmitted in relative slot tau (index tau-1).
  std::vector<std::vector<double>> transmit_frequency;
};

// Slot-level flooding of a stream of packets through one CBR. A packet enters
// at the source in the first slot of every frame; in each slot the nodes that
// decoded it in the previous slot rebroadcast it, every node still missing it
// listens, and nodes transmitting other packets interfere with fresh fading.
// A packet ends when the destination decodes it, when nobody decoded it in the
// last slot, or after N+1 slots.
class ProtocolSimulator {
 public:
  explicit ProtocolSimulator(const SimConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    topo_ = build_line_topology(cfg_.d_cbr, cfg_.n_relays);
    gains_ = path_gain_table(topo_, PathLossOptions{cfg_.alpha, cfg_.d0, cfg_.clamp_near_field});
  }

  SimReport run(const std::function<void(const PacketRecord&)>& on_packet = {}) {
    const std::size_t nodes = topo_.node_count();
    const std::uint32_t dest_bit = node_bit(nodes - 1);
    const std::uint64_t lifetime = static_cast<std::uint64_t>(cfg_.n_relays) + 1;
    const std::uint64_t first_measured = static_cast<std::uint64_t>(cfg_.warmup_frames);
    const std::uint64_t end_measured = first_measured + cfg_.measured_packets;
    const double noise = 1.0 / cfg_.gamma;

    Engine eng = make_engine(cfg_.seed, cfg_.stream);
    SimReport report;
    report.per_link_success_counts.assign(nodes, std::vector<std::uint64_t>(nodes, 0));
    std::vector<std::vector<std::uint64_t>> tx_counts(nodes, std::vector<std::uint64_t>(lifetime, 0));

    struct Live {
      std::uint64_t id;
      std::uint64_t injected;
      std::uint64_t age;  // relative slot about to be played, 1-based
      CbrState state;
    };
    std::vector<Live> live;
    std::vector<std::uint32_t> decoded;
    std::uint64_t finished_measured = 0;
    double delivery_sum = 0.0;
    std::uint64_t delivered = 0;

    for (std::uint64_t slot = 0; finished_measured < cfg_.measured_packets; ++slot) {
      if (slot % static_cast<std::uint64_t>(cfg_.frame_len) == 0) {
        const std::uint64_t id = slot / static_cast<std::uint64_t>(cfg_.frame_len);
        if (id < end_measured) live.push_back({id, slot, 1, initial_state()});
      }
      std::uint32_t any_tx = 0;
      for (const Live& p : live) {
        any_tx |= p.state.just_decoded;
        if (p.id < first_measured) continue;
        for (std::uint32_t i = 0; i < nodes; ++i) {
          if ((p.state.just_decoded >> i) & 1u) ++tx_counts[i][p.age - 1];
        }
      }

      decoded.assign(live.size(), 0);
      for (std::size_t n = 0; n < live.size(); ++n) {
        const CbrState& s = live[n].state;
        const std::uint32_t tx = s.just_decoded;
        for (std::uint32_t j = 0; j < nodes; ++j) {
          if (((s.just_decoded | s.done) >> j) & 1u) continue;
          if (cfg_.half_duplex && ((any_tx >> j) & 1u)) continue;
          double signal = 0.0;
          for (std::uint32_t k = 0; k < nodes; ++k) {
            if ((tx >> k) & 1u) signal += draw_fading(eng) * gains_(k, j);
          }
          double interference = 0.0;
          if (cfg_.interference) {
            for (std::size_t z = 0; z < live.size(); ++z) {
              if (z == n) continue;
              const std::uint32_t other = live[z].state.just_decoded;
              for (std::uint32_t i = 0; i < nodes; ++i) {
                if (!((other >> i) & 1u) || i == j || ((tx >> i) & 1u)) continue;
                interference += draw_fading(eng) * gains_(i, j);
              }
            }
          }
          if (signal / (noise + interference) > cfg_.beta) {
            decoded[n] |= node_bit(j);
            for (std::uint32_t k = 0; k < nodes; ++k) {
              if ((tx >> k) & 1u) ++report.per_link_success_counts[k][j];
            }
          }
        }
      }

      std::size_t keep = 0;
      for (std::size_t n = 0; n < live.size(); ++n) {
        Live p = live[n];
        p.state.done |= p.state.just_decoded;
        p.state.just_decoded = decoded[n];
        const bool success = (p.state.just_decoded & dest_bit) != 0;
        const bool over = !success && (p.state.just_decoded == 0 || p.age == lifetime);
        if (success || over) {
          PacketRecord rec{p.id, p.injected, std::nullopt, p.age};
          if (success) rec.delivery_slot = slot;
          if (p.id >= first_measured) {
            ++finished_measured;
            if (success) {
              ++delivered;
              delivery_sum += static_cast<double>(p.age);
            } else {
              ++report.outages;
            }
            if (on_packet) on_packet(rec);
          }
          continue;
        }
        ++p.age;
        live[keep++] = p;
      }
      live.resize(keep);
    }

    report.measured_packets = cfg_.measured_packets;
    report.epsilon_cbr_hat = static_cast<double>(report.outages) / static_cast<double>(cfg_.measured_packets);
    report.std_error = std::sqrt(report.epsilon_cbr_hat * (1.0 - report.epsilon_cbr_hat) /
                                 static_cast<double>(cfg_.measured_packets));
    report.transmit_frequency.assign(nodes, std::vector<double>(lifetime, 0.0));
    for (std::size_t i = 0; i < nodes; ++i) {
      for (std::size_t t = 0; t < lifetime; ++t) {
        report.transmit_frequency[i][t] =
            static_cast<double>(tx_counts[i][t]) / static_cast<double>(cfg_.measured_packets);
      }
    }
    report.mean_delivery_slots = delivered ? delivery_sum / static_cast<double>(delivered) : 0.0;
    return report;
  }

 private:
  SimConfig cfg_;
  Topology topo_;
  PathGainTable gains_;
};

inline SimReport simulate(const SimConfig& cfg,
                          const std::function<void(const PacketRecord&)>& on_packet = {}) {
  return ProtocolSimulator(cfg).run(on_packet);
}

// Pools independent replications as if their packets came from one run.
inline SimReport merge_reports(std::span<const SimReport> parts) {
  if (parts.empty()) throw invalid_argument_error("nothing to merge");
  SimReport out;
  out.per_link_success_counts = parts.front().per_link_success_counts;
  out.transmit_frequency = parts.front().transmit_frequency;
  for (auto& row : out.per_link_success_counts) std::fill(row.begin(), row.end(), 0);
  for (auto& row : out.transmit_frequency) std::fill(row.begin(), row.end(), 0.0);
  double delivery_sum = 0.0;
  for (const SimReport& r : parts) {
    if (r.per_link_success_counts.size() != out.per_link_success_counts.size()) {
      throw invalid_argument_error("reports of different networks cannot be merged");
    }
    out.measured_packets += r.measured_packets;
    out.outages += r.outages;
    delivery_sum += r.mean_delivery_slots * static_cast<double>(r.measured_packets - r.outages);
    for (std::size_t i = 0; i < r.per_link_success_counts.size(); ++i) {
      for (std::size_t j = 0; j < r.per_link_success_counts[i].size(); ++j) {
        out.per_link_success_counts[i][j] += r.per_link_success_counts[i][j];
      }
      for (std::size_t t = 0; t < r.transmit_frequency[i].size(); ++t) {
        out.transmit_frequency[i][t] += r.transmit_frequency[i][t] * static_cast<double>(r.measured_packets);
      }
    }
  }
  const double n = static_cast<double>(out.measured_packets);
  for (auto& row : out.transmit_frequency) {
    for (double& v : row) v /= n;
  }
  const std::uint64_t delivered = out.measured_packets - out.outages;
  out.mean_delivery_slots = delivered ? delivery_sum / static_cast<double>(delivered) : 0.0;
  out.epsilon_cbr_hat = static_cast<double>(out.outages) / n;
  out.std_error = std::sqrt(out.epsilon_cbr_hat * (1.0 - out.epsilon_cbr_hat) / n);
  return out;
}

// Runs `replications` copies of `cfg` on streams 0..replications-1 of its
// seed, concurrently, and merges them. Each copy measures
// cfg.measured_packets packets.
inline SimReport simulate_replicated(const SimConfig& cfg, std::size_t replications,
                                     unsigned threads = 0) {
  if (replications < 1) throw invalid_argument_error("replications must be at least 1");
  std::vector<SimReport> parts(replications);
  parallel_for(replications, threads, [&](std::size_t r) {
    SimConfig c = cfg;
    c.stream = cfg.stream + r;
    parts[r] = simulate(c);
  });
  return merge_reports(parts);
}

}  // namespace cbr
