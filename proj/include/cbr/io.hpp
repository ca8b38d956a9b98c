#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <initializer_list>
#include <ios>
#include <limits>
#include <locale>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbr/error.hpp"
#include "cbr/link_model.hpp"
#include "cbr/markov.hpp"
#include "cbr/montecarlo.hpp"
#include "cbr/optimizer.hpp"
#include "cbr/pipeline.hpp"

namespace cbr::io {

using json = nlohmann::json;

// JSON has no infinity or NaN; those become null.
inline json number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline json to_json(const TransmitProfile& p) {
  json rows = json::array();
  for (std::size_t i = 0; i < p.nodes(); ++i) {
    json row = json::array();
    for (std::size_t tau = 1; tau <= p.slots(); ++tau) row.push_back(p(i, tau));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline json to_json(const McEstimate& e) {
  return {{"estimate", e.estimate}, {"std_error", e.std_error}, {"trials", e.trials}};
}

inline json to_json(const AbsorptionResult& a) {
  return {{"epsilon_cbr", a.epsilon_cbr},
          {"success_prob", a.success_prob},
          {"expected_slots", a.expected_slots},
          {"absorbed_outage", a.absorbed_outage},
          {"absorbed_success", a.absorbed_success}};
}

inline json to_json(const PipelineResult& r) {
  json residuals = json::array();
  for (double v : r.frame_residuals) residuals.push_back(number(v));
  return {{"steady_epsilon_cbr", r.steady_epsilon_cbr},
          {"steady_expected_slots", r.steady_expected_slots},
          {"frames_to_converge", r.frames_to_converge},
          {"per_frame_epsilon", r.per_frame_epsilon},
          {"frame_residuals", residuals},
          {"shift_deviation", r.shift_deviation},
          {"steady_profile", to_json(r.steady_profile)}};
}

inline json to_json(const DesignPoint& p) {
  return {{"rate", p.rate}, {"n_relays", p.n_relays}, {"frame_len", p.frame_len}};
}

inline json to_json(const CapacityResult& c) {
  return {{"rate", c.point.rate},
          {"n_relays", c.point.n_relays},
          {"frame_len", c.point.frame_len},
          {"epsilon_cbr", c.epsilon_cbr},
          {"transport_capacity", c.transport_capacity}};
}

inline json to_json(const OptimizeResult& r) {
  return {{"best", to_json(r.best)}, {"evaluations", r.log.size()}, {"passes", r.passes}};
}

inline json to_json(const SimReport& r) {
  return {{"epsilon_cbr_hat", r.epsilon_cbr_hat},
          {"std_error", r.std_error},
          {"mean_delivery_slots", r.mean_delivery_slots},
          {"measured_packets", r.measured_packets},
          {"outages", r.outages},
          {"per_link_success_counts", r.per_link_success_counts},
          {"transmit_frequency", r.transmit_frequency}};
}

inline json to_json(const StateSpace& s) {
  json states = json::array();
  for (const CbrState& st : s.transient) states.push_back(to_string(st, s.node_count()));
  return {{"n_relays", s.n_relays},
          {"transient_states", states},
          {"outage_class_count", s.outage_class_count},
          {"success_class_count", s.success_class_count}};
}

// Dense dumps grow with the square of the state count; they are meant for
// small chains.
inline constexpr std::size_t kMaxDumpStates = 2048;

inline json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

// State space plus every slot's Q and R block, row-major.
inline json chain_dump(const SlotTransitionSet& set) {
  validate_transition_set(set);
  const StateSpace& space = set.chain->space();
  if (space.transient_count() > kMaxDumpStates) {
    throw invalid_argument_error("chain too large to dump (" +
                                 std::to_string(space.transient_count()) + " states)");
  }
  json doc = to_json(space);
  json slots = json::array();
  for (std::size_t tau = 1; tau <= set.slot_count(); ++tau) {
    const auto [q, r] = set.dense(tau);
    slots.push_back({{"tau", tau}, {"Q", matrix_json(q)}, {"R", matrix_json(r)}});
  }
  doc["slots"] = std::move(slots);
  return doc;
}

// CSV cells use the classic locale and round-trip precision.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {
    out_.imbue(std::locale::classic());
    out_.precision(std::numeric_limits<double>::max_digits10);
  }

  void header(std::initializer_list<const char*> names) {
    bool first = true;
    for (const char* n : names) {
      if (!first) out_ << ',';
      out_ << n;
      first = false;
    }
    out_ << '\n';
  }

  template <class... Cells>
  void row(const Cells&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ","), out_ << cells, first = false), ...);
    out_ << '\n';
  }

 private:
  std::ostream& out_;
};

inline void write_trace_csv(std::ostream& out, std::span<const TraceRow> trace) {
  CsvWriter csv(out);
  csv.header({"frame", "inner_iter", "packet", "frobenius_residual", "epsilon_cbr"});
  for (const TraceRow& t : trace) {
    csv.row(t.frame, t.inner_iter, t.packet, t.frobenius_residual, t.epsilon_cbr);
  }
}

inline void write_evaluation_log_csv(std::ostream& out, std::span<const CapacityResult> log) {
  CsvWriter csv(out);
  csv.header({"R", "N", "F", "epsilon_cbr", "capacity"});
  for (const CapacityResult& c : log) {
    csv.row(c.point.rate, c.point.n_relays, c.point.frame_len, c.epsilon_cbr, c.transport_capacity);
  }
}

inline void write_packet_header(std::ostream& out) {
  CsvWriter(out).header({"packet_id", "injection_slot", "delivery_slot"});
}

inline void write_packet_row(std::ostream& out, const PacketRecord& rec) {
  out << rec.id << ',' << rec.injection_slot << ',';
  if (rec.delivery_slot) {
    out << *rec.delivery_slot;
  } else {
    out << "OUTAGE";
  }
  out << '\n';
}

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

// key=value lines; '#' starts a comment, blank lines are skipped, whitespace
// around keys and values is trimmed.
inline std::vector<ConfigEntry> parse_config(std::istream& in) {
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::vector<ConfigEntry> out;
  std::string line;
  for (int no = 1; std::getline(in, line); ++no) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw invalid_argument_error("config line " + std::to_string(no) + ": expected key=value");
    }
    ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), no};
    if (e.key.empty()) {
      throw invalid_argument_error("config line " + std::to_string(no) + ": empty key");
    }
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<ConfigEntry> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot open config file '" + path + "'");
  return parse_config(f);
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream f(path, std::ios::out | std::ios::trunc | std::ios::binary);
  if (!f) throw io_error("cannot open '" + path + "' for writing");
  return f;
}

inline void check_written(std::ostream& f, const std::string& path) {
  f.flush();
  if (!f) throw io_error("write to '" + path + "' failed");
}

}  // namespace cbr::io
