// cbr: command-line front end for link, chain, pipeline, simulation and
// design-space workflows.

#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "cbr/error.hpp"
#include "cbr/io.hpp"
#include "cbr/link_model.hpp"
#include "cbr/markov.hpp"
#include "cbr/montecarlo.hpp"
#include "cbr/optimizer.hpp"
#include "cbr/pipeline.hpp"
#include "cbr/topology.hpp"

namespace {

using cbr::io::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2, kIo = 3 };

enum class Format { text, json, csv };

// A flat list of named values rendered in any of the output formats.
class Record {
 public:
  Record& add(std::string key, json value) {
    fields_.emplace_back(std::move(key), std::move(value));
    return *this;
  }

  void extra(std::string key, json value) { extras_[std::move(key)] = std::move(value); }

  std::string render(Format fmt) const {
    std::ostringstream out;
    out.imbue(std::locale::classic());
    switch (fmt) {
      case Format::json: {
        json doc = extras_.is_null() ? json::object() : extras_;
        for (const auto& [k, v] : fields_) doc[k] = v;
        out << doc.dump(2) << '\n';
        break;
      }
      case Format::csv: {
        for (std::size_t i = 0; i < fields_.size(); ++i) out << (i ? "," : "") << fields_[i].first;
        out << '\n';
        for (std::size_t i = 0; i < fields_.size(); ++i) {
          out << (i ? "," : "") << cell(fields_[i].second, 17);
        }
        out << '\n';
        break;
      }
      case Format::text:
        for (const auto& [k, v] : fields_) out << k << ": " << cell(v, 10) << '\n';
        break;
    }
    return out.str();
  }

 private:
  static std::string cell(const json& v, int digits) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return "";
    if (v.is_number_float()) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.*g", digits, v.get<double>());
      return buf;
    }
    return v.dump();
  }

  std::vector<std::pair<std::string, json>> fields_;
  json extras_;
};

// Options shared by every subcommand.
struct Common {
  std::string config;
  std::string output = "text";
  std::string out_path;
  unsigned threads = 1;

  Format format() const {
    if (output == "json") return Format::json;
    if (output == "csv") return Format::csv;
    return Format::text;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config,
                  "key=value file (same keys as the long flags, '#' comments); flags win")
      ->check(CLI::ExistingFile);
  cmd->add_option("--output", c.output, "Result format")
      ->check(CLI::IsMember({"text", "json", "csv"}))
      ->capture_default_str();
  cmd->add_option("--out", c.out_path, "Write the result here instead of stdout");
  cmd->add_option("--threads", c.threads, "Worker threads, 0 = all cores")->capture_default_str();
}

void emit(const Common& c, const Record& rec) {
  const std::string text = rec.render(c.format());
  if (c.out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f = cbr::io::open_output(c.out_path);
  f << text;
  cbr::io::check_written(f, c.out_path);
}

template <class Fn>
void write_file(const std::string& path, Fn&& fn) {
  if (path.empty()) return;
  std::ofstream f = cbr::io::open_output(path);
  fn(f);
  cbr::io::check_written(f, path);
}

// Rate and threshold are two views of one quantity; at most one is given.
struct Threshold {
  std::optional<double> rate;
  std::optional<double> beta;

  void add(CLI::App* cmd) {
    auto* r = cmd->add_option("--rate", rate, "Code rate R in bits/s/Hz (beta = 2^R - 1)");
    auto* b = cmd->add_option("--beta", beta, "Linear SINR threshold (R = log2(1 + beta))");
    r->excludes(b);
  }
  double resolved_beta() const {
    if (beta) return *beta;
    return cbr::rate_to_threshold(rate.value_or(1.0));
  }
  double resolved_rate() const {
    if (rate) return *rate;
    return std::log2(1.0 + resolved_beta());
  }
};

struct Channel {
  double d_cbr = 1.0;
  double alpha = 3.5;
  double d0 = 1.0;
  double snr_db = 0.0;
  bool clamp = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--d-cbr", d_cbr, "CBR length")->capture_default_str();
    cmd->add_option("--alpha", alpha, "Path-loss exponent (> 2)")->capture_default_str();
    cmd->add_option("--d0", d0, "Path-loss reference distance")->capture_default_str();
    cmd->add_option("--snr-db", snr_db,
                    "Unit-distance SNR in dB; used internally as 10^(dB/10)")
        ->capture_default_str();
    cmd->add_flag("--clamp-near-field", clamp, "Cap the path gain at 1 below d0");
  }
  double gamma() const { return cbr::db_to_linear(snr_db); }
};

struct PipelineFlags {
  double xi = 1e-6;
  int max_frames = 50;
  int max_inner = 1000;
  std::string order = "jacobi";
  bool no_damping = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--xi", xi, "Frobenius tolerance of the fixed point")->capture_default_str();
    cmd->add_option("--max-frames", max_frames, "Frame limit")->capture_default_str();
    cmd->add_option("--max-inner", max_inner, "Sweep limit per frame")->capture_default_str();
    cmd->add_option("--order", order, "Packet update order within a sweep")
        ->check(CLI::IsMember({"jacobi", "oldest-first", "newest-first"}))
        ->capture_default_str();
    cmd->add_flag("--no-damping", no_damping, "Disable adaptive relaxation of profile updates");
  }
  cbr::PipelineOptions options(unsigned threads) const {
    cbr::PipelineOptions o;
    o.xi = xi;
    o.max_frames = max_frames;
    o.max_inner = max_inner;
    o.threads = threads;
    o.adaptive_damping = !no_damping;
    if (order == "oldest-first") o.order = cbr::UpdateOrder::gauss_seidel_oldest_first;
    if (order == "newest-first") o.order = cbr::UpdateOrder::gauss_seidel_newest_first;
    return o;
  }
};

// Gains come in as a comma list; interferers as omega:p pairs.
std::vector<cbr::Interferer> parse_interferers(const std::vector<std::string>& items) {
  std::vector<cbr::Interferer> out;
  for (const std::string& item : items) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw cbr::invalid_argument_error("interferer '" + item + "' is not omega:p");
    }
    try {
      out.push_back({std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1))});
    } catch (const std::logic_error&) {
      throw cbr::invalid_argument_error("interferer '" + item + "' is not omega:p");
    }
  }
  return out;
}

// Config-file entries become --key=value arguments placed right after the
// subcommand, except for keys also given on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.size() < 2) return args;
  std::optional<std::string> path;
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  const auto given = [&](const std::string& key) {
    const std::string flag = "--" + key;
    for (std::size_t i = 2; i < args.size(); ++i) {
      if (args[i] == flag || args[i].rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> out(args.begin(), args.begin() + 2);
  for (const auto& e : cbr::io::read_config_file(*path)) {
    if (e.key == "config") throw cbr::invalid_argument_error("config files cannot include others");
    if (!given(e.key)) out.push_back("--" + e.key + "=" + e.value);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

struct LinkCmd {
  Common common;
  std::vector<double> barrage;
  std::vector<std::string> interferers;
  Threshold threshold;
  double snr_db = 0.0;
  std::uint64_t mc = 0;
  std::uint64_t seed = 1;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("link", "Closed-form outage of one barrage reception");
    add_common(cmd, common);
    cmd->add_option("--barrage", barrage, "Barraging path gains, comma separated")
        ->required()
        ->delimiter(',');
    cmd->add_option("--interferer", interferers, "Interferer omega:p, repeatable or comma separated")
        ->delimiter(',');
    threshold.add(cmd);
    cmd->add_option("--snr-db", snr_db, "Unit-distance SNR in dB; used internally as 10^(dB/10)")
        ->capture_default_str();
    cmd->add_option("--mc", mc, "Monte Carlo trials for a cross-check (0 = none)")->capture_default_str();
    cmd->add_option("--seed", seed, "Monte Carlo seed")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    const cbr::LinkScenario sc{barrage, parse_interferers(interferers)};
    cbr::ChannelParams params;
    params.gamma = cbr::db_to_linear(snr_db);
    params.beta = threshold.resolved_beta();
    const double eps = cbr::closed_form_outage(sc, params);
    Record rec;
    rec.add("epsilon", eps);
    if (mc > 0) {
      const auto est = cbr::monte_carlo_outage(sc, params, mc, seed, common.threads);
      rec.add("mc_estimate", est.estimate)
          .add("mc_std_error", est.std_error)
          .add("mc_trials", est.trials)
          .add("mc_z", est.std_error > 0 ? (eps - est.estimate) / est.std_error : 0.0);
    }
    emit(common, rec);
  }
};

struct AnalyzeCmd {
  Common common;
  Channel channel;
  Threshold threshold;
  PipelineFlags pipe;
  int relays = 2;
  int frame = 1;
  bool steady_only = false;
  std::string trace_path;
  std::string dump_path;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("analyze", "Steady-state CBR outage and transport capacity");
    add_common(cmd, common);
    channel.add(cmd);
    threshold.add(cmd);
    pipe.add(cmd);
    cmd->add_option("--relays", relays, "Relay count N")->capture_default_str();
    cmd->add_option("--frame", frame, "Frame length F in slots")->capture_default_str();
    cmd->add_flag("--steady-only", steady_only, "Skip the packet-by-packet start-up frames");
    cmd->add_option("--trace", trace_path, "Write the convergence trace CSV here");
    cmd->add_option("--dump-chain", dump_path,
                    "Write the interference-free state space and slot blocks as JSON");
    cmd->callback([this] { run(); });
  }

  void run() {
    const cbr::ChannelParams params{channel.alpha, channel.d0, channel.gamma(), threshold.resolved_beta()};
    params.validate();
    const double rate = threshold.resolved_rate();
    const cbr::Topology topo = cbr::build_line_topology(channel.d_cbr, relays);
    cbr::PipelineOptions opt = pipe.options(common.threads);
    opt.record_trace = !trace_path.empty();
    opt.literal_transient = !steady_only;
    const cbr::PipelineResult res = cbr::iterate_fixed_point(topo, params, frame, opt, channel.clamp);

    write_file(trace_path, [&](std::ostream& f) { cbr::io::write_trace_csv(f, res.trace); });
    write_file(dump_path, [&](std::ostream& f) {
      const auto gains = cbr::path_gain_table(topo, {params.alpha, params.d0, channel.clamp});
      const auto set = cbr::build_transition_set(cbr::shared_chain(relays), gains, params);
      f << cbr::io::chain_dump(set).dump() << '\n';
    });

    Record rec;
    rec.add("n_relays", relays)
        .add("frame_len", frame)
        .add("rate", rate)
        .add("beta", params.beta)
        .add("active_packets", cbr::active_packet_count(relays, frame))
        .add("epsilon_cbr", res.steady_epsilon_cbr)
        .add("transport_capacity", cbr::transport_capacity(channel.d_cbr, res.steady_epsilon_cbr, frame, rate))
        .add("expected_slots", res.steady_expected_slots)
        .add("frames_to_converge", res.frames_to_converge);
    rec.extra("pipeline", cbr::io::to_json(res));
    emit(common, rec);
  }
};

struct SimulateCmd {
  Common common;
  Channel channel;
  Threshold threshold;
  int relays = 2;
  int frame = 1;
  int warmup = 20;
  std::uint64_t packets = 10000;
  std::uint64_t seed = 1;
  std::size_t replications = 1;
  bool half_duplex = false;
  bool no_interference = false;
  std::string packet_trace;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("simulate", "Slot-level protocol simulation");
    add_common(cmd, common);
    channel.add(cmd);
    threshold.add(cmd);
    cmd->add_option("--relays", relays, "Relay count N")->capture_default_str();
    cmd->add_option("--frame", frame, "Frame length F in slots")->capture_default_str();
    cmd->add_option("--warmup", warmup, "Frames discarded before measuring")->capture_default_str();
    cmd->add_option("--packets", packets, "Measured packets per replication")->capture_default_str();
    cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
    cmd->add_option("--replications", replications,
                    "Independent replications, run on --threads workers and pooled")
        ->capture_default_str();
    cmd->add_flag("--half-duplex", half_duplex, "A node transmitting any packet cannot receive");
    cmd->add_flag("--no-interference", no_interference, "Ignore transmissions of other packets");
    cmd->add_option("--packet-trace", packet_trace,
                    "Write per-packet CSV (single replication only)");
    cmd->callback([this] { run(); });
  }

  void run() {
    cbr::SimConfig cfg;
    cfg.d_cbr = channel.d_cbr;
    cfg.n_relays = relays;
    cfg.alpha = channel.alpha;
    cfg.d0 = channel.d0;
    cfg.clamp_near_field = channel.clamp;
    cfg.gamma = channel.gamma();
    cfg.beta = threshold.resolved_beta();
    cfg.frame_len = frame;
    cfg.warmup_frames = warmup;
    cfg.measured_packets = packets;
    cfg.seed = seed;
    cfg.half_duplex = half_duplex;
    cfg.interference = !no_interference;
    const double rate = threshold.resolved_rate();

    cbr::SimReport rep;
    if (!packet_trace.empty()) {
      if (replications != 1) throw cbr::invalid_argument_error("--packet-trace needs one replication");
      write_file(packet_trace, [&](std::ostream& f) {
        cbr::io::write_packet_header(f);
        rep = cbr::simulate(cfg, [&](const cbr::PacketRecord& r) { cbr::io::write_packet_row(f, r); });
      });
    } else {
      rep = cbr::simulate_replicated(cfg, replications, common.threads);
    }

    Record rec;
    rec.add("n_relays", relays)
        .add("frame_len", frame)
        .add("rate", rate)
        .add("beta", cfg.beta)
        .add("seed", seed)
        .add("epsilon_cbr_hat", rep.epsilon_cbr_hat)
        .add("std_error", rep.std_error)
        .add("mean_delivery_slots", rep.mean_delivery_slots)
        .add("measured_packets", rep.measured_packets)
        .add("outages", rep.outages)
        .add("transport_capacity", cbr::transport_capacity(cfg.d_cbr, rep.epsilon_cbr_hat, frame, rate));
    const json full = cbr::io::to_json(rep);
    rec.extra("per_link_success_counts", full["per_link_success_counts"]);
    rec.extra("transmit_frequency", full["transmit_frequency"]);
    emit(common, rec);
  }
};

struct OptimizeCmd {
  Common common;
  Channel channel;
  PipelineFlags pipe;
  cbr::SearchBounds bounds;
  std::string log_path;

  void add(CLI::App& app) {
    auto* cmd = app.add_subcommand("optimize", "Search {R, N, F} for maximum transport capacity");
    add_common(cmd, common);
    channel.add(cmd);
    pipe.add(cmd);
    cmd->add_option("--rate-min", bounds.rate_lo, "Lower rate bound")->capture_default_str();
    cmd->add_option("--rate-max", bounds.rate_hi, "Upper rate bound")->capture_default_str();
    cmd->add_option("--relays-min", bounds.n_lo, "Lower relay-count bound")->capture_default_str();
    cmd->add_option("--relays-max", bounds.n_hi, "Upper relay-count bound")->capture_default_str();
    cmd->add_option("--frame-min", bounds.f_lo, "Lower frame-length bound")->capture_default_str();
    cmd->add_option("--frame-max", bounds.f_hi, "Upper frame-length bound")->capture_default_str();
    cmd->add_option("--rate-tol", bounds.rate_tolerance, "Rate bracket tolerance")->capture_default_str();
    cmd->add_option("--max-passes", bounds.max_passes, "Coordinate pass limit")->capture_default_str();
    cmd->add_option("--log", log_path, "Write the evaluation log CSV here");
    cmd->callback([this] { run(); });
  }

  void run() {
    cbr::Scenario sc{channel.d_cbr, channel.gamma(), channel.alpha, channel.d0, channel.clamp};
    cbr::PipelineOptions opt = pipe.options(1);
    opt.literal_transient = false;
    const cbr::OptimizeResult res = cbr::optimize(sc, bounds, opt, common.threads);
    write_file(log_path, [&](std::ostream& f) { cbr::io::write_evaluation_log_csv(f, res.log); });
    Record rec;
    rec.add("rate", res.best.point.rate)
        .add("n_relays", res.best.point.n_relays)
        .add("frame_len", res.best.point.frame_len)
        .add("epsilon_cbr", res.best.epsilon_cbr)
        .add("transport_capacity", res.best.transport_capacity)
        .add("evaluations", res.log.size())
        .add("passes", res.passes);
    emit(common, rec);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Controlled barrage region analysis: link outage, Markov chain, pipelined "
               "interference, protocol simulation and capacity optimization."};
  app.require_subcommand(1);
  LinkCmd link;
  AnalyzeCmd analyze;
  SimulateCmd simulate;
  OptimizeCmd optimize;
  link.add(app);
  analyze.add(app);
  simulate.add(app);
  optimize.add(app);

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config(args);
    std::vector<char*> ptrs;
    for (auto& a : args) ptrs.push_back(a.data());
    app.parse(static_cast<int>(ptrs.size()), ptrs.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  } catch (const cbr::convergence_error& e) {
    std::cerr << "error: " << e.what() << "\nlast residuals:";
    for (double r : e.residuals()) std::cerr << ' ' << r;
    std::cerr << '\n';
    return kNumerical;
  } catch (const cbr::io_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
  return kOk;
}
