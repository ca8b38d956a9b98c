#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "cbr/error.hpp"
#include "cbr/parallel.hpp"
#include "cbr/random.hpp"

namespace cbr {

struct ChannelParams {
  double alpha = 3.5;  // path-loss exponent
  double d0 = 1.0;     // reference distance
  double gamma = 1.0;  // unit-distance SNR, linear
  double beta = 1.0;   // SINR threshold, linear

  void validate() const {
    if (!(alpha > 2.0)) throw invalid_argument_error("alpha must exceed 2");
    if (!(d0 > 0.0)) throw invalid_argument_error("d0 must be positive");
    if (!(gamma > 0.0)) throw invalid_argument_error("gamma must be positive");
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
      throw invalid_argument_error("beta must be finite and non-negative");
    }
  }
};

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

// A node transmitting a different packet, seen at the receiver with path gain
// `omega`, active with probability `prob`.
struct Interferer {
  double omega = 0.0;
  double prob = 0.0;
};

struct LinkScenario {
  std::vector<double> barrage_gains;
  std::vector<Interferer> interferers;
};

inline constexpr double kTieTolerance = 1e-12;
inline constexpr double kTieStep = 1e-9;

// Makes the gains pairwise distinct in place: the m-th repeat of a value
// (m = 0, 1, ...) is scaled by 1 + m*1e-9. Order is preserved.
inline void resolve_gain_ties_in_place(std::vector<double>& gains) {
  const auto tied = [](double a, double b) {
    return std::abs(a - b) <= kTieTolerance * std::max(std::abs(a), std::abs(b));
  };
  // A perturbed value can in principle land on another gain; repeat until
  // clean. One pass suffices in every practical case.
  for (int pass = 0; pass < 8; ++pass) {
    bool any = false;
    for (std::size_t i = 1; i < gains.size() && !any; ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (tied(gains[j], gains[i])) {
          any = true;
          break;
        }
      }
    }
    if (!any) return;
    const std::vector<double> base = gains;
    for (std::size_t i = 0; i < base.size(); ++i) {
      int m = 0;
      for (std::size_t j = 0; j < i; ++j) {
        if (tied(base[j], base[i])) ++m;
      }
      gains[i] = base[i] * (1.0 + m * kTieStep);
    }
  }
}

inline std::vector<double> resolve_gain_ties(std::span<const double> gains) {
  std::vector<double> out(gains.begin(), gains.end());
  resolve_gain_ties_in_place(out);
  return out;
}

namespace detail {

// Neumaier-compensated accumulator in extended precision.
struct CompensatedSum {
  long double sum = 0.0L;
  long double carry = 0.0L;
  void add(long double x) {
    const long double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      carry += (sum - t) + x;
    } else {
      carry += (x - t) + sum;
    }
    sum = t;
  }
  long double value() const { return sum + carry; }
};

// Survival factor of one Bernoulli interferer for branch gain `wk`.
inline long double interference_factor(long double wk, long double beta, const Interferer& in) {
  const long double bw = beta * static_cast<long double>(in.omega);
  return (wk + (1.0L - static_cast<long double>(in.prob)) * bw) / (wk + bw);
}

inline double finish_outage(long double success) {
  const double eps = static_cast<double>(1.0L - success);
  if (!std::isfinite(eps)) {
    throw numerical_error("closed-form outage is not finite");
  }
  // Round-off only; anything larger indicates a real problem.
  if (eps < -1e-6 || eps > 1.0 + 1e-6) {
    throw numerical_error("closed-form outage outside [0,1]: " + std::to_string(eps));
  }
  return std::clamp(eps, 0.0, 1.0);
}

// Peer products above this size lose more than ~1e-9 to cancellation even in
// extended precision; such clusters go through the matrix form instead.
inline constexpr long double kCancellationLimit = 1e10L;

// The success sum is the divided difference of
//   h(w) = w^(K-1) exp(-beta/(w G)) prod_i (w + beta(1-p_i)W_i) / (w + beta W_i)
// over the branch gains, which equals the top-right entry of h(A) for the
// bidiagonal A with the gains on the diagonal and ones above it. This form has
// no cancellation, whatever the spacing of the gains.
inline long double success_by_matrix(std::span<const double> gains, std::span<const Interferer> interferers,
                                     double gamma, double beta) {
  const auto k = static_cast<Eigen::Index>(gains.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    a(i, i) = gains[static_cast<std::size_t>(i)];
    if (i + 1 < k) a(i, i + 1) = 1.0;
  }
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(k, k);
  const Eigen::MatrixXd inv = a.triangularView<Eigen::Upper>().solve(id);
  Eigen::MatrixXd h = (-(beta / gamma) * inv).exp();
  for (Eigen::Index i = 0; i + 1 < k; ++i) h = h * a;
  for (const Interferer& in : interferers) {
    if (in.prob == 0.0) continue;
    const double bw = beta * in.omega;
    const Eigen::MatrixXd den = a + bw * id;
    h = h * (a + (1.0 - in.prob) * bw * id) * den.triangularView<Eigen::Upper>().solve(id);
  }
  return h(0, k - 1);
}

}  // namespace detail

// Outage probability of a diversity-combined barrage in Rayleigh fading with
// Bernoulli interferers and interference fully correlated across branches:
//
//   1 - sum_k exp(-beta/(W_k G)) prod_{s!=k} W_k/(W_k - W_s)
//             prod_i (W_k + beta(1-p_i)W_i) / (W_k + beta W_i)
//
// `gains` must already be pairwise distinct (see resolve_gain_ties). Near-tied
// gains make the partial-fraction terms large and of alternating sign, so the
// terms are formed and summed in extended precision; clusters too tight even
// for that are evaluated in matrix form.
inline double outage_distinct(std::span<const double> gains,
                              std::span<const Interferer> interferers,
                              double gamma, double beta) {
  if (gains.empty()) {
    throw invalid_argument_error("barraging set must be non-empty");
  }
  if (beta == 0.0) return 0.0;
  const long double b = beta;
  detail::CompensatedSum success;
  for (std::size_t k = 0; k < gains.size(); ++k) {
    const long double wk = gains[k];
    long double peers = 1.0L;
    for (std::size_t s = 0; s < gains.size(); ++s) {
      if (s == k) continue;
      peers *= wk / (wk - static_cast<long double>(gains[s]));
    }
    if (std::abs(peers) > detail::kCancellationLimit) {
      return detail::finish_outage(detail::success_by_matrix(gains, interferers, gamma, beta));
    }
    long double term = peers * std::exp(-b / (wk * static_cast<long double>(gamma)));
    // The factors lie in (0, 1], but near-tied gains blow the peer product up
    // to ~1e9, so they need the extended precision as well.
    for (const Interferer& in : interferers) {
      if (in.prob == 0.0) continue;
      term *= detail::interference_factor(wk, b, in);
    }
    success.add(term);
  }
  return detail::finish_outage(success.value());
}

inline void validate_scenario(const LinkScenario& sc) {
  if (sc.barrage_gains.empty()) {
    throw invalid_argument_error("barraging set must be non-empty");
  }
  for (double g : sc.barrage_gains) {
    if (!(g > 0.0) || !std::isfinite(g)) {
      throw invalid_argument_error("barrage gains must be positive and finite");
    }
  }
  for (const Interferer& in : sc.interferers) {
    if (!(in.omega >= 0.0) || !std::isfinite(in.omega)) {
      throw invalid_argument_error("interferer gain must be finite and non-negative");
    }
    if (!(in.prob >= 0.0 && in.prob <= 1.0)) {
      throw invalid_argument_error("interferer probability must lie in [0,1]");
    }
  }
}

inline double closed_form_outage(const LinkScenario& sc,
                                 const ChannelParams& params) {
  validate_scenario(sc);
  if (!(params.gamma > 0.0) || !(params.beta >= 0.0)) {
    throw invalid_argument_error("gamma must be positive and beta non-negative");
  }
  const std::vector<double> gains = resolve_gain_ties(sc.barrage_gains);
  return outage_distinct(gains, sc.interferers, params.gamma, params.beta);
}

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  std::uint64_t trials = 0;
};

inline constexpr std::uint64_t kMcBlockSize = 1u << 16;

// Direct sampling of the SINR: one exponential gain per barraging node and per
// interferer, one Bernoulli activity per interferer, a single interference sum
// shared by all branches. Block b draws from substream (seed, b), so the result
// does not depend on `threads`.
inline McEstimate monte_carlo_outage(const LinkScenario& sc,
                                     const ChannelParams& params,
                                     std::uint64_t trials, std::uint64_t seed,
                                     unsigned threads = 1) {
  validate_scenario(sc);
  if (trials == 0) throw invalid_argument_error("trials must be at least 1");
  const std::size_t blocks = (trials + kMcBlockSize - 1) / kMcBlockSize;
  std::vector<std::uint64_t> outages(blocks, 0);
  const double noise = 1.0 / params.gamma;
  parallel_for(blocks, threads, [&](std::size_t b) {
    Engine eng = make_engine(seed, b);
    const std::uint64_t begin = b * kMcBlockSize;
    const std::uint64_t end = std::min<std::uint64_t>(trials, begin + kMcBlockSize);
    std::uint64_t count = 0;
    for (std::uint64_t t = begin; t < end; ++t) {
      double signal = 0.0;
      for (double g : sc.barrage_gains) signal += draw_fading(eng) * g;
      double interference = 0.0;
      for (const Interferer& in : sc.interferers) {
        const bool active = draw_bernoulli(eng, in.prob);
        const double fade = draw_fading(eng);
        if (active) interference += fade * in.omega;
      }
      if (signal / (noise + interference) <= params.beta) ++count;
    }
    outages[b] = count;
  });
  std::uint64_t total = 0;
  for (auto c : outages) total += c;
  McEstimate est;
  est.trials = trials;
  est.estimate = static_cast<double>(total) / static_cast<double>(trials);
  est.std_error = std::sqrt(est.estimate * (1.0 - est.estimate) /
                            static_cast<double>(trials));
  return est;
}

}  // namespace cbr
