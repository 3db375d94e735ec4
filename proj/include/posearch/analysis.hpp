#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "posearch/rng.hpp"
#include "posearch/types.hpp"

namespace posearch::analysis {

struct AnalysisParams {
  double lambda = 1.0;    // per-node block creation rate (1 / block time)
  double delay = 0.0;     // message delay d, in block times
  uint32_t miniblocks = 1;  // N
  uint64_t samples = 100000;
  // Figure convention: each of the N miniblocks is created at rate N, so
  // lambda follows N.
  bool lambdaEqualsN = false;

  double effective_lambda() const {
    return lambdaEqualsN ? double(miniblocks) : lambda;
  }
};

// Probability that a fork of length N follows a block: with two nodes a
// constant delay apart, each slot forks when the second node lands exactly
// one creation inside the delay window while the first lands none, and the
// whole block forks when that repeats for all N miniblocks:
//   p_N = { e^(-lambda d) * (e^(-lambda d) * lambda d) }^N
inline double fork_prob_analytic(const AnalysisParams& p) {
  double lambda = p.effective_lambda();
  double ld = lambda * p.delay;
  double perSlot = std::exp(-ld) * (std::exp(-ld) * ld);
  return std::pow(perSlot, double(p.miniblocks));
}

// Probability that a block is added within time t (in block times): N or
// more miniblock creations from a pooled process of rate N,
//   b(t) = 1 - e^(-Nt) * sum_{i<N} (Nt)^i / i!
// Evaluated as the complementary tail sum_{i>=N} with terms accumulated in
// increasing i under compensated summation: stable for small t (no
// cancellation against 1) and for large N (leading term computed in log
// space).
inline double blocktime_cdf(uint32_t miniblocks, double t) {
  if (t <= 0) return 0;
  double nt = double(miniblocks) * t;
  double sum = 0.0, comp = 0.0;
  auto add = [&](double term) {
    double y = term - comp;
    double s = sum + y;
    comp = (s - sum) - y;
    sum = s;
  };
  if (double(miniblocks) >= nt) {
    // Left of the Poisson mode: the tail sum starts at its largest term and
    // decreases, so no cancellation for small t.
    double term = std::exp(-nt + double(miniblocks) * std::log(nt) -
                           std::lgamma(miniblocks + 1.0));
    for (uint64_t i = miniblocks;; ++i) {
      add(term);
      term *= nt / double(i + 1);
      if (term < sum * 1e-18 + 1e-300) break;
    }
    return std::min(1.0, sum);
  }
  // Right of the mode: the head sum is small and its terms increase toward
  // i = N-1, so 1 - head is accurate there.
  double term = std::exp(-nt);
  for (uint32_t i = 0; i < miniblocks; ++i) {
    add(term);
    term *= nt / double(i + 1);
  }
  return std::max(0.0, 1.0 - sum);
}

struct Moments {
  double mean = 0;
  double variance = 0;
};

// Block time in units of the target: mean 1, variance 1/N.
inline Moments blocktime_moments(uint32_t miniblocks) {
  return {1.0, 1.0 / double(miniblocks)};
}

// Monte Carlo block times drawn from the same model (N slot completions at
// pooled rate N); companion to the closed form.
inline Moments blocktime_moments_montecarlo(uint32_t miniblocks, uint64_t samples,
                                            uint64_t seed) {
  Rng rng = Rng(seed).fork(0x626c6bu);
  double sum = 0, sq = 0;
  for (uint64_t i = 0; i < samples; ++i) {
    double t = 0;
    for (uint32_t k = 0; k < miniblocks; ++k)
      t += rng.exponential(double(miniblocks));
    sum += t;
    sq += t * t;
  }
  double mean = sum / double(samples);
  return {mean, sq / double(samples) - mean * mean};
}

// Share of a miniblock's wins per node: spent computation over the total.
inline std::map<NodeId, double> winning_probability(
    const std::map<NodeId, uint64_t>& powerSpent) {
  double total = 0;
  for (const auto& [node, steps] : powerSpent) total += double(steps);
  std::map<NodeId, double> out;
  for (const auto& [node, steps] : powerSpent) out[node] = double(steps) / total;
  return out;
}

struct MonteCarloEstimate {
  double estimate = 0;
  double stderrEstimate = 0;
  uint64_t samples = 0;
};

// Two-node statistical experiment mirroring the analytic event algebra: for
// each of N consecutive slots, draw both nodes' Poisson arrivals in the
// delay window from exponential gaps; the slot forks when the second node
// lands exactly one arrival and the first lands none. A block-level fork
// needs all N slots to fork.
inline MonteCarloEstimate fork_prob_montecarlo(const AnalysisParams& p, uint64_t seed) {
  Rng rng = Rng(seed).fork(0x666f726bu);
  double lambda = p.effective_lambda();
  uint64_t forks = 0;
  for (uint64_t s = 0; s < p.samples; ++s) {
    bool fork = true;
    for (uint32_t slot = 0; slot < p.miniblocks && fork; ++slot) {
      // Node A: zero arrivals within d.
      double a1 = rng.exponential(lambda);
      bool aNone = a1 > p.delay;
      // Node B: exactly one arrival within d.
      double b1 = rng.exponential(lambda);
      bool bOne = false;
      if (b1 <= p.delay) {
        double b2 = b1 + rng.exponential(lambda);
        bOne = b2 > p.delay;
      }
      fork = aNone && bOne;
    }
    if (fork) ++forks;
  }
  MonteCarloEstimate est;
  est.samples = p.samples;
  est.estimate = double(forks) / double(p.samples);
  est.stderrEstimate =
      std::sqrt(est.estimate * (1 - est.estimate) / double(p.samples));
  return est;
}

// Empirical distribution function distance against the closed form,
// evaluated at the sample points.
inline double blocktime_ks_distance(std::vector<double> times, uint32_t miniblocks) {
  std::sort(times.begin(), times.end());
  double n = double(times.size());
  double worst = 0;
  for (size_t i = 0; i < times.size(); ++i) {
    double cdf = blocktime_cdf(miniblocks, times[i]);
    double lo = double(i) / n;
    double hi = double(i + 1) / n;
    worst = std::max(worst, std::max(std::abs(cdf - lo), std::abs(hi - cdf)));
  }
  return worst;
}

// One (x, analytic, montecarlo, stderr) row of a sweep series.
struct SeriesPoint {
  double x = 0;
  double analytic = 0;
  double montecarlo = 0;
  double stderrEstimate = 0;
  bool hasMonteCarlo = false;
};

// Fork probability versus delay for one N, optionally with Monte Carlo.
inline std::vector<SeriesPoint> fork_series(uint32_t miniblocks, double dFrom,
                                            double dTo, double dStep,
                                            uint64_t samples, uint64_t seed,
                                            bool lambdaEqualsN = true) {
  std::vector<SeriesPoint> out;
  int steps = int(std::floor((dTo - dFrom) / dStep + 1e-9));
  for (int i = 0; i <= steps; ++i) {
    AnalysisParams p;
    p.delay = dFrom + dStep * i;
    p.miniblocks = miniblocks;
    p.lambdaEqualsN = lambdaEqualsN;
    p.samples = samples;
    SeriesPoint pt;
    pt.x = p.delay;
    pt.analytic = fork_prob_analytic(p);
    if (samples > 0) {
      MonteCarloEstimate mc = fork_prob_montecarlo(p, mix64(seed ^ (uint64_t(i) << 8) ^
                                                            miniblocks));
      pt.montecarlo = mc.estimate;
      pt.stderrEstimate = mc.stderrEstimate;
      pt.hasMonteCarlo = true;
    }
    out.push_back(pt);
  }
  return out;
}

// Block-time CDF curve for one N, with empirical values from sampled block
// times when samples > 0.
inline std::vector<SeriesPoint> blocktime_series(uint32_t miniblocks, double tFrom,
                                                 double tTo, double tStep,
                                                 uint64_t samples, uint64_t seed) {
  std::vector<double> draws;
  if (samples > 0) {
    Rng rng = Rng(seed).fork(0x62747363u);
    draws.reserve(samples);
    for (uint64_t i = 0; i < samples; ++i) {
      double t = 0;
      for (uint32_t k = 0; k < miniblocks; ++k)
        t += rng.exponential(double(miniblocks));
      draws.push_back(t);
    }
    std::sort(draws.begin(), draws.end());
  }
  std::vector<SeriesPoint> out;
  int steps = int(std::floor((tTo - tFrom) / tStep + 1e-9));
  for (int i = 0; i <= steps; ++i) {
    SeriesPoint pt;
    pt.x = tFrom + tStep * i;
    pt.analytic = blocktime_cdf(miniblocks, pt.x);
    if (!draws.empty()) {
      auto it = std::upper_bound(draws.begin(), draws.end(), pt.x);
      pt.montecarlo = double(it - draws.begin()) / double(draws.size());
      pt.stderrEstimate =
          std::sqrt(pt.analytic * (1 - pt.analytic) / double(draws.size()));
      pt.hasMonteCarlo = true;
    }
    out.push_back(pt);
  }
  return out;
}

}  // namespace posearch::analysis
