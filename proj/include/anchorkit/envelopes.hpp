#pragma once

// Contraction envelopes over event-partitioned iterations.
//
// A run of length N carries one Lipschitz modulus per step, tau_1..tau_N.
// Events at times n_1 < ... < n_K partition the steps into blocks
// (n_{k-1}, n_k] with n_0 := 0; the block factor is
//     lambda_k = prod_{t in (n_{k-1}, n_k]} tau_t,
// and distances to an anchored fixed point obey
//     d(n_k) <= (prod_{j <= k} lambda_j) * d(0).
// Products switch to log-space accumulation when any factor drops below
// 1e-300 or a block is longer than 10^4 steps.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <span>
#include <stdexcept>
#include <vector>

namespace anchorkit {

// Per-step Lipschitz moduli; per_step[t - 1] is the modulus of step t.
struct ModuliTrace {
  std::vector<double> per_step;
};

struct EventSchedule {
  std::vector<std::int64_t> event_times;  // strictly increasing, in [1, horizon]
  std::int64_t horizon = 0;
};

struct BlockFactors {
  std::vector<double> lambdas;         // one factor per block
  std::vector<double> cumulative;      // running products of lambdas
  std::vector<double> log_lambdas;     // exact log-space companions
  std::vector<double> log_cumulative;
};

inline void validate(const EventSchedule& s) {
  if (s.horizon < 0) throw std::invalid_argument("EventSchedule: negative horizon");
  std::int64_t prev = 0;
  for (const std::int64_t t : s.event_times) {
    if (t <= prev)
      throw std::invalid_argument("EventSchedule: event times must increase strictly");
    if (t > s.horizon)
      throw std::invalid_argument("EventSchedule: event time beyond horizon");
    prev = t;
  }
}

// Product of nonnegative factors; falls back to exp(sum log) for tiny factors
// or very long blocks.
inline double stable_product(std::span<const double> factors) {
  bool log_space = factors.size() > 10000;
  for (const double f : factors) {
    if (!(f >= 0.0)) throw std::invalid_argument("stable_product: negative factor");
    if (f == 0.0) return 0.0;
    if (f < 1e-300) log_space = true;
  }
  if (log_space) {
    double s = 0.0;
    for (const double f : factors) s += std::log(f);
    return std::exp(s);
  }
  double p = 1.0;
  for (const double f : factors) p *= f;
  return p;
}

inline BlockFactors block_products(const ModuliTrace& moduli,
                                   const EventSchedule& schedule) {
  validate(schedule);
  if (static_cast<std::int64_t>(moduli.per_step.size()) != schedule.horizon)
    throw std::invalid_argument("block_products: trace length must equal horizon");
  for (const double t : moduli.per_step)
    if (!(t >= 0.0))
      throw std::invalid_argument("block_products: moduli must be nonnegative");

  BlockFactors out;
  std::int64_t start = 0;  // n_0 := 0
  double cum = 1.0, log_cum = 0.0;
  for (const std::int64_t n_k : schedule.event_times) {
    const std::span<const double> block(moduli.per_step.data() + start,
                                        static_cast<std::size_t>(n_k - start));
    const double lam = stable_product(block);
    double log_lam = 0.0;
    for (const double f : block) log_lam += std::log(f);
    cum *= lam;
    log_cum += log_lam;
    out.lambdas.push_back(lam);
    out.cumulative.push_back(cum);
    out.log_lambdas.push_back(log_lam);
    out.log_cumulative.push_back(log_cum);
    start = n_k;
  }
  return out;
}

// Distance bounds at event times: cumulative_k * d0.
inline std::vector<double> envelope_variable(const BlockFactors& factors,
                                             double d0) {
  if (!(d0 >= 0.0))
    throw std::invalid_argument("envelope_variable: d0 must be nonnegative");
  std::vector<double> bounds;
  bounds.reserve(factors.cumulative.size());
  for (const double c : factors.cumulative) bounds.push_back(c * d0);
  return bounds;
}

// Uniform-gap bound tau_bar^(1 + floor((n - n1)/M)) * d for n >= n1, where
// events recur at most every M steps and d is the distance at the first event.
inline double envelope_uniform_gap(double tau_bar, std::int64_t M,
                                   std::int64_t n, std::int64_t n1, double d) {
  if (!(tau_bar > 0.0))
    throw std::invalid_argument("envelope_uniform_gap: tau_bar must be positive");
  if (M < 1) throw std::invalid_argument("envelope_uniform_gap: M must be >= 1");
  if (n < n1) throw std::invalid_argument("envelope_uniform_gap: requires n >= n1");
  if (!(d >= 0.0))
    throw std::invalid_argument("envelope_uniform_gap: d must be nonnegative");
  const std::int64_t k = 1 + (n - n1) / M;
  return std::pow(tau_bar, static_cast<double>(k)) * d;
}

// Modulus of the Krasnoselskii-Mann step (1 - alpha) I + alpha T when T is
// q-Lipschitz: (1 - alpha) + alpha q.
inline double km_modulus(double alpha, double q) {
  if (!(alpha > 0.0) || alpha > 1.0)
    throw std::invalid_argument("km_modulus: alpha must lie in (0, 1]");
  if (!(q >= 0.0)) throw std::invalid_argument("km_modulus: q must be nonnegative");
  return (1.0 - alpha) + alpha * q;
}

// Block factor from drift moduli (one per intra-block step) and event-step
// moduli.  Intra-event moduli above 1 are legal but worth flagging: the
// envelope still holds, it just stops contracting.
inline double drift_block_lambda(std::span<const double> rhos,
                                 std::span<const double> mus) {
  for (const double r : rhos)
    if (!(r > 0.0))
      throw std::invalid_argument("drift_block_lambda: moduli must be positive");
  for (const double m : mus) {
    if (!(m > 0.0))
      throw std::invalid_argument("drift_block_lambda: moduli must be positive");
    if (m > 1.0)
      std::cerr << "drift_block_lambda: warning: event modulus " << m
                << " exceeds 1\n";
  }
  return stable_product(rhos) * stable_product(mus);
}

// Per-step partial-product bounds d0 * prod_{s <= t} tau_s for t = 0..N;
// the loose all-steps companion of envelope_variable.
inline std::vector<double> partial_product_bounds(const ModuliTrace& moduli,
                                                  double d0) {
  if (!(d0 >= 0.0))
    throw std::invalid_argument("partial_product_bounds: d0 must be nonnegative");
  std::vector<double> bounds;
  bounds.reserve(moduli.per_step.size() + 1);
  bounds.push_back(d0);
  double cum = 1.0;
  for (const double t : moduli.per_step) {
    if (!(t >= 0.0))
      throw std::invalid_argument("partial_product_bounds: negative modulus");
    cum *= t;
    bounds.push_back(cum * d0);
  }
  return bounds;
}

}  // namespace anchorkit
