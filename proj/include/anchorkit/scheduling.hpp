#pragma once

// Schedule generation and the law-of-large-numbers convergence classifier.
//
// A random block draws its length (gap), then gap-1 per-step drift moduli
// rho, then one event contraction mu; the block's log-factor is
//     Y = sum log rho + log mu.
// By the SLLN, the terminal average m_K = (1/K) sum Y_k estimates E[Y], and
// the scheme contracts almost surely when E[Y] < 0.  mc_sweep estimates that
// mean over independent trials; adversarial_schedule builds the growing-gap
// schedule with rho = 1 + eps and mu = 1 whose cumulative factor
// (1+eps)^{(n_K - n_0) - K} diverges; run_sim is the direct state-space
// simulation behind the staircase plots.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "envelopes.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace anchorkit {

// ---------------------------------------------------------------------------
// Block laws
// ---------------------------------------------------------------------------

struct GapLaw {
  enum class Kind { Fixed, OnePlusGeometric } kind = Kind::Fixed;
  double value = 1.0;  // Fixed: the gap; OnePlusGeometric: the mean gap

  static GapLaw fixed(std::int64_t gap) {
    if (gap < 1) throw std::invalid_argument("GapLaw: fixed gap must be >= 1");
    return {Kind::Fixed, static_cast<double>(gap)};
  }
  // 1 + Geometric(p = 1/mean), counting failures before the first success,
  // so the support is {1, 2, ...} and the mean is exactly `mean`.
  static GapLaw one_plus_geometric(double mean) {
    if (!(mean >= 1.0))
      throw std::invalid_argument("GapLaw: mean gap must be >= 1");
    return {Kind::OnePlusGeometric, mean};
  }

  std::int64_t sample(Philox& rng) const {
    if (kind == Kind::Fixed) return static_cast<std::int64_t>(value);
    return 1 + rng.geometric_failures(1.0 / value);
  }
};

struct RhoLaw {
  enum class Kind { Fixed, Lognormal } kind = Kind::Fixed;
  double a = 1.0, b = 0.0;  // Fixed: a = rho; Lognormal: a = loc, b = scale

  static RhoLaw fixed(double rho) {
    if (!(rho > 0.0)) throw std::invalid_argument("RhoLaw: rho must be positive");
    return {Kind::Fixed, rho, 0.0};
  }
  static RhoLaw lognormal(double loc, double scale) {
    if (!(scale >= 0.0))
      throw std::invalid_argument("RhoLaw: scale must be nonnegative");
    return {Kind::Lognormal, loc, scale};
  }

  double sample(Philox& rng) const {
    if (kind == Kind::Fixed) return a;
    return rng.lognormal(a, b);
  }
};

struct MuLaw {
  enum class Kind { Fixed, TruncatedGaussian } kind = Kind::Fixed;
  double a = 1.0, b = 0.0;  // Fixed: a = mu; Gaussian: a = mean, b = sd

  static MuLaw fixed(double mu) {
    if (!(mu > 0.0)) throw std::invalid_argument("MuLaw: mu must be positive");
    return {Kind::Fixed, mu, 0.0};
  }
  // Gaussian truncated to (0, 1.5] by resampling; out-of-range draws are
  // rejected (never clamped: a clamp at 0 would put log mu at -inf) and the
  // rejection count is reported through sample()'s out-parameter.
  static MuLaw gaussian(double mean, double sd) {
    if (!(sd >= 0.0)) throw std::invalid_argument("MuLaw: sd must be nonnegative");
    if (!(mean > 0.0) || mean > 1.5)
      throw std::invalid_argument("MuLaw: mean must lie in (0, 1.5]");
    return {Kind::TruncatedGaussian, mean, sd};
  }

  double sample(Philox& rng, std::int64_t* resamples = nullptr) const {
    if (kind == Kind::Fixed) return a;
    for (;;) {
      const double mu = a + b * rng.next_gaussian();
      if (mu > 0.0 && mu <= 1.5) return mu;
      if (resamples) ++*resamples;
    }
  }
};

struct BlockLawSpec {
  GapLaw gap_law;
  RhoLaw rho_law;
  MuLaw mu_law;
};

// The built-in demonstration laws: mean gap 5, drift factors lognormal(0, 0.01)
// hovering around 1, event contractions Gaussian(0.8, 0.02) truncated to
// (0, 1.5].  E[Y] is about ln 0.8, squarely in the convergent regime.
inline BlockLawSpec reference_block_laws() {
  return {GapLaw::one_plus_geometric(5.0), RhoLaw::lognormal(0.0, 0.01),
          MuLaw::gaussian(0.80, 0.02)};
}

// ---------------------------------------------------------------------------
// Sampling and classification
// ---------------------------------------------------------------------------

// Y_k for K blocks.  Per block the draw order is fixed: gap first, then the
// gap-1 drift factors, then the single event contraction.
inline std::vector<double> sample_block_log_tau(const BlockLawSpec& law,
                                                std::int64_t K, Philox& rng,
                                                std::int64_t* mu_resamples = nullptr) {
  if (K < 1) throw std::invalid_argument("sample_block_log_tau: K must be >= 1");
  std::vector<double> Y;
  Y.reserve(static_cast<std::size_t>(K));
  for (std::int64_t k = 0; k < K; ++k) {
    const std::int64_t gap = law.gap_law.sample(rng);
    double logs = 0.0;
    for (std::int64_t i = 0; i + 1 < gap; ++i)
      logs += std::log(law.rho_law.sample(rng));
    logs += std::log(law.mu_law.sample(rng, mu_resamples));
    Y.push_back(logs);
  }
  return Y;
}

enum class Verdict { Convergent, Divergent, Indeterminate };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Convergent: return "convergent";
    case Verdict::Divergent: return "divergent";
    case Verdict::Indeterminate: return "indeterminate";
  }
  return "?";
}

struct Classification {
  double m_hat = 0.0;
  Verdict verdict = Verdict::Indeterminate;
};

// Convergent when the average log-factor clears the margin below zero,
// divergent when it clears above; the band [-eps, +eps] stays indeterminate
// so both calls are equally guarded.
inline Classification slln_classify(std::span<const double> Y,
                                    double eps_margin) {
  if (Y.empty()) throw std::invalid_argument("slln_classify: empty sample");
  if (!(eps_margin >= 0.0))
    throw std::invalid_argument("slln_classify: margin must be nonnegative");
  double sum = 0.0;
  for (const double y : Y) sum += y;
  const double m_hat = sum / static_cast<double>(Y.size());
  Verdict v = Verdict::Indeterminate;
  if (m_hat < -eps_margin) v = Verdict::Convergent;
  else if (m_hat > eps_margin) v = Verdict::Divergent;
  return {m_hat, v};
}

// ---------------------------------------------------------------------------
// Monte-Carlo sweep
// ---------------------------------------------------------------------------

struct SweepResult {
  std::vector<double> slopes;  // terminal average m_K per trial
  double mean_slope = 0.0;
  double ci95_halfwidth = 0.0;  // 1.96 * stddev(slopes) / sqrt(trials)
  std::int64_t convergent = 0;
  std::int64_t divergent = 0;
  std::int64_t indeterminate = 0;
  std::int64_t mu_resamples = 0;
  std::uint64_t seed = 0;
  std::int64_t K = 0;
  std::int64_t trials = 0;
};

// Each trial runs on its own counter-based substream (stream id = trial
// index), so results are bit-identical for a given seed regardless of the
// thread count; aggregation walks trials in index order.
inline SweepResult mc_sweep(const BlockLawSpec& law, std::int64_t K,
                            std::int64_t trials, double eps_margin,
                            std::uint64_t seed, int threads = 1) {
  if (K < 1 || trials < 1)
    throw std::invalid_argument("mc_sweep: K and trials must be >= 1");
  if (threads < 1) threads = 1;

  SweepResult out;
  out.seed = seed;
  out.K = K;
  out.trials = trials;
  out.slopes.resize(static_cast<std::size_t>(trials));
  std::vector<std::int64_t> resamples(static_cast<std::size_t>(trials), 0);

  const auto run_range = [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t t = lo; t < hi; ++t) {
      Philox rng(seed, static_cast<std::uint64_t>(t));
      const auto Y = sample_block_log_tau(law, K, rng,
                                          &resamples[static_cast<std::size_t>(t)]);
      double sum = 0.0;
      for (const double y : Y) sum += y;
      out.slopes[static_cast<std::size_t>(t)] = sum / static_cast<double>(K);
    }
  };

  if (threads == 1 || trials == 1) {
    run_range(0, trials);
  } else {
    const int n = static_cast<int>(std::min<std::int64_t>(threads, trials));
    std::vector<std::thread> pool;
    pool.reserve(n);
    const std::int64_t chunk = (trials + n - 1) / n;
    for (int i = 0; i < n; ++i)
      pool.emplace_back(run_range, i * chunk,
                        std::min<std::int64_t>((i + 1) * chunk, trials));
    for (auto& th : pool) th.join();
  }

  double sum = 0.0;
  for (std::int64_t t = 0; t < trials; ++t) {
    const double s = out.slopes[static_cast<std::size_t>(t)];
    sum += s;
    out.mu_resamples += resamples[static_cast<std::size_t>(t)];
    switch (slln_classify(std::span(&s, 1), eps_margin).verdict) {
      case Verdict::Convergent: ++out.convergent; break;
      case Verdict::Divergent: ++out.divergent; break;
      case Verdict::Indeterminate: ++out.indeterminate; break;
    }
  }
  out.mean_slope = sum / static_cast<double>(trials);
  double var = 0.0;
  for (const double s : out.slopes) {
    const double d = s - out.mean_slope;
    var += d * d;
  }
  var /= static_cast<double>(trials);  // population variance
  out.ci95_halfwidth = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(trials));
  return out;
}

// ---------------------------------------------------------------------------
// Adversarial schedule
// ---------------------------------------------------------------------------

// Growing gaps with per-step drift 1 + eps and unit event contractions.
// The cumulative block product is exactly (1+eps)^{(n_K - n_0) - K}: one
// saved factor per event can never offset gaps that keep growing.
// gap_for_block maps 1-based block index to its gap; the default is k + 1.
inline std::pair<EventSchedule, ModuliTrace> adversarial_schedule(
    double epsilon, std::int64_t K,
    const std::function<std::int64_t(std::int64_t)>& gap_for_block = {}) {
  if (!(epsilon > 0.0))
    throw std::invalid_argument("adversarial_schedule: epsilon must be positive");
  if (K < 1) throw std::invalid_argument("adversarial_schedule: K must be >= 1");

  EventSchedule schedule;
  std::int64_t at = 0;
  for (std::int64_t k = 1; k <= K; ++k) {
    const std::int64_t gap = gap_for_block ? gap_for_block(k) : k + 1;
    if (gap < 1)
      throw std::invalid_argument("adversarial_schedule: gaps must be >= 1");
    at += gap;
    schedule.event_times.push_back(at);
  }
  schedule.horizon = at;

  ModuliTrace moduli;
  moduli.per_step.assign(static_cast<std::size_t>(at), 1.0 + epsilon);
  for (const std::int64_t t : schedule.event_times)
    moduli.per_step[static_cast<std::size_t>(t - 1)] = 1.0;
  return {std::move(schedule), std::move(moduli)};
}

// ---------------------------------------------------------------------------
// Direct simulation
// ---------------------------------------------------------------------------

// State-space staircase run: x0 = (10, 0, ..., 0); at t = M, 2M, ... the
// event x <- alpha x fires, every other step drifts x <- (1+eps) x + eta with
// eta ~ N(0, sigma^2 I).  Returns all N+1 norms including ||x_0||.  When
// sigma = 0 the Gaussian draw is skipped entirely, keeping that path
// deterministic and cheap.
inline std::vector<double> run_sim(std::uint64_t seed, std::int64_t N,
                                   std::int64_t M, double eps, double alpha,
                                   Index d, double sigma) {
  if (N < 0) throw std::invalid_argument("run_sim: N must be >= 0");
  if (M < 1) throw std::invalid_argument("run_sim: M must be >= 1");
  if (d < 1) throw std::invalid_argument("run_sim: dimension must be >= 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("run_sim: sigma must be >= 0");

  Philox rng(seed, 0);
  Vector x = Vector::Zero(d);
  x(0) = 10.0;
  std::vector<double> norms;
  norms.reserve(static_cast<std::size_t>(N) + 1);
  norms.push_back(x.norm());
  for (std::int64_t t = 1; t <= N; ++t) {
    if (t % M == 0) {
      x *= alpha;
    } else {
      x *= (1.0 + eps);
      if (sigma > 0.0) x += sigma * rng.gaussian_vector(d);
    }
    norms.push_back(x.norm());
  }
  return norms;
}

}  // namespace anchorkit
