#pragma once

// Drift steps punctuated by anchored projection events.
//
// Between events the state evolves by per-step drift operators S_t; at event
// time n_k a block of intra-step maps fires and the state is then projected
// onto that event's affine anchor.  The event consumes its own time index, so
// a block spanning (n_{k-1}, n_k] contains n_k - n_{k-1} - 1 drift steps plus
// the event step.  When every operator fixes a common point z that lies in
// every anchor, distances to z obey the block-product envelope from
// envelopes.hpp.

#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "envelopes.hpp"
#include "operators.hpp"
#include "types.hpp"

namespace anchorkit {

struct EventBlock {
  std::vector<OperatorSpec> intra_maps;  // applied in order before the projection
  AffineSet anchor;
};

struct RunConfig {
  std::vector<OperatorSpec> drifts;  // drifts[t-1] fires at non-event step t
  EventSchedule schedule;
  std::vector<EventBlock> blocks;  // one per event time
  Vector x0;
  Vector z;  // common fixed point; verified below
  bool record_local_moduli = true;
  double fix_tol = 1e-8;
};

struct RunTrace {
  std::vector<Vector> states;        // x_0..x_N
  std::vector<double> distances;     // ||x_t - z||
  std::vector<char> event_marks;     // 1 at event times
  std::vector<double> local_moduli;  // d_t / d_{t-1} for t = 1..N; 0 if d_{t-1} = 0
};

inline void validate(const RunConfig& cfg) {
  validate(cfg.schedule);
  const Index d = cfg.x0.size();
  if (cfg.z.size() != d)
    throw std::invalid_argument("RunConfig: x0 and z dimensions differ");
  if (!cfg.x0.allFinite() || !cfg.z.allFinite())
    throw std::invalid_argument("RunConfig: non-finite x0 or z");
  if (static_cast<std::int64_t>(cfg.drifts.size()) != cfg.schedule.horizon)
    throw std::invalid_argument("RunConfig: need one drift per step");
  if (cfg.blocks.size() != cfg.schedule.event_times.size())
    throw std::invalid_argument("RunConfig: need one block per event");

  for (std::size_t i = 0; i < cfg.drifts.size(); ++i) {
    if ((apply(cfg.drifts[i], cfg.z) - cfg.z).norm() >
        cfg.fix_tol * (1.0 + cfg.z.norm()))
      throw std::invalid_argument("RunConfig: drift " + std::to_string(i) +
                                  " does not fix z");
  }
  for (std::size_t k = 0; k < cfg.blocks.size(); ++k) {
    const auto& block = cfg.blocks[k];
    if (block.anchor.ambient_dim() != d)
      throw std::invalid_argument("RunConfig: anchor dimension mismatch in block " +
                                  std::to_string(k));
    if (!block.anchor.contains(cfg.z, cfg.fix_tol))
      throw std::invalid_argument("RunConfig: z is outside anchor of block " +
                                  std::to_string(k));
    for (std::size_t j = 0; j < block.intra_maps.size(); ++j) {
      const auto& m = block.intra_maps[j];
      if ((apply(m, cfg.z) - cfg.z).norm() > cfg.fix_tol * (1.0 + cfg.z.norm()))
        throw std::invalid_argument("RunConfig: intra map " + std::to_string(j) +
                                    " of block " + std::to_string(k) +
                                    " does not fix z");
      const auto bound = modulus_bound(m);
      if (bound && *bound > 1.0 + 1e-9)
        std::cerr << "RunConfig: warning: intra map " << j << " of block " << k
                  << " has modulus bound " << *bound << " > 1\n";
    }
  }
}

inline RunTrace run(const RunConfig& cfg) {
  validate(cfg);
  const std::int64_t N = cfg.schedule.horizon;
  RunTrace trace;
  trace.states.reserve(N + 1);
  trace.distances.reserve(N + 1);
  trace.event_marks.assign(N + 1, 0);

  Vector x = cfg.x0;
  trace.states.push_back(x);
  trace.distances.push_back((x - cfg.z).norm());

  std::size_t next_event = 0;
  for (std::int64_t t = 1; t <= N; ++t) {
    const bool is_event = next_event < cfg.schedule.event_times.size() &&
                          cfg.schedule.event_times[next_event] == t;
    if (is_event) {
      const auto& block = cfg.blocks[next_event];
      for (const auto& m : block.intra_maps) x = apply(m, x);
      x = block.anchor.project(x);
      trace.event_marks[t] = 1;
      ++next_event;
    } else {
      x = apply(cfg.drifts[t - 1], x);
    }
    trace.states.push_back(x);
    trace.distances.push_back((x - cfg.z).norm());
    if (cfg.record_local_moduli) {
      const double prev = trace.distances[t - 1];
      trace.local_moduli.push_back(prev > 0.0 ? trace.distances[t] / prev : 0.0);
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Envelope verification
// ---------------------------------------------------------------------------

enum class VerifyAt { EventTimes, AllSteps };

struct EnvelopeCheck {
  std::vector<std::int64_t> violating_steps;
  std::vector<double> excess;  // distance - bound at each violation
  bool ok = true;
};

// Compares recorded distances against bounds. With VerifyAt::EventTimes the
// bounds align with the trace's event times (one per event, in order); with
// VerifyAt::AllSteps they align with steps 0..N.  A step violates when
// distance > bound * (1 + 1e-9).
inline EnvelopeCheck verify_envelope(const RunTrace& trace,
                                     const std::vector<double>& bounds,
                                     VerifyAt at) {
  constexpr double kRelTol = 1e-9;
  std::vector<std::int64_t> steps;
  if (at == VerifyAt::EventTimes) {
    for (std::size_t t = 0; t < trace.event_marks.size(); ++t)
      if (trace.event_marks[t]) steps.push_back(static_cast<std::int64_t>(t));
  } else {
    for (std::size_t t = 0; t < trace.distances.size(); ++t)
      steps.push_back(static_cast<std::int64_t>(t));
  }
  if (steps.size() != bounds.size())
    throw std::invalid_argument("verify_envelope: bounds length mismatch");

  EnvelopeCheck check;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const double dist = trace.distances[steps[i]];
    if (dist > bounds[i] * (1.0 + kRelTol)) {
      check.violating_steps.push_back(steps[i]);
      check.excess.push_back(dist - bounds[i]);
      check.ok = false;
    }
  }
  return check;
}

// ---------------------------------------------------------------------------
// Nested and approximately nested anchor sequences
// ---------------------------------------------------------------------------

// True when every point of `inner` satisfies `outer`'s system: each row of
// outer must be a combination of inner's rows with matching offset, checked
// by the least-squares residual of expressing one system in the other.
inline bool affine_implies(const AffineSet& inner, const AffineSet& outer,
                           double tol = 1e-8) {
  if (inner.ambient_dim() != outer.ambient_dim())
    throw std::invalid_argument("affine_implies: dimension mismatch");
  if (outer.rows() == 0) return true;
  const Matrix& Ai = inner.constraint_matrix();
  const Matrix& Ao = outer.constraint_matrix();
  const double scale = 1.0 + std::max(Ao.norm(), outer.offset().norm());
  if (inner.rows() == 0) return Ao.norm() + outer.offset().norm() <= tol * scale;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Ai.transpose());
  const Matrix Ct = cod.solve(Ao.transpose());  // Ai^T C^T ~= Ao^T
  const double row_res = (Ct.transpose() * Ai - Ao).norm();
  const double off_res = (Ct.transpose() * inner.offset() - outer.offset()).norm();
  return row_res <= tol * scale && off_res <= tol * scale;
}

// Successive projections onto a nested sequence A_1 superset A_2 superset ...
// (each set's constraints implied by the next system; rejected otherwise).
// Every projection is marked as an event; distances are measured to the final
// state, which lies in every set by nestedness, so they are nonincreasing and
// satisfy the per-step Fejer inequality.
inline RunTrace nested_projection_run(const std::vector<AffineSet>& sets,
                                      const Vector& x0) {
  if (sets.empty())
    throw std::invalid_argument("nested_projection_run: no sets given");
  for (std::size_t k = 0; k + 1 < sets.size(); ++k) {
    if (!affine_implies(sets[k + 1], sets[k]))
      throw std::invalid_argument(
          "nested_projection_run: set " + std::to_string(k + 1) +
          " is not contained in set " + std::to_string(k));
  }

  RunTrace trace;
  trace.event_marks.assign(sets.size() + 1, 0);
  Vector x = x0;
  trace.states.push_back(x);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    x = sets[k].project(x);
    trace.states.push_back(x);
    trace.event_marks[k + 1] = 1;
  }
  const Vector& z = trace.states.back();
  for (std::size_t t = 0; t < trace.states.size(); ++t) {
    trace.distances.push_back((trace.states[t] - z).norm());
    if (t > 0) {
      const double prev = trace.distances[t - 1];
      trace.local_moduli.push_back(prev > 0.0 ? trace.distances[t] / prev : 0.0);
    }
  }
  return trace;
}

struct ApproxNestingReport {
  RunTrace trace;
  std::vector<double> displacements;       // ||x^{k+1} - x^{k}||, k = 1..m-1
  std::vector<std::int64_t> violations;    // k where displacement > delta_k + tol
  bool cauchy_ok = true;                   // ||x^{(m)} - x^{(k)}|| <= tail sums
  double total_displacement = 0.0;
  double delta_sum = 0.0;
};

// Successive projections where consecutive sets are only delta-close:
// displacement k (entering set k+1) must satisfy ||x^{k+1} - x^{k}|| <=
// deltas[k-1] + tol.  Sets are Projection or BoxClamp operator specs.
// Violations are recorded and the run continues.
inline ApproxNestingReport approx_nesting_run(
    const std::vector<OperatorSpec>& sets, const std::vector<double>& deltas,
    const Vector& x0, double tol = 1e-9) {
  if (sets.empty()) throw std::invalid_argument("approx_nesting_run: no sets");
  if (deltas.size() + 1 != sets.size())
    throw std::invalid_argument(
        "approx_nesting_run: need one delta per consecutive set pair");
  for (const auto& s : sets)
    if (s.kind != OpKind::Projection && s.kind != OpKind::BoxClamp)
      throw std::invalid_argument(
          "approx_nesting_run: sets must be affine projections or box clamps");
  for (const double d : deltas)
    if (!(d >= 0.0))
      throw std::invalid_argument("approx_nesting_run: deltas must be nonnegative");

  ApproxNestingReport report;
  Vector x = x0;
  report.trace.states.push_back(x);
  report.trace.event_marks.assign(sets.size() + 1, 0);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    x = apply(sets[k], x);
    report.trace.states.push_back(x);
    report.trace.event_marks[k + 1] = 1;
  }

  const std::size_t m = sets.size();
  for (std::size_t k = 1; k < m; ++k) {
    const double disp =
        (report.trace.states[k + 1] - report.trace.states[k]).norm();
    report.displacements.push_back(disp);
    report.total_displacement += disp;
    report.delta_sum += deltas[k - 1];
    if (disp > deltas[k - 1] + tol) {
      report.violations.push_back(static_cast<std::int64_t>(k));
    }
  }

  // Cauchy tail: remaining travel from x^{(k)} is at most the remaining deltas.
  for (std::size_t k = 1; k <= m; ++k) {
    double tail = 0.0;
    for (std::size_t j = k; j + 1 <= m && j <= deltas.size(); ++j)
      tail += deltas[j - 1];
    const double travel = (report.trace.states[m] - report.trace.states[k]).norm();
    if (travel > tail + tol) report.cauchy_ok = false;
  }

  const Vector& z = report.trace.states.back();
  for (std::size_t t = 0; t < report.trace.states.size(); ++t)
    report.trace.distances.push_back((report.trace.states[t] - z).norm());
  return report;
}

}  // namespace anchorkit
