#pragma once

// A finite program of nonexpansive primitives over the state s = (x, y, b)
// in R^d x R^d x R: a register block x, a result block y, and a guard
// register b.  Instructions are constant writes, norm-bounded affine steps,
// coordinate permutations, translations, and guarded branch updates; every
// primitive has Lipschitz modulus <= 1, so the end-to-end realized map does
// too, and perturbations accumulate no faster than the variation-of-constants
// envelope sum_j (prod_{i>j} tau_i) delta_j.
//
// A guarded update for branch map F (affine nonexpansive) builds the
// constraint set C = Graph(F) x {b = i} inside the guard hyperplane
// H = {b = i} and applies the literal block
//     B = I - E_H + E_H P_C,
// which is firmly nonexpansive (P_C is a metric projection onto an affine
// set and C lies inside H, making the two summands orthogonal on
// differences).  Because C factorizes across the (x, y) and b coordinates,
// the block algebra reduces to: project (x, y) onto Graph(F), pass b through
// untouched.  Note what this means operationally: the block is not an
// if/else on b.  A guarded instruction applies BOTH branch blocks on a fixed
// schedule, and the projection onto a graph is the least-squares one, moving
// x and y jointly onto the constraint.  For constant branch maps (M = 0) the
// projection fixes x and overwrites y exactly; that is the regime where the
// block behaves like an assignment.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "attention.hpp"  // spec_norm
#include "operators.hpp"
#include "rng.hpp"
#include "types.hpp"

namespace anchorkit {

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

struct MCState {
  Vector x;
  Vector y;
  double b = 0.0;
};

inline Index state_dim(Index d) { return 2 * d + 1; }

inline Vector pack(const MCState& s) {
  if (s.x.size() != s.y.size())
    throw std::invalid_argument("MCState: x and y blocks must have equal size");
  Vector v(state_dim(s.x.size()));
  v.head(s.x.size()) = s.x;
  v.segment(s.x.size(), s.y.size()) = s.y;
  v(v.size() - 1) = s.b;
  return v;
}

inline MCState unpack(const Vector& v, Index d) {
  if (v.size() != state_dim(d))
    throw std::invalid_argument("MCState: packed vector has wrong size");
  return {v.head(d), v.segment(d, d), v(v.size() - 1)};
}

// ---------------------------------------------------------------------------
// Guarded branch block
// ---------------------------------------------------------------------------

// The literal operator I - E_H + E_H P_C for C = Graph(F) x {b = i},
// H = {b = i}, F(x) = M x + c with ||M|| <= 1.
class GuardedBlock {
 public:
  GuardedBlock(int branch, Matrix M, Vector c)
      : branch_(branch), M_(std::move(M)), c_(std::move(c)) {
    if (branch_ != 0 && branch_ != 1)
      throw std::invalid_argument("GuardedBlock: branch index must be 0 or 1");
    const Index d = M_.rows();
    if (M_.cols() != d || c_.size() != d)
      throw std::invalid_argument("GuardedBlock: branch map dimensions disagree");
    const double nm = spec_norm(M_, 100);
    if (nm > 1.0 + 1e-9)
      throw std::invalid_argument(
          "GuardedBlock: branch map is expansive (norm " + std::to_string(nm) +
          ")");
    // Constraint rows over s = (x, y, b): [-M | I | 0] s = c and b = i.
    const Index n = state_dim(d);
    Matrix A = Matrix::Zero(d + 1, n);
    A.block(0, 0, d, d) = -M_;
    A.block(0, d, d, d) = Matrix::Identity(d, d);
    A(d, n - 1) = 1.0;
    Vector rhs(d + 1);
    rhs.head(d) = c_;
    rhs(d) = static_cast<double>(branch_);
    constraint_ = AffineSet(A, rhs);
  }

  int branch() const { return branch_; }
  const Matrix& map_matrix() const { return M_; }
  const Vector& map_offset() const { return c_; }
  const AffineSet& constraint() const { return constraint_; }

  Vector apply(const Vector& s) const {
    Vector guard = s;            // E_H: snap the guard register to the branch
    guard(s.size() - 1) = static_cast<double>(branch_);
    return s - guard + constraint_.project(s);
  }

 private:
  int branch_;
  Matrix M_;
  Vector c_;
  AffineSet constraint_;
};

inline MCState guarded_block(int branch, const Matrix& M, const Vector& c,
                             const MCState& state) {
  GuardedBlock block(branch, M, c);
  return unpack(block.apply(pack(state)), state.x.size());
}

// ---------------------------------------------------------------------------
// Instructions and programs
// ---------------------------------------------------------------------------

struct Instruction {
  enum class Kind { ConstantWrite, AffineStep, Permute, Translate, Guarded };

  Kind kind = Kind::Translate;
  Vector target;            // ConstantWrite: the full state written
  Matrix M;                 // AffineStep: s <- M s + c over the full state
  Vector c;                 // AffineStep offset / Translate shift
  std::vector<Index> perm;  // Permute: result[i] = s[perm[i]]
  Matrix M0, M1;            // Guarded: branch maps on the register block
  Vector c0, c1;

  static Instruction constant_write(Vector state) {
    Instruction ins;
    ins.kind = Kind::ConstantWrite;
    ins.target = std::move(state);
    return ins;
  }
  static Instruction affine_step(Matrix M, Vector c) {
    Instruction ins;
    ins.kind = Kind::AffineStep;
    ins.M = std::move(M);
    ins.c = std::move(c);
    return ins;
  }
  static Instruction permute(std::vector<Index> perm) {
    Instruction ins;
    ins.kind = Kind::Permute;
    ins.perm = std::move(perm);
    return ins;
  }
  static Instruction translate(Vector c) {
    Instruction ins;
    ins.kind = Kind::Translate;
    ins.c = std::move(c);
    return ins;
  }
  static Instruction guarded(Matrix M0, Vector c0, Matrix M1, Vector c1) {
    Instruction ins;
    ins.kind = Kind::Guarded;
    ins.M0 = std::move(M0);
    ins.c0 = std::move(c0);
    ins.M1 = std::move(M1);
    ins.c1 = std::move(c1);
    return ins;
  }
};

inline const char* to_string(Instruction::Kind k) {
  switch (k) {
    case Instruction::Kind::ConstantWrite: return "constant_write";
    case Instruction::Kind::AffineStep: return "affine_step";
    case Instruction::Kind::Permute: return "permute";
    case Instruction::Kind::Translate: return "translate";
    case Instruction::Kind::Guarded: return "guarded";
  }
  return "?";
}

// Affine readout o_pre = R s[indices] + r0, decoded to the fixed-point grid.
struct Readout {
  std::vector<Index> indices;
  Matrix R;
  Vector r0;

  static Readout identity(Index n) {
    Readout r;
    r.indices.resize(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) r.indices[static_cast<std::size_t>(i)] = i;
    r.R = Matrix::Identity(n, n);
    r.r0 = Vector::Zero(n);
    return r;
  }
};

// Fixed-point encoding on the grid 2^-f: inputs must already be representable
// at the declared precision, outputs are rounded back onto the grid.
struct Encoding {
  int fractional_bits = 16;

  double scale() const { return std::ldexp(1.0, -fractional_bits); }

  double encode(double v) const {
    const double scaled = std::ldexp(v, fractional_bits);
    if (std::abs(scaled - std::round(scaled)) > 1e-9)
      throw std::invalid_argument(
          "Encoding: value " + std::to_string(v) +
          " is not representable with " + std::to_string(fractional_bits) +
          " fractional bits");
    return std::ldexp(std::round(scaled), -fractional_bits);
  }
  double decode(double v) const {
    return std::ldexp(std::round(std::ldexp(v, fractional_bits)),
                      -fractional_bits);
  }
};

// A verified, immutable instruction list.  All structural checks (operator
// norms, permutation bijectivity, dimensions) happen here, once; execution
// never re-validates.
class Program {
 public:
  Program(Index register_dim, std::vector<Instruction> instructions,
          Readout readout, Encoding encoding = {})
      : d_(register_dim),
        instructions_(std::move(instructions)),
        readout_(std::move(readout)),
        encoding_(encoding) {
    if (d_ < 1) throw std::invalid_argument("Program: register dim must be >= 1");
    const Index n = state_dim(d_);
    for (std::size_t k = 0; k < instructions_.size(); ++k) {
      const Instruction& ins = instructions_[k];
      const std::string at = "Program: instruction " + std::to_string(k) + ": ";
      switch (ins.kind) {
        case Instruction::Kind::ConstantWrite:
          if (ins.target.size() != n)
            throw std::invalid_argument(at + "target state has wrong size");
          moduli_.push_back(0.0);
          break;
        case Instruction::Kind::AffineStep: {
          if (ins.M.rows() != n || ins.M.cols() != n || ins.c.size() != n)
            throw std::invalid_argument(at + "affine step has wrong dimensions");
          const double nm = spec_norm(ins.M, 100);
          if (nm > 1.0 + 1e-9)
            throw std::invalid_argument(at + "affine step is expansive (norm " +
                                        std::to_string(nm) + ")");
          // The class contract is nonexpansive; estimator noise above 1 is
          // rounding, so the budget factor is capped at 1.
          moduli_.push_back(std::min(nm, 1.0));
          break;
        }
        case Instruction::Kind::Permute: {
          if (static_cast<Index>(ins.perm.size()) != n)
            throw std::invalid_argument(at + "permutation has wrong size");
          std::vector<bool> seen(static_cast<std::size_t>(n), false);
          for (const Index p : ins.perm) {
            if (p < 0 || p >= n || seen[static_cast<std::size_t>(p)])
              throw std::invalid_argument(at + "permutation is not a bijection");
            seen[static_cast<std::size_t>(p)] = true;
          }
          moduli_.push_back(1.0);
          break;
        }
        case Instruction::Kind::Translate:
          if (ins.c.size() != n)
            throw std::invalid_argument(at + "translation has wrong size");
          moduli_.push_back(1.0);
          break;
        case Instruction::Kind::Guarded:
          try {
            guarded_.emplace(k, std::make_pair(GuardedBlock(0, ins.M0, ins.c0),
                                               GuardedBlock(1, ins.M1, ins.c1)));
          } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(at + e.what());
          }
          moduli_.push_back(1.0);
          break;
      }
    }
    for (const Index i : readout_.indices)
      if (i < 0 || i >= n)
        throw std::invalid_argument("Program: readout index out of range");
    if (readout_.R.cols() != static_cast<Index>(readout_.indices.size()) ||
        readout_.r0.size() != readout_.R.rows())
      throw std::invalid_argument("Program: readout map dimensions disagree");
  }

  Index register_dim() const { return d_; }
  Index full_dim() const { return state_dim(d_); }
  const std::vector<Instruction>& instructions() const { return instructions_; }
  const Readout& readout() const { return readout_; }
  const Encoding& encoding() const { return encoding_; }
  // Per-instruction Lipschitz bound (guarded instructions count once).
  const std::vector<double>& instruction_moduli() const { return moduli_; }

  std::int64_t guard_count() const {
    return static_cast<std::int64_t>(guarded_.size());
  }

  const std::pair<GuardedBlock, GuardedBlock>& blocks_at(std::size_t k) const {
    return guarded_.at(k);
  }

 private:
  Index d_;
  std::vector<Instruction> instructions_;
  Readout readout_;
  Encoding encoding_;
  std::vector<double> moduli_;
  std::map<std::size_t, std::pair<GuardedBlock, GuardedBlock>> guarded_;
};

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct ExecutionReport {
  std::int64_t op_applications = 0;     // scheduled operators actually applied
  std::int64_t guard_projections = 0;   // E_H evaluations inside blocks
  std::int64_t constraint_projections = 0;  // P_C evaluations inside blocks
  double end_to_end_modulus_bound = 1.0;
  std::vector<Vector> trace;  // packed state after each instruction
  bool guard_register_wellformed = true;  // b within 1e-9 of {0,1} throughout
};

namespace detail {
inline bool guard_ok(double b) {
  return std::abs(b) <= 1e-9 || std::abs(b - 1.0) <= 1e-9;
}

// Applies instruction k, accumulating counts.  A guarded instruction applies
// the branch-0 block then the branch-1 block, each one scheduled operator.
inline Vector apply_instruction(const Program& program, std::size_t k, Vector s,
                                ExecutionReport& report) {
  const Instruction& ins = program.instructions()[k];
  switch (ins.kind) {
    case Instruction::Kind::ConstantWrite:
      s = ins.target;
      report.op_applications += 1;
      break;
    case Instruction::Kind::AffineStep:
      s = ins.M * s + ins.c;
      report.op_applications += 1;
      break;
    case Instruction::Kind::Permute: {
      Vector next(s.size());
      for (Index i = 0; i < s.size(); ++i)
        next(i) = s(ins.perm[static_cast<std::size_t>(i)]);
      s = std::move(next);
      report.op_applications += 1;
      break;
    }
    case Instruction::Kind::Translate:
      s += ins.c;
      report.op_applications += 1;
      break;
    case Instruction::Kind::Guarded: {
      const auto& [b0, b1] = program.blocks_at(k);
      s = b0.apply(s);
      s = b1.apply(s);
      report.op_applications += 2;
      report.guard_projections += 2;
      report.constraint_projections += 2;
      break;
    }
  }
  return s;
}
}  // namespace detail

// Core execution from a packed initial state.  A run costs K + G scheduled
// applications against the static budget K + 2G.
inline std::pair<Vector, ExecutionReport> execute_state(const Program& program,
                                                        Vector s) {
  if (s.size() != program.full_dim())
    throw std::invalid_argument("execute_state: state has wrong size");
  ExecutionReport report;
  report.guard_register_wellformed = detail::guard_ok(s(s.size() - 1));
  report.trace.reserve(program.instructions().size());

  for (std::size_t k = 0; k < program.instructions().size(); ++k) {
    s = detail::apply_instruction(program, k, std::move(s), report);
    report.end_to_end_modulus_bound *= program.instruction_moduli()[k];
    if (!detail::guard_ok(s(s.size() - 1)))
      report.guard_register_wellformed = false;
    report.trace.push_back(s);
  }
  return {std::move(s), std::move(report)};
}

// Encode an input vector into the register block (y = 0, b = 0), run, and
// decode the readout.  Inputs must sit on the declared fixed-point grid.
inline std::pair<Vector, ExecutionReport> execute(const Program& program,
                                                  const Vector& input) {
  if (input.size() != program.register_dim())
    throw std::invalid_argument("execute: input has wrong size");
  Vector s = Vector::Zero(program.full_dim());
  for (Index i = 0; i < input.size(); ++i)
    s(i) = program.encoding().encode(input(i));

  auto [final_state, report] = execute_state(program, std::move(s));

  const auto& ro = program.readout();
  Vector selected(static_cast<Index>(ro.indices.size()));
  for (std::size_t i = 0; i < ro.indices.size(); ++i)
    selected(static_cast<Index>(i)) = final_state(ro.indices[i]);
  Vector out = ro.R * selected + ro.r0;
  for (Index i = 0; i < out.size(); ++i)
    out(i) = program.encoding().decode(out(i));
  return {std::move(out), std::move(report)};
}

// ---------------------------------------------------------------------------
// Trace realization
// ---------------------------------------------------------------------------

// The program of constant writes that replays `states` from any start: each
// write is the projection onto a singleton, modulus 0, so replay is exact
// (bitwise) and history-independent.
inline Program realize_trace(const std::vector<Vector>& states,
                             Encoding encoding = {}) {
  if (states.empty())
    throw std::invalid_argument("realize_trace: empty trace");
  const Index n = states.front().size();
  if ((n - 1) % 2 != 0 || n < 3)
    throw std::invalid_argument(
        "realize_trace: states must pack (x, y, b) blocks");
  std::vector<Instruction> ins;
  ins.reserve(states.size());
  for (const Vector& s : states) {
    if (s.size() != n)
      throw std::invalid_argument("realize_trace: trace states differ in size");
    ins.push_back(Instruction::constant_write(s));
  }
  return Program((n - 1) / 2, std::move(ins), Readout::identity(n), encoding);
}

// ---------------------------------------------------------------------------
// Perturbed execution
// ---------------------------------------------------------------------------

// Uniform-in-direction noise of norm <= delta: Gaussian with per-coordinate
// sd delta/sqrt(dim), rejection-sampled into the closed ball.  The mean of
// ||g||^2 equals delta^2, so acceptance runs at about one in two.
inline Vector ball_noise(Index dim, double delta, Philox& rng) {
  if (!(delta >= 0.0)) throw std::invalid_argument("ball_noise: negative radius");
  if (delta == 0.0) return Vector::Zero(dim);
  const double sd = delta / std::sqrt(static_cast<double>(dim));
  for (;;) {
    Vector g = sd * rng.gaussian_vector(dim);
    if (g.norm() <= delta) return g;
  }
}

struct PerturbationReport {
  std::vector<double> deviations;  // ||perturbed_t - clean_t|| per instruction
  std::vector<double> bounds;      // tau-compounded envelope, same indexing
  std::vector<std::size_t> violating_steps;
  bool ok = true;
  Vector clean_final;
  Vector perturbed_final;
};

// Runs the clean and the noise-injected trajectory side by side and checks
//     dev_t <= tau_t * bound_{t-1} + delta_t =: bound_t
// at every instruction boundary, with tau the per-instruction modulus bound.
// Deviations are measured after injecting the step's noise.
inline PerturbationReport perturbed_execute(
    const Program& program, const Vector& initial_state,
    const std::vector<double>& delta_schedule, Philox& rng) {
  if (initial_state.size() != program.full_dim())
    throw std::invalid_argument("perturbed_execute: state has wrong size");
  if (delta_schedule.size() != program.instructions().size())
    throw std::invalid_argument(
        "perturbed_execute: delta schedule must cover every instruction");
  for (const double d : delta_schedule)
    if (!(d >= 0.0))
      throw std::invalid_argument("perturbed_execute: deltas must be >= 0");

  auto [clean_final, clean_report] = execute_state(program, initial_state);

  PerturbationReport report;
  Vector s = initial_state;
  ExecutionReport scratch;
  double bound = 0.0;
  for (std::size_t k = 0; k < program.instructions().size(); ++k) {
    s = detail::apply_instruction(program, k, std::move(s), scratch);
    s += ball_noise(s.size(), delta_schedule[k], rng);

    const double dev = (s - clean_report.trace[k]).norm();
    bound = program.instruction_moduli()[k] * bound + delta_schedule[k];
    report.deviations.push_back(dev);
    report.bounds.push_back(bound);
    if (dev > bound * (1.0 + 1e-9) + 1e-12) {
      report.violating_steps.push_back(k);
      report.ok = false;
    }
  }
  report.clean_final = std::move(clean_final);
  report.perturbed_final = std::move(s);
  return report;
}

// ---------------------------------------------------------------------------
// Complexity audit
// ---------------------------------------------------------------------------

struct ComplexityAudit {
  std::int64_t instructions = 0;  // K
  std::int64_t guards = 0;        // G
  std::int64_t application_bound = 0;  // K + 2G, never exceeded dynamically
  double modulus_bound = 1.0;          // product of instruction bounds, <= 1
};

inline ComplexityAudit complexity_audit(const Program& program) {
  ComplexityAudit audit;
  audit.instructions = static_cast<std::int64_t>(program.instructions().size());
  audit.guards = program.guard_count();
  audit.application_bound = audit.instructions + 2 * audit.guards;
  for (const double m : program.instruction_moduli())
    audit.modulus_bound *= m;
  return audit;
}

}  // namespace anchorkit
