#pragma once

// Nonexpansive building blocks on R^d: affine constraint sets with metric
// projection, a closed vocabulary of operator specifications, empirical
// Lipschitz probing, and the anchored-implication construction for commuting
// projection triples.
//
// Affine projection uses the least-norm correction
//     P(x) = x - A^+ (A x - b),
// computed through a rank-revealing complete orthogonal decomposition, so
// rank-deficient and redundant constraint systems are handled without
// special cases.  Metric projections onto affine sets are firmly
// nonexpansive: ||Pu - Pv||^2 <= <Pu - Pv, u - v>.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "rng.hpp"
#include "types.hpp"

namespace anchorkit {

// ---------------------------------------------------------------------------
// Affine constraint sets {x : A x = b}
// ---------------------------------------------------------------------------

class AffineSet {
 public:
  // Empty system in ambient dimension zero; assign before use.
  AffineSet() : A_(0, 0), b_(0) {}

  // Throws std::invalid_argument if the system is inconsistent: the least
  // squares residual of A x = b must satisfy ||A x* - b|| <= tol * (1 + ||b||).
  AffineSet(Matrix A, Vector b, double feasibility_tol = 1e-8)
      : A_(std::move(A)), b_(std::move(b)) {
    if (A_.rows() != b_.size())
      throw std::invalid_argument("AffineSet: row count of A must match b");
    if (!A_.allFinite() || !b_.allFinite())
      throw std::invalid_argument("AffineSet: non-finite constraint data");
    if (A_.rows() > 0) {
      cod_.compute(A_);
      const Vector x_ls = cod_.solve(b_);
      const double res = (A_ * x_ls - b_).norm();
      if (res > feasibility_tol * (1.0 + b_.norm()))
        throw std::invalid_argument(
            "AffineSet: inconsistent constraint system (residual " +
            std::to_string(res) + ")");
    }
  }

  const Matrix& constraint_matrix() const { return A_; }
  const Vector& offset() const { return b_; }
  Index ambient_dim() const { return A_.cols(); }
  Index rows() const { return A_.rows(); }
  Index rank() const { return A_.rows() == 0 ? 0 : cod_.rank(); }

  double residual(const Vector& x) const {
    return A_.rows() == 0 ? 0.0 : (A_ * x - b_).norm();
  }

  bool contains(const Vector& x, double tol = 1e-8) const {
    return residual(x) <= tol * (1.0 + b_.norm());
  }

  // Metric projection; an empty system (m = 0) projects to x itself.
  Vector project(const Vector& x) const {
    if (x.size() != A_.cols())
      throw std::invalid_argument("AffineSet::project: dimension mismatch");
    if (!x.allFinite())
      throw std::invalid_argument("AffineSet::project: non-finite input");
    if (A_.rows() == 0) return x;
    return x - cod_.solve(A_ * x - b_);
  }

 private:
  Matrix A_;
  Vector b_;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod_;
};

inline Vector project_affine(const AffineSet& set, const Vector& x) {
  return set.project(x);
}

// ---------------------------------------------------------------------------
// Elementwise / radial nonexpansive maps
// ---------------------------------------------------------------------------

// Projection onto the centered ball of radius r; identity inside.
inline Vector radial_retract(const Vector& x, double radius) {
  if (!(radius > 0.0))
    throw std::invalid_argument("radial_retract: radius must be positive");
  if (!x.allFinite())
    throw std::invalid_argument("radial_retract: non-finite input");
  const double n = x.norm();
  if (n <= radius) return x;
  return (radius / n) * x;
}

// Componentwise clamp to [lower, upper].  The p argument selects the norm in
// which the 1-Lipschitz contract is stated (1, 2, or 0 meaning sup-norm); the
// clamp itself is the same monotone map for every p.
inline Vector box_clamp(const Vector& x, const Vector& lower,
                        const Vector& upper, int p = 2) {
  if (lower.size() != x.size() || upper.size() != x.size())
    throw std::invalid_argument("box_clamp: bound dimensions must match x");
  if (!x.allFinite() || !lower.allFinite() || !upper.allFinite())
    throw std::invalid_argument("box_clamp: non-finite data");
  if ((lower.array() > upper.array()).any())
    throw std::invalid_argument("box_clamp: requires lower <= upper");
  if (p != 0 && p != 1 && p != 2)
    throw std::invalid_argument("box_clamp: p must be 1, 2, or 0 (sup-norm)");
  return x.cwiseMax(lower).cwiseMin(upper);
}

// ---------------------------------------------------------------------------
// Operator specifications
// ---------------------------------------------------------------------------

enum class OpKind {
  AffineMap,         // x -> M x + c
  Projection,        // metric projection onto an AffineSet
  Constant,          // x -> p
  RadialRetraction,  // projection onto a centered ball
  BoxClamp,          // componentwise clamp
  Permutation,       // coordinate permutation
  Averaged,          // (1 - theta) I + theta T
  Composite          // left-to-right composition of members
};

struct OperatorSpec {
  OpKind kind = OpKind::AffineMap;

  Matrix matrix;                         // AffineMap
  Vector offset;                         // AffineMap
  std::shared_ptr<const AffineSet> set;  // Projection
  Vector point;                          // Constant
  double radius = 0.0;                   // RadialRetraction
  Vector lower, upper;                   // BoxClamp
  int p_norm = 2;                        // BoxClamp
  std::vector<Index> perm;               // Permutation
  double theta = 1.0;                    // Averaged
  std::vector<OperatorSpec> children;    // Averaged (1) / Composite (n)

  // Optional caller-certified upper bound on the Lipschitz modulus.
  std::optional<double> declared_modulus;

  static OperatorSpec affine_map(Matrix M, Vector c,
                                 std::optional<double> declared = {});
  static OperatorSpec projection(AffineSet s);
  static OperatorSpec constant(Vector p);
  static OperatorSpec radial_retraction(double r);
  static OperatorSpec box_clamp_op(Vector lo, Vector hi, int p = 2);
  static OperatorSpec permutation(std::vector<Index> indices);
  static OperatorSpec averaged(double theta, OperatorSpec inner);
  static OperatorSpec composite(std::vector<OperatorSpec> members);
};

// Structural Lipschitz upper bound, when one is known without touching the
// matrix spectrum: declared bounds are honored, projections/retractions/
// clamps/permutations are 1, constants are 0, averaged and composite
// operators combine their parts.  AffineMap without a declared bound yields
// nullopt.
inline std::optional<double> modulus_bound(const OperatorSpec& op) {
  std::optional<double> structural;
  switch (op.kind) {
    case OpKind::AffineMap:
      structural = std::nullopt;
      break;
    case OpKind::Projection:
    case OpKind::RadialRetraction:
    case OpKind::BoxClamp:
    case OpKind::Permutation:
      structural = 1.0;
      break;
    case OpKind::Constant:
      structural = 0.0;
      break;
    case OpKind::Averaged: {
      const auto inner = modulus_bound(op.children.front());
      if (inner) structural = (1.0 - op.theta) + op.theta * *inner;
      break;
    }
    case OpKind::Composite: {
      double prod = 1.0;
      bool known = true;
      for (const auto& m : op.children) {
        const auto b = modulus_bound(m);
        if (!b) {
          known = false;
          break;
        }
        prod *= *b;
      }
      if (known) structural = prod;
      break;
    }
  }
  if (op.declared_modulus && structural)
    return std::min(*op.declared_modulus, *structural);
  if (op.declared_modulus) return op.declared_modulus;
  return structural;
}

// Like modulus_bound, but resolves AffineMap kinds through an exact singular
// value decomposition instead of giving up.  Used where a bound is mandatory
// (e.g. validating that an averaged operator's inner map is nonexpansive).
inline double resolved_modulus_bound(const OperatorSpec& op) {
  if (const auto b = modulus_bound(op)) return *b;
  if (op.kind == OpKind::AffineMap)
    return Eigen::JacobiSVD<Matrix>(op.matrix).singularValues()(0);
  if (op.kind == OpKind::Averaged)
    return (1.0 - op.theta) + op.theta * resolved_modulus_bound(op.children.front());
  double prod = 1.0;  // Composite
  for (const auto& m : op.children) prod *= resolved_modulus_bound(m);
  return prod;
}

inline OperatorSpec OperatorSpec::affine_map(Matrix M, Vector c,
                                             std::optional<double> declared) {
  if (M.rows() != c.size())
    throw std::invalid_argument("affine_map: offset must match matrix rows");
  if (!M.allFinite() || !c.allFinite())
    throw std::invalid_argument("affine_map: non-finite data");
  OperatorSpec op;
  op.kind = OpKind::AffineMap;
  op.matrix = std::move(M);
  op.offset = std::move(c);
  op.declared_modulus = declared;
  return op;
}

inline OperatorSpec OperatorSpec::projection(AffineSet s) {
  OperatorSpec op;
  op.kind = OpKind::Projection;
  op.set = std::make_shared<AffineSet>(std::move(s));
  return op;
}

inline OperatorSpec OperatorSpec::constant(Vector p) {
  if (!p.allFinite()) throw std::invalid_argument("constant: non-finite point");
  OperatorSpec op;
  op.kind = OpKind::Constant;
  op.point = std::move(p);
  return op;
}

inline OperatorSpec OperatorSpec::radial_retraction(double r) {
  if (!(r > 0.0))
    throw std::invalid_argument("radial_retraction: radius must be positive");
  OperatorSpec op;
  op.kind = OpKind::RadialRetraction;
  op.radius = r;
  return op;
}

inline OperatorSpec OperatorSpec::box_clamp_op(Vector lo, Vector hi, int p) {
  if (lo.size() != hi.size())
    throw std::invalid_argument("box_clamp_op: bound dimensions differ");
  if ((lo.array() > hi.array()).any())
    throw std::invalid_argument("box_clamp_op: requires lower <= upper");
  if (p != 0 && p != 1 && p != 2)
    throw std::invalid_argument("box_clamp_op: p must be 1, 2, or 0 (sup-norm)");
  OperatorSpec op;
  op.kind = OpKind::BoxClamp;
  op.lower = std::move(lo);
  op.upper = std::move(hi);
  op.p_norm = p;
  return op;
}

inline OperatorSpec OperatorSpec::permutation(std::vector<Index> indices) {
  std::vector<char> seen(indices.size(), 0);
  for (const Index i : indices) {
    if (i < 0 || i >= static_cast<Index>(indices.size()) || seen[i])
      throw std::invalid_argument("permutation: indices must be a permutation");
    seen[i] = 1;
  }
  OperatorSpec op;
  op.kind = OpKind::Permutation;
  op.perm = std::move(indices);
  return op;
}

inline OperatorSpec OperatorSpec::averaged(double theta, OperatorSpec inner) {
  if (!(theta > 0.0) || theta > 1.0)
    throw std::invalid_argument("averaged: theta must lie in (0, 1]");
  if (resolved_modulus_bound(inner) > 1.0 + 1e-9)
    throw std::invalid_argument("averaged: inner operator must be nonexpansive");
  OperatorSpec op;
  op.kind = OpKind::Averaged;
  op.theta = theta;
  op.children.push_back(std::move(inner));
  return op;
}

inline OperatorSpec OperatorSpec::composite(std::vector<OperatorSpec> members) {
  if (members.empty())
    throw std::invalid_argument("composite: requires at least one member");
  OperatorSpec op;
  op.kind = OpKind::Composite;
  op.children = std::move(members);
  return op;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline Vector apply(const OperatorSpec& op, const Vector& x) {
  if (!x.allFinite()) throw std::invalid_argument("apply: non-finite input");
  switch (op.kind) {
    case OpKind::AffineMap:
      if (op.matrix.cols() != x.size())
        throw std::invalid_argument("apply: affine map dimension mismatch");
      return op.matrix * x + op.offset;
    case OpKind::Projection:
      return op.set->project(x);
    case OpKind::Constant:
      return op.point;
    case OpKind::RadialRetraction:
      return radial_retract(x, op.radius);
    case OpKind::BoxClamp:
      return box_clamp(x, op.lower, op.upper, op.p_norm);
    case OpKind::Permutation: {
      if (static_cast<Index>(op.perm.size()) != x.size())
        throw std::invalid_argument("apply: permutation dimension mismatch");
      Vector y(x.size());
      for (Index i = 0; i < x.size(); ++i) y[i] = x[op.perm[i]];
      return y;
    }
    case OpKind::Averaged:
      return (1.0 - op.theta) * x + op.theta * apply(op.children.front(), x);
    case OpKind::Composite: {
      Vector y = x;
      for (const auto& m : op.children) y = apply(m, y);  // first listed first
      return y;
    }
  }
  throw std::logic_error("apply: unreachable");
}

// ---------------------------------------------------------------------------
// Empirical modulus probing
// ---------------------------------------------------------------------------

// Pair sampling: standard Gaussian pairs at a configurable scale, optionally
// mixed with pairs concentrated near given focal points (e.g. fixed points),
// where local moduli are the sharpest.
struct PairSamplingPolicy {
  Index dim = 0;
  double gaussian_scale = 1.0;
  std::vector<Vector> focal_points;
  double focal_radius = 1e-3;
  double focal_fraction = 0.5;  // used only when focal points are present
};

inline std::pair<Vector, Vector> sample_pair(const PairSamplingPolicy& policy,
                                             Philox& rng) {
  if (policy.dim <= 0)
    throw std::invalid_argument("sample_pair: policy.dim must be positive");
  const bool focal = !policy.focal_points.empty() &&
                     rng.next_double() < policy.focal_fraction;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Vector x, y;
    if (focal) {
      const auto& c = policy.focal_points[rng.next_u64() %
                                          policy.focal_points.size()];
      x = c + policy.focal_radius * rng.gaussian_vector(policy.dim);
      y = c + policy.focal_radius * rng.gaussian_vector(policy.dim);
    } else {
      x = policy.gaussian_scale * rng.gaussian_vector(policy.dim);
      y = policy.gaussian_scale * rng.gaussian_vector(policy.dim);
    }
    if ((x - y).norm() > 0.0) return {std::move(x), std::move(y)};
  }
  throw std::runtime_error("sample_pair: failed to draw a distinct pair");
}

inline double empirical_modulus(const std::function<Vector(const Vector&)>& f,
                                const PairSamplingPolicy& policy,
                                std::int64_t n_pairs, Philox& rng) {
  if (n_pairs < 1)
    throw std::invalid_argument("empirical_modulus: n_pairs must be >= 1");
  double worst = 0.0;
  for (std::int64_t i = 0; i < n_pairs; ++i) {
    const auto [x, y] = sample_pair(policy, rng);
    const Vector fx = f(x), fy = f(y);
    if (!fx.allFinite() || !fy.allFinite())
      throw std::runtime_error("empirical_modulus: non-finite operator output");
    worst = std::max(worst, (fx - fy).norm() / (x - y).norm());
  }
  return worst;
}

inline double empirical_modulus(const OperatorSpec& op,
                                const PairSamplingPolicy& policy,
                                std::int64_t n_pairs, Philox& rng) {
  return empirical_modulus([&op](const Vector& x) { return apply(op, x); },
                           policy, n_pairs, rng);
}

// ---------------------------------------------------------------------------
// Anchored implication for projection triples
// ---------------------------------------------------------------------------

struct CommutantTriple {
  Matrix E_A, E_B, P;
};

struct CommutationReport {
  double comm_EA_P = 0.0;   // ||E_A P - P E_A||
  double comm_EB_P = 0.0;   // ||E_B P - P E_B||
  double comm_EA_EB = 0.0;  // ||E_A E_B - E_B E_A||
  bool valid = false;       // all commutators vanish within tolerance
};

namespace detail {
inline double operator_norm(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Matrix>(M).singularValues()(0);
}

inline void require_projection(const Matrix& E, const char* name, double tol) {
  if (E.rows() != E.cols())
    throw std::invalid_argument(std::string(name) + ": projection must be square");
  if (operator_norm(E * E - E) > tol)
    throw std::invalid_argument(std::string(name) + ": idempotence violated");
  if (operator_norm(E - E.transpose()) > tol)
    throw std::invalid_argument(std::string(name) + ": symmetry violated");
}
}  // namespace detail

// Builds I - E_A + E_A E_B (the "if A then B" operator) and reports the
// commutators whose vanishing makes it a bona fide projection.  Inputs must
// be orthogonal projections; commutation is only reported, not required.
inline std::pair<Matrix, CommutationReport> anchored_implication(
    const CommutantTriple& t, double tol = 1e-9) {
  detail::require_projection(t.E_A, "anchored_implication: E_A", 1e-9);
  detail::require_projection(t.E_B, "anchored_implication: E_B", 1e-9);
  detail::require_projection(t.P, "anchored_implication: P", 1e-9);
  if (t.E_A.rows() != t.E_B.rows() || t.E_A.rows() != t.P.rows())
    throw std::invalid_argument("anchored_implication: dimension mismatch");

  CommutationReport report;
  report.comm_EA_P = detail::operator_norm(t.E_A * t.P - t.P * t.E_A);
  report.comm_EB_P = detail::operator_norm(t.E_B * t.P - t.P * t.E_B);
  report.comm_EA_EB = detail::operator_norm(t.E_A * t.E_B - t.E_B * t.E_A);
  report.valid = report.comm_EA_P <= tol && report.comm_EB_P <= tol &&
                 report.comm_EA_EB <= tol;

  const Matrix I = Matrix::Identity(t.E_A.rows(), t.E_A.cols());
  return {I - t.E_A + t.E_A * t.E_B, report};
}

}  // namespace anchorkit
