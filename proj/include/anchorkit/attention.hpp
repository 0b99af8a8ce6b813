#pragma once

// Lipschitz certification of multi-head layers
//     U(x) = W_o . concat_h U_h(P_h x),
// plus the spectral estimators the certificates rely on.
//
// Three certificate methods:
//   Orthogonal: heads read pairwise-orthogonal subspaces (P_h^T P_{h'} = 0),
//     the family is dominated by the identity (lambda_max(sum P_h^T P_h) <= 1),
//     and W_o is an isometry; then Lip(U) <= max_h L_h.
//   General:  Lip(U) <= ||W_o|| * sqrt(sum_h L_h^2 ||P_h||^2).
//   Overlap:  Lip(U) <= ||W_o|| * sqrt(lambda_max(S)), S = sum_h L_h^2 P_h^T P_h,
//     which interpolates between the two and is never worse than General.
// The overlap index Omega = sqrt(lambda_max(sum_h P_h^T P_h)) measures how far
// the head family is from an orthogonal one (Omega = 1) versus H identical
// heads (Omega = sqrt(H)).

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "rng.hpp"
#include "types.hpp"

namespace anchorkit {

// ---------------------------------------------------------------------------
// Spectral estimators
// ---------------------------------------------------------------------------

// Largest singular value by power iteration on W^T W from a seeded start
// vector.  The estimate sequence ||W v_k|| is a nondecreasing lower bound on
// sigma_max (Rayleigh quotients along power iteration of a PSD matrix), so
// the returned value never overshoots beyond roundoff.
inline double spec_norm(const Matrix& W, int iters = 50,
                        std::uint64_t seed = 0x5eed0001ULL) {
  if (W.size() == 0) return 0.0;
  if (!W.allFinite()) throw std::invalid_argument("spec_norm: non-finite matrix");
  if (iters < 1) throw std::invalid_argument("spec_norm: iters must be >= 1");
  Philox rng(seed, 0);
  Vector v = rng.gaussian_vector(W.cols());
  double vn = v.norm();
  if (vn == 0.0) return 0.0;
  v /= vn;
  double est = 0.0;
  for (int i = 0; i < iters; ++i) {
    Vector u = W * v;
    const double un = u.norm();
    if (un < 1e-300) return 0.0;  // v fell in the kernel: norm estimate is 0
    u /= un;
    v = W.transpose() * u;
    const double next = v.norm();
    if (next < 1e-300) return 0.0;
    v /= next;
    if (next <= est * (1.0 + 1e-15)) {
      est = std::max(est, next);
      break;
    }
    est = next;
  }
  return (W * v).norm();
}

struct JvpEstimate {
  double value = 0.0;
  bool oscillation_warning = false;
};

// Jacobian spectral norm at x for a black-box map, by power iteration on
// central finite-difference directional derivatives
//     J v ~= (f(x + h v) - f(x - h v)) / (2 h).
// fd_step <= 0 selects the default h = 1e-5 * (1 + ||x||).
//
// For square Jacobians the iteration is v <- Jv/||Jv||; every ||Jv|| with
// unit v is a lower bound on sigma_max, nondecreasing when J is symmetric
// (softmax, retractions, projections), so the running max never overshoots.
// Rectangular Jacobians are assembled column-by-column from the same
// differences and measured by matrix power iteration.  The warning flags
// estimates still swinging by more than 1e-3 relative at the end, which is
// the usual symptom of h sitting at the noise floor.
inline JvpEstimate jvp_power_iteration(
    const std::function<Vector(const Vector&)>& f, const Vector& x,
    int iters = 30, double fd_step = 0.0, std::uint64_t seed = 0x5eed0002ULL) {
  if (iters < 1)
    throw std::invalid_argument("jvp_power_iteration: iters must be >= 1");
  if (!x.allFinite())
    throw std::invalid_argument("jvp_power_iteration: non-finite point");
  const double h = fd_step > 0.0 ? fd_step : 1e-5 * (1.0 + x.norm());
  Philox rng(seed, 0);
  Vector v = rng.gaussian_vector(x.size());
  v /= v.norm();

  const auto jvp = [&](const Vector& dir) {
    const Vector fp = f(x + h * dir), fm = f(x - h * dir);
    if (!fp.allFinite() || !fm.allFinite())
      throw std::runtime_error("jvp_power_iteration: non-finite map value");
    return Vector((fp - fm) / (2.0 * h));
  };

  JvpEstimate out;
  double prev = 0.0;
  for (int i = 0; i < iters; ++i) {
    const Vector w = jvp(v);
    if (w.size() != v.size()) {
      // Rectangular Jacobian: build it from d directional derivatives and
      // hand off to the matrix estimator.
      Matrix J(w.size(), x.size());
      for (Index c = 0; c < x.size(); ++c)
        J.col(c) = jvp(Vector::Unit(x.size(), c));
      return {spec_norm(J, std::max(iters, 50), seed), false};
    }
    const double wn = w.norm();
    if (wn < 1e-300) return out;  // kernel hit: keep the max seen so far
    v = w / wn;
    if (i + 1 == iters && prev > 0.0 &&
        std::abs(wn - prev) > 1e-3 * std::max(1.0, prev))
      out.oscillation_warning = true;
    prev = wn;
    out.value = std::max(out.value, wn);
  }
  return out;
}

// Max Jacobian norm over a calibration set (default: Gaussian cloud).
inline double estimate_map_lipschitz(
    const std::function<Vector(const Vector&)>& f, Index dim, int points = 256,
    int iters = 30, double fd_step = 0.0, std::uint64_t seed = 0x5eed0003ULL) {
  if (points < 1)
    throw std::invalid_argument("estimate_map_lipschitz: points must be >= 1");
  Philox rng(seed, 1);
  double worst = 0.0;
  for (int i = 0; i < points; ++i) {
    const Vector x = rng.gaussian_vector(dim);
    worst = std::max(worst,
                     jvp_power_iteration(f, x, iters, fd_step, seed ^ (i + 1)).value);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Softmax and its Jacobian
// ---------------------------------------------------------------------------

inline Vector softmax(const Vector& x, double beta = 1.0) {
  if (x.size() == 0) throw std::invalid_argument("softmax: empty input");
  if (!x.allFinite()) throw std::invalid_argument("softmax: non-finite input");
  if (!(beta > 0.0)) throw std::invalid_argument("softmax: beta must be positive");
  const double m = x.maxCoeff();  // shift for overflow safety
  Vector e = ((x.array() - m) * beta).exp();
  return e / e.sum();
}

// J(x) = beta * (Diag(p) - p p^T), p = softmax(x, beta).  Symmetric PSD with
// v^T J v = beta * Var_p[v]; spectral norm at most beta/2.
inline Matrix softmax_jacobian(const Vector& x, double beta = 1.0) {
  const Vector p = softmax(x, beta);
  Matrix J = -beta * (p * p.transpose());
  J.diagonal() += beta * p;
  return J;
}

// Empirical Lipschitz probe of softmax in dimension `dim`: Gaussian pairs at
// two scales mixed with antipodal pairs near the origin, where the bound
// beta/2 is approached (exactly attained in the binary case).
inline double softmax_lip_probe(Index dim, double beta, std::int64_t n_pairs,
                                Philox& rng) {
  if (dim < 2) throw std::invalid_argument("softmax_lip_probe: dim must be >= 2");
  if (n_pairs < 1)
    throw std::invalid_argument("softmax_lip_probe: n_pairs must be >= 1");
  double worst = 0.0;
  for (std::int64_t i = 0; i < n_pairs; ++i) {
    Vector x, y;
    switch (i % 3) {
      case 0:
        x = rng.gaussian_vector(dim);
        y = rng.gaussian_vector(dim);
        break;
      case 1:
        x = 3.0 * rng.gaussian_vector(dim);
        y = 3.0 * rng.gaussian_vector(dim);
        break;
      default: {  // antipodal pair hugging the origin
        Vector u = rng.gaussian_vector(dim);
        const double un = u.norm();
        if (un == 0.0) continue;
        u *= (1e-4 / un);
        x = u;
        y = -u;
        break;
      }
    }
    const double dn = (x - y).norm();
    if (dn == 0.0) continue;
    worst = std::max(worst, (softmax(x, beta) - softmax(y, beta)).norm() / dn);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Layer certification
// ---------------------------------------------------------------------------

struct HeadSpec {
  Matrix projector;  // r_h x d (square d x d for subspace projectors)
  std::function<Vector(const Vector&)> map;  // optional: the head body U_h
  Index output_dim = -1;                     // required when map is set
  std::optional<double> modulus_bound;       // Lipschitz bound for U_h
};

struct LayerSpec {
  Index dim = 0;  // ambient input dimension
  std::vector<HeadSpec> heads;
  Matrix output_map;  // d_out x (sum of head output dims)
};

inline double overlap_index(const std::vector<HeadSpec>& heads) {
  if (heads.empty()) throw std::invalid_argument("overlap_index: no heads");
  const Index d = heads.front().projector.cols();
  Matrix G = Matrix::Zero(d, d);
  for (const auto& h : heads) {
    if (h.projector.cols() != d)
      throw std::invalid_argument("overlap_index: projector widths differ");
    G += h.projector.transpose() * h.projector;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(G);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

enum class CertMethod { Orthogonal, General, Overlap };

inline const char* to_string(CertMethod m) {
  switch (m) {
    case CertMethod::Orthogonal: return "orthogonal";
    case CertMethod::General: return "general";
    case CertMethod::Overlap: return "overlap";
  }
  return "?";
}

struct ContractionCertificate {
  CertMethod method = CertMethod::Overlap;
  double bound = 0.0;
  double margin = 0.0;  // 1 - bound
  bool passes = false;
  std::uint64_t inputs_digest = 0;
  // Witnesses: enough to reproduce `bound` from the method's formula.
  std::vector<double> head_moduli;
  std::vector<double> projector_norms;  // general method
  double overlap = 0.0;                 // Omega of the head family
  double lambda_max_s = 0.0;            // overlap method
  double output_map_norm = 0.0;
};

namespace detail {
inline void digest_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {  // FNV-1a
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}

inline void digest_matrix(std::uint64_t& h, const Matrix& M) {
  const std::int64_t r = M.rows(), c = M.cols();
  digest_bytes(h, &r, sizeof r);
  digest_bytes(h, &c, sizeof c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) {
      const double v = M(i, j);
      digest_bytes(h, &v, sizeof v);
    }
}
}  // namespace detail

// The full layer map x -> W_o concat_h U_h(P_h x); requires every head to
// carry a callable body.
inline std::function<Vector(const Vector&)> assemble_layer_map(
    const LayerSpec& layer) {
  Index concat = 0;
  for (const auto& h : layer.heads) {
    if (!h.map)
      throw std::invalid_argument("assemble_layer_map: head without a body");
    if (h.output_dim < 0)
      throw std::invalid_argument("assemble_layer_map: head output_dim unset");
    concat += h.output_dim;
  }
  if (layer.output_map.cols() != concat)
    throw std::invalid_argument(
        "assemble_layer_map: output map width must match concatenated heads");
  return [layer](const Vector& x) {
    Vector cat(layer.output_map.cols());
    Index at = 0;
    for (const auto& h : layer.heads) {
      const Vector out = h.map(h.projector * x);
      if (out.size() != h.output_dim)
        throw std::runtime_error("layer map: head output dimension mismatch");
      cat.segment(at, out.size()) = out;
      at += out.size();
    }
    return Vector(layer.output_map * cat);
  };
}

inline ContractionCertificate certify_layer(const LayerSpec& layer,
                                            CertMethod method,
                                            int calibration_points = 256,
                                            std::uint64_t seed = 0x5eed0004ULL) {
  if (layer.heads.empty())
    throw std::invalid_argument("certify_layer: layer has no heads");
  for (const auto& h : layer.heads) {
    if (h.projector.cols() != layer.dim)
      throw std::invalid_argument("certify_layer: projector width != layer dim");
    if (!h.projector.allFinite())
      throw std::invalid_argument("certify_layer: non-finite projector");
  }
  if (!layer.output_map.allFinite())
    throw std::invalid_argument("certify_layer: non-finite output map");

  ContractionCertificate cert;
  cert.method = method;

  // Resolve per-head moduli: declared bound, else Jacobian power iteration
  // over a calibration cloud in the head's input space.
  for (std::size_t i = 0; i < layer.heads.size(); ++i) {
    const auto& h = layer.heads[i];
    if (h.modulus_bound) {
      cert.head_moduli.push_back(*h.modulus_bound);
    } else {
      if (!h.map)
        throw std::invalid_argument(
            "certify_layer: head " + std::to_string(i) +
            " has neither a modulus bound nor a body to estimate one from");
      cert.head_moduli.push_back(estimate_map_lipschitz(
          h.map, h.projector.rows(), calibration_points, 30, 0.0,
          seed ^ (0x9e37 + i)));
    }
  }

  cert.overlap = overlap_index(layer.heads);

  switch (method) {
    case CertMethod::Orthogonal: {
      // Heads read pairwise orthogonal subspaces iff P_a P_b^T = 0: rows of
      // P_a are then orthogonal to rows of P_b.
      for (std::size_t a = 0; a < layer.heads.size(); ++a)
        for (std::size_t b = a + 1; b < layer.heads.size(); ++b) {
          const double cross = (layer.heads[a].projector *
                                layer.heads[b].projector.transpose())
                                   .norm();
          if (cross > 1e-9)
            throw std::invalid_argument(
                "certify_layer: heads " + std::to_string(a) + " and " +
                std::to_string(b) + " are not orthogonal (residual " +
                std::to_string(cross) + "); use the overlap method");
        }
      if (cert.overlap > 1.0 + 1e-9)
        throw std::invalid_argument(
            "certify_layer: head family exceeds identity cover (overlap " +
            std::to_string(cert.overlap) + "); use the overlap method");
      const Matrix gram =
          layer.output_map.transpose() * layer.output_map -
          Matrix::Identity(layer.output_map.cols(), layer.output_map.cols());
      if (gram.norm() > 1e-9)
        throw std::invalid_argument(
            "certify_layer: output map is not an isometry (residual " +
            std::to_string(gram.norm()) + "); use the overlap method");
      double worst = 0.0;
      for (const double L : cert.head_moduli) worst = std::max(worst, L);
      cert.bound = worst;
      break;
    }
    case CertMethod::General: {
      cert.output_map_norm = spec_norm(layer.output_map, 100, seed);
      double sum = 0.0;
      for (std::size_t i = 0; i < layer.heads.size(); ++i) {
        const double pn = spec_norm(layer.heads[i].projector, 100, seed ^ (i + 1));
        cert.projector_norms.push_back(pn);
        sum += cert.head_moduli[i] * cert.head_moduli[i] * pn * pn;
      }
      cert.bound = cert.output_map_norm * std::sqrt(sum);
      break;
    }
    case CertMethod::Overlap: {
      cert.output_map_norm = spec_norm(layer.output_map, 100, seed);
      Matrix S = Matrix::Zero(layer.dim, layer.dim);
      for (std::size_t i = 0; i < layer.heads.size(); ++i)
        S += cert.head_moduli[i] * cert.head_moduli[i] *
             layer.heads[i].projector.transpose() * layer.heads[i].projector;
      Eigen::SelfAdjointEigenSolver<Matrix> es(S);
      cert.lambda_max_s = std::max(0.0, es.eigenvalues().maxCoeff());
      cert.bound = cert.output_map_norm * std::sqrt(cert.lambda_max_s);
      break;
    }
  }

  cert.margin = 1.0 - cert.bound;
  cert.passes = cert.bound < 1.0;

  std::uint64_t digest = 1469598103934665603ULL;  // FNV offset basis
  detail::digest_bytes(digest, &layer.dim, sizeof layer.dim);
  for (const auto& h : layer.heads) detail::digest_matrix(digest, h.projector);
  detail::digest_matrix(digest, layer.output_map);
  for (const double L : cert.head_moduli)
    detail::digest_bytes(digest, &L, sizeof L);
  const int m = static_cast<int>(method);
  detail::digest_bytes(digest, &m, sizeof m);
  cert.inputs_digest = digest;
  return cert;
}

}  // namespace anchorkit
