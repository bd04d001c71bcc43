#pragma once

#include "linalg.hpp"

namespace bilevel {

// Eigendecomposition U diag(theta) U^T of a symmetric matrix. No ordering
// guarantee on the basis; contracts are stated on reconstructions.
struct SymEig {
  Mat basis;        // p x p, orthogonal columns
  Vec eigenvalues;  // length p

  Index size() const { return eigenvalues.size(); }
  Mat reconstruct() const;
  // Multiply the reconstructed matrix by v without forming it.
  Vec apply(const Vec& v) const;
};

// Radii and spectral window of the clipped hyper-gradient estimator:
// ball radius for grad_y f, spectral-norm radius for the cross Jacobian,
// and the eigenvalue window [mu, l_g] for the lower Hessian.
struct ClipSpec {
  double c_fy = 1.0;
  double c_gxy = 1.0;
  double mu = 1.0;
  double l_g = 1.0;

  void validate() const;
};

// Eigenvalue clamp S_[lo,hi]: decompose, clamp each eigenvalue into [lo, hi],
// keep the eigenbasis. Inputs asymmetric beyond tolerance are rejected;
// asymmetry below it is symmetrized via (M + M^T)/2 first.
SymEig clamp_spectrum(const Mat& m, double lo, double hi);

// Spectral-norm ball projection: singular values become min(sigma_i, c),
// singular vectors are preserved. Returns m itself (bit-for-bit) whenever a
// cheap certificate (Frobenius norm, then sigma_max) shows ||m|| <= c.
Mat project_spectral_norm(const Mat& m, double c);

// Euclidean ball projection: v when ||v|| <= c, else c * v / ||v||.
Vec project_ball(const Vec& v, double c);

// Solve (U diag(theta) U^T) r = rhs as U (U^T rhs ./ theta); no explicit
// inverse is formed. All eigenvalues must be strictly positive.
Vec apply_clamped_inverse(const SymEig& h_eig, const Vec& rhs);

}  // namespace bilevel
