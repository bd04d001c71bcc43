#include "spectral.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace bilevel {

namespace {
constexpr double kSymmetryTol = 1e-8;
}

Mat SymEig::reconstruct() const {
  return basis * eigenvalues.asDiagonal() * basis.transpose();
}

Vec SymEig::apply(const Vec& v) const {
  return basis * (eigenvalues.cwiseProduct(basis.transpose() * v));
}

void ClipSpec::validate() const {
  if (!(c_fy > 0.0) || !(c_gxy > 0.0))
    fail(ErrorCode::InvalidConfiguration, "ClipSpec: radii must be positive");
  if (!(mu > 0.0) || !(mu <= l_g))
    fail(ErrorCode::InvalidConfiguration, "ClipSpec: need 0 < mu <= l_g");
}

SymEig clamp_spectrum(const Mat& m, double lo, double hi) {
  require_finite(m, "clamp_spectrum");
  if (m.rows() != m.cols())
    fail(ErrorCode::InvalidInput, "clamp_spectrum: matrix must be square");
  if (!(lo > 0.0) || !(lo <= hi))
    fail(ErrorCode::InvalidInput, "clamp_spectrum: need 0 < lo <= hi");

  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asym > kSymmetryTol * scale)
    fail(ErrorCode::SymmetryViolation,
         "clamp_spectrum: asymmetry " + std::to_string(asym) + " beyond tolerance");

  const Mat sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  if (eig.info() != Eigen::Success)
    fail(ErrorCode::NumericFailure, "clamp_spectrum: eigendecomposition failed");

  SymEig out;
  out.basis = eig.eigenvectors();
  out.eigenvalues = eig.eigenvalues().cwiseMax(lo).cwiseMin(hi);
  return out;
}

Mat project_spectral_norm(const Mat& m, double c) {
  require_finite(m, "project_spectral_norm");
  if (!(c > 0.0))
    fail(ErrorCode::InvalidInput, "project_spectral_norm: radius must be positive");

  // Frobenius norm dominates the spectral norm; membership is certified
  // without an SVD on typical iterates.
  if (m.norm() <= c) return m;

  // Symmetric inputs: singular values are |eigenvalues|, shared basis. The
  // symmetric eigensolver is several times faster than a dense SVD.
  if (m.rows() == m.cols()) {
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-13 * scale) {
      Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (m + m.transpose()));
      const Vec& lambda = eig.eigenvalues();
      if (lambda.cwiseAbs().maxCoeff() <= c) return m;
      Vec clipped(lambda.size());
      for (Index i = 0; i < lambda.size(); ++i)
        clipped(i) = std::clamp(lambda(i), -c, c);
      return eig.eigenvectors() * clipped.asDiagonal() *
             eig.eigenvectors().transpose();
    }
  }

  Eigen::BDCSVD<Mat> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sigma = svd.singularValues();
  if (sigma(0) <= c) return m;
  const Vec clipped = sigma.cwiseMin(c);
  return svd.matrixU() * clipped.asDiagonal() * svd.matrixV().transpose();
}

Vec project_ball(const Vec& v, double c) {
  require_finite(v, "project_ball");
  if (!(c > 0.0))
    fail(ErrorCode::InvalidInput, "project_ball: radius must be positive");
  const double norm = v.norm();
  if (norm <= c) return v;
  return (c / norm) * v;
}

Vec apply_clamped_inverse(const SymEig& h_eig, const Vec& rhs) {
  if (h_eig.eigenvalues.size() != rhs.size())
    fail(ErrorCode::InvalidInput, "apply_clamped_inverse: dimension mismatch");
  if (h_eig.eigenvalues.size() == 0) return rhs;
  if (h_eig.eigenvalues.minCoeff() <= 0.0)
    fail(ErrorCode::Singularity,
         "apply_clamped_inverse: nonpositive eigenvalue; clamp the spectrum first");
  return h_eig.basis *
         ((h_eig.basis.transpose() * rhs).cwiseQuotient(h_eig.eigenvalues));
}

}  // namespace bilevel
