#pragma once

#include <Eigen/Dense>

#include "errors.hpp"

namespace bilevel {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_finite(const Vec& v, const char* who) {
  if (!v.allFinite()) fail(ErrorCode::InvalidInput, std::string(who) + ": non-finite entries");
}
inline void require_finite(const Mat& m, const char* who) {
  if (!m.allFinite()) fail(ErrorCode::InvalidInput, std::string(who) + ": non-finite entries");
}

// Largest singular value.
inline double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  if (m.rows() < 16 && m.cols() < 16)
    return Eigen::JacobiSVD<Mat>(m).singularValues()(0);
  return Eigen::BDCSVD<Mat>(m).singularValues()(0);
}

}  // namespace bilevel
