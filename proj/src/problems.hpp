#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "linalg.hpp"

namespace bilevel {

struct Dims {
  Index d = 0;  // upper variable
  Index p = 0;  // lower variable
};

// Constants the generator knows about its own problem. Exact matrix norms for
// the quadratic families; sampled estimates (lower bounds) for matrix sensing.
struct MeasuredConstants {
  double l_f = 0.0;
  double l_g = 0.0;
  double l_gxy = 0.0;
  double l_gyy = 0.0;
  double c_gxy = 0.0;    // spectral norm of the cross Jacobian (or max probe)
  double mu = 0.0;       // PL floor / smallest positive Hessian eigenvalue
  double r1_norm = 0.0;  // scale of grad_y f, used for default clip radii
  bool estimated = false;
};

using IndexSpan = std::span<const std::int32_t>;

// Two-level problem oracle. Deterministic forms average over the full sample
// set; stochastic forms average over an index batch (f-derivatives index the
// upper sample space, g-derivatives the lower one). Instances are immutable
// after construction and evaluations are pure.
class BilevelOracle {
 public:
  virtual ~BilevelOracle() = default;

  virtual Dims dims() const = 0;
  virtual std::int64_t n_f_samples() const = 0;
  virtual std::int64_t n_g_samples() const = 0;

  virtual double f(const Vec& x, const Vec& y) const = 0;
  virtual double g(const Vec& x, const Vec& y) const = 0;
  virtual Vec grad_f_x(const Vec& x, const Vec& y) const = 0;
  virtual Vec grad_f_y(const Vec& x, const Vec& y) const = 0;
  virtual Vec grad_g_y(const Vec& x, const Vec& y) const = 0;
  virtual Mat jac_g_xy(const Vec& x, const Vec& y) const = 0;   // d x p
  virtual Mat hess_g_yy(const Vec& x, const Vec& y) const = 0;  // p x p

  virtual double f(const Vec& x, const Vec& y, IndexSpan idx) const = 0;
  virtual double g(const Vec& x, const Vec& y, IndexSpan idx) const = 0;
  virtual Vec grad_f_x(const Vec& x, const Vec& y, IndexSpan idx) const = 0;
  virtual Vec grad_f_y(const Vec& x, const Vec& y, IndexSpan idx) const = 0;
  virtual Vec grad_g_y(const Vec& x, const Vec& y, IndexSpan idx) const = 0;
  virtual Mat jac_g_xy(const Vec& x, const Vec& y, IndexSpan idx) const = 0;
  virtual Mat hess_g_yy(const Vec& x, const Vec& y, IndexSpan idx) const = 0;

  virtual MeasuredConstants measured_constants() const = 0;

  // Closed-form lower-level solution, when the family has one.
  virtual std::optional<Vec> lower_argmin(const Vec& x) const { return std::nullopt; }
  virtual std::optional<double> lower_minimum(const Vec& x) const { return std::nullopt; }

 protected:
  void require_dims(const Vec& x, const Vec& y, const char* who) const;
};

// ---------------------------------------------------------------------------
// Bilevel PL game: f = x'Px/2 + x'R1 y, g = y'Qy/2 + x'R2 y with P, Q built
// from n rank-one samples (singular when l < d).
// ---------------------------------------------------------------------------
struct PLGameInstance {
  Index d = 0;
  Index l = 0;
  std::int64_t n = 0;
  double interval_mu = 0.0;
  double interval_l = 0.0;
  std::uint64_t seed = 0;
  bool range_compatible = false;

  Mat p_mat, q_mat, r1_mat, r2_mat;        // d x d
  Mat p_samples, q_samples;                // d x n factor columns
  Mat r1_samples, r2_samples;              // d x n (r2 empty when range_compatible)
};

struct PLGameParams {
  Index d = 50;
  Index l = 48;
  std::int64_t n = 2500;
  double mu = 1.0;
  double l_interval = 4.0;
  std::uint64_t seed = 0;
  bool range_compatible = false;
};

PLGameInstance generate_pl_game(const PLGameParams& params);
std::shared_ptr<const BilevelOracle> pl_game_oracle(PLGameInstance inst);

// ---------------------------------------------------------------------------
// Matrix-sensing hyper-representation: U = [x columns | y], per-sample loss
// l_i(U) = (<C_i, U U'> - e_i)^2 / 2; upper objective averages over the
// validation split, lower over the training split.
// ---------------------------------------------------------------------------
struct MatrixSensingInstance {
  Index d = 0;
  Index r = 0;
  std::int64_t n = 0;
  std::uint64_t seed = 0;

  std::vector<Mat> sensing;  // n matrices, d x d
  Vec labels;                // n
  Mat h_star;                // d x d, rank r
  Mat u_star;                // d x r
  std::vector<std::int32_t> train_idx, val_idx;
};

struct MatrixSensingParams {
  Index d = 50;
  Index r = 3;
  std::uint64_t seed = 0;
};

MatrixSensingInstance generate_matrix_sensing(const MatrixSensingParams& params);
std::shared_ptr<const BilevelOracle> matrix_sensing_oracle(MatrixSensingInstance inst);

// ---------------------------------------------------------------------------
// Strongly convex quadratic verification problem: same shape as the PL game
// but with nonsingular Q, so the hyper-gradient has a closed form.
// ---------------------------------------------------------------------------
struct QuadOracleInstance {
  Index d = 0;
  Index p = 0;
  double mu_gen = 0.0;
  double lg_gen = 0.0;
  std::uint64_t seed = 0;

  Mat p_mat;           // d x d symmetric
  Mat q_mat;           // p x p SPD, eigenvalues in [mu_gen, lg_gen]
  Mat r1_mat, r2_mat;  // d x p
};

struct QuadGenParams {
  Index d = 10;
  Index p = 10;
  double mu_gen = 1.0;
  double lg_gen = 4.0;
  double p_lo = 0.5;   // spectrum of the (PSD) upper matrix
  double p_hi = 2.0;
  double r_scale = 0.1;
  double c_gxy = 1.0;  // cap on the spectral norm of R2
  std::uint64_t seed = 0;
};

QuadOracleInstance generate_quad_oracle(const QuadGenParams& params);
std::shared_ptr<const BilevelOracle> quad_oracle(QuadOracleInstance inst);

struct QuadTruth {
  Vec y_star;
  Vec grad_f_true;
  double g_min = 0.0;
};

// Closed-form lower solution, hyper-gradient and lower minimum at x.
QuadTruth quad_oracle_truth(const QuadOracleInstance& inst, const Vec& x);

}  // namespace bilevel
