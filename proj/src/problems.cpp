#include "problems.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "rng.hpp"

namespace bilevel {

namespace {

Mat gaussian_matrix(Rng& rng, Index rows, Index cols, double stddev = 1.0) {
  Mat m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = stddev * rng.normal();
  return m;
}

// Thin Q factor of a Gaussian matrix: random column-orthogonal basis.
Mat random_orthogonal_columns(Rng& rng, Index rows, Index cols) {
  const Mat g = gaussian_matrix(rng, rows, cols);
  Eigen::HouseholderQR<Mat> qr(g);
  return qr.householderQ() * Mat::Identity(rows, cols);
}

void check_batch(IndexSpan idx, std::int64_t n, const char* who) {
  if (idx.empty()) fail(ErrorCode::InvalidInput, std::string(who) + ": empty index batch");
  for (const auto i : idx)
    if (i < 0 || i >= n)
      fail(ErrorCode::InvalidInput, std::string(who) + ": sample index out of range");
}

double smallest_positive_eigenvalue(const Mat& sym, double rel_floor = 1e-8) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym, Eigen::EigenvaluesOnly);
  const Vec& vals = eig.eigenvalues();
  const double cutoff = rel_floor * std::max(1.0, vals.cwiseAbs().maxCoeff());
  double smallest = vals(vals.size() - 1);
  for (Index i = 0; i < vals.size(); ++i)
    if (vals(i) > cutoff) smallest = std::min(smallest, vals(i));
  return smallest;
}

}  // namespace

void BilevelOracle::require_dims(const Vec& x, const Vec& y, const char* who) const {
  const Dims dm = dims();
  if (x.size() != dm.d || y.size() != dm.p)
    fail(ErrorCode::InvalidInput, std::string(who) + ": dimension mismatch");
  require_finite(x, who);
  require_finite(y, who);
}

// ---------------------------------------------------------------------------
// PL game
// ---------------------------------------------------------------------------

PLGameInstance generate_pl_game(const PLGameParams& params) {
  if (!(params.l > 0 && params.l < params.d))
    fail(ErrorCode::InvalidConfiguration, "generate_pl_game: need 0 < l < d");
  if (params.n < 1) fail(ErrorCode::InvalidConfiguration, "generate_pl_game: need n >= 1");
  if (!(params.mu > 0.0 && params.mu < params.l_interval))
    fail(ErrorCode::InvalidConfiguration, "generate_pl_game: need 0 < mu < L");

  Rng rng = Rng::substream(params.seed, "instance-gen");
  const Index d = params.d, l = params.l;
  const std::int64_t n = params.n;

  PLGameInstance inst;
  inst.d = d;
  inst.l = l;
  inst.n = n;
  inst.interval_mu = params.mu;
  inst.interval_l = params.l_interval;
  inst.seed = params.seed;
  inst.range_compatible = params.range_compatible;

  // Covariance factors: Sigma = A A' with A = U sqrt(D) (rank l) for P and Q,
  // and A = sqrt(0.001) V (full) for the R families.
  const Mat u1 = random_orthogonal_columns(rng, d, l);
  Vec d1(l);
  for (Index i = 0; i < l; ++i) d1(i) = rng.uniform(params.mu, params.l_interval);
  const Mat factor_p = u1 * d1.cwiseSqrt().asDiagonal();

  const Mat u2 = random_orthogonal_columns(rng, d, l);
  Vec d2(l);
  for (Index i = 0; i < l; ++i) d2(i) = rng.uniform(params.mu, params.l_interval);
  const Mat factor_q = u2 * d2.cwiseSqrt().asDiagonal();

  const double r_std = std::sqrt(0.001);
  const Mat factor_r1 = r_std * gaussian_matrix(rng, d, d);
  const Mat factor_r2 = r_std * gaussian_matrix(rng, d, d);

  inst.p_samples = factor_p * gaussian_matrix(rng, l, n);
  inst.q_samples = factor_q * gaussian_matrix(rng, l, n);
  inst.r1_samples = factor_r1 * gaussian_matrix(rng, d, n);
  if (!params.range_compatible)
    inst.r2_samples = factor_r2 * gaussian_matrix(rng, d, n);

  const double inv_n = 1.0 / static_cast<double>(n);
  inst.p_mat = inv_n * (inst.p_samples * inst.p_samples.transpose());
  inst.q_mat = inv_n * (inst.q_samples * inst.q_samples.transpose());
  inst.r1_mat = 0.01 * inv_n * (inst.r1_samples * inst.r1_samples.transpose());
  if (params.range_compatible) {
    // R2 = B Q keeps (R2)' x in range(Q), so the lower level stays bounded.
    const Mat b = gaussian_matrix(rng, d, d, 0.1 / std::sqrt(double(d)));
    inst.r2_mat = b * inst.q_mat;
  } else {
    inst.r2_mat = 0.01 * inv_n * (inst.r2_samples * inst.r2_samples.transpose());
  }
  return inst;
}

namespace {

class PLGameOracle final : public BilevelOracle {
 public:
  explicit PLGameOracle(PLGameInstance inst) : inst_(std::move(inst)) {
    constants_.l_f = std::max(spectral_norm(inst_.p_mat), spectral_norm(inst_.r1_mat));
    constants_.c_gxy = spectral_norm(inst_.r2_mat);
    constants_.l_g = std::max(spectral_norm(inst_.q_mat), constants_.c_gxy);
    constants_.l_gxy = 0.0;
    constants_.l_gyy = 0.0;
    constants_.mu = smallest_positive_eigenvalue(inst_.q_mat);
    constants_.r1_norm = spectral_norm(inst_.r1_mat);
    q_solver_.compute(inst_.q_mat);
  }

  Dims dims() const override { return {inst_.d, inst_.d}; }
  std::int64_t n_f_samples() const override { return inst_.n; }
  std::int64_t n_g_samples() const override { return inst_.n; }

  double f(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "plgame.f");
    return 0.5 * x.dot(inst_.p_mat * x) + x.dot(inst_.r1_mat * y);
  }
  double g(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "plgame.g");
    return 0.5 * y.dot(inst_.q_mat * y) + x.dot(inst_.r2_mat * y);
  }
  Vec grad_f_x(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "plgame.grad_f_x");
    return inst_.p_mat * x + inst_.r1_mat * y;
  }
  Vec grad_f_y(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "plgame.grad_f_y");
    return inst_.r1_mat.transpose() * x;
  }
  Vec grad_g_y(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "plgame.grad_g_y");
    return inst_.q_mat * y + inst_.r2_mat.transpose() * x;
  }
  Mat jac_g_xy(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "plgame.jac_g_xy");
    return inst_.r2_mat;
  }
  Mat hess_g_yy(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "plgame.hess_g_yy");
    return inst_.q_mat;
  }

  double f(const Vec& x, const Vec& y, IndexSpan idx) const override {
    if (full_batch(idx)) return f(x, y);
    require_dims(x, y, "plgame.f");
    check_batch(idx, inst_.n, "plgame.f");
    double acc = 0.0;
    for (const auto i : idx) {
      const double px = inst_.p_samples.col(i).dot(x);
      acc += 0.5 * px * px + 0.01 * inst_.r1_samples.col(i).dot(x) * inst_.r1_samples.col(i).dot(y);
    }
    return acc / double(idx.size());
  }
  double g(const Vec& x, const Vec& y, IndexSpan idx) const override {
    if (full_batch(idx)) return g(x, y);
    require_dims(x, y, "plgame.g");
    check_batch(idx, inst_.n, "plgame.g");
    double acc = 0.0;
    for (const auto i : idx) {
      const double qy = inst_.q_samples.col(i).dot(y);
      acc += 0.5 * qy * qy + coupling_value(i, x, y);
    }
    return acc / double(idx.size());
  }
  Vec grad_f_x(const Vec& x, const Vec& y, IndexSpan idx) const override {
    if (full_batch(idx)) return grad_f_x(x, y);
    require_dims(x, y, "plgame.grad_f_x");
    check_batch(idx, inst_.n, "plgame.grad_f_x");
    Vec acc = Vec::Zero(inst_.d);
    for (const auto i : idx) {
      acc += inst_.p_samples.col(i) * inst_.p_samples.col(i).dot(x);
      acc += 0.01 * inst_.r1_samples.col(i) * inst_.r1_samples.col(i).dot(y);
    }
    return acc / double(idx.size());
  }
  Vec grad_f_y(const Vec& x, const Vec& y, IndexSpan idx) const override {
    if (full_batch(idx)) return grad_f_y(x, y);
    require_dims(x, y, "plgame.grad_f_y");
    check_batch(idx, inst_.n, "plgame.grad_f_y");
    Vec acc = Vec::Zero(inst_.d);
    for (const auto i : idx)
      acc += 0.01 * inst_.r1_samples.col(i) * inst_.r1_samples.col(i).dot(x);
    return acc / double(idx.size());
  }
  Vec grad_g_y(const Vec& x, const Vec& y, IndexSpan idx) const override {
    if (full_batch(idx)) return grad_g_y(x, y);
    require_dims(x, y, "plgame.grad_g_y");
    check_batch(idx, inst_.n, "plgame.grad_g_y");
    Vec acc = Vec::Zero(inst_.d);
    for (const auto i : idx) {
      acc += inst_.q_samples.col(i) * inst_.q_samples.col(i).dot(y);
      acc += coupling_grad_y(i, x);
    }
    return acc / double(idx.size());
  }
  Mat jac_g_xy(const Vec& x, const Vec& y, IndexSpan idx) const override {
    if (full_batch(idx)) return jac_g_xy(x, y);
    require_dims(x, y, "plgame.jac_g_xy");
    check_batch(idx, inst_.n, "plgame.jac_g_xy");
    if (inst_.range_compatible) return inst_.r2_mat;
    Mat acc = Mat::Zero(inst_.d, inst_.d);
    for (const auto i : idx)
      acc += 0.01 * inst_.r2_samples.col(i) * inst_.r2_samples.col(i).transpose();
    return acc / double(idx.size());
  }
  Mat hess_g_yy(const Vec& x, const Vec& y, IndexSpan idx) const override {
    if (full_batch(idx)) return hess_g_yy(x, y);
    require_dims(x, y, "plgame.hess_g_yy");
    check_batch(idx, inst_.n, "plgame.hess_g_yy");
    Mat acc = Mat::Zero(inst_.d, inst_.d);
    for (const auto i : idx)
      acc += inst_.q_samples.col(i) * inst_.q_samples.col(i).transpose();
    return acc / double(idx.size());
  }

  MeasuredConstants measured_constants() const override { return constants_; }

  std::optional<Vec> lower_argmin(const Vec& x) const override {
    const Vec rhs = -(inst_.r2_mat.transpose() * x);
    const Vec y = q_solver_.solve(rhs);
    const double residual = (inst_.q_mat * y - rhs).norm();
    const double scale = 1.0 + rhs.norm() + inst_.q_mat.norm() * y.norm();
    if (residual > 1e-8 * scale) return std::nullopt;  // rhs leaves range(Q)
    return y;
  }
  std::optional<double> lower_minimum(const Vec& x) const override {
    const auto y = lower_argmin(x);
    if (!y) return std::nullopt;
    return g(x, *y);
  }

  const PLGameInstance& instance() const { return inst_; }

 private:
  bool full_batch(IndexSpan idx) const {
    return static_cast<std::int64_t>(idx.size()) == inst_.n;
  }
  double coupling_value(std::int32_t i, const Vec& x, const Vec& y) const {
    if (inst_.range_compatible) return x.dot(inst_.r2_mat * y);
    return 0.01 * inst_.r2_samples.col(i).dot(x) * inst_.r2_samples.col(i).dot(y);
  }
  Vec coupling_grad_y(std::int32_t i, const Vec& x) const {
    if (inst_.range_compatible) return inst_.r2_mat.transpose() * x;
    return 0.01 * inst_.r2_samples.col(i) * inst_.r2_samples.col(i).dot(x);
  }

  PLGameInstance inst_;
  MeasuredConstants constants_;
  Eigen::CompleteOrthogonalDecomposition<Mat> q_solver_;
};

}  // namespace

std::shared_ptr<const BilevelOracle> pl_game_oracle(PLGameInstance inst) {
  return std::make_shared<PLGameOracle>(std::move(inst));
}

// ---------------------------------------------------------------------------
// Matrix sensing
// ---------------------------------------------------------------------------

MatrixSensingInstance generate_matrix_sensing(const MatrixSensingParams& params) {
  if (!(params.r >= 1 && params.r < params.d))
    fail(ErrorCode::InvalidConfiguration, "generate_matrix_sensing: need 1 <= r < d");

  Rng rng = Rng::substream(params.seed, "instance-gen");
  const Index d = params.d, r = params.r;
  const std::int64_t n = 20 * static_cast<std::int64_t>(d);

  MatrixSensingInstance inst;
  inst.d = d;
  inst.r = r;
  inst.n = n;
  inst.seed = params.seed;
  inst.u_star = gaussian_matrix(rng, d, r, 1.0 / std::sqrt(double(d)));
  inst.h_star = inst.u_star * inst.u_star.transpose();

  inst.sensing.reserve(n);
  inst.labels.resize(n);
  for (std::int64_t i = 0; i < n; ++i) {
    inst.sensing.push_back(gaussian_matrix(rng, d, d));
    inst.labels(i) = inst.sensing.back().cwiseProduct(inst.h_star).sum();
  }

  // 40/60 train/validation split by uniform shuffle.
  std::vector<std::int32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = rng.uniform_index(i + 1);
    std::swap(order[i], order[j]);
  }
  const auto n_train = static_cast<std::int64_t>(std::llround(0.4 * double(n)));
  inst.train_idx.assign(order.begin(), order.begin() + n_train);
  inst.val_idx.assign(order.begin() + n_train, order.end());
  std::sort(inst.train_idx.begin(), inst.train_idx.end());
  std::sort(inst.val_idx.begin(), inst.val_idx.end());
  return inst;
}

namespace {

class MatrixSensingOracle final : public BilevelOracle {
 public:
  explicit MatrixSensingOracle(MatrixSensingInstance inst) : inst_(std::move(inst)) {
    sym_.reserve(inst_.sensing.size());
    for (const auto& c : inst_.sensing) sym_.push_back(c + c.transpose());
    all_train_.resize(inst_.train_idx.size());
    std::iota(all_train_.begin(), all_train_.end(), 0);
    all_val_.resize(inst_.val_idx.size());
    std::iota(all_val_.begin(), all_val_.end(), 0);
    estimate_constants();
  }

  Dims dims() const override { return {inst_.d * (inst_.r - 1), inst_.d}; }
  std::int64_t n_f_samples() const override {
    return static_cast<std::int64_t>(inst_.val_idx.size());
  }
  std::int64_t n_g_samples() const override {
    return static_cast<std::int64_t>(inst_.train_idx.size());
  }

  double f(const Vec& x, const Vec& y) const override { return f(x, y, all_val_); }
  double g(const Vec& x, const Vec& y) const override { return g(x, y, all_train_); }
  Vec grad_f_x(const Vec& x, const Vec& y) const override {
    return grad_f_x(x, y, all_val_);
  }
  Vec grad_f_y(const Vec& x, const Vec& y) const override {
    return grad_f_y(x, y, all_val_);
  }
  Vec grad_g_y(const Vec& x, const Vec& y) const override {
    return grad_g_y(x, y, all_train_);
  }
  Mat jac_g_xy(const Vec& x, const Vec& y) const override {
    return jac_g_xy(x, y, all_train_);
  }
  Mat hess_g_yy(const Vec& x, const Vec& y) const override {
    return hess_g_yy(x, y, all_train_);
  }

  double f(const Vec& x, const Vec& y, IndexSpan idx) const override {
    require_dims(x, y, "sensing.f");
    check_batch(idx, n_f_samples(), "sensing.f");
    const Mat u = assemble(x, y);
    double acc = 0.0;
    for (const auto i : idx) {
      const double res = residual(inst_.val_idx[i], u);
      acc += 0.5 * res * res;
    }
    return acc / double(idx.size());
  }
  double g(const Vec& x, const Vec& y, IndexSpan idx) const override {
    require_dims(x, y, "sensing.g");
    check_batch(idx, n_g_samples(), "sensing.g");
    const Mat u = assemble(x, y);
    double acc = 0.0;
    for (const auto i : idx) {
      const double res = residual(inst_.train_idx[i], u);
      acc += 0.5 * res * res;
    }
    return acc / double(idx.size());
  }
  Vec grad_f_x(const Vec& x, const Vec& y, IndexSpan idx) const override {
    require_dims(x, y, "sensing.grad_f_x");
    check_batch(idx, n_f_samples(), "sensing.grad_f_x");
    const Mat u = assemble(x, y);
    Mat acc = Mat::Zero(inst_.d, inst_.r - 1);
    for (const auto i : idx) {
      const Mat su = sym_[inst_.val_idx[i]] * u;
      acc += res_of(inst_.val_idx[i], su, u) * su.leftCols(inst_.r - 1);
    }
    acc /= double(idx.size());
    return Eigen::Map<const Vec>(acc.data(), acc.size());
  }
  Vec grad_f_y(const Vec& x, const Vec& y, IndexSpan idx) const override {
    require_dims(x, y, "sensing.grad_f_y");
    check_batch(idx, n_f_samples(), "sensing.grad_f_y");
    const Mat u = assemble(x, y);
    Vec acc = Vec::Zero(inst_.d);
    for (const auto i : idx) {
      const Mat su = sym_[inst_.val_idx[i]] * u;
      acc += res_of(inst_.val_idx[i], su, u) * su.col(inst_.r - 1);
    }
    return acc / double(idx.size());
  }
  Vec grad_g_y(const Vec& x, const Vec& y, IndexSpan idx) const override {
    require_dims(x, y, "sensing.grad_g_y");
    check_batch(idx, n_g_samples(), "sensing.grad_g_y");
    const Mat u = assemble(x, y);
    Vec acc = Vec::Zero(inst_.d);
    for (const auto i : idx) {
      const Mat su = sym_[inst_.train_idx[i]] * u;
      acc += res_of(inst_.train_idx[i], su, u) * su.col(inst_.r - 1);
    }
    return acc / double(idx.size());
  }
  Mat jac_g_xy(const Vec& x, const Vec& y, IndexSpan idx) const override {
    require_dims(x, y, "sensing.jac_g_xy");
    check_batch(idx, n_g_samples(), "sensing.jac_g_xy");
    const Mat u = assemble(x, y);
    Mat acc = Mat::Zero(inst_.d * (inst_.r - 1), inst_.d);
    for (const auto i : idx) {
      const Mat su = sym_[inst_.train_idx[i]] * u;
      const Mat sx = su.leftCols(inst_.r - 1);
      const Eigen::Map<const Vec> sx_vec(sx.data(), sx.size());
      acc += sx_vec * su.col(inst_.r - 1).transpose();
    }
    return acc / double(idx.size());
  }
  Mat hess_g_yy(const Vec& x, const Vec& y, IndexSpan idx) const override {
    require_dims(x, y, "sensing.hess_g_yy");
    check_batch(idx, n_g_samples(), "sensing.hess_g_yy");
    const Mat u = assemble(x, y);
    Mat acc = Mat::Zero(inst_.d, inst_.d);
    for (const auto i : idx) {
      const Mat su = sym_[inst_.train_idx[i]] * u;
      const Vec sy = su.col(inst_.r - 1);
      acc += res_of(inst_.train_idx[i], su, u) * sym_[inst_.train_idx[i]] + sy * sy.transpose();
    }
    return acc / double(idx.size());
  }

  MeasuredConstants measured_constants() const override { return constants_; }

 private:
  Mat assemble(const Vec& x, const Vec& y) const {
    Mat u(inst_.d, inst_.r);
    u.leftCols(inst_.r - 1) = Eigen::Map<const Mat>(x.data(), inst_.d, inst_.r - 1);
    u.col(inst_.r - 1) = y;
    return u;
  }
  double residual(std::int32_t sample, const Mat& u) const {
    return 0.5 * (sym_[sample] * u).cwiseProduct(u).sum() - inst_.labels(sample);
  }
  double res_of(std::int32_t sample, const Mat& su, const Mat& u) const {
    return 0.5 * su.cwiseProduct(u).sum() - inst_.labels(sample);
  }

  // Probe-based estimates; lower bounds, flagged as such.
  void estimate_constants();

  MatrixSensingInstance inst_;
  std::vector<Mat> sym_;
  std::vector<std::int32_t> all_train_, all_val_;
  MeasuredConstants constants_;
};

void MatrixSensingOracle::estimate_constants() {
  Rng rng = Rng::substream(inst_.seed, "constants-probe");
  const Index d = inst_.d, r = inst_.r;
  const int probes = 6;
  std::vector<Vec> xs, ys;
  for (int k = 0; k < probes; ++k) {
    xs.push_back(Eigen::Map<const Vec>(
        gaussian_matrix(rng, d, r - 1, 1.0 / std::sqrt(double(d))).eval().data(),
        d * (r - 1)));
    ys.push_back(gaussian_matrix(rng, d, 1, 1.0 / std::sqrt(double(d))).col(0));
  }
  double lg = 0, cgxy = 0, lgyy = 0, lgxy = 0, lf = 0;
  for (int k = 0; k < probes; ++k) {
    lg = std::max(lg, spectral_norm(hess_g_yy(xs[k], ys[k])));
    cgxy = std::max(cgxy, spectral_norm(jac_g_xy(xs[k], ys[k])));
  }
  for (int k = 0; k + 1 < probes; ++k) {
    const double dist =
        std::sqrt((xs[k] - xs[k + 1]).squaredNorm() + (ys[k] - ys[k + 1]).squaredNorm());
    if (dist < 1e-12) continue;
    lgyy = std::max(lgyy, spectral_norm(hess_g_yy(xs[k], ys[k]) - hess_g_yy(xs[k + 1], ys[k + 1])) / dist);
    lgxy = std::max(lgxy, spectral_norm(jac_g_xy(xs[k], ys[k]) - jac_g_xy(xs[k + 1], ys[k + 1])) / dist);
    const double df = std::sqrt((grad_f_x(xs[k], ys[k]) - grad_f_x(xs[k + 1], ys[k + 1])).squaredNorm() +
                                (grad_f_y(xs[k], ys[k]) - grad_f_y(xs[k + 1], ys[k + 1])).squaredNorm());
    lf = std::max(lf, df / dist);
  }
  constants_.l_f = lf;
  constants_.l_g = lg;
  constants_.l_gxy = lgxy;
  constants_.l_gyy = lgyy;
  constants_.c_gxy = cgxy;
  // Curvature floor probed at the planted factor, where residuals vanish.
  const Mat u0 = inst_.u_star;
  const Vec x0 = Eigen::Map<const Vec>(u0.data(), d * (r - 1));
  const Vec y0 = u0.col(r - 1);
  constants_.mu = std::max(1e-3, smallest_positive_eigenvalue(hess_g_yy(x0, y0)));
  double gfy = 0;
  for (int k = 0; k < probes; ++k) gfy = std::max(gfy, grad_f_y(xs[k], ys[k]).norm());
  constants_.r1_norm = gfy;
  constants_.estimated = true;
}

}  // namespace

std::shared_ptr<const BilevelOracle> matrix_sensing_oracle(MatrixSensingInstance inst) {
  return std::make_shared<MatrixSensingOracle>(std::move(inst));
}

// ---------------------------------------------------------------------------
// Quadratic verification oracle
// ---------------------------------------------------------------------------

QuadOracleInstance generate_quad_oracle(const QuadGenParams& params) {
  if (!(params.mu_gen > 0.0 && params.mu_gen <= params.lg_gen))
    fail(ErrorCode::InvalidConfiguration, "generate_quad_oracle: need 0 < mu_gen <= lg_gen");
  if (params.d < 1 || params.p < 1)
    fail(ErrorCode::InvalidConfiguration, "generate_quad_oracle: need positive dims");

  Rng rng = Rng::substream(params.seed, "instance-gen");
  QuadOracleInstance inst;
  inst.d = params.d;
  inst.p = params.p;
  inst.mu_gen = params.mu_gen;
  inst.lg_gen = params.lg_gen;
  inst.seed = params.seed;

  const Mat wq = random_orthogonal_columns(rng, params.p, params.p);
  Vec spectrum(params.p);
  for (Index i = 0; i < params.p; ++i)
    spectrum(i) = rng.uniform(params.mu_gen, params.lg_gen);
  inst.q_mat = wq * spectrum.asDiagonal() * wq.transpose();

  const Mat wp = random_orthogonal_columns(rng, params.d, params.d);
  Vec p_spec(params.d);
  for (Index i = 0; i < params.d; ++i) p_spec(i) = rng.uniform(params.p_lo, params.p_hi);
  inst.p_mat = wp * p_spec.asDiagonal() * wp.transpose();

  const double entry_std = params.r_scale / std::sqrt(double(std::max(params.d, params.p)));
  inst.r1_mat = gaussian_matrix(rng, params.d, params.p, entry_std);
  inst.r2_mat = gaussian_matrix(rng, params.d, params.p, entry_std);
  const double r2_norm = spectral_norm(inst.r2_mat);
  if (r2_norm > params.c_gxy) inst.r2_mat *= 0.99 * params.c_gxy / r2_norm;
  return inst;
}

namespace {

class QuadOracle final : public BilevelOracle {
 public:
  explicit QuadOracle(QuadOracleInstance inst) : inst_(std::move(inst)) {
    llt_.compute(inst_.q_mat);
    if (llt_.info() != Eigen::Success)
      fail(ErrorCode::InvalidConfiguration, "quad_oracle: Q is not positive definite");
    constants_.c_gxy = spectral_norm(inst_.r2_mat);
    constants_.l_f = std::max(spectral_norm(inst_.p_mat), spectral_norm(inst_.r1_mat));
    constants_.l_g = std::max(spectral_norm(inst_.q_mat), constants_.c_gxy);
    constants_.l_gxy = 0.0;
    constants_.l_gyy = 0.0;
    Eigen::SelfAdjointEigenSolver<Mat> eig(inst_.q_mat, Eigen::EigenvaluesOnly);
    constants_.mu = eig.eigenvalues().minCoeff();
    constants_.r1_norm = spectral_norm(inst_.r1_mat);
  }

  Dims dims() const override { return {inst_.d, inst_.p}; }
  std::int64_t n_f_samples() const override { return 1; }
  std::int64_t n_g_samples() const override { return 1; }

  double f(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "quad.f");
    return 0.5 * x.dot(inst_.p_mat * x) + x.dot(inst_.r1_mat * y);
  }
  double g(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "quad.g");
    return 0.5 * y.dot(inst_.q_mat * y) + x.dot(inst_.r2_mat * y);
  }
  Vec grad_f_x(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "quad.grad_f_x");
    return inst_.p_mat * x + inst_.r1_mat * y;
  }
  Vec grad_f_y(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "quad.grad_f_y");
    return inst_.r1_mat.transpose() * x;
  }
  Vec grad_g_y(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "quad.grad_g_y");
    return inst_.q_mat * y + inst_.r2_mat.transpose() * x;
  }
  Mat jac_g_xy(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "quad.jac_g_xy");
    return inst_.r2_mat;
  }
  Mat hess_g_yy(const Vec& x, const Vec& y) const override {
    require_dims(x, y, "quad.hess_g_yy");
    return inst_.q_mat;
  }

  // Single-sample problem: the stochastic forms are the deterministic ones.
  double f(const Vec& x, const Vec& y, IndexSpan idx) const override {
    check_batch(idx, 1, "quad.f");
    return f(x, y);
  }
  double g(const Vec& x, const Vec& y, IndexSpan idx) const override {
    check_batch(idx, 1, "quad.g");
    return g(x, y);
  }
  Vec grad_f_x(const Vec& x, const Vec& y, IndexSpan idx) const override {
    check_batch(idx, 1, "quad.grad_f_x");
    return grad_f_x(x, y);
  }
  Vec grad_f_y(const Vec& x, const Vec& y, IndexSpan idx) const override {
    check_batch(idx, 1, "quad.grad_f_y");
    return grad_f_y(x, y);
  }
  Vec grad_g_y(const Vec& x, const Vec& y, IndexSpan idx) const override {
    check_batch(idx, 1, "quad.grad_g_y");
    return grad_g_y(x, y);
  }
  Mat jac_g_xy(const Vec& x, const Vec& y, IndexSpan idx) const override {
    check_batch(idx, 1, "quad.jac_g_xy");
    return jac_g_xy(x, y);
  }
  Mat hess_g_yy(const Vec& x, const Vec& y, IndexSpan idx) const override {
    check_batch(idx, 1, "quad.hess_g_yy");
    return hess_g_yy(x, y);
  }

  MeasuredConstants measured_constants() const override { return constants_; }

  std::optional<Vec> lower_argmin(const Vec& x) const override {
    return llt_.solve(-(inst_.r2_mat.transpose() * x));
  }
  std::optional<double> lower_minimum(const Vec& x) const override {
    const Vec y = *lower_argmin(x);
    return g(x, y);
  }

 private:
  QuadOracleInstance inst_;
  MeasuredConstants constants_;
  Eigen::LLT<Mat> llt_;
};

}  // namespace

std::shared_ptr<const BilevelOracle> quad_oracle(QuadOracleInstance inst) {
  return std::make_shared<QuadOracle>(std::move(inst));
}

QuadTruth quad_oracle_truth(const QuadOracleInstance& inst, const Vec& x) {
  if (x.size() != inst.d) fail(ErrorCode::InvalidInput, "quad_oracle_truth: bad x dimension");
  Eigen::LLT<Mat> llt(inst.q_mat);
  QuadTruth out;
  out.y_star = llt.solve(-(inst.r2_mat.transpose() * x));
  out.grad_f_true = inst.p_mat * x + inst.r1_mat * out.y_star -
                    inst.r2_mat * llt.solve(inst.r1_mat.transpose() * x);
  out.g_min = 0.5 * out.y_star.dot(inst.q_mat * out.y_star) +
              x.dot(inst.r2_mat * out.y_star);
  return out;
}

}  // namespace bilevel
