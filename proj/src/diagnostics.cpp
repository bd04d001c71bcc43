#include "diagnostics.hpp"

#include <cmath>

namespace bilevel {

void ProblemConstants::validate() const {
  if (!(c_fy > 0) || !(c_gxy > 0) || !(mu > 0) || !(l_f > 0) || !(l_g > 0) ||
      l_gxy < 0 || l_gyy < 0 || c_gy < 0)
    fail(ErrorCode::InvalidConfiguration, "ProblemConstants: constants must be positive");
  if (mu > l_g)
    fail(ErrorCode::InvalidConfiguration, "ProblemConstants: need mu <= l_g");
}

ConstantsReport constants_report(const ProblemConstants& pc,
                                 const StepSchedule& schedule, double k, double m) {
  pc.validate();
  ConstantsReport r;
  const double mu = pc.mu, mu2 = mu * mu;
  r.kappa = pc.c_gxy / mu;
  const double drift = pc.c_gxy * pc.l_gyy / mu2 + pc.l_gxy / mu;
  r.l_y = drift * (1.0 + r.kappa);
  r.l_f_upper = (pc.l_f + pc.l_f * r.kappa + pc.c_fy * drift) * (1.0 + r.kappa);
  r.c_gy_heuristic = !(pc.c_gy > 0.0);
  r.c_gy_effective = r.c_gy_heuristic ? pc.c_fy * pc.l_g / pc.l_f : pc.c_gy;
  r.l_g_upper = (pc.l_g + pc.l_g * r.kappa + r.c_gy_effective * drift) * (1.0 + r.kappa);
  r.l_hat = 2.0 * std::sqrt(pc.l_f * pc.l_f +
                            pc.l_gxy * pc.l_gxy * pc.c_fy * pc.c_fy / mu2 +
                            pc.l_gyy * pc.l_gyy * pc.c_gxy * pc.c_gxy * pc.c_fy * pc.c_fy /
                                (mu2 * mu2) +
                            pc.l_f * pc.l_f * pc.c_gxy * pc.c_gxy / mu2);
  const double kap2 = r.kappa * r.kappa;
  r.l_breve = std::sqrt(pc.l_f * pc.l_f + pc.l_f * pc.l_f / kap2 +
                        mu2 * pc.l_gxy * pc.l_gxy / (pc.c_fy * pc.c_fy) +
                        mu2 * pc.l_gyy * pc.l_gyy / (pc.c_fy * pc.c_fy * kap2));
  r.l_check = std::sqrt(2.0 * pc.l_f * pc.l_f + pc.l_gxy * pc.l_gxy + pc.l_gyy * pc.l_gyy);

  r.eta0 = schedule.at(0);
  r.k = k;
  r.m = m;
  const double lhat2 = r.l_hat * r.l_hat;

  r.mgbio_caps.lambda_max = 1.0 / (2.0 * pc.l_g * r.eta0);
  r.mgbio_caps.gamma_max = std::min(1.0 / (2.0 * r.l_f_upper * r.eta0),
                            r.mgbio_caps.lambda_max * mu2 / (16.0 * lhat2));

  const double sqrt_m = std::sqrt(m);
  r.msgbio_caps.lambda_max = std::min(sqrt_m / (2.0 * pc.l_g * k), 1.0 / (4.0 * pc.l_g));
  {
    const double lam = r.msgbio_caps.lambda_max;
    const double lb2 = r.l_breve * r.l_breve;
    r.msgbio_caps.gamma_max = std::min({sqrt_m / (2.0 * r.l_f_upper * k),
                               lam * mu2 / (16.0 * lhat2),
                               std::sqrt(5.0) / (4.0 * r.l_breve),
                               1.0 / (32.0 * pc.l_g * pc.l_g * lam),
                               5.0 / (8.0 * lb2 * lam)});
  }

  const double cbrt_m = std::cbrt(m);
  r.vr_caps.lambda_max =
      std::min(1.0 / (4.0 * std::sqrt(2.0) * pc.l_g), cbrt_m / (2.0 * pc.l_g * k));
  {
    const double lam = r.vr_caps.lambda_max;
    const double lc2 = r.l_check * r.l_check;
    r.vr_caps.gamma_max = std::min({cbrt_m / (2.0 * r.l_f_upper * k),
                               lam * mu2 / (16.0 * lhat2),
                               1.0 / (8.0 * r.l_check),
                               1.0 / (64.0 * pc.l_g * pc.l_g * lam),
                               1.0 / (32.0 * lc2 * lam),
                               lam * mu / (8.0 * r.l_g_upper)});
  }

  const double cf2 = pc.c_fy * pc.c_fy;
  const std::array<double, 5> floors = {10.0, 10.0 * kap2, 1.0, 10.0 * cf2 / mu2,
                                        10.0 * cf2 * kap2 / mu2};
  for (int i = 0; i < 5; ++i) {
    r.msgbio_windows[i] = {floors[i], sqrt_m / k};
    r.vr_windows[i] = {2.0 / (3.0 * k * k * k) + floors[i], cbrt_m / k};
  }
  return r;
}

std::vector<std::string> admissibility_warnings(const ConstantsReport& report,
                                          const SolverConfig& cfg, SolverKind kind) {
  std::vector<std::string> out;
  const auto warn = [&](const std::string& s) { out.push_back(s); };
  const auto check_steps = [&](const StepCaps& b, const char* who) {
    if (cfg.lambda > b.lambda_max * (1.0 + 1e-12))
      warn(std::string(who) + ": lambda " + std::to_string(cfg.lambda) +
           " exceeds admissible cap " + std::to_string(b.lambda_max));
    if (cfg.gamma > b.gamma_max * (1.0 + 1e-12))
      warn(std::string(who) + ": gamma " + std::to_string(cfg.gamma) +
           " exceeds admissible cap " + std::to_string(b.gamma_max));
  };

  switch (kind) {
    case SolverKind::Mgbio:
      if (cfg.schedule.kind() != StepSchedule::Kind::Constant)
        warn("mgbio admissibility assumes a constant eta schedule");
      check_steps(report.mgbio_caps, "mgbio");
      break;
    case SolverKind::Msgbio: {
      const bool matches = cfg.schedule.kind() == StepSchedule::Kind::Polynomial &&
                           std::abs(cfg.schedule.exponent() - 0.5) < 1e-12;
      if (!matches) {
        warn("msgbio admissibility assumes eta_t = k/(m+t)^{1/2}; coefficient windows not checked");
        break;
      }
      check_steps(report.msgbio_caps, "msgbio");
      const auto cs = cfg.coeffs.as_array();
      for (int i = 0; i < 5; ++i) {
        const auto& w = report.msgbio_windows[i];
        if (w.empty())
          warn("msgbio: admissible window for c" + std::to_string(i + 1) +
               " is empty (increase m)");
        else if (cs[i] < w.lo || cs[i] > w.hi)
          warn("msgbio: c" + std::to_string(i + 1) + " = " + std::to_string(cs[i]) +
               " outside [" + std::to_string(w.lo) + ", " + std::to_string(w.hi) + "]");
      }
      break;
    }
    case SolverKind::VrMsgbio: {
      const bool matches = cfg.schedule.kind() == StepSchedule::Kind::Polynomial &&
                           std::abs(cfg.schedule.exponent() - 1.0 / 3.0) < 1e-12;
      if (!matches) {
        warn("vr-msgbio admissibility assumes eta_t = k/(m+t)^{1/3}; coefficient windows not checked");
        break;
      }
      if (report.m < 2.0) warn("vr-msgbio admissibility assumes m >= 2");
      check_steps(report.vr_caps, "vr-msgbio");
      const auto cs = cfg.coeffs.as_array();
      for (int i = 0; i < 5; ++i) {
        const auto& w = report.vr_windows[i];
        if (w.empty())
          warn("vr-msgbio: admissible window for c" + std::to_string(i + 1) +
               " is empty (increase m)");
        else if (cs[i] < w.lo || cs[i] > w.hi)
          warn("vr-msgbio: c" + std::to_string(i + 1) + " = " + std::to_string(cs[i]) +
               " outside [" + std::to_string(w.lo) + ", " + std::to_string(w.hi) + "]");
      }
      break;
    }
  }
  return out;
}

TruthCache::TruthCache(const BilevelOracle& oracle, InnerSolveOptions opts)
    : oracle_(oracle), opts_(opts) {
  warm_ = Vec::Zero(oracle.dims().p);
}

const TruthCache::LowerSolution& TruthCache::lower(const Vec& x) {
  std::string key(reinterpret_cast<const char*>(x.data()),
                  static_cast<std::size_t>(x.size()) * sizeof(double));
  const auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;

  LowerSolution sol;
  if (const auto y = oracle_.lower_argmin(x)) {
    sol.y_star = *y;
    sol.g_min = oracle_.g(x, sol.y_star);
  } else {
    const auto res = solve_lower_level(oracle_, x, warm_, opts_);
    if (!res.converged)
      fail(ErrorCode::OracleUnavailable,
           "TruthCache: inner solve missed tolerance within budget");
    sol.y_star = res.y;
    sol.g_min = oracle_.g(x, sol.y_star);
  }
  warm_ = sol.y_star;
  return cache_.emplace(std::move(key), std::move(sol)).first->second;
}

double pl_residual(const BilevelOracle& oracle, const Vec& x, const Vec& y,
                   std::int64_t inner_budget) {
  const double g_val = oracle.g(x, y);
  double g_min;
  if (const auto m = oracle.lower_minimum(x)) {
    g_min = *m;
  } else {
    InnerSolveOptions opts;
    opts.budget = inner_budget;
    const auto res = solve_lower_level(oracle, x, y, opts);
    if (!res.converged)
      fail(ErrorCode::OracleUnavailable,
           "pl_residual: inner solve missed tolerance within budget");
    g_min = oracle.g(x, res.y);
  }
  return g_val - g_min;
}

LyapunovKind solver_lyapunov(SolverKind kind) {
  switch (kind) {
    case SolverKind::Mgbio: return LyapunovKind::Omega;
    case SolverKind::Msgbio: return LyapunovKind::Phi;
    case SolverKind::VrMsgbio: return LyapunovKind::GammaFn;
  }
  return LyapunovKind::Omega;
}

double lyapunov(const IterateState& state, const BilevelOracle& oracle,
                const SolverConfig& cfg, LyapunovKind which, TruthCache* cache) {
  TruthCache local(oracle);
  TruthCache& truth = cache ? *cache : local;
  const auto& sol = truth.lower(state.x);
  const double omega = oracle.f(state.x, sol.y_star) +
                       (oracle.g(state.x, state.y) - sol.g_min);
  if (which == LyapunovKind::Omega) return omega;

  // Estimator errors against full-batch clipped references at (x_t, y_t);
  // matrix errors in the spectral norm.
  const Vec gfx = oracle.grad_f_x(state.x, state.y);
  const Vec gfy = project_ball(oracle.grad_f_y(state.x, state.y), cfg.clip.c_fy);
  const Mat jac =
      project_spectral_norm(oracle.jac_g_xy(state.x, state.y), cfg.clip.c_gxy);
  const Mat hess =
      clamp_spectrum(oracle.hess_g_yy(state.x, state.y), cfg.clip.mu, cfg.clip.l_g)
          .reconstruct();
  const Vec ggy = oracle.grad_g_y(state.x, state.y);

  const double jac_err = spectral_norm(jac - state.g_jac);
  const double hess_err = spectral_norm(hess - state.h_hess.reconstruct());
  const double est_err = (gfx - state.u).squaredNorm() +
                         (gfy - state.h).squaredNorm() + jac_err * jac_err +
                         hess_err * hess_err;
  const double v_err = (ggy - state.v).squaredNorm();

  if (which == LyapunovKind::Phi)
    return omega + cfg.gamma * est_err + cfg.lambda * v_err;
  const double eta_prev = cfg.schedule.at(state.t - 1);
  return omega + (cfg.gamma / eta_prev) * est_err + (cfg.lambda / eta_prev) * v_err;
}

double estimate_noise_variance(const BilevelOracle& oracle, const Vec& x,
                               const Vec& y, std::int64_t draws, Rng& rng) {
  if (draws < 1) fail(ErrorCode::InvalidInput, "estimate_noise_variance: draws >= 1");
  const Vec gfx = oracle.grad_f_x(x, y);
  const Vec gfy = oracle.grad_f_y(x, y);
  const Vec ggy = oracle.grad_g_y(x, y);
  const Mat jac = oracle.jac_g_xy(x, y);
  const Mat hess = oracle.hess_g_yy(x, y);

  double vfx = 0, vfy = 0, vgy = 0, vjac = 0, vhess = 0;
  for (std::int64_t k = 0; k < draws; ++k) {
    const std::int32_t fi[] = {
        static_cast<std::int32_t>(rng.uniform_index(oracle.n_f_samples()))};
    const std::int32_t gi[] = {
        static_cast<std::int32_t>(rng.uniform_index(oracle.n_g_samples()))};
    vfx += (oracle.grad_f_x(x, y, IndexSpan(fi, 1)) - gfx).squaredNorm();
    vfy += (oracle.grad_f_y(x, y, IndexSpan(fi, 1)) - gfy).squaredNorm();
    vgy += (oracle.grad_g_y(x, y, IndexSpan(gi, 1)) - ggy).squaredNorm();
    const double sj = spectral_norm(oracle.jac_g_xy(x, y, IndexSpan(gi, 1)) - jac);
    const double sh = spectral_norm(oracle.hess_g_yy(x, y, IndexSpan(gi, 1)) - hess);
    vjac += sj * sj;
    vhess += sh * sh;
  }
  const double inv = 1.0 / double(draws);
  return std::max({vfx * inv, vfy * inv, vgy * inv, vjac * inv, vhess * inv});
}

double msgbio_stationarity_bound(const ConstantsReport& report, const SolverConfig& cfg,
                      const StochasticBoundInputs& in) {
  const double k = report.k, m = report.m;
  const double t = double(std::max<std::int64_t>(in.horizon, 1));
  const double log_term = std::log(m + t);
  const double big_m = 4.0 * in.r_value / (k * cfg.gamma) + 16.0 * in.sigma2 / k +
                       4.0 * cfg.lambda * in.sigma2 / (cfg.gamma * k) +
                       16.0 * m * in.sigma2 * log_term / k +
                       4.0 * m * cfg.lambda * in.sigma2 * log_term / (k * cfg.gamma);
  return std::sqrt(2.0 * big_m) * std::pow(m, 0.25) / std::sqrt(t) +
         std::sqrt(2.0 * big_m) / std::pow(t, 0.25);
}

double vr_stationarity_bound(const ConstantsReport& report, const SolverConfig& cfg,
                      const StochasticBoundInputs& in) {
  const double k = report.k, m = report.m;
  const double t = double(std::max<std::int64_t>(in.horizon, 1));
  const double log_term = std::log(m + t);
  const auto c = cfg.coeffs;
  const double c_hat2 = c.c1 * c.c1 + c.c2 * c.c2 + c.c4 * c.c4 + c.c5 * c.c5;
  const double big_m =
      4.0 * in.r_value / (k * cfg.gamma) +
      16.0 * in.sigma2 * std::cbrt(m) / (k * k) +
      4.0 * cfg.lambda * in.sigma2 * std::cbrt(m) / (cfg.gamma * k * k) +
      (2.0 * k * k * c_hat2 * in.sigma2 +
       2.0 * k * k * c.c3 * c.c3 * cfg.lambda * in.sigma2 / cfg.gamma) *
          log_term;
  return std::sqrt(2.0 * big_m) * std::pow(m, 1.0 / 6.0) / std::sqrt(t) +
         std::sqrt(2.0 * big_m) / std::cbrt(t);
}

RateFit fit_rate(const std::vector<TraceRecord>& trace, std::string_view metric,
                 std::int64_t t_lo, std::int64_t t_hi) {
  const auto getter = [&](const TraceRecord& r) -> std::optional<double> {
    if (metric == "grad_map_norm") return r.grad_map_norm;
    if (metric == "true_grad_norm") return r.true_grad_norm;
    if (metric == "hyper_err") return r.hyper_err;
    if (metric == "f_val") return r.f_val;
    if (metric == "g_gap") return r.g_gap;
    if (metric == "lyapunov") return r.lyapunov;
    fail(ErrorCode::InvalidInput, "fit_rate: unknown metric '" + std::string(metric) + "'");
  };
  if (t_lo >= t_hi) fail(ErrorCode::InvalidInput, "fit_rate: need t_lo < t_hi");

  double cum = 0.0;
  std::int64_t count = 0;
  std::vector<double> log_t, log_mean;
  for (const auto& rec : trace) {
    const auto value = getter(rec);
    if (!value) continue;
    cum += *value;
    ++count;
    if (rec.t < t_lo || rec.t > t_hi) continue;
    const double mean = cum / static_cast<double>(count);
    if (!(mean > 0.0))
      fail(ErrorCode::InvalidInput,
           "fit_rate: running mean must be positive over the window (t=" +
               std::to_string(rec.t) + ")");
    log_t.push_back(std::log(static_cast<double>(rec.t)));
    log_mean.push_back(std::log(mean));
  }
  if (log_t.size() < 10) {
    std::string range = trace.empty()
                            ? "trace is empty"
                            : "trace covers t in [" + std::to_string(trace.front().t) +
                                  ", " + std::to_string(trace.back().t) + "]";
    fail(ErrorCode::InsufficientData,
         "fit_rate: fewer than 10 points in window [" + std::to_string(t_lo) + ", " +
             std::to_string(t_hi) + "]; " + range);
  }

  const auto n = static_cast<double>(log_t.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < log_t.size(); ++i) {
    sx += log_t[i];
    sy += log_mean[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < log_t.size(); ++i) {
    const double dx = log_t[i] - mx, dy = log_mean[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  RateFit fit;
  fit.slope = sxy / sxx;
  const double ss_res = syy - fit.slope * sxy;
  fit.r2 = syy <= 1e-30 ? 1.0 : 1.0 - ss_res / syy;
  return fit;
}

}  // namespace bilevel
