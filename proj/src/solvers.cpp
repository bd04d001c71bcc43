#include "solvers.hpp"

#include <chrono>
#include <cmath>

#include "diagnostics.hpp"

namespace bilevel {

std::string_view solver_name(SolverKind kind) {
  switch (kind) {
    case SolverKind::Mgbio: return "mgbio";
    case SolverKind::Msgbio: return "msgbio";
    case SolverKind::VrMsgbio: return "vr-msgbio";
  }
  return "?";
}

SolverKind parse_solver_name(std::string_view name) {
  if (name == "mgbio") return SolverKind::Mgbio;
  if (name == "msgbio") return SolverKind::Msgbio;
  if (name == "vr-msgbio" || name == "vr_msgbio") return SolverKind::VrMsgbio;
  fail(ErrorCode::InvalidConfiguration, "unknown solver '" + std::string(name) + "'");
}

StepSchedule StepSchedule::constant(double eta) {
  if (!(eta > 0.0 && eta <= 1.0))
    fail(ErrorCode::InvalidConfiguration, "StepSchedule: constant eta must be in (0,1]");
  StepSchedule s;
  s.kind_ = Kind::Constant;
  s.eta_ = eta;
  return s;
}

StepSchedule StepSchedule::polynomial(double k, double m, double exponent) {
  if (!(k > 0.0) || !(m > 0.0))
    fail(ErrorCode::InvalidConfiguration, "StepSchedule: need k > 0 and m > 0");
  const bool half = std::abs(exponent - 0.5) < 1e-12;
  const bool third = std::abs(exponent - 1.0 / 3.0) < 1e-12;
  if (!half && !third)
    fail(ErrorCode::InvalidConfiguration, "StepSchedule: exponent must be 1/2 or 1/3");
  if (k / std::pow(m, exponent) > 1.0)
    fail(ErrorCode::InvalidConfiguration,
         "StepSchedule: eta_0 = k/m^exponent exceeds 1");
  StepSchedule s;
  s.kind_ = Kind::Polynomial;
  s.k_ = k;
  s.m_ = m;
  s.exponent_ = half ? 0.5 : 1.0 / 3.0;
  return s;
}

double StepSchedule::at(std::int64_t t) const {
  if (t < 0) fail(ErrorCode::InvalidInput, "StepSchedule: t must be nonnegative");
  if (kind_ == Kind::Constant) return eta_;
  return k_ / std::pow(m_ + static_cast<double>(t), exponent_);
}

std::array<double, 5> MomentumCoeffs::at(const StepSchedule& schedule,
                                         std::int64_t t, SolverKind kind) const {
  const double eta = schedule.at(t);
  const double factor = (kind == SolverKind::VrMsgbio) ? eta * eta : eta;
  std::array<double, 5> out = as_array();
  for (auto& c : out) c *= factor;
  return out;
}

void SolverConfig::validate(SolverKind kind, const BilevelOracle& oracle) const {
  if (!(gamma > 0.0) || !(lambda > 0.0))
    fail(ErrorCode::InvalidConfiguration, "SolverConfig: gamma and lambda must be positive");
  if (horizon < 1) fail(ErrorCode::InvalidConfiguration, "SolverConfig: T must be >= 1");
  clip.validate();
  if (kind == SolverKind::Mgbio) return;

  if (batch < 1) fail(ErrorCode::InvalidConfiguration, "SolverConfig: batch must be >= 1");
  if (batch > oracle.n_f_samples() || batch > oracle.n_g_samples())
    fail(ErrorCode::InvalidConfiguration, "SolverConfig: batch exceeds the sample count");
  if (warm_start_samples < 0 || warm_start_samples > oracle.n_f_samples() ||
      (warm_start_samples > 0 && warm_start_samples > oracle.n_g_samples()))
    fail(ErrorCode::InvalidConfiguration, "SolverConfig: bad warm_start_samples");
  // The largest eta is at t = 0, so checking there covers every iteration.
  const auto coeffs0 = coeffs.at(schedule, 0, kind);
  for (const double c : coeffs0)
    if (!(c > 0.0 && c <= 1.0))
      fail(ErrorCode::InvalidConfiguration,
           "SolverConfig: momentum coefficients must stay in (0,1] for all t");
}

namespace {

std::vector<std::int32_t> draw_batch(Rng& rng, std::int64_t n, std::int64_t batch) {
  return rng.sample_without_replacement(static_cast<std::int32_t>(n),
                                        static_cast<std::int32_t>(batch));
}

// x and y update shared by all three solvers (Algorithm lines "x_tilde, x_{t+1},
// y_tilde, y_{t+1}"); uses the estimates stored in the state.
void advance_xy(IterateState& s, const SolverConfig& cfg) {
  const double eta = cfg.schedule.at(s.t);
  const Vec x_tilde = prox_step(s.x, s.w, cfg.gamma, cfg.set);
  const Vec y_tilde = s.y - cfg.lambda * s.v;
  s.x += eta * (x_tilde - s.x);
  s.y += eta * (y_tilde - s.y);
  s.t += 1;
}

void mgbio_refresh(IterateState& s, const BilevelOracle& oracle,
                   const SolverConfig& cfg) {
  s.v = oracle.grad_g_y(s.x, s.y);
  HyperGradParts parts = clipped_hypergradient(oracle, s.x, s.y, cfg.clip);
  s.u = std::move(parts.u);
  s.h = std::move(parts.h);
  s.g_jac = std::move(parts.g_jac);
  s.h_hess = std::move(parts.h_hess);
  s.w = std::move(parts.w);
}

void stochastic_refresh(IterateState& s, const BilevelOracle& oracle,
                        const SolverConfig& cfg, Rng& rng, std::int64_t batch) {
  const auto xi = draw_batch(rng, oracle.n_f_samples(), batch);
  const auto zeta = draw_batch(rng, oracle.n_g_samples(), batch);
  s.u = oracle.grad_f_x(s.x, s.y, xi);
  s.h = project_ball(oracle.grad_f_y(s.x, s.y, xi), cfg.clip.c_fy);
  s.v = oracle.grad_g_y(s.x, s.y, zeta);
  s.g_jac = project_spectral_norm(oracle.jac_g_xy(s.x, s.y, zeta), cfg.clip.c_gxy);
  s.h_hess = clamp_spectrum(oracle.hess_g_yy(s.x, s.y, zeta), cfg.clip.mu, cfg.clip.l_g);
  s.w = assemble_hypergradient(s.u, s.g_jac, s.h_hess, s.h);
  s.samples_used += 2 * batch;
}

}  // namespace

IterateState initial_state(SolverKind kind, const BilevelOracle& oracle,
                           const SolverConfig& cfg, Rng& init_rng, Rng& batch_rng) {
  const Dims dm = oracle.dims();
  IterateState s;
  s.t = 1;
  s.x.resize(dm.d);
  for (Index i = 0; i < dm.d; ++i) s.x(i) = cfg.init_radius * init_rng.normal();
  s.x = cfg.set.project(s.x);
  s.y.resize(dm.p);
  for (Index i = 0; i < dm.p; ++i) s.y(i) = cfg.init_radius * init_rng.normal();

  if (kind == SolverKind::Mgbio) {
    mgbio_refresh(s, oracle, cfg);
  } else {
    const std::int64_t b0 =
        cfg.warm_start_samples > 0 ? cfg.warm_start_samples : cfg.batch;
    stochastic_refresh(s, oracle, cfg, batch_rng, b0);
  }
  return s;
}

IterateState mgbio_step(const IterateState& state, const BilevelOracle& oracle,
                        const SolverConfig& cfg) {
  IterateState next = state;
  mgbio_refresh(next, oracle, cfg);
  advance_xy(next, cfg);
  return next;
}

IterateState msgbio_step(const IterateState& state, const BilevelOracle& oracle,
                         const SolverConfig& cfg, Rng& rng) {
  const auto [beta, beta_hat, alpha, alpha_hat, alpha_tilde] =
      cfg.coeffs.at(cfg.schedule, state.t, SolverKind::Msgbio);
  IterateState next = state;
  advance_xy(next, cfg);

  const auto xi = draw_batch(rng, oracle.n_f_samples(), cfg.batch);
  const auto zeta = draw_batch(rng, oracle.n_g_samples(), cfg.batch);
  next.u = beta * oracle.grad_f_x(next.x, next.y, xi) + (1.0 - beta) * state.u;
  next.h = project_ball(
      beta_hat * oracle.grad_f_y(next.x, next.y, xi) + (1.0 - beta_hat) * state.h,
      cfg.clip.c_fy);
  next.v = alpha * oracle.grad_g_y(next.x, next.y, zeta) + (1.0 - alpha) * state.v;
  next.g_jac = project_spectral_norm(
      alpha_hat * oracle.jac_g_xy(next.x, next.y, zeta) +
          (1.0 - alpha_hat) * state.g_jac,
      cfg.clip.c_gxy);
  next.h_hess = clamp_spectrum(
      alpha_tilde * oracle.hess_g_yy(next.x, next.y, zeta) +
          (1.0 - alpha_tilde) * state.h_hess.reconstruct(),
      cfg.clip.mu, cfg.clip.l_g);
  next.w = assemble_hypergradient(next.u, next.g_jac, next.h_hess, next.h);
  next.samples_used += 2 * cfg.batch;
  return next;
}

IterateState vr_msgbio_step(const IterateState& state, const BilevelOracle& oracle,
                            const SolverConfig& cfg, Rng& rng) {
  const auto [beta, beta_hat, alpha, alpha_hat, alpha_tilde] =
      cfg.coeffs.at(cfg.schedule, state.t, SolverKind::VrMsgbio);
  IterateState next = state;
  advance_xy(next, cfg);

  // One minibatch per side, evaluated at both the new and the old iterate.
  const auto xi = draw_batch(rng, oracle.n_f_samples(), cfg.batch);
  const auto zeta = draw_batch(rng, oracle.n_g_samples(), cfg.batch);
  next.u = oracle.grad_f_x(next.x, next.y, xi) +
           (1.0 - beta) * (state.u - oracle.grad_f_x(state.x, state.y, xi));
  next.h = project_ball(
      oracle.grad_f_y(next.x, next.y, xi) +
          (1.0 - beta_hat) * (state.h - oracle.grad_f_y(state.x, state.y, xi)),
      cfg.clip.c_fy);
  next.v = oracle.grad_g_y(next.x, next.y, zeta) +
           (1.0 - alpha) * (state.v - oracle.grad_g_y(state.x, state.y, zeta));
  next.g_jac = project_spectral_norm(
      oracle.jac_g_xy(next.x, next.y, zeta) +
          (1.0 - alpha_hat) * (state.g_jac - oracle.jac_g_xy(state.x, state.y, zeta)),
      cfg.clip.c_gxy);
  next.h_hess = clamp_spectrum(
      oracle.hess_g_yy(next.x, next.y, zeta) +
          (1.0 - alpha_tilde) *
              (state.h_hess.reconstruct() - oracle.hess_g_yy(state.x, state.y, zeta)),
      cfg.clip.mu, cfg.clip.l_g);
  next.w = assemble_hypergradient(next.u, next.g_jac, next.h_hess, next.h);
  next.samples_used += 4 * cfg.batch;
  return next;
}

RunResult run(const BilevelOracle& oracle, const SolverConfig& cfg,
              SolverKind kind, const RunOptions& opts,
              const ProgressCallback& callback) {
  cfg.validate(kind, oracle);

  RunResult result;
  {
    const MeasuredConstants mc = oracle.measured_constants();
    ProblemConstants pc;
    pc.c_fy = cfg.clip.c_fy;
    pc.c_gxy = cfg.clip.c_gxy;
    pc.mu = cfg.clip.mu;
    pc.l_g = std::max(cfg.clip.l_g, mc.l_g);
    pc.l_f = std::max(mc.l_f, 1e-12);
    pc.l_gxy = mc.l_gxy;
    pc.l_gyy = mc.l_gyy;
    const ConstantsReport report =
        constants_report(pc, cfg.schedule, cfg.schedule.k(), cfg.schedule.m());
    result.warnings = admissibility_warnings(report, cfg, kind);
  }

  Rng init_rng = Rng::substream(cfg.seed, "init");
  Rng batch_rng = Rng::substream(cfg.seed, "minibatch");
  Rng output_rng = Rng::substream(cfg.seed, "output-index");

  IterateState state = initial_state(kind, oracle, cfg, init_rng, batch_rng);

  TruthCache truth(oracle);
  bool truth_usable = opts.oracle_diagnostics;
  const LyapunovKind lyap_kind = solver_lyapunov(kind);
  const std::int64_t full_batch_equiv = oracle.n_f_samples() + oracle.n_g_samples();

  const auto start = std::chrono::steady_clock::now();
  result.trace.reserve(cfg.horizon);

  for (std::int64_t t = 1; t <= cfg.horizon; ++t) {
    TraceRecord rec;
    rec.t = t;
    rec.eta = cfg.schedule.at(t);
    rec.grad_map_norm = gradient_mapping(state.x, state.w, cfg.gamma, cfg.set).norm();
    rec.f_val = oracle.f(state.x, state.y);
    rec.samples_used =
        kind == SolverKind::Mgbio ? t * full_batch_equiv : state.samples_used;

    const bool diag_row =
        opts.oracle_diagnostics &&
        (t == 1 || t == cfg.horizon || t % opts.diag_stride == 0);
    if (diag_row) {
      if (opts.true_hypergradient) {
        const Vec grad_true = opts.true_hypergradient(state.x);
        rec.true_grad_norm = grad_true.norm();
        rec.hyper_err = (state.w - grad_true).norm();
      }
      if (truth_usable) {
        try {
          const auto& sol = truth.lower(state.x);
          rec.g_gap = oracle.g(state.x, state.y) - sol.g_min;
          rec.lyapunov = lyapunov(state, oracle, cfg, lyap_kind, &truth);
        } catch (const Error&) {
          // Lower level unbounded or inner solve out of budget at this x;
          // drop the oracle columns for the rest of the run.
          truth_usable = false;
          result.warnings.push_back(
              "lower-level truth unavailable from iteration " + std::to_string(t) +
              "; g_gap and lyapunov columns are partial");
        }
      }
    }
    rec.wall_nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    result.trace.push_back(rec);
    if (callback) callback(rec, state);

    // A step that drives an iterate non-finite is a numeric failure of the
    // run, not an input error; stop and leave the partial trace in place.
    try {
      switch (kind) {
        case SolverKind::Mgbio:
          advance_xy(state, cfg);
          if (!state.x.allFinite() || !state.y.allFinite())
            fail(ErrorCode::NumericFailure, "iterate went non-finite");
          mgbio_refresh(state, oracle, cfg);
          break;
        case SolverKind::Msgbio:
          state = msgbio_step(state, oracle, cfg, batch_rng);
          break;
        case SolverKind::VrMsgbio:
          state = vr_msgbio_step(state, oracle, cfg, batch_rng);
          break;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NumericFailure && e.code() != ErrorCode::InvalidInput &&
          e.code() != ErrorCode::Singularity)
        throw;
      result.failed_iteration = t;
      break;
    }
    if (!state.x.allFinite() || !state.y.allFinite() || !state.w.allFinite()) {
      result.failed_iteration = t;
      break;
    }
  }

  result.final_state = std::move(state);
  result.output_index = 1 + output_rng.uniform_index(cfg.horizon);
  return result;
}

}  // namespace bilevel
