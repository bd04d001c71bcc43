#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "diagnostics.hpp"
#include "solvers.hpp"

using namespace bilevel;

namespace {

QuadOracleInstance make_quad(std::uint64_t seed, Index d = 10, Index p = 10) {
  QuadGenParams params;
  params.d = d;
  params.p = p;
  params.seed = seed;
  return generate_quad_oracle(params);
}

ClipSpec quad_clip(const QuadOracleInstance& inst, double c_fy = 100.0) {
  ClipSpec clip;
  clip.mu = inst.mu_gen;
  clip.l_g = inst.lg_gen;
  clip.c_gxy = spectral_norm(inst.r2_mat) + 1e-9;
  clip.c_fy = c_fy;
  return clip;
}

PLGameParams small_game() {
  PLGameParams params;
  params.d = 10;
  params.l = 8;
  params.n = 20;
  params.seed = 77;
  return params;
}

ClipSpec game_clip(const PLGameInstance& inst) {
  ClipSpec clip;
  clip.mu = inst.interval_mu;
  clip.l_g = 1.5 * inst.interval_l * double(inst.d);  // generous ceiling
  clip.c_gxy = spectral_norm(inst.r2_mat) * 2.0 + 1e-9;
  clip.c_fy = 1e6;  // ball projection stays inactive
  return clip;
}

}  // namespace

TEST_CASE("StepSchedule values and validation") {
  CHECK(StepSchedule::constant(0.5).at(0) == 0.5);
  CHECK(StepSchedule::constant(0.5).at(12345) == 0.5);
  CHECK(StepSchedule::polynomial(1.0, 1.0, 0.5).at(0) == doctest::Approx(1.0));
  CHECK(StepSchedule::polynomial(1.0, 1.0, 1.0 / 3.0).at(7) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // nonincreasing, always in (0, 1]
  const StepSchedule s = StepSchedule::polynomial(0.9, 4.0, 0.5);
  double prev = 1.0;
  for (std::int64_t t = 0; t < 100; ++t) {
    const double eta = s.at(t);
    CHECK(eta > 0.0);
    CHECK(eta <= prev);
    prev = eta;
  }

  CHECK_THROWS_AS(StepSchedule::constant(0.0), Error);
  CHECK_THROWS_AS(StepSchedule::constant(1.5), Error);
  CHECK_THROWS_AS(StepSchedule::polynomial(2.0, 1.0, 0.5), Error);  // eta_0 > 1
  CHECK_THROWS_AS(StepSchedule::polynomial(1.0, 1.0, 0.25), Error);
  CHECK_THROWS_AS(StepSchedule::constant(0.5).at(-1), Error);
}

TEST_CASE("SolverConfig validation: coefficients must stay in (0,1]") {
  const QuadOracleInstance inst = make_quad(1);
  const auto oracle = quad_oracle(inst);

  SolverConfig cfg;
  cfg.clip = quad_clip(inst);
  cfg.schedule = StepSchedule::constant(0.5);
  cfg.batch = 1;
  cfg.coeffs = {2.0, 1.0, 1.0, 1.0, 1.0};  // c1 * eta = 1.0: boundary, fine
  CHECK_NOTHROW(cfg.validate(SolverKind::Msgbio, *oracle));

  cfg.coeffs.c1 = 2.5;  // beta = 1.25 > 1
  CHECK_THROWS_AS(cfg.validate(SolverKind::Msgbio, *oracle), Error);

  // VR uses eta^2: c1 = 2.5 gives beta = 0.625, admissible
  CHECK_NOTHROW(cfg.validate(SolverKind::VrMsgbio, *oracle));

  cfg.coeffs.c1 = 1.0;
  cfg.batch = 5;  // exceeds the quad oracle's single sample
  CHECK_THROWS_AS(cfg.validate(SolverKind::Msgbio, *oracle), Error);
  cfg.batch = 1;
  cfg.gamma = -1.0;
  CHECK_THROWS_AS(cfg.validate(SolverKind::Mgbio, *oracle), Error);
}

TEST_CASE("mgbio_step: fixed points and the eta=1 plain step") {
  const QuadOracleInstance inst = make_quad(2);
  const auto oracle = quad_oracle(inst);
  SolverConfig cfg;
  cfg.gamma = 0.05;
  cfg.lambda = 0.05;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.clip = quad_clip(inst);

  Rng init = Rng::substream(3, "init");
  Rng batch = Rng::substream(3, "minibatch");
  IterateState state = initial_state(SolverKind::Mgbio, *oracle, cfg, init, batch);

  // eta = 1 unconstrained: x' = x - gamma w exactly
  const IterateState next = mgbio_step(state, *oracle, cfg);
  CHECK((next.x - (state.x - cfg.gamma * state.w)).norm() < 1e-15);
  CHECK((next.y - (state.y - cfg.lambda * state.v)).norm() < 1e-15);
  CHECK(next.t == state.t + 1);
  CHECK(next.samples_used == 0);

  // joint stationary pair: (0, 0) has w = 0 and v = 0, so nothing moves
  IterateState still = state;
  still.x.setZero();
  still.y.setZero();
  const IterateState fixed = mgbio_step(still, *oracle, cfg);
  CHECK(fixed.x.norm() == 0.0);
  CHECK(fixed.y.norm() == 0.0);
}

TEST_CASE("mgbio_step descends the true objective from (x0, y*(x0))") {
  const QuadOracleInstance inst = make_quad(4);
  const auto oracle = quad_oracle(inst);
  SolverConfig cfg;
  cfg.gamma = 1e-3;
  cfg.lambda = 1e-3;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.clip = quad_clip(inst);

  Rng rng(5);
  Vec x0(10);
  for (Index i = 0; i < 10; ++i) x0(i) = rng.normal();
  const QuadTruth t0 = quad_oracle_truth(inst, x0);

  IterateState state;
  state.t = 1;
  state.x = x0;
  state.y = t0.y_star;
  const IterateState next = mgbio_step(state, *oracle, cfg);

  const auto objective = [&](const Vec& x) {
    return oracle->f(x, quad_oracle_truth(inst, x).y_star);
  };
  CHECK(objective(next.x) < objective(x0));
}

TEST_CASE("msgbio_step with unit coefficients equals fresh full-batch quantities") {
  const PLGameInstance inst = generate_pl_game(small_game());
  const auto oracle = pl_game_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 0.02;
  cfg.lambda = 0.02;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.coeffs = {1.0, 1.0, 1.0, 1.0, 1.0};
  cfg.batch = inst.n;
  cfg.clip = game_clip(inst);
  cfg.seed = 9;

  Rng init = Rng::substream(cfg.seed, "init");
  Rng batch = Rng::substream(cfg.seed, "minibatch");
  IterateState state = initial_state(SolverKind::Msgbio, *oracle, cfg, init, batch);
  const IterateState next = msgbio_step(state, *oracle, cfg, batch);

  const HyperGradParts fresh = clipped_hypergradient(*oracle, next.x, next.y, cfg.clip);
  CHECK((next.u - fresh.u).norm() < 1e-12);
  CHECK((next.h - fresh.h).norm() < 1e-12);
  CHECK((next.w - fresh.w).norm() < 1e-12);
  CHECK((next.v - oracle->grad_g_y(next.x, next.y)).norm() < 1e-12);
  CHECK(next.samples_used - state.samples_used == 2 * inst.n);
}

TEST_CASE("msgbio momentum averaging contracts estimator variance") {
  PLGameParams params;
  params.d = 10;
  params.l = 8;
  params.n = 200;
  params.seed = 31;
  const PLGameInstance inst = generate_pl_game(params);
  const auto oracle = pl_game_oracle(inst);

  Rng point_rng(32);
  Vec x(10), y(10);
  for (Index i = 0; i < 10; ++i) {
    x(i) = point_rng.normal();
    y(i) = point_rng.normal();
  }

  const auto estimator_variance = [&](double beta) {
    const int seeds = 100, iters = 30, batch = 5;
    std::vector<Vec> finals;
    for (int s = 0; s < seeds; ++s) {
      Rng rng(1000 + s);
      Vec u = oracle->grad_f_x(
          x, y, rng.sample_without_replacement(int(inst.n), batch));
      for (int t = 0; t < iters; ++t) {
        const auto idx = rng.sample_without_replacement(int(inst.n), batch);
        u = beta * oracle->grad_f_x(x, y, idx) + (1.0 - beta) * u;
      }
      finals.push_back(u);
    }
    Vec mean = Vec::Zero(10);
    for (const auto& u : finals) mean += u;
    mean /= double(seeds);
    double var = 0.0;
    for (const auto& u : finals) var += (u - mean).squaredNorm();
    return var / double(seeds);
  };

  CHECK(estimator_variance(0.1) < estimator_variance(1.0));
}

TEST_CASE("vr_msgbio_step: endpoint and frozen-point degenerations") {
  const PLGameInstance inst = generate_pl_game(small_game());
  const auto oracle = pl_game_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 0.02;
  cfg.lambda = 0.02;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.coeffs = {1.0, 1.0, 1.0, 1.0, 1.0};  // beta = eta^2 = 1
  cfg.batch = 4;
  cfg.clip = game_clip(inst);
  cfg.seed = 13;

  Rng init = Rng::substream(cfg.seed, "init");
  Rng batch = Rng::substream(cfg.seed, "minibatch");
  const IterateState state =
      initial_state(SolverKind::VrMsgbio, *oracle, cfg, init, batch);

  // beta = 1: the correction term vanishes, leaving the fresh minibatch value
  {
    Rng step_rng = batch;    // clone: same draws as the step below
    IterateState next = vr_msgbio_step(state, *oracle, cfg, batch);
    const auto xi = step_rng.sample_without_replacement(int(inst.n), int(cfg.batch));
    const auto zeta = step_rng.sample_without_replacement(int(inst.n), int(cfg.batch));
    CHECK((next.u - oracle->grad_f_x(next.x, next.y, xi)).norm() < 1e-14);
    CHECK((next.v - oracle->grad_g_y(next.x, next.y, zeta)).norm() < 1e-14);
    CHECK(next.samples_used - state.samples_used == 4 * cfg.batch);
  }

  // frozen iterates: the vr update degenerates to the basic momentum rule
  {
    SolverConfig frozen = cfg;
    frozen.coeffs = {0.5, 0.5, 0.5, 0.5, 0.5};
    IterateState pinned = state;
    pinned.w.setZero();
    pinned.v.setZero();  // advance keeps (x, y) fixed
    Rng rng_a = Rng::substream(99, "minibatch");
    Rng rng_b = rng_a;
    const IterateState next = vr_msgbio_step(pinned, *oracle, frozen, rng_a);
    CHECK((next.x - pinned.x).norm() == 0.0);
    CHECK((next.y - pinned.y).norm() == 0.0);

    const double beta = 0.5;  // c1 * eta^2
    const auto xi = rng_b.sample_without_replacement(int(inst.n), int(frozen.batch));
    const Vec expected = beta * oracle->grad_f_x(pinned.x, pinned.y, xi) +
                         (1.0 - beta) * pinned.u;
    CHECK((next.u - expected).norm() < 1e-14);
  }
}

TEST_CASE("vr telescoping with a zero-variance oracle tracks the exact gradient") {
  const QuadOracleInstance inst = make_quad(21);
  const auto oracle = quad_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 0.05;
  cfg.lambda = 0.1;
  cfg.schedule = StepSchedule::constant(0.5);
  cfg.coeffs = {0.9, 0.8, 0.7, 0.6, 0.5};  // arbitrary; telescoping kills them
  cfg.batch = 1;
  cfg.clip = quad_clip(inst);
  cfg.seed = 22;

  Rng init = Rng::substream(cfg.seed, "init");
  Rng batch = Rng::substream(cfg.seed, "minibatch");
  IterateState state = initial_state(SolverKind::VrMsgbio, *oracle, cfg, init, batch);
  for (int t = 0; t < 25; ++t) {
    state = vr_msgbio_step(state, *oracle, cfg, batch);
    CHECK((state.u - oracle->grad_f_x(state.x, state.y)).norm() < 1e-12);
    CHECK((state.v - oracle->grad_g_y(state.x, state.y)).norm() < 1e-12);
  }
}

TEST_CASE("stochastic solvers at full batch reproduce the deterministic iterates") {
  const PLGameInstance inst = generate_pl_game(small_game());
  const auto oracle = pl_game_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 0.02;
  cfg.lambda = 0.02;
  cfg.schedule = StepSchedule::constant(0.5);
  cfg.horizon = 50;
  cfg.seed = 40;
  cfg.clip = game_clip(inst);
  cfg.batch = inst.n;

  RunOptions opts;
  opts.oracle_diagnostics = false;

  std::vector<Vec> xs_det, xs_ms, xs_vr;
  SolverConfig det = cfg;
  run(*oracle, det, SolverKind::Mgbio, opts,
      [&](const TraceRecord&, const IterateState& s) { xs_det.push_back(s.x); });

  SolverConfig ms = cfg;
  ms.coeffs = {2.0, 2.0, 2.0, 2.0, 2.0};  // c * eta = 1: exact estimators
  run(*oracle, ms, SolverKind::Msgbio, opts,
      [&](const TraceRecord&, const IterateState& s) { xs_ms.push_back(s.x); });

  SolverConfig vr = cfg;
  vr.coeffs = {1.0, 1.0, 1.0, 1.0, 1.0};  // any admissible c: telescoping
  run(*oracle, vr, SolverKind::VrMsgbio, opts,
      [&](const TraceRecord&, const IterateState& s) { xs_vr.push_back(s.x); });

  REQUIRE(xs_det.size() == 50);
  REQUIRE(xs_ms.size() == 50);
  REQUIRE(xs_vr.size() == 50);
  for (std::size_t t = 0; t < 50; ++t) {
    CHECK((xs_det[t] - xs_ms[t]).norm() < 1e-10);
    CHECK((xs_det[t] - xs_vr[t]).norm() < 1e-10);
  }
}

TEST_CASE("run: trace shape, determinism, feasibility, sample accounting") {
  const QuadOracleInstance inst = make_quad(51);
  const auto oracle = quad_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 0.05;
  cfg.lambda = 0.1;
  cfg.schedule = StepSchedule::constant(0.5);
  cfg.horizon = 1;
  cfg.seed = 52;
  cfg.clip = quad_clip(inst);

  RunOptions opts;
  opts.oracle_diagnostics = false;
  const RunResult one = run(*oracle, cfg, SolverKind::Mgbio, opts);
  REQUIRE(one.trace.size() == 1);
  CHECK(one.trace[0].t == 1);
  CHECK(one.output_index == 1);

  cfg.horizon = 40;
  RunResult a = run(*oracle, cfg, SolverKind::Msgbio, opts);
  RunResult b = run(*oracle, cfg, SolverKind::Msgbio, opts);
  REQUIRE(a.trace.size() == b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    a.trace[i].wall_nanos = 0;  // timing is the one nondeterministic column
    b.trace[i].wall_nanos = 0;
    CHECK(a.trace[i] == b.trace[i]);
  }
  CHECK(a.output_index == b.output_index);
  CHECK((a.final_state.x - b.final_state.x).norm() == 0.0);

  // stochastic sample counters grow linearly; mgbio rows carry full-batch
  // equivalents
  for (std::size_t i = 0; i < a.trace.size(); ++i)
    CHECK(a.trace[i].samples_used == 2 * std::int64_t(i + 1));  // batch = 1
  const RunResult det = run(*oracle, cfg, SolverKind::Mgbio, opts);
  for (std::size_t i = 0; i < det.trace.size(); ++i)
    CHECK(det.trace[i].samples_used == 2 * std::int64_t(i + 1));  // n_f + n_g = 2
  CHECK(det.final_state.samples_used == 0);

  const RunResult vr = run(*oracle, cfg, SolverKind::VrMsgbio, opts);
  for (std::size_t i = 1; i < vr.trace.size(); ++i)
    CHECK(vr.trace[i].samples_used - vr.trace[i - 1].samples_used == 4);

  // ball-constrained runs stay feasible and states keep their invariants
  SolverConfig constrained = cfg;
  constrained.set = FeasibleSet::ball(Vec::Zero(10), 0.8);
  constrained.init_radius = 2.0;
  run(*oracle, constrained, SolverKind::Msgbio, opts,
      [&](const TraceRecord&, const IterateState& s) {
        CHECK(constrained.set.contains(s.x, 1e-9));
        CHECK(s.h.norm() <= constrained.clip.c_fy * (1.0 + 1e-12));
        CHECK(spectral_norm(s.g_jac) <= constrained.clip.c_gxy * (1.0 + 1e-10));
        CHECK(s.h_hess.eigenvalues.minCoeff() >= constrained.clip.mu - 1e-12);
        CHECK(s.h_hess.eigenvalues.maxCoeff() <= constrained.clip.l_g + 1e-12);
      });
}

TEST_CASE("warm-start averaging draws b0 samples at initialization") {
  const PLGameInstance inst = generate_pl_game(small_game());
  const auto oracle = pl_game_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 0.02;
  cfg.lambda = 0.02;
  cfg.schedule = StepSchedule::constant(0.5);
  cfg.batch = 2;
  cfg.seed = 81;
  cfg.clip = game_clip(inst);
  cfg.warm_start_samples = inst.n;  // average the init estimators over everything

  Rng init = Rng::substream(cfg.seed, "init");
  Rng batch = Rng::substream(cfg.seed, "minibatch");
  const IterateState state =
      initial_state(SolverKind::Msgbio, *oracle, cfg, init, batch);
  CHECK(state.samples_used == 2 * inst.n);
  // full-sample warm start equals the deterministic quantities
  CHECK((state.u - oracle->grad_f_x(state.x, state.y)).norm() < 1e-12);
  CHECK((state.v - oracle->grad_g_y(state.x, state.y)).norm() < 1e-12);
}

TEST_CASE("run stops with a recorded iteration when iterates blow up") {
  const QuadOracleInstance inst = make_quad(91, 4, 4);
  const auto oracle = quad_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 1e8;  // wildly inadmissible on purpose
  cfg.lambda = 1e8;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.horizon = 200;
  cfg.seed = 92;
  cfg.clip = quad_clip(inst);

  RunOptions opts;
  opts.oracle_diagnostics = false;
  const RunResult result = run(*oracle, cfg, SolverKind::Mgbio, opts);
  REQUIRE(result.failed_iteration.has_value());
  CHECK(*result.failed_iteration <= 200);
  CHECK(result.trace.size() == std::size_t(*result.failed_iteration));
}

TEST_CASE("run records admissibility warnings without rejecting the config") {
  const QuadOracleInstance inst = make_quad(61);
  const auto oracle = quad_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 10.0;  // far beyond any admissible cap
  cfg.lambda = 10.0;
  cfg.schedule = StepSchedule::constant(1.0);
  cfg.horizon = 3;
  cfg.clip = quad_clip(inst);

  RunOptions opts;
  opts.oracle_diagnostics = false;
  const RunResult result = run(*oracle, cfg, SolverKind::Mgbio, opts);
  CHECK(!result.warnings.empty());
  CHECK(result.trace.size() == 3);
}

TEST_CASE("run equivalence: the loop matches repeated mgbio_step calls") {
  const QuadOracleInstance inst = make_quad(71);
  const auto oracle = quad_oracle(inst);

  SolverConfig cfg;
  cfg.gamma = 0.05;
  cfg.lambda = 0.1;
  cfg.schedule = StepSchedule::constant(0.7);
  cfg.horizon = 20;
  cfg.seed = 72;
  cfg.clip = quad_clip(inst);

  RunOptions opts;
  opts.oracle_diagnostics = false;
  std::vector<Vec> from_run;
  run(*oracle, cfg, SolverKind::Mgbio, opts,
      [&](const TraceRecord&, const IterateState& s) { from_run.push_back(s.x); });

  Rng init = Rng::substream(cfg.seed, "init");
  Rng batch = Rng::substream(cfg.seed, "minibatch");
  IterateState state = initial_state(SolverKind::Mgbio, *oracle, cfg, init, batch);
  for (std::size_t t = 0; t < from_run.size(); ++t) {
    CHECK((state.x - from_run[t]).norm() == 0.0);
    state = mgbio_step(state, *oracle, cfg);
  }
}
