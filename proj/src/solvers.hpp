#pragma once

#include <array>
#include <functional>
#include <string_view>
#include <vector>

#include "hypergrad.hpp"
#include "rng.hpp"
#include "trace.hpp"

namespace bilevel {

enum class SolverKind { Mgbio, Msgbio, VrMsgbio };

std::string_view solver_name(SolverKind kind);
SolverKind parse_solver_name(std::string_view name);

// Step-size sequence eta_t; every emitted value lies in (0, 1].
class StepSchedule {
 public:
  enum class Kind { Constant, Polynomial };

  static StepSchedule constant(double eta);
  // eta_t = k / (m + t)^exponent with exponent 1/2 or 1/3.
  static StepSchedule polynomial(double k, double m, double exponent);

  double at(std::int64_t t) const;
  Kind kind() const { return kind_; }
  double eta() const { return eta_; }
  double k() const { return k_; }
  double m() const { return m_; }
  double exponent() const { return exponent_; }

 private:
  StepSchedule() = default;
  Kind kind_ = Kind::Constant;
  double eta_ = 1.0;
  double k_ = 1.0, m_ = 1.0, exponent_ = 0.5;
};

// Momentum-coefficient multipliers: the stochastic solvers use
// beta = c1 * eta_t (basic momentum) or c1 * eta_t^2 (variance-reduced),
// and likewise c2..c5 for the other four estimators.
struct MomentumCoeffs {
  double c1 = 1.0, c2 = 1.0, c3 = 1.0, c4 = 1.0, c5 = 1.0;

  std::array<double, 5> as_array() const { return {c1, c2, c3, c4, c5}; }
  // Coefficients at iteration t; all must land in (0, 1].
  std::array<double, 5> at(const StepSchedule& schedule, std::int64_t t,
                           SolverKind kind) const;
};

struct SolverConfig {
  double gamma = 0.01;
  double lambda = 0.01;
  StepSchedule schedule = StepSchedule::constant(1.0);
  MomentumCoeffs coeffs;
  std::int64_t batch = 1;
  std::int64_t horizon = 100;
  std::uint64_t seed = 0;
  ClipSpec clip;
  FeasibleSet set = FeasibleSet::unconstrained();
  double init_radius = 1.0;
  std::int64_t warm_start_samples = 0;  // 0: initialize from one cfg.batch draw

  void validate(SolverKind kind, const BilevelOracle& oracle) const;
};

// Full solver state at iteration t: the iterates and the estimator quantities
// driving the next update. For MGBiO the estimators are the fresh clipped
// derivatives at (x_t, y_t); for the stochastic solvers they are momentum
// averages.
struct IterateState {
  std::int64_t t = 1;
  Vec x, y;
  Vec u;        // estimate of grad_x f
  Vec h;        // clipped estimate of grad_y f
  Vec v;        // estimate of grad_y g
  Mat g_jac;    // clipped cross-Jacobian estimate
  SymEig h_hess;  // clamped Hessian estimate
  Vec w;        // assembled hyper-gradient estimate
  std::int64_t samples_used = 0;
};

IterateState initial_state(SolverKind kind, const BilevelOracle& oracle,
                           const SolverConfig& cfg, Rng& init_rng, Rng& batch_rng);

// One deterministic iteration: fresh derivatives at (x_t, y_t), then the
// prox step on x and the gradient step on y, both damped by eta_t.
IterateState mgbio_step(const IterateState& state, const BilevelOracle& oracle,
                        const SolverConfig& cfg);

// One basic-momentum stochastic iteration: move (x, y) with the stored
// estimates, then blend fresh minibatch derivatives into each estimator.
IterateState msgbio_step(const IterateState& state, const BilevelOracle& oracle,
                         const SolverConfig& cfg, Rng& rng);

// One variance-reduced iteration: as msgbio_step but every estimator adds the
// same-minibatch two-point correction term.
IterateState vr_msgbio_step(const IterateState& state, const BilevelOracle& oracle,
                            const SolverConfig& cfg, Rng& rng);

struct RunOptions {
  std::int64_t diag_stride = 10;
  bool oracle_diagnostics = true;
  // Closed-form hyper-gradient when the problem family has one.
  std::function<Vec(const Vec&)> true_hypergradient;
};

struct RunResult {
  std::vector<TraceRecord> trace;
  IterateState final_state;
  std::int64_t output_index = 1;  // uniform draw from {1..T}
  std::vector<std::string> warnings;
  std::optional<std::int64_t> failed_iteration;  // set when an iterate went non-finite
};

using ProgressCallback =
    std::function<void(const TraceRecord&, const IterateState&)>;

RunResult run(const BilevelOracle& oracle, const SolverConfig& cfg,
              SolverKind kind, const RunOptions& opts = {},
              const ProgressCallback& callback = {});

}  // namespace bilevel
