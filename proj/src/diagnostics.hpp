#pragma once

#include <array>
#include <string_view>
#include <unordered_map>

#include "solvers.hpp"

namespace bilevel {

// Problem-level constants feeding the smoothness and admissibility bounds.
// c_gy defaults to c_fy * l_g / l_f when left at zero (heuristic, flagged in
// the report).
struct ProblemConstants {
  double c_fy = 1.0;
  double c_gxy = 1.0;
  double c_gy = 0.0;
  double mu = 1.0;
  double l_f = 1.0;
  double l_g = 1.0;
  double l_gxy = 0.0;
  double l_gyy = 0.0;

  void validate() const;
};

struct CoeffWindow {
  double lo = 0.0;
  double hi = 0.0;
  bool empty() const { return !(lo <= hi); }
};

// Largest admissible step sizes for one solver's convergence guarantee.
struct StepCaps {
  double gamma_max = 0.0;  // evaluated at lambda = lambda_max
  double lambda_max = 0.0;
};

struct ConstantsReport {
  double kappa = 0.0;
  double l_y = 0.0;
  double l_f_upper = 0.0;  // L_F
  double l_g_upper = 0.0;  // L_G
  double l_hat = 0.0;
  double l_breve = 0.0;
  double l_check = 0.0;
  double c_gy_effective = 0.0;
  bool c_gy_heuristic = false;
  double eta0 = 0.0, k = 0.0, m = 0.0;
  StepCaps mgbio_caps, msgbio_caps, vr_caps;
  std::array<CoeffWindow, 5> msgbio_windows{};  // admissible c_1..c_5
  std::array<CoeffWindow, 5> vr_windows{};
};

// Smoothness constants, per-solver step caps and momentum-coefficient
// windows. The deterministic caps use eta = schedule value at t = 0; the
// stochastic windows use the supplied (k, m) of the polynomial schedule.
ConstantsReport constants_report(const ProblemConstants& pc,
                                 const StepSchedule& schedule, double k, double m);

// Advisory check of a run configuration against the solver's admissibility
// conditions; returns human-readable warnings, never rejects.
std::vector<std::string> admissibility_warnings(const ConstantsReport& report,
                                                const SolverConfig& cfg,
                                                SolverKind kind);

// Memoized lower-level solutions: closed form when the oracle has one,
// otherwise inner gradient descent warm-started from the previous query.
class TruthCache {
 public:
  explicit TruthCache(const BilevelOracle& oracle, InnerSolveOptions opts = {});

  struct LowerSolution {
    Vec y_star;
    double g_min = 0.0;
  };

  const LowerSolution& lower(const Vec& x);

 private:
  const BilevelOracle& oracle_;
  InnerSolveOptions opts_;
  std::unordered_map<std::string, LowerSolution> cache_;
  Vec warm_;
};

// g(x, y) - min_y g(x, y), the inner suboptimality.
double pl_residual(const BilevelOracle& oracle, const Vec& x, const Vec& y,
                   std::int64_t inner_budget = 100000);

enum class LyapunovKind { Omega, Phi, GammaFn };

LyapunovKind solver_lyapunov(SolverKind kind);

// Omega adds the PL residual to F(x_t); Phi adds the gamma- and
// lambda-weighted squared estimator errors; GammaFn weights them by
// gamma/eta_{t-1} and lambda/eta_{t-1}.
double lyapunov(const IterateState& state, const BilevelOracle& oracle,
                const SolverConfig& cfg, LyapunovKind which,
                TruthCache* cache = nullptr);

// Empirical noise variance of single-sample derivative estimates around
// their full-batch values at (x, y); the sigma^2 of the bounded-variance
// assumption, reported as an estimate.
double estimate_noise_variance(const BilevelOracle& oracle, const Vec& x,
                               const Vec& y, std::int64_t draws, Rng& rng);

struct StochasticBoundInputs {
  double r_value = 0.0;  // F(x_1) - F* + g(x_1, y_1) - G(x_1)
  double sigma2 = 0.0;
  std::int64_t horizon = 1;
};

// Right-hand sides of the stochastic mean-stationarity bounds. With an
// empirical sigma^2 these are estimates only.
double msgbio_stationarity_bound(const ConstantsReport& report,
                                 const SolverConfig& cfg,
                                 const StochasticBoundInputs& in);
double vr_stationarity_bound(const ConstantsReport& report, const SolverConfig& cfg,
                             const StochasticBoundInputs& in);

struct RateFit {
  double slope = 0.0;
  double r2 = 0.0;
};

// Least-squares slope of log(running mean of the metric) against log(t) over
// the window [t_lo, t_hi]. Metric is a trace column name.
RateFit fit_rate(const std::vector<TraceRecord>& trace, std::string_view metric,
                 std::int64_t t_lo, std::int64_t t_hi);

}  // namespace bilevel
