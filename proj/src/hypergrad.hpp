#pragma once

#include <cstdint>

#include "problems.hpp"
#include "spectral.hpp"

namespace bilevel {

// Closed convex feasible set with an exact projection.
class FeasibleSet {
 public:
  enum class Kind { Unconstrained, Ball, Box };

  static FeasibleSet unconstrained();
  static FeasibleSet ball(Vec center, double radius);
  static FeasibleSet box(Vec lower, Vec upper);

  Kind kind() const { return kind_; }
  bool is_unconstrained() const { return kind_ == Kind::Unconstrained; }
  Vec project(const Vec& v) const;
  bool contains(const Vec& v, double tol = 1e-10) const;

  const Vec& center() const { return a_; }
  double radius() const { return radius_; }
  const Vec& lower() const { return a_; }
  const Vec& upper() const { return b_; }

 private:
  FeasibleSet(Kind kind, Vec a, Vec b, double radius)
      : kind_(kind), a_(std::move(a)), b_(std::move(b)), radius_(radius) {}

  Kind kind_;
  Vec a_, b_;  // ball center / box bounds
  double radius_ = 0.0;
};

// The pieces of the clipped hyper-gradient estimator and their assembly
// w = u - G * H^{-1} h, with H applied through its eigendecomposition.
struct HyperGradParts {
  Vec u;           // grad_x f
  Vec h;           // ball-projected grad_y f
  Mat g_jac;       // spectral-norm-projected cross Jacobian
  SymEig h_hess;   // eigenvalue-clamped lower Hessian
  Vec w;           // assembled estimate
};

Vec assemble_hypergradient(const Vec& u, const Mat& g_jac, const SymEig& h_hess,
                           const Vec& h);

HyperGradParts clipped_hypergradient(const BilevelOracle& oracle, const Vec& x,
                                     const Vec& y, const ClipSpec& spec);

// Gradient mapping (x - P_X(x - gamma * direction)) / gamma; equals the
// direction itself on unconstrained sets.
Vec gradient_mapping(const Vec& x, const Vec& direction, double gamma,
                     const FeasibleSet& set);

// argmin over the set of <w, z> + ||z - x||^2 / (2 gamma), i.e. the projected
// step P_X(x - gamma * w).
Vec prox_step(const Vec& x, const Vec& w, double gamma, const FeasibleSet& set);

struct InnerSolveOptions {
  std::int64_t budget = 100000;
  double tolerance = 1e-10;  // on ||grad_y g||
  double step = 0.0;         // 0: use 1 / (lower smoothness estimate)
};

struct InnerSolveResult {
  Vec y;
  double grad_norm = 0.0;
  std::int64_t iterations = 0;
  bool converged = false;
};

// Plain gradient descent on g(x, .) from y0.
InnerSolveResult solve_lower_level(const BilevelOracle& oracle, const Vec& x,
                                   const Vec& y0, const InnerSolveOptions& opts);

// Independent verification oracle: central finite differences of
// x -> f(x, y*(x)) with the inner problem solved by gradient descent.
// Accuracy is O(fd_step^2 + inner tolerance).
Vec fd_hypergradient(const BilevelOracle& oracle, const Vec& x,
                     std::int64_t inner_solver_budget, double fd_step);

}  // namespace bilevel
