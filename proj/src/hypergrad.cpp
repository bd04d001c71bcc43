#include "hypergrad.hpp"

#include <cmath>

namespace bilevel {

FeasibleSet FeasibleSet::unconstrained() {
  return FeasibleSet(Kind::Unconstrained, Vec(), Vec(), 0.0);
}

FeasibleSet FeasibleSet::ball(Vec center, double radius) {
  if (!(radius > 0.0)) fail(ErrorCode::InvalidConfiguration, "FeasibleSet: radius must be positive");
  require_finite(center, "FeasibleSet::ball");
  return FeasibleSet(Kind::Ball, std::move(center), Vec(), radius);
}

FeasibleSet FeasibleSet::box(Vec lower, Vec upper) {
  if (lower.size() != upper.size())
    fail(ErrorCode::InvalidConfiguration, "FeasibleSet: box bound sizes differ");
  if ((lower.array() > upper.array()).any())
    fail(ErrorCode::InvalidConfiguration, "FeasibleSet: box lower bound exceeds upper");
  return FeasibleSet(Kind::Box, std::move(lower), std::move(upper), 0.0);
}

Vec FeasibleSet::project(const Vec& v) const {
  switch (kind_) {
    case Kind::Unconstrained:
      return v;
    case Kind::Ball: {
      const Vec offset = v - a_;
      const double norm = offset.norm();
      if (norm <= radius_) return v;
      return a_ + (radius_ / norm) * offset;
    }
    case Kind::Box:
      return v.cwiseMax(a_).cwiseMin(b_);
  }
  fail(ErrorCode::InvalidInput, "FeasibleSet: unknown kind");
}

bool FeasibleSet::contains(const Vec& v, double tol) const {
  switch (kind_) {
    case Kind::Unconstrained:
      return true;
    case Kind::Ball:
      return (v - a_).norm() <= radius_ * (1.0 + tol) + tol;
    case Kind::Box:
      return (v.array() >= a_.array() - tol).all() &&
             (v.array() <= b_.array() + tol).all();
  }
  return false;
}

Vec assemble_hypergradient(const Vec& u, const Mat& g_jac, const SymEig& h_hess,
                           const Vec& h) {
  return u - g_jac * apply_clamped_inverse(h_hess, h);
}

HyperGradParts clipped_hypergradient(const BilevelOracle& oracle, const Vec& x,
                                     const Vec& y, const ClipSpec& spec) {
  spec.validate();
  HyperGradParts parts;
  parts.u = oracle.grad_f_x(x, y);
  parts.h = project_ball(oracle.grad_f_y(x, y), spec.c_fy);
  parts.g_jac = project_spectral_norm(oracle.jac_g_xy(x, y), spec.c_gxy);
  parts.h_hess = clamp_spectrum(oracle.hess_g_yy(x, y), spec.mu, spec.l_g);
  parts.w = assemble_hypergradient(parts.u, parts.g_jac, parts.h_hess, parts.h);
  return parts;
}

Vec gradient_mapping(const Vec& x, const Vec& direction, double gamma,
                     const FeasibleSet& set) {
  if (!(gamma > 0.0)) fail(ErrorCode::InvalidInput, "gradient_mapping: gamma must be positive");
  if (set.is_unconstrained()) return direction;
  if (!set.contains(x))
    fail(ErrorCode::InfeasiblePoint, "gradient_mapping: x outside the feasible set");
  return (x - set.project(x - gamma * direction)) / gamma;
}

Vec prox_step(const Vec& x, const Vec& w, double gamma, const FeasibleSet& set) {
  if (!(gamma > 0.0)) fail(ErrorCode::InvalidInput, "prox_step: gamma must be positive");
  if (!set.contains(x))
    fail(ErrorCode::InfeasiblePoint, "prox_step: x outside the feasible set");
  return set.project(x - gamma * w);
}

InnerSolveResult solve_lower_level(const BilevelOracle& oracle, const Vec& x,
                                   const Vec& y0, const InnerSolveOptions& opts) {
  double step = opts.step;
  if (step <= 0.0) {
    const double l_g = std::max(oracle.measured_constants().l_g,
                                spectral_norm(oracle.hess_g_yy(x, y0)));
    step = 1.0 / std::max(l_g, 1e-12);
  }
  InnerSolveResult out;
  out.y = y0;
  const double diverged = 1e12 * (1.0 + y0.norm());
  for (std::int64_t it = 0; it < opts.budget; ++it) {
    const Vec grad = oracle.grad_g_y(x, out.y);
    out.grad_norm = grad.norm();
    out.iterations = it;
    if (out.grad_norm <= opts.tolerance) {
      out.converged = true;
      return out;
    }
    out.y -= step * grad;
    if (!out.y.allFinite() || out.y.norm() > diverged)
      fail(ErrorCode::UnboundedBelow, "solve_lower_level: inner iterates diverged");
  }
  out.grad_norm = oracle.grad_g_y(x, out.y).norm();
  out.converged = out.grad_norm <= opts.tolerance;
  return out;
}

Vec fd_hypergradient(const BilevelOracle& oracle, const Vec& x,
                     std::int64_t inner_solver_budget, double fd_step) {
  if (!(fd_step > 0.0)) fail(ErrorCode::InvalidInput, "fd_hypergradient: step must be positive");
  const Dims dm = oracle.dims();
  if (x.size() != dm.d) fail(ErrorCode::InvalidInput, "fd_hypergradient: bad x dimension");

  InnerSolveOptions opts;
  opts.budget = inner_solver_budget;

  const auto solve_at = [&](const Vec& xq, const Vec& warm) -> Vec {
    auto result = solve_lower_level(oracle, xq, warm, opts);
    if (!result.converged)
      fail(ErrorCode::OracleUnavailable,
           "fd_hypergradient: inner solve missed tolerance within budget");
    return result.y;
  };

  const Vec y_base = solve_at(x, Vec::Zero(dm.p));
  Vec grad(dm.d);
  for (Index i = 0; i < dm.d; ++i) {
    Vec xp = x, xm = x;
    xp(i) += fd_step;
    xm(i) -= fd_step;
    const double fp = oracle.f(xp, solve_at(xp, y_base));
    const double fm = oracle.f(xm, solve_at(xm, y_base));
    grad(i) = (fp - fm) / (2.0 * fd_step);
  }
  return grad;
}

}  // namespace bilevel
