#ifndef MPPC_NLPSOLVE_HPP
#define MPPC_NLPSOLVE_HPP

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

#include "mppc/transcribe.hpp"

namespace mppc {

struct NlpSolveOptions {
  int max_outer = 30;
  int max_inner = 400;
  double constraint_tol = 1e-6;
  double stationarity_tol = 1e-5;
  double initial_penalty = 10.0;
  double penalty_growth = 10.0;
  double max_penalty = 1e8;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  int max_line_search_trials = 40;

  void validate() const {
    if (!(constraint_tol > 0.0) || !(stationarity_tol > 0.0))
      throw std::invalid_argument("NlpSolveOptions: tolerances must be positive");
    if (!(penalty_growth > 1.0))
      throw std::invalid_argument("NlpSolveOptions: penalty growth must exceed 1");
  }
};

enum class NlpStatus { Converged, MaxIterations, LineSearchFailed };

inline const char* to_string(NlpStatus s) {
  switch (s) {
    case NlpStatus::Converged: return "converged";
    case NlpStatus::MaxIterations: return "max_iters";
    case NlpStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

struct NlpSolution {
  Eigen::VectorXd vars;
  double objective = 0.0;
  double max_equality_violation = 0.0;
  double max_inequality_violation = 0.0;
  Eigen::VectorXd eq_multipliers;    // convention L = f + lambda_E^T c_E
  Eigen::VectorXd ineq_multipliers;  // L = f - lambda_I^T c_I, lambda_I >= 0
  NlpStatus status = NlpStatus::MaxIterations;
  int outer_iterations = 0;
  int inner_iterations = 0;
  int function_evaluations = 0;
  bool init_was_clamped = false;
};

/// Plain dense NLP: min f(x) s.t. c_E(x) = 0, c_I(x) >= 0, lb <= x <= ub.
/// Constraint callbacks may be left empty.
struct NlpProblem {
  int num_vars = 0;
  std::function<double(const Eigen::VectorXd&)> objective;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> objective_gradient;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> equalities;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> equality_jacobian;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> inequalities;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> inequality_jacobian;
  Eigen::VectorXd lb, ub;  // empty = unbounded
};

inline NlpProblem as_nlp_problem(const TranscribedNlp& nlp) {
  NlpProblem p;
  p.num_vars = nlp.layout().size();
  p.objective = [&nlp](const Eigen::VectorXd& v) { return nlp.objective(v); };
  p.objective_gradient = [&nlp](const Eigen::VectorXd& v) {
    return nlp.objective_gradient(v);
  };
  p.equalities = [&nlp](const Eigen::VectorXd& v) { return nlp.equalities(v); };
  p.equality_jacobian = [&nlp](const Eigen::VectorXd& v) {
    return nlp.equality_jacobian(v);
  };
  if (nlp.num_inequalities() > 0) {
    p.inequalities = [&nlp](const Eigen::VectorXd& v) { return nlp.inequalities(v); };
    p.inequality_jacobian = [&nlp](const Eigen::VectorXd& v) {
      return nlp.inequality_jacobian(v);
    };
  }
  p.lb = nlp.lower_bounds();
  p.ub = nlp.upper_bounds();
  return p;
}

struct KktResiduals {
  double stationarity = 0.0;
  double eq_feasibility = 0.0;
  double ineq_feasibility = 0.0;
  double complementarity = 0.0;
};

/// First-order optimality residuals at (point, multipliers). Stationarity is
/// the box-projected gradient of L = f + lambda_E^T c_E - lambda_I^T c_I.
inline KktResiduals kkt_residuals(const NlpProblem& p, const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& eq_mult,
                                  const Eigen::VectorXd& ineq_mult) {
  KktResiduals out;
  Eigen::VectorXd grad = p.objective_gradient(x);
  if (p.equalities) {
    const Eigen::VectorXd ce = p.equalities(x);
    out.eq_feasibility = ce.size() ? ce.cwiseAbs().maxCoeff() : 0.0;
    if (eq_mult.size()) grad += p.equality_jacobian(x).transpose() * eq_mult;
  }
  if (p.inequalities) {
    const Eigen::VectorXd ci = p.inequalities(x);
    out.ineq_feasibility = ci.size() ? std::max(0.0, -ci.minCoeff()) : 0.0;
    if (ineq_mult.size()) {
      grad -= p.inequality_jacobian(x).transpose() * ineq_mult;
      out.complementarity =
          ci.size() ? (ineq_mult.array() * ci.array()).abs().maxCoeff() : 0.0;
    }
  }
  Eigen::VectorXd stepped = x - grad;
  if (p.lb.size()) stepped = stepped.cwiseMax(p.lb);
  if (p.ub.size()) stepped = stepped.cwiseMin(p.ub);
  out.stationarity = (x - stepped).cwiseAbs().maxCoeff();
  return out;
}

namespace detail {

struct AlWorkspace {
  const NlpProblem* p = nullptr;
  Eigen::VectorXd lb, ub;  // over [x; s]
  int nx = 0, ns = 0;
  Eigen::VectorXd lambda;  // multipliers of [c_E; c_I - s]
  double mu = 10.0;
  int* feval = nullptr;

  Eigen::VectorXd constraints(const Eigen::VectorXd& y) const {
    const Eigen::VectorXd x = y.head(nx);
    Eigen::VectorXd c(lambda.size());
    int off = 0;
    if (p->equalities) {
      const Eigen::VectorXd ce = p->equalities(x);
      c.head(ce.size()) = ce;
      off = static_cast<int>(ce.size());
    }
    if (p->inequalities) {
      c.segment(off, ns) = p->inequalities(x) - y.tail(ns);
    }
    return c;
  }

  double merit(const Eigen::VectorXd& y) const {
    ++(*feval);
    double val = p->objective(y.head(nx));
    if (lambda.size()) {
      const Eigen::VectorXd c = constraints(y);
      val += lambda.dot(c) + 0.5 * mu * c.squaredNorm();
    }
    return val;
  }

  Eigen::VectorXd merit_gradient(const Eigen::VectorXd& y) const {
    const Eigen::VectorXd x = y.head(nx);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(y.size());
    g.head(nx) = p->objective_gradient(x);
    if (!lambda.size()) return g;
    const Eigen::VectorXd c = constraints(y);
    const Eigen::VectorXd w = lambda + mu * c;
    int off = 0;
    if (p->equalities) {
      const Eigen::MatrixXd je = p->equality_jacobian(x);
      g.head(nx) += je.transpose() * w.head(je.rows());
      off = static_cast<int>(je.rows());
    }
    if (p->inequalities) {
      const Eigen::MatrixXd ji = p->inequality_jacobian(x);
      g.head(nx) += ji.transpose() * w.segment(off, ns);
      g.tail(ns) = -w.segment(off, ns);
    }
    return g;
  }

  Eigen::VectorXd project(Eigen::VectorXd y) const {
    return y.cwiseMax(lb).cwiseMin(ub);
  }

  double projected_gradient_norm(const Eigen::VectorXd& y, const Eigen::VectorXd& g) const {
    return (y - project(y - g)).cwiseAbs().maxCoeff();
  }
};

struct InnerResult {
  Eigen::VectorXd y;
  bool line_search_failed = false;
  int iterations = 0;
};

/// Bound-constrained minimization of the augmented Lagrangian: damped BFGS
/// direction, gradient projection onto the box inside an Armijo backtracking
/// search, steepest-descent restart when the quasi-Newton direction fails.
/// The inverse-Hessian estimate `h` persists across outer iterations.
inline InnerResult minimize_al(const AlWorkspace& ws, Eigen::VectorXd y, double tol,
                               const NlpSolveOptions& opts, int* inner_total,
                               Eigen::MatrixXd& h) {
  double fval = ws.merit(y);
  Eigen::VectorXd g = ws.merit_gradient(y);

  InnerResult res;
  double alpha_start = 1.0;  // adapts to the accepted step of the last iterate
  for (int it = 0; it < opts.max_inner; ++it) {
    if (ws.projected_gradient_norm(y, g) <= tol) break;
    ++res.iterations;
    ++(*inner_total);

    Eigen::VectorXd d = -(h * g);
    if (!d.allFinite() || g.dot(d) > -1e-14 * g.norm() * d.norm()) {
      h.setIdentity();
      d = -g;
    }

    bool accepted = false;
    Eigen::VectorXd y_new;
    double f_new = fval;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      if (attempt == 1) {  // quasi-Newton direction failed, retry steepest
        h.setIdentity();
        d = -g;
        alpha_start = 1.0;
      }
      double alpha = alpha_start;
      for (int ls = 0; ls < opts.max_line_search_trials; ++ls) {
        y_new = ws.project(y + alpha * d);
        const Eigen::VectorXd step = y_new - y;
        const double pred = g.dot(step);
        if (step.cwiseAbs().maxCoeff() == 0.0) {
          if (alpha < 1.0 && ls == 0) {  // projection ate the short trial step
            alpha = 1.0;
            continue;
          }
          break;
        }
        f_new = ws.merit(y_new);
        if (std::isfinite(f_new) && f_new <= fval + opts.armijo_c * std::min(pred, 0.0)) {
          accepted = true;
          alpha_start = std::min(1.0, 2.0 * alpha);
          break;
        }
        alpha *= opts.backtrack_factor;
      }
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }

    const Eigen::VectorXd g_new = ws.merit_gradient(y_new);
    const Eigen::VectorXd s = y_new - y;
    const Eigen::VectorXd dg = g_new - g;
    const double sy = s.dot(dg);
    if (sy > 1e-10 * s.norm() * dg.norm()) {
      // BFGS update of the inverse Hessian; skipped when curvature fails.
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hdg = h * dg;
      const double dgh_dg = dg.dot(hdg);
      h -= rho * (hdg * s.transpose() + s * hdg.transpose());
      h += (rho * rho * dgh_dg + rho) * (s * s.transpose());
    }
    y = y_new;
    fval = f_new;
    g = g_new;
  }
  res.y = y;
  return res;
}

}  // namespace detail

/// Augmented-Lagrangian solve: inequalities become equalities through
/// nonnegative slacks folded into the box, multipliers update on sufficient
/// feasibility progress, penalty grows tenfold otherwise.
inline NlpSolution solve(const NlpProblem& p, const Eigen::VectorXd& x_init,
                         const NlpSolveOptions& opts = {}) {
  opts.validate();
  if (x_init.size() != p.num_vars)
    throw std::invalid_argument("solve: initial point dimension mismatch");

  const double inf = std::numeric_limits<double>::infinity();
  NlpSolution sol;

  detail::AlWorkspace ws;
  ws.p = &p;
  ws.nx = p.num_vars;
  ws.feval = &sol.function_evaluations;

  Eigen::VectorXd x = x_init;
  if (p.lb.size()) {
    const Eigen::VectorXd clamped = x.cwiseMax(p.lb).cwiseMin(p.ub);
    sol.init_was_clamped = (clamped - x).cwiseAbs().maxCoeff() > 0.0;
    x = clamped;
  }

  const int n_eq = p.equalities ? static_cast<int>(p.equalities(x).size()) : 0;
  ws.ns = p.inequalities ? static_cast<int>(p.inequalities(x).size()) : 0;

  Eigen::VectorXd y(p.num_vars + ws.ns);
  y.head(p.num_vars) = x;
  if (ws.ns) y.tail(ws.ns) = p.inequalities(x).cwiseMax(0.0);  // feasible slack start

  ws.lb = Eigen::VectorXd::Constant(y.size(), -inf);
  ws.ub = Eigen::VectorXd::Constant(y.size(), inf);
  if (p.lb.size()) ws.lb.head(p.num_vars) = p.lb;
  if (p.ub.size()) ws.ub.head(p.num_vars) = p.ub;
  if (ws.ns) ws.lb.tail(ws.ns).setZero();

  ws.lambda = Eigen::VectorXd::Zero(n_eq + ws.ns);
  ws.mu = opts.initial_penalty;

  double prev_viol = inf;
  double last_viol = inf;
  double inner_tol = ws.lambda.size() ? std::max(1e-2, opts.stationarity_tol)
                                      : opts.stationarity_tol;
  int stalled_ls_failures = 0;
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(y.size(), y.size());

  for (int outer = 0; outer < opts.max_outer; ++outer) {
    ++sol.outer_iterations;
    const auto inner =
        detail::minimize_al(ws, y, inner_tol, opts, &sol.inner_iterations, h);
    y = inner.y;

    const Eigen::VectorXd c =
        ws.lambda.size() ? ws.constraints(y) : Eigen::VectorXd();
    const double viol = c.size() ? c.cwiseAbs().maxCoeff() : 0.0;
    const double stat = ws.projected_gradient_norm(y, ws.merit_gradient(y));

    if (viol <= opts.constraint_tol && stat <= opts.stationarity_tol) {
      sol.status = NlpStatus::Converged;
      if (c.size()) ws.lambda += ws.mu * c;
      break;
    }

    // A stalled line search only counts against us when feasibility also
    // stopped improving.
    if (inner.line_search_failed && viol >= 0.5 * prev_viol)
      ++stalled_ls_failures;
    else
      stalled_ls_failures = 0;
    if (stalled_ls_failures >= 2) {
      sol.status = NlpStatus::LineSearchFailed;
      break;
    }
    if (!ws.lambda.size()) {
      // Unconstrained problem that missed the stationarity tolerance.
      sol.status = inner.line_search_failed ? NlpStatus::LineSearchFailed
                                            : NlpStatus::MaxIterations;
      break;
    }

    // Infeasible-problem guard: once the penalty is capped and feasibility
    // has stopped moving, more outer iterations cannot help.
    if (ws.mu >= opts.max_penalty && viol > opts.constraint_tol &&
        viol > 0.9 * last_viol) {
      sol.status = NlpStatus::MaxIterations;
      break;
    }
    last_viol = viol;

    if (viol <= std::max(0.25 * prev_viol, opts.constraint_tol)) {
      ws.lambda += ws.mu * c;
      prev_viol = viol;
    } else {
      ws.mu = std::min(ws.mu * opts.penalty_growth, opts.max_penalty);
      h.setIdentity();  // curvature estimate is stale at the new penalty
    }
    inner_tol = std::max(opts.stationarity_tol, inner_tol * 0.2);
  }

  sol.vars = y.head(p.num_vars);
  sol.objective = p.objective(sol.vars);
  if (p.equalities) {
    const Eigen::VectorXd ce = p.equalities(sol.vars);
    sol.max_equality_violation = ce.size() ? ce.cwiseAbs().maxCoeff() : 0.0;
  }
  if (p.inequalities) {
    const Eigen::VectorXd ci = p.inequalities(sol.vars);
    sol.max_inequality_violation = ci.size() ? std::max(0.0, -ci.minCoeff()) : 0.0;
  }
  sol.eq_multipliers = ws.lambda.head(n_eq);
  sol.ineq_multipliers = -ws.lambda.tail(ws.ns);  // slack-equality sign flip
  return sol;
}

inline NlpSolution solve(const TranscribedNlp& nlp, const Eigen::VectorXd& x_init,
                         const NlpSolveOptions& opts = {}) {
  return solve(as_nlp_problem(nlp), x_init, opts);
}

/// A point is usable for rollout when its violations meet the given levels,
/// whether or not the stationarity test also passed. Path constraints often
/// need a tighter level than the defects: a slightly inconsistent dynamics
/// prediction is corrected by feedback, a clipped keep-out zone is not.
inline bool dynamics_feasible(const NlpSolution& sol, double eq_tol, double ineq_tol) {
  return sol.status == NlpStatus::Converged ||
         (sol.max_equality_violation <= eq_tol &&
          sol.max_inequality_violation <= ineq_tol);
}

inline bool dynamics_feasible(const NlpSolution& sol, const NlpSolveOptions& opts) {
  return dynamics_feasible(sol, opts.constraint_tol, opts.constraint_tol);
}

/// One stage of the order-refinement ladder.
struct RefinementStage {
  int order = 30;
  double constraint_tol = 1e-6;
};

struct OcpSolveResult {
  TranscribedNlp nlp;      // transcription of the final stage
  NlpSolution solution;    // its solution
  bool feasible = false;   // met the final stage's constraint tolerance
  std::vector<NlpSolution> stage_solutions;
};

/// Episodic solve by order refinement: solve at a low order first, then
/// re-solve at progressively higher orders, each warm-started by
/// re-interpolating the previous stage. Low orders cannot alias between
/// nodes, which keeps the ladder on the smooth solution branch that later
/// stages polish.
/// `accept_tol` is the violation level at which the result counts as
/// feasible; stages may request tighter tolerances than they can attain
/// (asking for more polish always helps the replay) without failing the
/// solve. Negative means "final stage tolerance".
inline OcpSolveResult solve_ocp_refined(const OcProblem& problem,
                                        const std::vector<RefinementStage>& stages,
                                        NlpSolveOptions opts = {},
                                        const Eigen::VectorXd* initial_guess = nullptr,
                                        double accept_tol = -1.0) {
  if (stages.empty()) throw std::invalid_argument("solve_ocp_refined: no stages");
  std::vector<TranscribedNlp> ladder;
  ladder.reserve(stages.size());
  std::vector<NlpSolution> stage_solutions;
  Eigen::VectorXd vars;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    ladder.emplace_back(problem, CollocationGrid::get(stages[s].order));
    auto& nlp = ladder.back();
    Eigen::VectorXd guess;
    if (s == 0)
      guess = (initial_guess && initial_guess->size() == nlp.layout().size())
                  ? *initial_guess
                  : cold_start_guess(nlp);
    else
      guess = reinterpolate_guess(ladder[s - 1], vars, nlp);
    opts.constraint_tol = stages[s].constraint_tol;
    stage_solutions.push_back(solve(nlp, guess, opts));
    vars = stage_solutions.back().vars;
  }
  OcpSolveResult out{std::move(ladder.back()), stage_solutions.back(), false, {}};
  NlpSolveOptions accept = opts;
  accept.constraint_tol = accept_tol >= 0.0 ? accept_tol : stages.back().constraint_tol;
  out.feasible = dynamics_feasible(out.solution, accept);
  out.stage_solutions = std::move(stage_solutions);
  return out;
}

}  // namespace mppc

#endif  // MPPC_NLPSOLVE_HPP
