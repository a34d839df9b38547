#ifndef MPPC_MPCLOOP_HPP
#define MPPC_MPCLOOP_HPP

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mppc/nlpsolve.hpp"
#include "mppc/transcribe.hpp"

namespace mppc {

enum class MpcMode { Episodic, Mpc, MpcOnline };

inline const char* to_string(MpcMode m) {
  switch (m) {
    case MpcMode::Episodic: return "episodic";
    case MpcMode::Mpc: return "mpc";
    case MpcMode::MpcOnline: return "mpc_online";
  }
  return "unknown";
}

struct MpcConfig {
  MpcMode mode = MpcMode::Mpc;
  int rollout_steps = 5;       // p: applied steps per re-solve
  double dt = 0.01;            // integrator step
  double tolerance = 0.05;     // on the error-subset norm
  double t_max = 5.0;          // episode time budget
  double plan_t_final = -1.0;  // fixed arrival time of the plans; <= 0 = t_max
  int collocation_order = 12;  // per MPC re-solve
  std::vector<RefinementStage> episodic_stages;  // ladder for episodic solves
  bool warm_start = true;
  std::vector<int> error_indices;  // empty = all state entries
  double min_horizon = -1.0;       // < 0 = 10 p dt
  NlpSolveOptions nlp;
  // While no usable plan exists, or right after an unusable solve, the
  // solver gets this richer budget; routine warm re-solves run on `nlp`.
  // Zero max_outer means "same as nlp".
  NlpSolveOptions first_solve_nlp{.max_outer = 0};
  double accept_tol = 1e-5;        // defect level at which a plan is applied
  double accept_ineq_tol = 1e-6;   // path-constraint level for applied plans

  void validate() const {
    if (rollout_steps < 1) throw std::invalid_argument("MpcConfig: rollout_steps >= 1");
    if (!(tolerance > 0.0)) throw std::invalid_argument("MpcConfig: tolerance > 0");
    if (!(t_max > 0.0)) throw std::invalid_argument("MpcConfig: t_max > 0");
    if (!(dt > 0.0)) throw std::invalid_argument("MpcConfig: dt > 0");
  }

  double horizon_floor() const {
    return min_horizon > 0.0 ? min_horizon : 10.0 * rollout_steps * dt;
  }

  double arrival_time() const { return plan_t_final > 0.0 ? plan_t_final : t_max; }

  std::vector<RefinementStage> episodic_ladder() const {
    if (!episodic_stages.empty()) return episodic_stages;
    return {{collocation_order, nlp.constraint_tol}};
  }
};

struct IterationRecord {
  double t_start = 0.0;
  double t_horizon_end = 0.0;
  NlpStatus status = NlpStatus::MaxIterations;
  bool usable = false;
  double objective = 0.0;
  double max_equality_violation = 0.0;
  int inner_iterations = 0;
  Eigen::MatrixXd planned_states;    // (K+2) x n node values incl. X_0 and X_f
  Eigen::MatrixXd planned_controls;  // K x m
  double uncertainty_radius = 0.0;   // filled by the obstacle layer
};

struct EpisodeLog {
  std::vector<double> times;             // steps + 1
  std::vector<Eigen::VectorXd> states;   // steps + 1, true rollout
  std::vector<Eigen::VectorXd> controls; // steps, applied
  std::vector<int> phase;                // steps, owning iteration index
  std::vector<IterationRecord> iterations;
  long model_updates = 0;
  double final_error = 0.0;
  double total_cost = 0.0;
  enum class EndReason { Tolerance, TimeLimit } end_reason = EndReason::TimeLimit;
  std::uint64_t seed = 0;

  int usable_solves() const {
    int count = 0;
    for (const auto& it : iterations) count += it.usable ? 1 : 0;
    return count;
  }
};

inline const char* to_string(EpisodeLog::EndReason r) {
  return r == EpisodeLog::EndReason::Tolerance ? "tolerance" : "time_limit";
}

namespace detail {

inline double subset_error(const Eigen::VectorXd& x, const Eigen::VectorXd& xf,
                           const std::vector<int>& indices) {
  if (indices.empty()) return (x - xf).norm();
  double acc = 0.0;
  for (int i : indices) acc += (x[i] - xf[i]) * (x[i] - xf[i]);
  return std::sqrt(acc);
}

inline Eigen::VectorXd clamp_control(Eigen::VectorXd u, const OcProblem& problem) {
  if (problem.u_lb.size()) u = u.cwiseMax(problem.u_lb);
  if (problem.u_ub.size()) u = u.cwiseMin(problem.u_ub);
  return u;
}

/// Zero-order-hold control for the step [t, t + dt): the Lagrange control
/// interpolant sampled at the step midpoint, clamped into the bounds.
inline Eigen::VectorXd extract_control(const TranscribedNlp& nlp, const Eigen::VectorXd& vars,
                                       double t, double dt) {
  const auto& problem = nlp.problem();
  const double query = std::clamp(t + 0.5 * dt, problem.t0, problem.tf);
  const auto s = interpolate_solution(nlp, vars, {query});
  return clamp_control(s.controls.row(0).transpose(), problem);
}

inline double running_cost(const OcProblem& problem, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& u) {
  const Eigen::VectorXd xe = x - problem.running_reference();
  return xe.dot(problem.q * xe) + u.dot(problem.r * u);
}

struct Plan {
  std::shared_ptr<TranscribedNlp> nlp;
  Eigen::VectorXd vars;
};

}  // namespace detail

/// Re-samples the previous solution onto the new horizon's transcription.
inline Eigen::VectorXd warm_start(const TranscribedNlp& previous,
                                  const Eigen::VectorXd& previous_vars,
                                  const TranscribedNlp& next) {
  return reinterpolate_guess(previous, previous_vars, next);
}

/// Runs one control episode. The planner sees `problem` (whose dynamics
/// follow `model`); the world follows `true_dynamics`. In MpcOnline mode the
/// model's residual must be an SsgpResidual; each applied step feeds one
/// online update and the weights refresh once per iteration.
///
/// Hook: `on_iteration(problem)` runs before each transcription, letting the
/// obstacle layer refresh uncertainty-inflated constraints.
inline EpisodeLog run_episode(
    const OcProblem& base_problem, const SemiParametricModel& true_dynamics,
    const SemiParametricModel& model, const MpcConfig& cfg, std::uint64_t seed = 0,
    const std::function<double(OcProblem&, const Eigen::VectorXd&)>& on_iteration = {}) {
  cfg.validate();
  OcProblem problem = base_problem;
  problem.dynamics = model;
  problem.validate();
  if (true_dynamics.state_dim() != problem.state_dim() ||
      true_dynamics.control_dim() != problem.control_dim())
    throw std::invalid_argument("run_episode: true dynamics dimension mismatch");

  std::shared_ptr<SsgpState> ssgp;
  if (cfg.mode == MpcMode::MpcOnline) {
    const auto* residual = dynamic_cast<const SsgpResidual*>(model.residual.get());
    if (!residual)
      throw std::invalid_argument("run_episode: mpc_online requires an SSGP residual");
    ssgp = residual->state();
  }

  EpisodeLog log;
  log.seed = seed;
  const int total_steps = static_cast<int>(std::round(cfg.t_max / cfg.dt));
  log.times.reserve(total_steps + 1);
  log.states.reserve(total_steps + 1);
  log.times.push_back(0.0);
  log.states.push_back(problem.x0);


  const auto truth = [&true_dynamics](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return compose(true_dynamics, x, u);
  };

  // --- Episodic: one solve, full open-loop replay -------------------------
  if (cfg.mode == MpcMode::Episodic) {
    OcProblem phase = problem;
    phase.t0 = 0.0;
    phase.tf = cfg.arrival_time();
    if (on_iteration) on_iteration(phase, problem.x0);
    auto res = solve_ocp_refined(phase, cfg.episodic_ladder(), cfg.nlp, nullptr,
                                 cfg.accept_tol);

    IterationRecord rec;
    rec.t_start = 0.0;
    rec.t_horizon_end = cfg.t_max;
    rec.status = res.solution.status;
    rec.usable = res.feasible;
    rec.objective = res.solution.objective;
    rec.max_equality_violation = res.solution.max_equality_violation;
    rec.inner_iterations = res.solution.inner_iterations;
    const auto& layout = res.nlp.layout();
    rec.planned_states.resize(layout.order + 2, layout.n);
    for (int k = 0; k <= layout.order; ++k)
      rec.planned_states.row(k) = res.nlp.state_at(res.solution.vars, k).transpose();
    rec.planned_states.row(layout.order + 1) =
        res.nlp.final_state(res.solution.vars).transpose();
    rec.planned_controls.resize(layout.order, layout.m);
    for (int k = 1; k <= layout.order; ++k)
      rec.planned_controls.row(k - 1) = res.nlp.control_at(res.solution.vars, k).transpose();
    log.iterations.push_back(std::move(rec));

    Eigen::VectorXd x = problem.x0;
    for (int i = 0; i < total_steps; ++i) {
      const double t = i * cfg.dt;
      const Eigen::VectorXd u = detail::extract_control(res.nlp, res.solution.vars, t, cfg.dt);
      log.total_cost += cfg.dt * detail::running_cost(problem, x, u);
      x = rk4_rollout(truth, x, {u}, cfg.dt, 1).back();
      log.controls.push_back(u);
      log.phase.push_back(0);
      log.times.push_back((i + 1) * cfg.dt);
      log.states.push_back(x);
    }
    log.final_error = detail::subset_error(x, problem.xf, cfg.error_indices);
    log.end_reason = log.final_error <= cfg.tolerance ? EpisodeLog::EndReason::Tolerance
                                                      : EpisodeLog::EndReason::TimeLimit;
    return log;
  }

  // --- Receding (shrinking) horizon --------------------------------------
  Eigen::VectorXd x = problem.x0;
  double t = 0.0;
  int steps_done = 0;
  std::optional<detail::Plan> plan;      // last usable plan, drives the rollout
  std::optional<detail::Plan> warm_src;  // last solve of any quality, seeds the next
  log.end_reason = EpisodeLog::EndReason::TimeLimit;

  while (true) {
    const double err = detail::subset_error(x, problem.xf, cfg.error_indices);
    if (err <= cfg.tolerance) {
      log.end_reason = EpisodeLog::EndReason::Tolerance;
      break;
    }
    if (steps_done >= total_steps) break;

    OcProblem phase = problem;
    phase.x0 = x;
    phase.t0 = t;
    phase.tf = std::max(cfg.arrival_time(), t + cfg.horizon_floor());

    IterationRecord rec;
    rec.t_start = t;
    rec.t_horizon_end = phase.tf;
    if (on_iteration) rec.uncertainty_radius = on_iteration(phase, x);

    auto nlp = std::make_shared<TranscribedNlp>(phase, CollocationGrid::get(cfg.collocation_order));
    Eigen::VectorXd guess = (cfg.warm_start && warm_src)
                                ? warm_start(*warm_src->nlp, warm_src->vars, *nlp)
                                : cold_start_guess(*nlp);
    const bool needs_recovery =
        (!plan || (!log.iterations.empty() && !log.iterations.back().usable)) &&
        cfg.first_solve_nlp.max_outer > 0;
    const NlpSolution sol = solve(*nlp, guess, needs_recovery ? cfg.first_solve_nlp : cfg.nlp);
    warm_src = detail::Plan{nlp, sol.vars};

    rec.status = sol.status;
    rec.usable = dynamics_feasible(sol, cfg.accept_tol, cfg.accept_ineq_tol);
    rec.objective = sol.objective;
    rec.max_equality_violation = sol.max_equality_violation;
    rec.inner_iterations = sol.inner_iterations;
    const auto& layout = nlp->layout();
    rec.planned_states.resize(layout.order + 2, layout.n);
    for (int k = 0; k <= layout.order; ++k)
      rec.planned_states.row(k) = nlp->state_at(sol.vars, k).transpose();
    rec.planned_states.row(layout.order + 1) = nlp->final_state(sol.vars).transpose();
    rec.planned_controls.resize(layout.order, layout.m);
    for (int k = 1; k <= layout.order; ++k)
      rec.planned_controls.row(k - 1) = nlp->control_at(sol.vars, k).transpose();

    if (rec.usable) {
      plan = detail::Plan{nlp, sol.vars};
    }
    // On an unusable solve the previous plan's control tail carries the
    // rollout; the episode never aborts mid-flight.
    log.iterations.push_back(std::move(rec));
    const int iteration_index = static_cast<int>(log.iterations.size()) - 1;

    const int apply = std::min(cfg.rollout_steps, total_steps - steps_done);
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> samples;
    samples.reserve(apply);
    for (int i = 0; i < apply; ++i) {
      Eigen::VectorXd u;
      if (plan) {
        u = detail::extract_control(*plan->nlp, plan->vars, t, cfg.dt);
      } else {
        u = problem.u_guess.size() ? problem.u_guess
                                   : Eigen::VectorXd::Zero(problem.control_dim());
        u = detail::clamp_control(u, problem);
      }
      samples.emplace_back(x, u);
      log.total_cost += cfg.dt * detail::running_cost(problem, x, u);
      x = rk4_rollout(truth, x, {u}, cfg.dt, 1).back();
      t += cfg.dt;
      ++steps_done;
      log.controls.push_back(u);
      log.phase.push_back(iteration_index);
      log.times.push_back(t);
      log.states.push_back(x);
    }

    if (cfg.mode == MpcMode::MpcOnline) {
      for (const auto& [xs, us] : samples) {
        const Eigen::VectorXd resid = compose(true_dynamics, xs, us) -
                                      model.parametric.value(xs, us);
        Eigen::VectorXd target(model.residual_output_indices.size());
        for (std::size_t j = 0; j < model.residual_output_indices.size(); ++j)
          target[j] = resid[model.residual_output_indices[j]];
        ssgp->online_update(model.gather_input(xs, us), target);
        ++log.model_updates;
      }
      ssgp->refresh_weights();
    }
  }

  log.final_error = detail::subset_error(x, problem.xf, cfg.error_indices);
  return log;
}

}  // namespace mppc

#endif  // MPPC_MPCLOOP_HPP
