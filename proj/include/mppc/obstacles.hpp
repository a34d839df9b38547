#ifndef MPPC_OBSTACLES_HPP
#define MPPC_OBSTACLES_HPP

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>
#include <vector>

#include "mppc/mpcloop.hpp"

namespace mppc {

struct Obstacle {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 1.0;  // O_r

  void validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("Obstacle: radius must be > 0");
  }
};

/// Signed clearance ||p - c|| - (O_r + B_r + U_r); feasible iff >= 0.
inline double obstacle_constraint(const Eigen::Vector2d& position, const Obstacle& obstacle,
                                  double body_radius, double uncertainty_radius) {
  return (position - obstacle.center).norm() -
         (obstacle.radius + body_radius + uncertainty_radius);
}

struct UncertaintyInputs {
  Eigen::Matrix2d position_cov = Eigen::Matrix2d::Zero();   // Sigma_x0
  Eigen::Matrix2d velocity_cov = Eigen::Matrix2d::Zero();   // Sigma_xd0
  Eigen::Matrix2d cross_cov = Eigen::Matrix2d::Zero();      // Sigma_x0,xd0
  double dt = 0.01;
  double kappa = 2.0;
};

/// One-step covariance pass: Sigma_x1 = Sigma_x0 + Sigma_xd0 dt^2 + 2 Sigma_cross,
/// symmetrized; negative eigenvalues clamp to zero (flagged via `clamped`).
inline Eigen::Matrix2d propagate_covariance(const UncertaintyInputs& in,
                                            bool* clamped = nullptr) {
  Eigen::Matrix2d sigma =
      in.position_cov + in.velocity_cov * (in.dt * in.dt) + 2.0 * in.cross_cov;
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(sigma);
  if (clamped) *clamped = false;
  if (es.eigenvalues().minCoeff() < 0.0) {
    const Eigen::Vector2d fixed = es.eigenvalues().cwiseMax(0.0);
    sigma = es.eigenvectors() * fixed.asDiagonal() * es.eigenvectors().transpose();
    if (clamped) *clamped = true;
  }
  return sigma;
}

/// kappa-sigma extent of the position ellipse along a unit direction.
inline double uncertainty_radius(const Eigen::Matrix2d& sigma,
                                 const Eigen::Vector2d& direction, double kappa) {
  if (std::abs(direction.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("uncertainty_radius: direction must be unit length");
  const double quad = direction.dot(sigma * direction);
  if (quad < -1e-12)
    throw std::invalid_argument("uncertainty_radius: covariance not PSD");
  return kappa * std::sqrt(std::max(0.0, quad));
}

/// Path-constraint adapter: clearance of the state's (x, y) entries.
inline PathConstraint make_obstacle_constraint(const Obstacle& obstacle, double body_radius,
                                               double u_r, int x_index = 0, int y_index = 1) {
  obstacle.validate();
  PathConstraint c;
  c.name = "obstacle";
  c.value = [=](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    return obstacle_constraint({x[x_index], x[y_index]}, obstacle, body_radius, u_r);
  };
  c.gradient = [=](const Eigen::VectorXd& x, const Eigen::VectorXd& u, Eigen::VectorXd& dx,
                   Eigen::VectorXd& du) {
    dx = Eigen::VectorXd::Zero(x.size());
    du = Eigen::VectorXd::Zero(u.size());
    Eigen::Vector2d delta(x[x_index] - obstacle.center.x(), x[y_index] - obstacle.center.y());
    const double dist = std::max(delta.norm(), 1e-9);  // kink guard at the center
    dx[x_index] = delta.x() / dist;
    dx[y_index] = delta.y() / dist;
  };
  return c;
}

// ---------------------------------------------------------------------------
// Dubins obstacle-avoidance sweep
// ---------------------------------------------------------------------------

struct DubinsSweepConfig {
  int trials = 50;
  std::uint64_t seed = 0;
  int workers = 1;

  Eigen::Vector2d start{5.0, 5.0};
  Eigen::Vector2d goal{2.0, -2.0};
  Obstacle obstacle{{3.5, 1.5}, 2.0};
  double body_radius = 0.1;
  double kappa = 2.0;
  bool use_uncertainty_radius = true;

  double b_mean = 0.3;   // nominal-parameter prior
  double b_std = 0.3;
  double b_limit = 0.9;  // resample while |b| >= limit
  double true_b = 0.3;

  int training_count = 120;
  int num_features = 50;
  double forgetting = 0.99;
  int hyper_restarts = 1;
  int hyper_iterations = 60;

  double u1_max = 3.0;
  double u2_max = 2.0;
  double control_weight = 0.05;
  // Soft terminal: grossly wrong speed beliefs make a hard position
  // equality infeasible at any horizon, which starves the learner of
  // rollout data. A strong terminal weight keeps every subproblem solvable.
  double terminal_weight = 50.0;

  MpcConfig mpc = default_mpc();

  static MpcConfig default_mpc() {
    MpcConfig cfg;
    cfg.mode = MpcMode::MpcOnline;
    cfg.rollout_steps = 5;
    cfg.dt = 0.01;
    cfg.tolerance = 0.05;
    cfg.t_max = 10.0;
    cfg.plan_t_final = 6.5;
    cfg.collocation_order = 12;
    cfg.error_indices = {0, 1};
    cfg.nlp.initial_penalty = 1e3;
    cfg.nlp.max_outer = 4;
    cfg.nlp.max_inner = 150;
    cfg.nlp.stationarity_tol = 1e-3;
    cfg.first_solve_nlp = cfg.nlp;
    cfg.first_solve_nlp.max_outer = 12;
    cfg.first_solve_nlp.max_inner = 500;
    return cfg;
  }
};

struct DubinsTrialResult {
  int trial = 0;
  double b1_nominal = 0.0;
  double b2_nominal = 0.0;
  double min_node_clearance = 0.0;   // constraint value over accepted plans' nodes
  double min_dense_clearance = 0.0;  // constraint value along the true rollout
  double final_error = 0.0;
  bool reached = false;
  int iterations = 0;
  int usable_solves = 0;
  long model_updates = 0;
};

struct DubinsSweepReport {
  std::vector<DubinsTrialResult> trials;
  int node_violations_beyond_tol = 0;   // nodes below -1e-6 across all trials
  double dense_clearance_fraction = 0.0;  // trials with dense clearance >= -1e-2
};

namespace detail {

inline double sample_bounded_gaussian(Rng& rng, double mean, double std, double limit) {
  double value = mean + std * rng.gaussian();
  while (std::abs(value) >= limit) value = mean + std * rng.gaussian();
  return value;
}

/// Shared-basis hyperparameters from per-dimension training. The frequency
/// matrix is shared by every output, so each input's lengthscale must
/// resolve the finest structure any output needs: take the per-input
/// minimum, clamped to the spread of the training inputs (outputs that
/// ignore an input train its lengthscale towards infinity, which would
/// collapse the corresponding random frequencies to zero). Signal and noise
/// scales pool as root mean squares, with a noise floor for conditioning.
inline KernelHyperparams pool_hyperparams(const std::vector<KernelHyperparams>& per_dim,
                                          const Eigen::MatrixXd& inputs) {
  KernelHyperparams pooled = per_dim.front();
  const int d = static_cast<int>(pooled.lengthscales.size());
  for (int i = 0; i < d; ++i) {
    double ls = per_dim.front().lengthscales[i];
    for (const auto& hp : per_dim) ls = std::min(ls, hp.lengthscales[i]);
    const double spread =
        std::max(1e-3, inputs.col(i).maxCoeff() - inputs.col(i).minCoeff());
    pooled.lengthscales[i] = std::clamp(ls, 0.05 * spread, 2.0 * spread);
  }
  double sig2 = 0.0, noise2 = 0.0;
  for (const auto& hp : per_dim) {
    sig2 += hp.signal_std * hp.signal_std;
    noise2 += hp.noise_std * hp.noise_std;
  }
  pooled.signal_std = std::sqrt(sig2 / per_dim.size());
  pooled.noise_std =
      std::max(std::sqrt(noise2 / per_dim.size()), 1e-3 * pooled.signal_std);
  return pooled;
}

/// SSGP state seeded by running the training set through the online
/// recurrence, which keeps the information matrix on the recurrence scale.
inline std::shared_ptr<SsgpState> ssgp_from_training(const TrainingSet& data,
                                                     const KernelHyperparams& hp,
                                                     int num_features, double forgetting,
                                                     std::uint64_t seed) {
  TrainingSet empty;
  empty.inputs.resize(0, data.inputs.cols());
  empty.targets.resize(0, data.targets.cols());
  auto state = std::make_shared<SsgpState>(
      SsgpState::batch_fit(empty, sample_basis(hp, num_features, seed), forgetting));
  for (int i = 0; i < data.inputs.rows(); ++i)
    state->online_update(data.inputs.row(i).transpose(), data.targets.row(i).transpose());
  state->refresh_weights();
  return state;
}

}  // namespace detail

inline DubinsTrialResult run_dubins_trial(const DubinsSweepConfig& cfg, int trial) {
  DubinsTrialResult result;
  result.trial = trial;
  Rng rng(Rng::derive_stream(cfg.seed, static_cast<std::uint64_t>(trial)));

  DubinsParams true_params{cfg.true_b, cfg.true_b, DubinsThirdRow::UseB2};
  DubinsParams nominal_params{
      detail::sample_bounded_gaussian(rng, cfg.b_mean, cfg.b_std, cfg.b_limit),
      detail::sample_bounded_gaussian(rng, cfg.b_mean, cfg.b_std, cfg.b_limit),
      DubinsThirdRow::UseB2};
  result.b1_nominal = nominal_params.b1;
  result.b2_nominal = nominal_params.b2;

  SemiParametricModel truth;
  truth.parametric = dubins_field(true_params);

  // Initial data and hyperparameters for the online learner.
  TrainingDataConfig data_cfg;
  data_cfg.control_noise_std = 0.1;
  const std::uint64_t data_seed = rng.next_u64();
  const auto data = dubins_training_data(true_params, nominal_params, cfg.start, cfg.goal,
                                         data_cfg, cfg.training_count, data_seed);
  KernelHyperparams init;
  init.signal_std = std::max(1e-3, std::sqrt(data.targets.array().square().mean()));
  init.noise_std = 0.1 * init.signal_std;
  init.lengthscales = Eigen::VectorXd::Constant(data.inputs.cols(), 2.0);
  const auto trained = train_hyperparams(data, init, cfg.hyper_restarts, rng.next_u64(),
                                         cfg.hyper_iterations);
  const auto pooled = detail::pool_hyperparams(trained.hyperparams, data.inputs);
  auto ssgp = detail::ssgp_from_training(data, pooled, cfg.num_features, cfg.forgetting,
                                         rng.next_u64());

  SemiParametricModel model;
  model.parametric = dubins_field(nominal_params);
  model.residual = std::make_shared<SsgpResidual>(ssgp);
  model.residual_input_indices = full_input_layout(3, 2);
  model.residual_output_indices = dubins_residual_rows();

  OcProblem problem;
  problem.dynamics = model;
  problem.x0.resize(3);
  const Eigen::Vector2d chord = cfg.goal - cfg.start;
  problem.x0 << cfg.start.x(), cfg.start.y(), std::atan2(chord.y(), chord.x());
  problem.xf = Eigen::VectorXd::Zero(3);
  problem.xf.head(2) = cfg.goal;
  problem.terminal = TerminalMode::QuadraticCost;
  problem.qf = Eigen::MatrixXd::Zero(3, 3);
  problem.qf(0, 0) = problem.qf(1, 1) = cfg.terminal_weight;  // heading free
  problem.q = Eigen::MatrixXd::Zero(3, 3);
  problem.r = cfg.control_weight * Eigen::MatrixXd::Identity(2, 2);
  problem.u_lb.resize(2);
  problem.u_lb << 0.0, -cfg.u2_max;
  problem.u_ub.resize(2);
  problem.u_ub << cfg.u1_max, cfg.u2_max;
  problem.u_guess = Eigen::VectorXd::Zero(2);
  problem.u_guess[0] = 0.5 * cfg.u1_max;

  // Per-iteration hook: inflate the keep-out radius by the kappa-sigma
  // extent of the one-step position covariance implied by the model's
  // predictive variance at the current state (probe control: the guess).
  auto hook = [&](OcProblem& phase, const Eigen::VectorXd& x) {
    double u_r = 0.0;
    if (cfg.use_uncertainty_radius && phase.dynamics.residual) {
      const double var =
          phase.dynamics.residual->variance(phase.dynamics.gather_input(x, problem.u_guess));
      UncertaintyInputs unc;
      unc.velocity_cov = var * Eigen::Matrix2d::Identity();
      // One step at the replanning timescale: the plan is trusted open-loop
      // for rollout_steps integrator steps.
      unc.dt = cfg.mpc.rollout_steps * cfg.mpc.dt;
      unc.kappa = cfg.kappa;
      const Eigen::Matrix2d sigma = propagate_covariance(unc);
      Eigen::Vector2d direction = cfg.obstacle.center - x.head(2);
      const double dist = direction.norm();
      direction = dist > 1e-9 ? Eigen::Vector2d(direction / dist) : Eigen::Vector2d(1.0, 0.0);
      u_r = uncertainty_radius(sigma, direction, cfg.kappa);
    }
    phase.path_constraints = {make_obstacle_constraint(cfg.obstacle, cfg.body_radius, u_r)};
    return u_r;
  };

  const auto log = run_episode(problem, truth, model, cfg.mpc, cfg.seed, hook);

  result.final_error = log.final_error;
  result.reached = log.end_reason == EpisodeLog::EndReason::Tolerance;
  result.iterations = static_cast<int>(log.iterations.size());
  result.usable_solves = log.usable_solves();
  result.model_updates = log.model_updates;

  double min_node = std::numeric_limits<double>::infinity();
  for (const auto& it : log.iterations) {
    if (!it.usable) continue;
    for (int k = 1; k < it.planned_states.rows() - 1; ++k) {
      const Eigen::Vector2d pos = it.planned_states.row(k).head(2).transpose();
      min_node = std::min(min_node, obstacle_constraint(pos, cfg.obstacle, cfg.body_radius,
                                                        it.uncertainty_radius));
    }
  }
  result.min_node_clearance = min_node;

  double min_dense = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log.states.size(); ++i) {
    const int phase_id = i == 0 ? 0 : log.phase[i - 1];
    const double u_r =
        log.iterations.empty() ? 0.0 : log.iterations[phase_id].uncertainty_radius;
    const Eigen::Vector2d pos = log.states[i].head(2);
    min_dense =
        std::min(min_dense, obstacle_constraint(pos, cfg.obstacle, cfg.body_radius, u_r));
  }
  result.min_dense_clearance = min_dense;
  return result;
}

/// Seed-deterministic Monte-Carlo sweep; trials run on an isolated RNG
/// stream each, so the worker count cannot change the results.
inline DubinsSweepReport run_dubins_sweep(const DubinsSweepConfig& cfg) {
  if (cfg.trials < 1) throw std::invalid_argument("run_dubins_sweep: trials >= 1");
  DubinsSweepReport report;
  report.trials.resize(cfg.trials);

  const int workers = std::max(1, cfg.workers);
  std::atomic<int> next{0};
  std::vector<std::string> errors(cfg.trials);
  auto work = [&]() {
    while (true) {
      const int trial = next.fetch_add(1);
      if (trial >= cfg.trials) break;
      try {
        report.trials[trial] = run_dubins_trial(cfg, trial);
      } catch (const std::exception& e) {
        DubinsTrialResult failed;
        failed.trial = trial;
        failed.final_error = std::numeric_limits<double>::quiet_NaN();
        report.trials[trial] = failed;
        errors[trial] = e.what();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  int dense_ok = 0;
  for (const auto& t : report.trials) {
    if (t.min_node_clearance < -1e-6) ++report.node_violations_beyond_tol;
    if (t.min_dense_clearance >= -1e-2) ++dense_ok;
  }
  report.dense_clearance_fraction =
      static_cast<double>(dense_ok) / static_cast<double>(cfg.trials);
  return report;
}

}  // namespace mppc

#endif  // MPPC_OBSTACLES_HPP
