#include "mppc/mpcloop.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace mppc;

namespace {

SemiParametricModel double_integrator() {
  SemiParametricModel m;
  m.parametric.state_dim = 2;
  m.parametric.control_dim = 1;
  m.parametric.value = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx << x[1], u[0];
    return dx;
  };
  m.parametric.jacobian = [](const Eigen::VectorXd&, const Eigen::VectorXd&,
                             Eigen::MatrixXd& a, Eigen::MatrixXd& b) {
    a = Eigen::MatrixXd::Zero(2, 2);
    a(0, 1) = 1.0;
    b = Eigen::MatrixXd::Zero(2, 1);
    b(1, 0) = 1.0;
  };
  return m;
}

OcProblem double_integrator_problem() {
  OcProblem p;
  p.dynamics = double_integrator();
  p.x0 = Eigen::VectorXd::Zero(2);
  p.xf = Eigen::VectorXd::Zero(2);
  p.xf[0] = 1.0;
  p.q = Eigen::MatrixXd::Zero(2, 2);
  p.r = Eigen::MatrixXd::Identity(1, 1) * 0.1;
  p.u_lb = Eigen::VectorXd::Constant(1, -10.0);
  p.u_ub = Eigen::VectorXd::Constant(1, 10.0);
  p.t0 = 0.0;
  p.tf = 2.0;
  return p;
}

/// Double integrator with an SSGP residual bolted onto the acceleration row.
SemiParametricModel with_ssgp_residual(const SemiParametricModel& base, double forgetting,
                                       std::uint64_t seed) {
  KernelHyperparams hp;
  hp.signal_std = 0.3;
  hp.noise_std = 0.05;
  hp.lengthscales = Eigen::VectorXd::Constant(3, 2.0);
  TrainingSet empty;
  empty.inputs.resize(0, 3);
  empty.targets.resize(0, 1);
  auto state = std::make_shared<SsgpState>(
      SsgpState::batch_fit(empty, sample_basis(hp, 20, seed), forgetting));
  SemiParametricModel m = base;
  m.residual = std::make_shared<SsgpResidual>(state);
  m.residual_input_indices = full_input_layout(2, 1);
  m.residual_output_indices = {1};
  return m;
}

}  // namespace

TEST(RunEpisode, EpisodicExactModelReachesTarget) {
  const auto problem = double_integrator_problem();
  MpcConfig cfg;
  cfg.mode = MpcMode::Episodic;
  cfg.t_max = 2.0;
  cfg.episodic_stages = {{10, 1e-7}, {20, 1e-8}};
  const auto log = run_episode(problem, problem.dynamics, problem.dynamics, cfg, 1);
  EXPECT_EQ(log.end_reason, EpisodeLog::EndReason::Tolerance);
  EXPECT_LE(log.final_error, 0.05);
  EXPECT_EQ(log.iterations.size(), 1u);
  EXPECT_TRUE(log.iterations[0].usable);
  EXPECT_EQ(log.states.size(), 201u);
}

TEST(RunEpisode, MpcMatchesEpisodicToleranceOnExactModel) {
  const auto problem = double_integrator_problem();
  MpcConfig cfg;
  cfg.mode = MpcMode::Mpc;
  cfg.t_max = 2.0;
  cfg.plan_t_final = 1.4;
  cfg.collocation_order = 8;
  const auto log = run_episode(problem, problem.dynamics, problem.dynamics, cfg, 1);
  EXPECT_EQ(log.end_reason, EpisodeLog::EndReason::Tolerance);
  EXPECT_LE(log.final_error, 0.05);
  EXPECT_GT(log.iterations.size(), 1u);
}

TEST(RunEpisode, OnlineUpdateCountMatchesAppliedSteps) {
  auto problem = double_integrator_problem();
  const auto model = with_ssgp_residual(problem.dynamics, 0.99, 7);
  MpcConfig cfg;
  cfg.mode = MpcMode::MpcOnline;
  cfg.rollout_steps = 5;
  cfg.dt = 0.01;
  cfg.t_max = 1.0;          // exactly 20 iterations of 5 steps
  cfg.tolerance = 1e-12;    // unreachable, forces the full horizon
  cfg.collocation_order = 6;
  const auto log = run_episode(problem, problem.dynamics, model, cfg, 3);
  EXPECT_EQ(log.iterations.size(), 20u);
  EXPECT_EQ(log.model_updates, 100);
  EXPECT_EQ(log.end_reason, EpisodeLog::EndReason::TimeLimit);
}

TEST(RunEpisode, MpcOnlineRequiresSsgpResidual) {
  const auto problem = double_integrator_problem();
  MpcConfig cfg;
  cfg.mode = MpcMode::MpcOnline;
  EXPECT_THROW(run_episode(problem, problem.dynamics, problem.dynamics, cfg, 1),
               std::invalid_argument);
}

TEST(RunEpisode, OnlineUpdatesMatchDenseRecurrence) {
  auto problem = double_integrator_problem();
  // True dynamics carry extra damping the nominal model lacks.
  SemiParametricModel truth = problem.dynamics;
  truth.parametric.value = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx << x[1], u[0] - 0.4 * x[1];
    return dx;
  };
  const auto model = with_ssgp_residual(problem.dynamics, 0.95, 11);
  const auto* residual = dynamic_cast<const SsgpResidual*>(model.residual.get());
  const SpectralBasis basis = residual->state()->basis();

  MpcConfig cfg;
  cfg.mode = MpcMode::MpcOnline;
  cfg.rollout_steps = 4;
  cfg.t_max = 0.6;
  cfg.tolerance = 1e-12;
  cfg.collocation_order = 6;
  const auto log = run_episode(problem, truth, model, cfg, 5);
  ASSERT_EQ(log.model_updates, 60);

  // Replay the logged samples through the dense recurrence.
  Eigen::MatrixXd a = basis.noise_std * basis.noise_std *
                      Eigen::MatrixXd::Identity(basis.map_dim(), basis.map_dim());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(basis.map_dim(), 1);
  for (std::size_t i = 0; i < log.controls.size(); ++i) {
    Eigen::VectorXd z(3);
    z << log.states[i], log.controls[i];
    const double resid = (compose(truth, log.states[i], log.controls[i]) -
                          problem.dynamics.parametric.value(log.states[i], log.controls[i]))[1];
    const Eigen::VectorXd phi = feature_map(basis, z);
    a = 0.95 * a + 0.05 * (phi * phi.transpose());
    b = 0.95 * b + 0.05 * (phi * resid);
  }
  const Eigen::MatrixXd w_dense = a.ldlt().solve(b);
  const Eigen::MatrixXd w = residual->state()->weights();
  const double scale = std::max(1e-12, w_dense.cwiseAbs().maxCoeff());
  EXPECT_LE((w - w_dense).cwiseAbs().maxCoeff() / scale, 1e-8);
}

TEST(RunEpisode, TrueTrajectoryIsRolloutOfAppliedControls) {
  auto problem = double_integrator_problem();
  SemiParametricModel truth = problem.dynamics;
  truth.parametric.value = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd dx(2);
    dx << x[1], 0.9 * u[0] - 0.2 * x[1];  // model mismatch
    return dx;
  };
  MpcConfig cfg;
  cfg.mode = MpcMode::Mpc;
  cfg.t_max = 1.0;
  cfg.collocation_order = 6;
  cfg.tolerance = 1e-12;
  const auto log = run_episode(problem, truth, problem.dynamics, cfg, 1);

  Eigen::VectorXd x = problem.x0;
  for (std::size_t i = 0; i < log.controls.size(); ++i) {
    x = rk4_rollout([&](const Eigen::VectorXd& s,
                        const Eigen::VectorXd& u) { return compose(truth, s, u); },
                    x, {log.controls[i]}, cfg.dt, 1)
            .back();
    EXPECT_EQ(x, log.states[i + 1]);  // planner states must never leak in
  }
}

TEST(RunEpisode, DeterministicPerSeedAndConfig) {
  const auto problem = double_integrator_problem();
  MpcConfig cfg;
  cfg.mode = MpcMode::Mpc;
  cfg.t_max = 0.8;
  cfg.collocation_order = 6;
  const auto a = run_episode(problem, problem.dynamics, problem.dynamics, cfg, 9);
  const auto b = run_episode(problem, problem.dynamics, problem.dynamics, cfg, 9);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) EXPECT_EQ(a.states[i], b.states[i]);
  for (std::size_t i = 0; i < a.controls.size(); ++i) EXPECT_EQ(a.controls[i], b.controls[i]);
  EXPECT_EQ(a.total_cost, b.total_cost);
}

TEST(RunEpisode, EveryEpisodeEndsWithReason) {
  auto problem = double_integrator_problem();
  MpcConfig cfg;
  cfg.mode = MpcMode::Mpc;
  cfg.t_max = 0.2;  // too short to reach the target
  cfg.collocation_order = 6;
  const auto log = run_episode(problem, problem.dynamics, problem.dynamics, cfg, 1);
  EXPECT_EQ(log.end_reason, EpisodeLog::EndReason::TimeLimit);
  EXPECT_GT(log.final_error, 0.05);
  EXPECT_EQ(log.times.size(), log.states.size());
  EXPECT_EQ(log.controls.size(), log.phase.size());
  EXPECT_EQ(log.times.size(), log.controls.size() + 1);
}

TEST(WarmStart, SameHorizonRoundTripsNodeValues) {
  const auto problem = double_integrator_problem();
  const auto nlp = transcribe(problem, CollocationGrid::get(8));
  Rng rng(13);
  Eigen::VectorXd v(nlp.layout().size());
  for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1, 1);
  const Eigen::VectorXd guess = warm_start(nlp, v, nlp);
  // X_f is quadrature-closed rather than part of the state interpolant, so
  // cardinality holds for everything except the final-state block.
  const int nf = nlp.layout().final_state_offset();
  EXPECT_LE((guess.head(nf) - v.head(nf)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LE((guess.tail(8) - v.tail(8)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(WarmStart, ColdStartUsesControlGuess) {
  auto problem = double_integrator_problem();
  problem.u_guess = Eigen::VectorXd::Constant(1, 2.45);  // e.g. hover thrust
  const auto nlp = transcribe(problem, CollocationGrid::get(5));
  const Eigen::VectorXd guess = cold_start_guess(nlp);
  for (int k = 1; k <= 5; ++k)
    EXPECT_DOUBLE_EQ(guess[nlp.layout().control_offset(k)], 2.45);
  // states interpolate x0 -> xf linearly
  EXPECT_DOUBLE_EQ(guess[nlp.layout().state_offset(0)], 0.0);
  EXPECT_DOUBLE_EQ(guess[nlp.layout().final_state_offset()], 1.0);
}

TEST(WarmStart, WarmStartedIterationIsCheaper) {
  // A/B: median inner iterations across horizons with and without warm
  // starts on the cart pole benchmark.
  OcProblem problem;
  problem.dynamics.parametric = cartpole_field(cartpole_table1_nominal());
  problem.x0 = Eigen::VectorXd::Zero(4);
  problem.xf = Eigen::VectorXd::Zero(4);
  problem.xf[2] = 3.14159265358979323846;
  problem.q = Eigen::MatrixXd::Zero(4, 4);
  problem.r = Eigen::MatrixXd::Identity(1, 1) * 0.1;
  problem.u_lb = Eigen::VectorXd::Constant(1, -15.0);
  problem.u_ub = Eigen::VectorXd::Constant(1, 15.0);
  problem.t0 = 0.0;
  problem.tf = 2.0;

  MpcConfig cfg;
  cfg.mode = MpcMode::Mpc;
  cfg.rollout_steps = 10;
  cfg.t_max = 1.2;
  cfg.plan_t_final = 1.0;
  cfg.collocation_order = 8;
  cfg.tolerance = 0.3;
  cfg.error_indices = {0, 2};
  cfg.nlp.max_outer = 12;
  cfg.nlp.max_inner = 250;

  MpcConfig cold = cfg;
  cold.warm_start = false;
  const auto warm_log = run_episode(problem, problem.dynamics, problem.dynamics, cfg, 1);
  const auto cold_log = run_episode(problem, problem.dynamics, problem.dynamics, cold, 1);

  auto median_inner = [](const EpisodeLog& log) {
    std::vector<int> v;
    for (const auto& it : log.iterations) v.push_back(it.inner_iterations);
    std::sort(v.begin(), v.end());
    return v.empty() ? 0 : v[v.size() / 2];
  };
  EXPECT_LE(median_inner(warm_log), median_inner(cold_log));
}
