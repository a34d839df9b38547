#include "mppc/transcribe.hpp"

#include <gtest/gtest.h>

#include "mppc/nlpsolve.hpp"
#include "oracles.hpp"

using namespace mppc;

namespace {

OcProblem cartpole_problem(const CartPoleParams& params, double tf = 2.0) {
  OcProblem p;
  p.dynamics.parametric = cartpole_field(params);
  p.x0 = Eigen::VectorXd::Zero(4);
  p.xf = Eigen::VectorXd::Zero(4);
  p.xf[2] = 3.14159265358979323846;
  p.q = Eigen::MatrixXd::Zero(4, 4);
  p.r = Eigen::MatrixXd::Identity(1, 1) * 0.01;
  p.t0 = 0.0;
  p.tf = tf;
  return p;
}

/// Problem with trivially zero dynamics; any constant trajectory is feasible.
OcProblem zero_dynamics_problem(int n, int m) {
  OcProblem p;
  p.dynamics.parametric.state_dim = n;
  p.dynamics.parametric.control_dim = m;
  p.dynamics.parametric.value = [n](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::VectorXd::Zero(n);
  };
  p.dynamics.parametric.jacobian = [n, m](const Eigen::VectorXd&, const Eigen::VectorXd&,
                                          Eigen::MatrixXd& a, Eigen::MatrixXd& b) {
    a = Eigen::MatrixXd::Zero(n, n);
    b = Eigen::MatrixXd::Zero(n, m);
  };
  p.x0 = Eigen::VectorXd::Constant(n, 0.7);
  p.xf = Eigen::VectorXd::Constant(n, 0.7);
  p.q = Eigen::MatrixXd::Zero(n, n);
  p.r = Eigen::MatrixXd::Identity(m, m);
  p.t0 = 0.0;
  p.tf = 3.0;
  return p;
}

}  // namespace

TEST(Transcribe, ConstantSolutionOfZeroDynamicsHasZeroResiduals) {
  const auto problem = zero_dynamics_problem(3, 2);
  const auto nlp = transcribe(problem, CollocationGrid::get(8));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(nlp.layout().size());
  for (int k = 0; k <= 9; ++k)
    v.segment(nlp.layout().state_offset(k), 3).setConstant(0.7);
  Rng rng(3);
  for (int k = 1; k <= 8; ++k)
    v.segment(nlp.layout().control_offset(k), 2)
        << rng.uniform(-1, 1), rng.uniform(-1, 1);
  const Eigen::VectorXd eq = nlp.equalities(v);
  EXPECT_LE(eq.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Transcribe, ConstantRunningCostIntegratesToHorizonLength) {
  // With R = I and constant unit control, the running cost is 1 at every
  // node, so the quadrature gives exactly tf - t0.
  auto problem = zero_dynamics_problem(2, 1);
  problem.r = Eigen::MatrixXd::Identity(1, 1);
  problem.t0 = 1.0;
  problem.tf = 4.5;
  const auto nlp = transcribe(problem, CollocationGrid::get(12));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(nlp.layout().size());
  for (int k = 0; k <= 13; ++k)
    v.segment(nlp.layout().state_offset(k), 2).setConstant(0.7);
  for (int k = 1; k <= 12; ++k) v[nlp.layout().control_offset(k)] = 1.0;
  EXPECT_NEAR(nlp.objective(v), 3.5, 1e-12);
}

TEST(Transcribe, EqualityCountMatchesStructure) {
  auto problem = zero_dynamics_problem(3, 1);
  const int order = 7;
  {
    const auto nlp = transcribe(problem, CollocationGrid::get(order));
    EXPECT_EQ(nlp.num_equalities(), 3 * (order + 1) + 3 + 3);
  }
  problem.terminal = TerminalMode::QuadraticCost;
  problem.qf = Eigen::MatrixXd::Identity(3, 3);
  {
    const auto nlp = transcribe(problem, CollocationGrid::get(order));
    EXPECT_EQ(nlp.num_equalities(), 3 * (order + 1) + 3);
  }
}

TEST(Transcribe, RejectsTinyGrids) {
  const auto problem = zero_dynamics_problem(2, 1);
  EXPECT_THROW(transcribe(problem, CollocationGrid::get(1)), std::invalid_argument);
}

TEST(Transcribe, PolynomialTrajectoryHasZeroDefects) {
  // ODE xdot = u with u a known polynomial of tau: sampling the exact
  // primitive at the nodes must zero every defect and the closure.
  const int order = 10;
  const auto& grid = CollocationGrid::get(order);
  Rng rng(9);
  const auto control_poly = oracle::Poly::random(order - 1, rng);
  oracle::Poly state_poly;  // primitive in tau
  state_poly.c.assign(control_poly.c.size() + 1, 0.0);
  for (std::size_t i = 0; i < control_poly.c.size(); ++i)
    state_poly.c[i + 1] = control_poly.c[i] / double(i + 1);

  OcProblem p;
  p.dynamics.parametric.state_dim = 1;
  p.dynamics.parametric.control_dim = 1;
  // Horizon [0, 2] makes dt/dtau = 1, so xdot in t equals xdot in tau.
  p.dynamics.parametric.value = [](const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Constant(1, u[0]);
  };
  p.dynamics.parametric.jacobian = [](const Eigen::VectorXd&, const Eigen::VectorXd&,
                                      Eigen::MatrixXd& a, Eigen::MatrixXd& b) {
    a = Eigen::MatrixXd::Zero(1, 1);
    b = Eigen::MatrixXd::Ones(1, 1);
  };
  p.x0 = Eigen::VectorXd::Constant(1, state_poly.eval(-1.0));
  p.xf = Eigen::VectorXd::Constant(1, state_poly.eval(1.0));
  p.q = Eigen::MatrixXd::Zero(1, 1);
  p.r = Eigen::MatrixXd::Identity(1, 1);
  p.t0 = 0.0;
  p.tf = 2.0;

  const auto nlp = transcribe(p, grid);
  Eigen::VectorXd v(nlp.layout().size());
  v[nlp.layout().state_offset(0)] = state_poly.eval(-1.0);
  for (int k = 1; k <= order; ++k) {
    v[nlp.layout().state_offset(k)] = state_poly.eval(grid.nodes[k - 1]);
    v[nlp.layout().control_offset(k)] = control_poly.eval(grid.nodes[k - 1]);
  }
  v[nlp.layout().final_state_offset()] = state_poly.eval(1.0);
  EXPECT_LE(nlp.equalities(v).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Transcribe, LinearDynamicsHaveConstantJacobian) {
  OcProblem p;
  p.dynamics.parametric.state_dim = 2;
  p.dynamics.parametric.control_dim = 1;
  Eigen::MatrixXd a(2, 2), b(2, 1);
  a << 0, 1, -2, -0.5;
  b << 0, 1;
  p.dynamics.parametric.value = [a, b](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return Eigen::VectorXd(a * x + b * u);
  };
  p.dynamics.parametric.jacobian = [a, b](const Eigen::VectorXd&, const Eigen::VectorXd&,
                                          Eigen::MatrixXd& da, Eigen::MatrixXd& db) {
    da = a;
    db = b;
  };
  p.x0 = Eigen::VectorXd::Zero(2);
  p.xf = Eigen::VectorXd::Ones(2);
  p.q = Eigen::MatrixXd::Zero(2, 2);
  p.r = Eigen::MatrixXd::Identity(1, 1);
  const auto nlp = transcribe(p, CollocationGrid::get(6));
  Rng rng(4);
  Eigen::VectorXd v1(nlp.layout().size()), v2(nlp.layout().size());
  for (int i = 0; i < v1.size(); ++i) {
    v1[i] = rng.uniform(-2, 2);
    v2[i] = rng.uniform(-2, 2);
  }
  EXPECT_LE((nlp.equality_jacobian(v1) - nlp.equality_jacobian(v2)).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(Transcribe, JacobianMatchesFiniteDifferencesWithGpResidual) {
  const auto data = cartpole_training_data(cartpole_table1_true(), cartpole_table1_nominal(),
                                           {}, 40, 31);
  KernelHyperparams hp;
  hp.signal_std = 0.1;
  hp.noise_std = 0.005;
  hp.lengthscales = Eigen::VectorXd::Constant(5, 1.5);

  auto problem = cartpole_problem(cartpole_table1_nominal());
  problem.dynamics.residual = std::make_shared<GpResidual>(GpModel::fit(data, {hp, hp}));
  problem.dynamics.residual_input_indices = full_input_layout(4, 1);
  problem.dynamics.residual_output_indices = cartpole_residual_rows();

  const auto nlp = transcribe(problem, CollocationGrid::get(5));
  Rng rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd v(nlp.layout().size());
    for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1, 1);
    const Eigen::MatrixXd analytic = nlp.equality_jacobian(v);
    const Eigen::MatrixXd fd = oracle::central_difference(
        [&](const Eigen::VectorXd& q) { return nlp.equalities(q); }, v);
    EXPECT_LE(oracle::relative_gap(analytic, fd), 1e-5);

    const Eigen::VectorXd grad = nlp.objective_gradient(v);
    const Eigen::MatrixXd grad_fd = oracle::central_difference(
        [&](const Eigen::VectorXd& q) {
          return Eigen::VectorXd::Constant(1, nlp.objective(q));
        },
        v);
    EXPECT_LE(oracle::relative_gap(grad, grad_fd.transpose()), 1e-5);
  }
}

TEST(Transcribe, PureControlCostTouchesOnlyControlEntries) {
  const auto problem = cartpole_problem(cartpole_table1_nominal());
  const auto nlp = transcribe(problem, CollocationGrid::get(6));
  Rng rng(6);
  Eigen::VectorXd v(nlp.layout().size());
  for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1, 1);
  const Eigen::VectorXd grad = nlp.objective_gradient(v);
  for (int k = 0; k <= 7; ++k)
    EXPECT_EQ(grad.segment(nlp.layout().state_offset(k), 4).cwiseAbs().maxCoeff(), 0.0);
  double control_part = 0.0;
  for (int k = 1; k <= 6; ++k) control_part += std::abs(grad[nlp.layout().control_offset(k)]);
  EXPECT_GT(control_part, 0.0);
}

TEST(Transcribe, BoundsPlacedOnStateAndControlBlocks) {
  auto problem = cartpole_problem(cartpole_table1_nominal());
  problem.u_lb = Eigen::VectorXd::Constant(1, -15.0);
  problem.u_ub = Eigen::VectorXd::Constant(1, 15.0);
  problem.x_lb = Eigen::VectorXd::Constant(4, -10.0);
  problem.x_ub = Eigen::VectorXd::Constant(4, 10.0);
  const auto nlp = transcribe(problem, CollocationGrid::get(4));
  EXPECT_EQ(nlp.lower_bounds()[nlp.layout().control_offset(2)], -15.0);
  EXPECT_EQ(nlp.upper_bounds()[nlp.layout().state_offset(3) + 1], 10.0);
}

TEST(InterpolateSolution, NodeQueriesReturnNodeValues) {
  const auto problem = zero_dynamics_problem(2, 1);
  const auto nlp = transcribe(problem, CollocationGrid::get(5));
  Rng rng(7);
  Eigen::VectorXd v(nlp.layout().size());
  for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1, 1);
  const auto& grid = nlp.grid();
  std::vector<double> queries;
  for (int k = 0; k < 5; ++k)
    queries.push_back(time_from_tau(grid.nodes[k], problem.t0, problem.tf));
  const auto sol = interpolate_solution(nlp, v, queries);
  for (int k = 0; k < 5; ++k) {
    EXPECT_LE((sol.states.row(k).transpose() - nlp.state_at(v, k + 1)).cwiseAbs().maxCoeff(),
              1e-10);
    EXPECT_LE((sol.controls.row(k).transpose() - nlp.control_at(v, k + 1)).cwiseAbs().maxCoeff(),
              1e-10);
  }
}

TEST(InterpolateSolution, ConstantSolutionInterpolatesConstantly) {
  const auto problem = zero_dynamics_problem(2, 1);
  const auto nlp = transcribe(problem, CollocationGrid::get(6));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(nlp.layout().size());
  for (int k = 0; k <= 7; ++k) v.segment(nlp.layout().state_offset(k), 2).setConstant(1.3);
  for (int k = 1; k <= 6; ++k) v[nlp.layout().control_offset(k)] = -0.4;
  const auto sol = interpolate_solution(nlp, v, {0.0, 0.77, 1.5, 2.9, 3.0});
  EXPECT_LE((sol.states.array() - 1.3).abs().maxCoeff(), 1e-11);
  EXPECT_LE((sol.controls.array() + 0.4).abs().maxCoeff(), 1e-11);
}

TEST(InterpolateSolution, OutOfRangeQueryRejected) {
  const auto problem = zero_dynamics_problem(2, 1);
  const auto nlp = transcribe(problem, CollocationGrid::get(4));
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(nlp.layout().size());
  EXPECT_THROW(interpolate_solution(nlp, v, {3.5}), std::invalid_argument);
}

TEST(Transcribe, PackUnpackRoundTripPreservesObjective) {
  const auto problem = cartpole_problem(cartpole_table1_nominal());
  const auto nlp = transcribe(problem, CollocationGrid::get(8));
  Rng rng(8);
  Eigen::VectorXd v(nlp.layout().size());
  for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1, 1);
  // Rebuild the flat vector from the block accessors.
  Eigen::VectorXd rebuilt(nlp.layout().size());
  for (int k = 0; k <= 8; ++k)
    rebuilt.segment(nlp.layout().state_offset(k), 4) = nlp.state_at(v, k);
  rebuilt.segment(nlp.layout().final_state_offset(), 4) = nlp.final_state(v);
  for (int k = 1; k <= 8; ++k)
    rebuilt.segment(nlp.layout().control_offset(k), 1) = nlp.control_at(v, k);
  EXPECT_EQ(rebuilt, v);
  EXPECT_EQ(nlp.objective(rebuilt), nlp.objective(v));
}

namespace {

Eigen::VectorXd replay_final_state(const TranscribedNlp& nlp, const Eigen::VectorXd& vars,
                                   double dt) {
  const auto& problem = nlp.problem();
  const int steps = static_cast<int>(std::round((problem.tf - problem.t0) / dt));
  std::vector<double> times(steps);
  for (int i = 0; i < steps; ++i) times[i] = problem.t0 + (i + 0.5) * dt;
  const auto interp = interpolate_solution(nlp, vars, times);
  std::vector<Eigen::VectorXd> controls(steps);
  for (int i = 0; i < steps; ++i) controls[i] = interp.controls.row(i).transpose();
  const auto traj = rk4_rollout(
      [&](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        return compose(nlp.problem().dynamics, x, u);
      },
      problem.x0, controls, dt, steps);
  return traj.back();
}

}  // namespace

TEST(FeasibilityTransfer, BenignCartMoveReintegratesToFinalState) {
  // Stable-regime instance: shift the cart half a meter with the pole
  // hanging down. Reintegration of a feasible solution must land within
  // 1e-2 (1 + |x_f|) of X_f at K = 25.
  auto problem = cartpole_problem(cartpole_table1_nominal(), 2.0);
  problem.xf = Eigen::VectorXd::Zero(4);
  problem.xf[0] = 0.5;  // cart translation, pole stays near the bottom
  problem.u_lb = Eigen::VectorXd::Constant(1, -15.0);
  problem.u_ub = Eigen::VectorXd::Constant(1, 15.0);

  NlpSolveOptions opts;
  opts.max_outer = 60;
  opts.max_inner = 2000;
  opts.constraint_tol = 1e-6;
  const auto nlp = transcribe(problem, CollocationGrid::get(25));
  const auto sol = solve(nlp, cold_start_guess(nlp), opts);
  ASSERT_TRUE(dynamics_feasible(sol, opts));

  const Eigen::VectorXd landed = replay_final_state(nlp, sol.vars, 0.005);
  const Eigen::VectorXd xf = nlp.final_state(sol.vars);
  EXPECT_LE((landed - xf).norm(), 1e-2 * (1.0 + xf.norm()));
}

TEST(FeasibilityTransfer, SwingUpReplayThroughRefinementLadder) {
  // The unstable swing-up amplifies inter-node model error, so the episodic
  // solve climbs an order-refinement ladder before its open-loop replay.
  auto problem = cartpole_problem(cartpole_table1_nominal(), 2.0);
  problem.r = Eigen::MatrixXd::Identity(1, 1) * 0.1;
  problem.u_lb = Eigen::VectorXd::Constant(1, -15.0);
  problem.u_ub = Eigen::VectorXd::Constant(1, 15.0);

  NlpSolveOptions opts;
  opts.max_outer = 60;
  opts.max_inner = 2000;
  const auto res = solve_ocp_refined(
      problem, {{12, 1e-6}, {25, 1e-7}, {40, 1e-8}, {55, 1e-8}}, opts, nullptr, 1e-6);
  ASSERT_TRUE(res.feasible);

  const Eigen::VectorXd landed = replay_final_state(res.nlp, res.solution.vars, 0.005);
  const Eigen::VectorXd err = landed - problem.xf;
  EXPECT_LE(std::hypot(err[0], err[2]), 0.05);
}
