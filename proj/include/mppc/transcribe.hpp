#ifndef MPPC_TRANSCRIBE_HPP
#define MPPC_TRANSCRIBE_HPP

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mppc/dynamics.hpp"
#include "mppc/polybasis.hpp"

namespace mppc {

/// Scalar inequality imposed at every interior collocation node,
/// feasible iff value >= 0.
struct PathConstraint {
  std::string name;
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> value;
  std::function<void(const Eigen::VectorXd&, const Eigen::VectorXd&, Eigen::VectorXd&,
                     Eigen::VectorXd&)>
      gradient;  // fills dc/dx and dc/du
};

enum class TerminalMode { HardEquality, QuadraticCost };

/// Fixed-horizon continuous optimal control problem in Bolza form.
struct OcProblem {
  SemiParametricModel dynamics;
  Eigen::VectorXd x0;
  Eigen::VectorXd xf;
  TerminalMode terminal = TerminalMode::HardEquality;
  std::vector<int> terminal_indices;  // empty = all state entries (hard mode)

  Eigen::MatrixXd q;       // running state weight, applied about x_ref
  Eigen::MatrixXd r;       // running control weight
  Eigen::MatrixXd qf;      // terminal weight (quadratic-cost mode)
  Eigen::VectorXd x_ref;   // empty = xf

  Eigen::VectorXd u_lb, u_ub;  // empty = unbounded
  Eigen::VectorXd x_lb, x_ub;
  Eigen::VectorXd u_guess;     // cold-start control level, empty = zeros

  std::vector<PathConstraint> path_constraints;
  double t0 = 0.0;
  double tf = 1.0;

  int state_dim() const { return dynamics.state_dim(); }
  int control_dim() const { return dynamics.control_dim(); }

  Eigen::VectorXd running_reference() const { return x_ref.size() ? x_ref : xf; }

  std::vector<int> effective_terminal_indices() const {
    if (!terminal_indices.empty()) return terminal_indices;
    std::vector<int> all(state_dim());
    for (int i = 0; i < state_dim(); ++i) all[i] = i;
    return all;
  }

  void validate() const {
    const int n = state_dim();
    const int m = control_dim();
    if (x0.size() != n || xf.size() != n)
      throw std::invalid_argument("OcProblem: boundary state dimension mismatch");
    if (q.rows() != n || q.cols() != n || r.rows() != m || r.cols() != m)
      throw std::invalid_argument("OcProblem: cost weight dimension mismatch");
    if (terminal == TerminalMode::QuadraticCost && (qf.rows() != n || qf.cols() != n))
      throw std::invalid_argument("OcProblem: terminal weight dimension mismatch");
    if (!(tf > t0)) throw std::invalid_argument("OcProblem: tf must exceed t0");
    dynamics.validate();
  }
};

/// Flat decision vector [X_0, X_1..X_K, X_f, U_1..U_K].
struct DecisionLayout {
  int n = 0;
  int m = 0;
  int order = 0;  // K

  int size() const { return n * (order + 2) + m * order; }
  int state_offset(int k) const { return n * k; }          // k = 0..K
  int final_state_offset() const { return n * (order + 1); }
  int control_offset(int k) const {                        // k = 1..K
    return n * (order + 2) + m * (k - 1);
  }
};

/// The transcribed finite-dimensional program. Evaluators are pure in the
/// decision vector; equality order is [defects, quadrature closure, initial
/// condition, terminal condition].
class TranscribedNlp {
 public:
  TranscribedNlp(OcProblem problem, const CollocationGrid& grid)
      : problem_(std::move(problem)), grid_(&grid) {
    if (grid.order < 2)
      throw std::invalid_argument("transcribe: grid order must be at least 2");
    problem_.validate();
    layout_.n = problem_.state_dim();
    layout_.m = problem_.control_dim();
    layout_.order = grid.order;
    terminal_idx_ = problem_.terminal == TerminalMode::HardEquality
                        ? problem_.effective_terminal_indices()
                        : std::vector<int>{};
    build_bounds();
  }

  const DecisionLayout& layout() const { return layout_; }
  const OcProblem& problem() const { return problem_; }
  const CollocationGrid& grid() const { return *grid_; }
  const Eigen::VectorXd& lower_bounds() const { return lb_; }
  const Eigen::VectorXd& upper_bounds() const { return ub_; }

  int num_equalities() const {
    return layout_.n * (layout_.order + 1) + layout_.n +
           static_cast<int>(terminal_idx_.size());
  }
  int num_inequalities() const {
    return static_cast<int>(problem_.path_constraints.size()) * layout_.order;
  }

  Eigen::VectorXd state_at(const Eigen::VectorXd& v, int k) const {
    return v.segment(layout_.state_offset(k), layout_.n);
  }
  Eigen::VectorXd final_state(const Eigen::VectorXd& v) const {
    return v.segment(layout_.final_state_offset(), layout_.n);
  }
  Eigen::VectorXd control_at(const Eigen::VectorXd& v, int k) const {
    return v.segment(layout_.control_offset(k), layout_.m);
  }

  double objective(const Eigen::VectorXd& v) const {
    const double half = 0.5 * (problem_.tf - problem_.t0);
    const Eigen::VectorXd ref = problem_.running_reference();
    double acc = 0.0;
    for (int k = 1; k <= layout_.order; ++k) {
      const Eigen::VectorXd xe = state_at(v, k) - ref;
      const Eigen::VectorXd u = control_at(v, k);
      acc += grid_->weights[k - 1] *
             (xe.dot(problem_.q * xe) + u.dot(problem_.r * u));
    }
    double terminal = 0.0;
    if (problem_.terminal == TerminalMode::QuadraticCost) {
      const Eigen::VectorXd xe = final_state(v) - problem_.xf;
      terminal = xe.dot(problem_.qf * xe);
    }
    return terminal + half * acc;
  }

  Eigen::VectorXd objective_gradient(const Eigen::VectorXd& v) const {
    const double half = 0.5 * (problem_.tf - problem_.t0);
    const Eigen::VectorXd ref = problem_.running_reference();
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout_.size());
    for (int k = 1; k <= layout_.order; ++k) {
      const Eigen::VectorXd xe = state_at(v, k) - ref;
      const Eigen::VectorXd u = control_at(v, k);
      grad.segment(layout_.state_offset(k), layout_.n) =
          half * grid_->weights[k - 1] * 2.0 * (problem_.q * xe);
      grad.segment(layout_.control_offset(k), layout_.m) =
          half * grid_->weights[k - 1] * 2.0 * (problem_.r * u);
    }
    if (problem_.terminal == TerminalMode::QuadraticCost) {
      const Eigen::VectorXd xe = final_state(v) - problem_.xf;
      grad.segment(layout_.final_state_offset(), layout_.n) += 2.0 * (problem_.qf * xe);
    }
    return grad;
  }

  Eigen::VectorXd equalities(const Eigen::VectorXd& v) const {
    const int n = layout_.n;
    const int order = layout_.order;
    const double half = 0.5 * (problem_.tf - problem_.t0);
    Eigen::VectorXd eq(num_equalities());

    Eigen::VectorXd closure = final_state(v) - state_at(v, 0);
    for (int k = 1; k <= order; ++k) {
      const Eigen::VectorXd f = compose(problem_.dynamics, state_at(v, k), control_at(v, k));
      Eigen::VectorXd defect = -half * f;
      for (int i = 0; i <= order; ++i)
        defect += grid_->diff(k - 1, i) * state_at(v, i);
      eq.segment(n * (k - 1), n) = defect;
      closure -= half * grid_->weights[k - 1] * f;
    }
    eq.segment(n * order, n) = closure;
    eq.segment(n * (order + 1), n) = state_at(v, 0) - problem_.x0;
    for (std::size_t j = 0; j < terminal_idx_.size(); ++j)
      eq[n * (order + 2) + static_cast<int>(j)] =
          final_state(v)[terminal_idx_[j]] - problem_.xf[terminal_idx_[j]];
    return eq;
  }

  Eigen::MatrixXd equality_jacobian(const Eigen::VectorXd& v) const {
    const int n = layout_.n;
    const int m = layout_.m;
    const int order = layout_.order;
    const double half = 0.5 * (problem_.tf - problem_.t0);
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(num_equalities(), layout_.size());

    const int closure_row = n * order;
    jac.block(closure_row, layout_.final_state_offset(), n, n).setIdentity();
    jac.block(closure_row, layout_.state_offset(0), n, n) =
        -Eigen::MatrixXd::Identity(n, n);

    Eigen::MatrixXd dfdx(n, n), dfdu(n, m);
    for (int k = 1; k <= order; ++k) {
      compose_jacobian(problem_.dynamics, state_at(v, k), control_at(v, k), dfdx, dfdu);
      if (!dfdx.allFinite() || !dfdu.allFinite())
        throw std::runtime_error("transcribe: non-finite dynamics Jacobian at node " +
                                 std::to_string(k));
      const int row = n * (k - 1);
      for (int i = 0; i <= order; ++i)
        jac.block(row, layout_.state_offset(i), n, n).diagonal().setConstant(
            grid_->diff(k - 1, i));
      jac.block(row, layout_.state_offset(k), n, n) -= half * dfdx;
      jac.block(row, layout_.control_offset(k), n, m) = -half * dfdu;

      const double wk = grid_->weights[k - 1];
      jac.block(closure_row, layout_.state_offset(k), n, n) -= half * wk * dfdx;
      jac.block(closure_row, layout_.control_offset(k), n, m) = -half * wk * dfdu;
    }

    jac.block(n * (order + 1), layout_.state_offset(0), n, n).setIdentity();
    for (std::size_t j = 0; j < terminal_idx_.size(); ++j)
      jac(n * (order + 2) + static_cast<int>(j),
          layout_.final_state_offset() + terminal_idx_[j]) = 1.0;
    return jac;
  }

  Eigen::VectorXd inequalities(const Eigen::VectorXd& v) const {
    const int count = static_cast<int>(problem_.path_constraints.size());
    Eigen::VectorXd c(num_inequalities());
    for (int j = 0; j < count; ++j)
      for (int k = 1; k <= layout_.order; ++k)
        c[j * layout_.order + (k - 1)] =
            problem_.path_constraints[j].value(state_at(v, k), control_at(v, k));
    return c;
  }

  Eigen::MatrixXd inequality_jacobian(const Eigen::VectorXd& v) const {
    const int count = static_cast<int>(problem_.path_constraints.size());
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(num_inequalities(), layout_.size());
    Eigen::VectorXd dx(layout_.n), du(layout_.m);
    for (int j = 0; j < count; ++j)
      for (int k = 1; k <= layout_.order; ++k) {
        problem_.path_constraints[j].gradient(state_at(v, k), control_at(v, k), dx, du);
        const int row = j * layout_.order + (k - 1);
        jac.block(row, layout_.state_offset(k), 1, layout_.n) = dx.transpose();
        jac.block(row, layout_.control_offset(k), 1, layout_.m) = du.transpose();
      }
    return jac;
  }

 private:
  void build_bounds() {
    const double inf = std::numeric_limits<double>::infinity();
    lb_ = Eigen::VectorXd::Constant(layout_.size(), -inf);
    ub_ = Eigen::VectorXd::Constant(layout_.size(), inf);
    const int n = layout_.n;
    const int m = layout_.m;
    if (problem_.x_lb.size()) {
      for (int k = 0; k <= layout_.order + 1; ++k)
        lb_.segment(n * k, n) = problem_.x_lb;
    }
    if (problem_.x_ub.size()) {
      for (int k = 0; k <= layout_.order + 1; ++k)
        ub_.segment(n * k, n) = problem_.x_ub;
    }
    if (problem_.u_lb.size()) {
      for (int k = 1; k <= layout_.order; ++k)
        lb_.segment(layout_.control_offset(k), m) = problem_.u_lb;
    }
    if (problem_.u_ub.size()) {
      for (int k = 1; k <= layout_.order; ++k)
        ub_.segment(layout_.control_offset(k), m) = problem_.u_ub;
    }
  }

  OcProblem problem_;
  const CollocationGrid* grid_;
  DecisionLayout layout_;
  std::vector<int> terminal_idx_;
  Eigen::VectorXd lb_, ub_;
};

inline TranscribedNlp transcribe(const OcProblem& problem, const CollocationGrid& grid) {
  return TranscribedNlp(problem, grid);
}

/// States interpolated on {tau_0, tau_1..tau_K}, controls on the interior
/// nodes. Each returned row corresponds to one query time.
struct InterpolatedSolution {
  Eigen::MatrixXd states;    // Q x n
  Eigen::MatrixXd controls;  // Q x m
};

inline InterpolatedSolution interpolate_solution(const TranscribedNlp& nlp,
                                                 const Eigen::VectorXd& vars,
                                                 const std::vector<double>& query_times) {
  const auto& layout = nlp.layout();
  const auto& problem = nlp.problem();
  const auto& grid = nlp.grid();

  Eigen::MatrixXd state_samples(layout.order + 1, layout.n);
  for (int k = 0; k <= layout.order; ++k)
    state_samples.row(k) = nlp.state_at(vars, k).transpose();
  Eigen::MatrixXd control_samples(layout.order, layout.m);
  for (int k = 1; k <= layout.order; ++k)
    control_samples.row(k - 1) = nlp.control_at(vars, k).transpose();

  InterpolatedSolution out;
  out.states.resize(query_times.size(), layout.n);
  out.controls.resize(query_times.size(), layout.m);
  for (std::size_t qi = 0; qi < query_times.size(); ++qi) {
    const double t = query_times[qi];
    if (t < problem.t0 - 1e-9 || t > problem.tf + 1e-9)
      throw std::invalid_argument("interpolate_solution: query outside [t0, tf]");
    const double tau = tau_from_time(std::clamp(t, problem.t0, problem.tf),
                                     problem.t0, problem.tf);
    out.states.row(qi) =
        lagrange_interpolate_rows(grid.nodes_with_initial, state_samples, tau).transpose();
    out.controls.row(qi) =
        lagrange_interpolate_rows(grid.nodes, control_samples, tau).transpose();
  }
  return out;
}

/// Re-samples a solved trajectory onto another transcription's node times;
/// used both for order refinement and for MPC warm starts across horizons.
/// Queries outside the source phase are clamped to its ends.
inline Eigen::VectorXd reinterpolate_guess(const TranscribedNlp& from,
                                           const Eigen::VectorXd& from_vars,
                                           const TranscribedNlp& to) {
  const auto& layout = to.layout();
  const auto& target = to.problem();
  const auto& source = from.problem();
  std::vector<double> times;
  times.reserve(layout.order + 2);
  const auto clamp_time = [&](double t) {
    return std::clamp(t, source.t0, source.tf);
  };
  times.push_back(clamp_time(target.t0));
  for (int k = 1; k <= layout.order; ++k)
    times.push_back(clamp_time(time_from_tau(to.grid().nodes[k - 1], target.t0, target.tf)));
  times.push_back(clamp_time(target.tf));

  const auto s = interpolate_solution(from, from_vars, times);
  Eigen::VectorXd guess(layout.size());
  guess.segment(layout.state_offset(0), layout.n) = s.states.row(0);
  for (int k = 1; k <= layout.order; ++k) {
    guess.segment(layout.state_offset(k), layout.n) = s.states.row(k);
    guess.segment(layout.control_offset(k), layout.m) = s.controls.row(k);
  }
  guess.segment(layout.final_state_offset(), layout.n) = s.states.row(layout.order + 1);
  return guess;
}

/// Linear state interpolation x0 -> xf with the problem's control guess at
/// every node; the standard cold start.
inline Eigen::VectorXd cold_start_guess(const TranscribedNlp& nlp) {
  const auto& layout = nlp.layout();
  const auto& problem = nlp.problem();
  const auto& grid = nlp.grid();
  Eigen::VectorXd v(layout.size());
  const Eigen::VectorXd u0 = problem.u_guess.size()
                                 ? problem.u_guess
                                 : Eigen::VectorXd::Zero(layout.m);
  for (int k = 0; k <= layout.order + 1; ++k) {
    double tau = k == 0 ? -1.0 : (k == layout.order + 1 ? 1.0 : grid.nodes[k - 1]);
    const double s = 0.5 * (tau + 1.0);
    v.segment(layout.state_offset(k), layout.n) = (1.0 - s) * problem.x0 + s * problem.xf;
  }
  for (int k = 1; k <= layout.order; ++k)
    v.segment(layout.control_offset(k), layout.m) = u0;
  return v;
}

}  // namespace mppc

#endif  // MPPC_TRANSCRIBE_HPP
