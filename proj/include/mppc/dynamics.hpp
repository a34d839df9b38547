#ifndef MPPC_DYNAMICS_HPP
#define MPPC_DYNAMICS_HPP

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mppc/gp.hpp"
#include "mppc/rng.hpp"
#include "mppc/ssgp.hpp"

namespace mppc {

// ---------------------------------------------------------------------------
// Benchmark system parameters
// ---------------------------------------------------------------------------

struct CartPoleParams {
  double cart_mass = 0.5;     // m_c, kg
  double pole_mass = 0.5;     // m_p, kg
  double pole_length = 0.6;   // l, m
  double ground_damping = 0.0;  // b_1
  double pivot_damping = 0.0;   // b_2
  double gravity = 9.81;
};

struct QuadrotorParams {
  double mass = 1.0;          // kg
  double jx = 8.1e-3;         // kg m^2
  double jy = 8.1e-3;
  double jz = 14.2e-3;
  double arm_length = 0.24;   // L, m
  double gravity = 9.81;
  // yaw moment arm enters as 0.05 * L, fixed by the model
};

enum class DubinsThirdRow { UseB1, UseB2 };

struct DubinsParams {
  double b1 = 0.3;
  double b2 = 0.3;
  DubinsThirdRow third_row = DubinsThirdRow::UseB2;
};

// Table presets: "true" carries the unmodeled terms, "nominal" is what the
// planner believes.
inline CartPoleParams cartpole_table1_true() { return {0.5, 0.5, 0.6, 0.01, 0.01, 9.81}; }
inline CartPoleParams cartpole_table1_nominal() { return {0.5, 0.5, 0.6, 0.0, 0.0, 9.81}; }
inline CartPoleParams cartpole_table2_true() { return {1.0, 0.5, 0.5, 0.3, 0.3, 9.81}; }
inline CartPoleParams cartpole_table2_nominal() { return {0.9, 0.45, 0.45, 0.0, 0.0, 9.81}; }
inline QuadrotorParams quadrotor_table1_true() { return {1.0, 8.1e-3, 8.1e-3, 14.2e-3, 0.24, 9.81}; }
inline QuadrotorParams quadrotor_table1_nominal() { return {0.9, 8.1e-3, 8.1e-3, 14.2e-3, 0.24, 9.81}; }
inline QuadrotorParams quadrotor_table2_true() { return {1.0, 8.1e-3, 8.1e-3, 14.2e-3, 0.24, 9.81}; }
inline QuadrotorParams quadrotor_table2_nominal() { return {0.99, 8.1e-3, 8.1e-3, 14.2e-3, 0.2376, 9.81}; }
inline DubinsParams dubins_true() { return {0.3, 0.3, DubinsThirdRow::UseB2}; }

// ---------------------------------------------------------------------------
// Equations of motion
// ---------------------------------------------------------------------------

/// Cart pole, state [x, xdot, theta, thetadot], control [f]. theta = 0 is the
/// downward stable equilibrium, theta = pi the upright target.
inline Eigen::VectorXd cartpole_f(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                  const CartPoleParams& p) {
  const double xd = x[1], th = x[2], thd = x[3];
  const double f = u[0];
  const double s = std::sin(th), c = std::cos(th);
  const double mc = p.cart_mass, mp = p.pole_mass, l = p.pole_length;
  const double b1 = p.ground_damping, b2 = p.pivot_damping, g = p.gravity;
  const double den = mc + mp * s * s;

  const double num_x =
      -(b2 * thd * c - l * f + l * b1 * xd - mp * l * s * (l * thd * thd + g * c));
  const double num_th = b2 * thd * (mp + mc) + mp * l * (b1 * xd - f) * c -
                        mp * l * s * ((mp + mc) * g + mp * l * thd * thd * c);

  Eigen::VectorXd dx(4);
  dx[0] = xd;
  dx[1] = num_x / (l * den);
  dx[2] = thd;
  dx[3] = num_th / (l * l * mp * den);
  return dx;
}

inline void cartpole_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                              const CartPoleParams& p, Eigen::MatrixXd& dfdx,
                              Eigen::MatrixXd& dfdu) {
  const double xd = x[1], th = x[2], thd = x[3];
  const double f = u[0];
  const double s = std::sin(th), c = std::cos(th);
  const double mc = p.cart_mass, mp = p.pole_mass, l = p.pole_length;
  const double b1 = p.ground_damping, b2 = p.pivot_damping, g = p.gravity;
  const double den = mc + mp * s * s;
  const double dden = 2.0 * mp * s * c;

  const double num_x = -b2 * thd * c + l * f - l * b1 * xd + mp * l * s * (l * thd * thd + g * c);
  const double dnum_x_dth = b2 * thd * s + mp * l * c * (l * thd * thd + g * c) - mp * l * g * s * s;
  const double num_th = b2 * thd * (mp + mc) + mp * l * (b1 * xd - f) * c -
                        mp * l * s * ((mp + mc) * g + mp * l * thd * thd * c);
  const double dnum_th_dth = -mp * l * (b1 * xd - f) * s -
                             mp * l * c * ((mp + mc) * g + mp * l * thd * thd * c) +
                             mp * mp * l * l * thd * thd * s * s;

  dfdx = Eigen::MatrixXd::Zero(4, 4);
  dfdu = Eigen::MatrixXd::Zero(4, 1);
  dfdx(0, 1) = 1.0;
  dfdx(2, 3) = 1.0;

  const double dx_den = l * den;
  dfdx(1, 1) = -l * b1 / dx_den;
  dfdx(1, 3) = (-b2 * c + 2.0 * mp * l * l * s * thd) / dx_den;
  dfdx(1, 2) = dnum_x_dth / dx_den - num_x * dden / (l * den * den);
  dfdu(1, 0) = l / dx_den;

  const double th_den = l * l * mp * den;
  dfdx(3, 1) = mp * l * b1 * c / th_den;
  dfdx(3, 3) = (b2 * (mp + mc) - 2.0 * mp * mp * l * l * s * c * thd) / th_den;
  dfdx(3, 2) = dnum_th_dth / th_den - num_th * dden / (l * l * mp * den * den);
  dfdu(3, 0) = -mp * l * c / th_den;
}

/// Pendulum-tip energy of the cart pole (used by conservation checks).
inline double cartpole_energy(const Eigen::VectorXd& x, const CartPoleParams& p) {
  const double xd = x[1], th = x[2], thd = x[3];
  const double c = std::cos(th);
  const double vtip2 = xd * xd + 2.0 * p.pole_length * xd * thd * c +
                       p.pole_length * p.pole_length * thd * thd;
  return 0.5 * p.cart_mass * xd * xd + 0.5 * p.pole_mass * vtip2 -
         p.pole_mass * p.gravity * p.pole_length * c;
}

/// Quadrotor in NED coordinates (positive z points down), small-attitude
/// model. State [x y z xd yd zd phi theta psi phid thetad psid],
/// controls are the four rotor thrusts.
inline Eigen::VectorXd quadrotor_f(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                   const QuadrotorParams& p) {
  const double phi = x[6], th = x[7], psi = x[8];
  const double phid = x[9], thd = x[10], psid = x[11];
  const double t = u.sum();
  const double sph = std::sin(phi), cph = std::cos(phi);
  const double sth = std::sin(th), cth = std::cos(th);
  const double sps = std::sin(psi), cps = std::cos(psi);

  Eigen::VectorXd dx(12);
  dx.head(3) = x.segment(3, 3);
  dx[3] = (cph * sth * cps + sph * sps) * t / p.mass;
  dx[4] = (cph * sth * sps - sph * cps) * t / p.mass;
  dx[5] = p.gravity - (cph * cth) * t / p.mass;
  dx.segment(6, 3) = x.segment(9, 3);
  dx[9] = (thd * psid * (p.jy - p.jz) + p.arm_length * (u[3] - u[1])) / p.jx;
  dx[10] = (phid * psid * (p.jz - p.jx) + p.arm_length * (u[0] - u[2])) / p.jy;
  dx[11] = (phid * thd * (p.jx - p.jy) +
            0.05 * p.arm_length * (u[1] + u[3] - u[0] - u[2])) /
           p.jz;
  return dx;
}

inline void quadrotor_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                               const QuadrotorParams& p, Eigen::MatrixXd& dfdx,
                               Eigen::MatrixXd& dfdu) {
  const double phi = x[6], th = x[7], psi = x[8];
  const double phid = x[9], thd = x[10], psid = x[11];
  const double t = u.sum();
  const double sph = std::sin(phi), cph = std::cos(phi);
  const double sth = std::sin(th), cth = std::cos(th);
  const double sps = std::sin(psi), cps = std::cos(psi);

  dfdx = Eigen::MatrixXd::Zero(12, 12);
  dfdu = Eigen::MatrixXd::Zero(12, 4);
  for (int i = 0; i < 3; ++i) dfdx(i, 3 + i) = 1.0;
  for (int i = 0; i < 3; ++i) dfdx(6 + i, 9 + i) = 1.0;

  const double ax = cph * sth * cps + sph * sps;
  const double ay = cph * sth * sps - sph * cps;
  const double az = cph * cth;

  dfdx(3, 6) = (-sph * sth * cps + cph * sps) * t / p.mass;
  dfdx(3, 7) = (cph * cth * cps) * t / p.mass;
  dfdx(3, 8) = (-cph * sth * sps + sph * cps) * t / p.mass;
  dfdx(4, 6) = (-sph * sth * sps - cph * cps) * t / p.mass;
  dfdx(4, 7) = (cph * cth * sps) * t / p.mass;
  dfdx(4, 8) = (cph * sth * cps + sph * sps) * t / p.mass;
  dfdx(5, 6) = sph * cth * t / p.mass;
  dfdx(5, 7) = cph * sth * t / p.mass;
  for (int j = 0; j < 4; ++j) {
    dfdu(3, j) = ax / p.mass;
    dfdu(4, j) = ay / p.mass;
    dfdu(5, j) = -az / p.mass;
  }

  dfdx(9, 10) = psid * (p.jy - p.jz) / p.jx;
  dfdx(9, 11) = thd * (p.jy - p.jz) / p.jx;
  dfdu(9, 3) = p.arm_length / p.jx;
  dfdu(9, 1) = -p.arm_length / p.jx;

  dfdx(10, 9) = psid * (p.jz - p.jx) / p.jy;
  dfdx(10, 11) = phid * (p.jz - p.jx) / p.jy;
  dfdu(10, 0) = p.arm_length / p.jy;
  dfdu(10, 2) = -p.arm_length / p.jy;

  dfdx(11, 9) = thd * (p.jx - p.jy) / p.jz;
  dfdx(11, 10) = phid * (p.jx - p.jy) / p.jz;
  const double yaw_arm = 0.05 * p.arm_length / p.jz;
  dfdu(11, 0) = -yaw_arm;
  dfdu(11, 1) = yaw_arm;
  dfdu(11, 2) = -yaw_arm;
  dfdu(11, 3) = yaw_arm;
}

/// Dubins vehicle with bicycle-style authority losses. State [x1 x2 x3],
/// controls [u1 u2]. The printed third row uses (1 - b1) although the text
/// names b2; the parameter choice is a config switch defaulting to b2.
inline Eigen::VectorXd dubins_f(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                const DubinsParams& p) {
  const double heading = x[2];
  const double b3 = (p.third_row == DubinsThirdRow::UseB1) ? p.b1 : p.b2;
  Eigen::VectorXd dx(3);
  dx[0] = (1.0 - p.b1) * u[0] * std::cos(heading);
  dx[1] = (1.0 - p.b1) * u[0] * std::sin(heading);
  dx[2] = (1.0 - b3) * u[1];
  return dx;
}

inline void dubins_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                            const DubinsParams& p, Eigen::MatrixXd& dfdx,
                            Eigen::MatrixXd& dfdu) {
  const double heading = x[2];
  const double b3 = (p.third_row == DubinsThirdRow::UseB1) ? p.b1 : p.b2;
  dfdx = Eigen::MatrixXd::Zero(3, 3);
  dfdu = Eigen::MatrixXd::Zero(3, 2);
  dfdx(0, 2) = -(1.0 - p.b1) * u[0] * std::sin(heading);
  dfdx(1, 2) = (1.0 - p.b1) * u[0] * std::cos(heading);
  dfdu(0, 0) = (1.0 - p.b1) * std::cos(heading);
  dfdu(1, 0) = (1.0 - p.b1) * std::sin(heading);
  dfdu(2, 1) = 1.0 - b3;
}

// ---------------------------------------------------------------------------
// Vector fields and the semi-parametric composition
// ---------------------------------------------------------------------------

struct VectorField {
  int state_dim = 0;
  int control_dim = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> value;
  std::function<void(const Eigen::VectorXd&, const Eigen::VectorXd&, Eigen::MatrixXd&,
                     Eigen::MatrixXd&)>
      jacobian;
};

inline VectorField cartpole_field(const CartPoleParams& p) {
  VectorField f;
  f.state_dim = 4;
  f.control_dim = 1;
  f.value = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return cartpole_f(x, u, p);
  };
  f.jacobian = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                   Eigen::MatrixXd& a, Eigen::MatrixXd& b) {
    cartpole_jacobian(x, u, p, a, b);
  };
  return f;
}

inline VectorField quadrotor_field(const QuadrotorParams& p) {
  VectorField f;
  f.state_dim = 12;
  f.control_dim = 4;
  f.value = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return quadrotor_f(x, u, p);
  };
  f.jacobian = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                   Eigen::MatrixXd& a, Eigen::MatrixXd& b) {
    quadrotor_jacobian(x, u, p, a, b);
  };
  return f;
}

inline VectorField dubins_field(const DubinsParams& p) {
  VectorField f;
  f.state_dim = 3;
  f.control_dim = 2;
  f.value = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return dubins_f(x, u, p);
  };
  f.jacobian = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                   Eigen::MatrixXd& a, Eigen::MatrixXd& b) {
    dubins_jacobian(x, u, p, a, b);
  };
  return f;
}

/// Learned residual attached to a parametric field. Implementations wrap a
/// full GP or an SSGP; both expose the analytic input gradient needed by the
/// transcription Jacobians.
class ResidualModel {
 public:
  virtual ~ResidualModel() = default;
  virtual Eigen::VectorXd mean(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::MatrixXd mean_gradient(const Eigen::VectorXd& z) const = 0;
  virtual double variance(const Eigen::VectorXd& z) const = 0;
  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
};

class GpResidual : public ResidualModel {
 public:
  explicit GpResidual(GpModel model) : model_(std::move(model)) {}
  Eigen::VectorXd mean(const Eigen::VectorXd& z) const override {
    return model_.predict_mean(z);
  }
  Eigen::MatrixXd mean_gradient(const Eigen::VectorXd& z) const override {
    return model_.predict_mean_gradient(z);
  }
  double variance(const Eigen::VectorXd& z) const override {
    return model_.predict(z).variance.maxCoeff();
  }
  int input_dim() const override { return model_.input_dim(); }
  int output_dim() const override { return model_.output_dim(); }
  const GpModel& model() const { return model_; }

 private:
  GpModel model_;
};

class SsgpResidual : public ResidualModel {
 public:
  explicit SsgpResidual(std::shared_ptr<SsgpState> state) : state_(std::move(state)) {}
  Eigen::VectorXd mean(const Eigen::VectorXd& z) const override {
    return state_->predict_mean(z);
  }
  Eigen::MatrixXd mean_gradient(const Eigen::VectorXd& z) const override {
    return state_->predict_mean_gradient(z);
  }
  double variance(const Eigen::VectorXd& z) const override {
    return state_->predict(z).variance;
  }
  int input_dim() const override { return state_->basis().input_dim(); }
  int output_dim() const override { return state_->output_dim(); }
  const std::shared_ptr<SsgpState>& state() const { return state_; }

 private:
  std::shared_ptr<SsgpState> state_;
};

/// Analytic physics model plus an optional learned residual applied to a
/// declared subset of the derivative rows (the acceleration rows for the
/// second-order systems).
struct SemiParametricModel {
  VectorField parametric;
  std::shared_ptr<ResidualModel> residual;    // null = pure parametric
  std::vector<int> residual_input_indices;    // into the stacked [x; u]
  std::vector<int> residual_output_indices;   // into dx

  int state_dim() const { return parametric.state_dim; }
  int control_dim() const { return parametric.control_dim; }

  Eigen::VectorXd gather_input(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    Eigen::VectorXd z(residual_input_indices.size());
    for (std::size_t i = 0; i < residual_input_indices.size(); ++i) {
      const int idx = residual_input_indices[i];
      z[i] = idx < x.size() ? x[idx] : u[idx - x.size()];
    }
    return z;
  }

  void validate() const {
    if (!residual) return;
    if (static_cast<int>(residual_input_indices.size()) != residual->input_dim())
      throw std::invalid_argument("SemiParametricModel: residual input layout mismatch");
    if (static_cast<int>(residual_output_indices.size()) != residual->output_dim())
      throw std::invalid_argument("SemiParametricModel: residual output layout mismatch");
    for (int idx : residual_input_indices)
      if (idx < 0 || idx >= state_dim() + control_dim())
        throw std::invalid_argument("SemiParametricModel: input index out of range");
    for (int idx : residual_output_indices)
      if (idx < 0 || idx >= state_dim())
        throw std::invalid_argument("SemiParametricModel: output index out of range");
  }
};

/// All state and control entries feed the residual.
inline std::vector<int> full_input_layout(int state_dim, int control_dim) {
  std::vector<int> idx(state_dim + control_dim);
  for (int i = 0; i < state_dim + control_dim; ++i) idx[i] = i;
  return idx;
}

inline Eigen::VectorXd compose(const SemiParametricModel& model, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& u) {
  Eigen::VectorXd dx = model.parametric.value(x, u);
  if (model.residual) {
    model.validate();
    const Eigen::VectorXd mu = model.residual->mean(model.gather_input(x, u));
    for (std::size_t j = 0; j < model.residual_output_indices.size(); ++j)
      dx[model.residual_output_indices[j]] += mu[j];
  }
  return dx;
}

/// Chain rule over the parametric Jacobians and the residual mean gradient.
inline void compose_jacobian(const SemiParametricModel& model, const Eigen::VectorXd& x,
                             const Eigen::VectorXd& u, Eigen::MatrixXd& dfdx,
                             Eigen::MatrixXd& dfdu) {
  model.parametric.jacobian(x, u, dfdx, dfdu);
  if (!model.residual) return;
  const int n = model.state_dim();
  const Eigen::MatrixXd grad = model.residual->mean_gradient(model.gather_input(x, u));
  for (std::size_t j = 0; j < model.residual_output_indices.size(); ++j) {
    const int row = model.residual_output_indices[j];
    for (std::size_t i = 0; i < model.residual_input_indices.size(); ++i) {
      const int idx = model.residual_input_indices[i];
      if (idx < n)
        dfdx(row, idx) += grad(j, i);
      else
        dfdu(row, idx - n) += grad(j, i);
    }
  }
}

// ---------------------------------------------------------------------------
// Integration and data generation
// ---------------------------------------------------------------------------

/// Classical RK4 with zero-order-hold controls: controls[k] acts on
/// [k dt, (k+1) dt). Returns steps + 1 states.
inline std::vector<Eigen::VectorXd> rk4_rollout(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, const std::vector<Eigen::VectorXd>& controls, double dt,
    int steps) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_rollout: dt must be > 0");
  if (static_cast<int>(controls.size()) < steps)
    throw std::invalid_argument("rk4_rollout: control schedule shorter than steps");
  std::vector<Eigen::VectorXd> traj;
  traj.reserve(steps + 1);
  traj.push_back(x0);
  Eigen::VectorXd x = x0;
  for (int k = 0; k < steps; ++k) {
    const Eigen::VectorXd& u = controls[k];
    const Eigen::VectorXd k1 = f(x, u);
    const Eigen::VectorXd k2 = f(x + 0.5 * dt * k1, u);
    const Eigen::VectorXd k3 = f(x + 0.5 * dt * k2, u);
    const Eigen::VectorXd k4 = f(x + dt * k3, u);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite())
      throw std::runtime_error("rk4_rollout: non-finite state at step " + std::to_string(k + 1));
    traj.push_back(x);
  }
  return traj;
}

struct PdGains {
  double kp = 5.0;
  double kd = 1.0;
};

struct SinusoidSpec {
  double amplitude = 1.0;
  double frequency_hz = 0.25;
};

struct TrainingDataConfig {
  PdGains gains;
  SinusoidSpec reference;
  double dt = 0.01;
  int stride = 5;              // sim steps between retained samples
  double control_noise_std = 0.0;
};

namespace detail {

inline double wrap_angle(double a) {
  while (a > 3.14159265358979323846) a -= 2.0 * 3.14159265358979323846;
  while (a < -3.14159265358979323846) a += 2.0 * 3.14159265358979323846;
  return a;
}

/// Rolls out the true field under a caller-supplied controller and collects
/// (z, f_true - f_nominal) pairs restricted to the residual rows.
inline TrainingSet collect_residual_data(
    const VectorField& true_field, const VectorField& nominal_field,
    const std::vector<int>& residual_rows, const Eigen::VectorXd& x0,
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&, Rng&)>& controller,
    const TrainingDataConfig& cfg, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("training data: N >= 1 required");
  Rng rng(seed);
  const int n = true_field.state_dim;
  const int m_in = n + true_field.control_dim;
  TrainingSet data;
  data.inputs.resize(count, m_in);
  data.targets.resize(count, static_cast<int>(residual_rows.size()));

  Eigen::VectorXd x = x0;
  int collected = 0;
  for (int k = 0; collected < count; ++k) {
    const double t = k * cfg.dt;
    Eigen::VectorXd u = controller(t, x, rng);
    if (k % cfg.stride == 0) {
      data.inputs.row(collected).head(n) = x.transpose();
      data.inputs.row(collected).tail(true_field.control_dim) = u.transpose();
      const Eigen::VectorXd resid = true_field.value(x, u) - nominal_field.value(x, u);
      for (std::size_t j = 0; j < residual_rows.size(); ++j)
        data.targets(collected, static_cast<int>(j)) = resid[residual_rows[j]];
      ++collected;
    }
    const auto step = rk4_rollout(true_field.value, x, {u}, cfg.dt, 1);
    x = step.back();
  }
  return data;
}

}  // namespace detail

/// Rows of the state derivative a residual model predicts, per system.
inline std::vector<int> cartpole_residual_rows() { return {1, 3}; }
inline std::vector<int> quadrotor_residual_rows() { return {3, 4, 5, 9, 10, 11}; }
inline std::vector<int> dubins_residual_rows() { return {0, 1, 2}; }

/// PD tracking of a sinusoidal cart reference against the true dynamics.
inline TrainingSet cartpole_training_data(const CartPoleParams& true_p,
                                          const CartPoleParams& nominal_p,
                                          const TrainingDataConfig& cfg, int count,
                                          std::uint64_t seed) {
  const auto true_field = cartpole_field(true_p);
  const auto nominal_field = cartpole_field(nominal_p);
  const double two_pi = 6.28318530717958647692;
  auto controller = [&](double t, const Eigen::VectorXd& x, Rng& rng) {
    const double w = two_pi * cfg.reference.frequency_hz;
    const double xref = cfg.reference.amplitude * std::sin(w * t);
    const double xdref = cfg.reference.amplitude * w * std::cos(w * t);
    double f = cfg.gains.kp * (xref - x[0]) + cfg.gains.kd * (xdref - x[1]);
    if (cfg.control_noise_std > 0.0) f += cfg.control_noise_std * rng.gaussian();
    return Eigen::VectorXd::Constant(1, f);
  };
  return detail::collect_residual_data(true_field, nominal_field, cartpole_residual_rows(),
                                       Eigen::VectorXd::Zero(4), controller, cfg, count, seed);
}

/// Crude cascade controller flying circles at constant altitude.
inline TrainingSet quadrotor_training_data(const QuadrotorParams& true_p,
                                           const QuadrotorParams& nominal_p,
                                           const TrainingDataConfig& cfg, int count,
                                           std::uint64_t seed) {
  const auto true_field = quadrotor_field(true_p);
  const auto nominal_field = quadrotor_field(nominal_p);
  const double two_pi = 6.28318530717958647692;
  const QuadrotorParams ctl = nominal_p;  // controller only knows the nominal plant
  auto controller = [&, ctl](double t, const Eigen::VectorXd& x, Rng& rng) {
    const double w = two_pi * cfg.reference.frequency_hz;
    const double a = cfg.reference.amplitude;
    const double xr = a * std::sin(w * t), yr = a * (std::cos(w * t) - 1.0);
    const double xdr = a * w * std::cos(w * t), ydr = -a * w * std::sin(w * t);
    const double ax = cfg.gains.kp * (xr - x[0]) + cfg.gains.kd * (xdr - x[3]);
    const double ay = cfg.gains.kp * (yr - x[1]) + cfg.gains.kd * (ydr - x[4]);
    const double az = cfg.gains.kp * (0.0 - x[2]) + cfg.gains.kd * (0.0 - x[5]);

    const double cphi = std::cos(x[6]), cth = std::cos(x[7]);
    double thrust = ctl.mass * (ctl.gravity - az) / std::max(0.5, cphi * cth);
    thrust = std::max(0.0, thrust);

    const double clamp_att = 0.35;
    const double theta_des = std::clamp(ax / ctl.gravity, -clamp_att, clamp_att);
    const double phi_des = std::clamp(-ay / ctl.gravity, -clamp_att, clamp_att);
    const double kp_att = 100.0, kd_att = 20.0;
    const double mphi = ctl.jx * (kp_att * (phi_des - x[6]) - kd_att * x[9]);
    const double mtheta = ctl.jy * (kp_att * (theta_des - x[7]) - kd_att * x[10]);
    const double mpsi = ctl.jz * (kp_att * (0.0 - x[8]) - kd_att * x[11]);

    const double l = ctl.arm_length;
    Eigen::VectorXd u(4);
    u[0] = thrust / 4.0 + mtheta / (2.0 * l) - mpsi / (4.0 * 0.05 * l);
    u[1] = thrust / 4.0 - mphi / (2.0 * l) + mpsi / (4.0 * 0.05 * l);
    u[2] = thrust / 4.0 - mtheta / (2.0 * l) - mpsi / (4.0 * 0.05 * l);
    u[3] = thrust / 4.0 + mphi / (2.0 * l) + mpsi / (4.0 * 0.05 * l);
    if (cfg.control_noise_std > 0.0)
      for (int i = 0; i < 4; ++i) u[i] += cfg.control_noise_std * rng.gaussian();
    u = u.cwiseMax(0.0).eval();
    return u;
  };
  return detail::collect_residual_data(true_field, nominal_field, quadrotor_residual_rows(),
                                       Eigen::VectorXd::Zero(12), controller, cfg, count, seed);
}

/// Pursuit of a sinusoid-perturbed chord between two waypoints.
inline TrainingSet dubins_training_data(const DubinsParams& true_p, const DubinsParams& nominal_p,
                                        const Eigen::Vector2d& start, const Eigen::Vector2d& goal,
                                        const TrainingDataConfig& cfg, int count,
                                        std::uint64_t seed) {
  const auto true_field = dubins_field(true_p);
  const auto nominal_field = dubins_field(nominal_p);
  const Eigen::Vector2d chord = goal - start;
  const double len = chord.norm();
  const Eigen::Vector2d dir = chord / len;
  const Eigen::Vector2d perp(-dir.y(), dir.x());
  const double two_pi = 6.28318530717958647692;

  auto controller = [&](double t, const Eigen::VectorXd& x, Rng& rng) {
    const double w = two_pi * cfg.reference.frequency_hz;
    const double along = std::fmod(0.8 * t, len);
    const Eigen::Vector2d ref =
        start + along * dir + cfg.reference.amplitude * std::sin(w * t) * perp;
    const Eigen::Vector2d delta = ref - x.head(2);
    const double heading_err = detail::wrap_angle(std::atan2(delta.y(), delta.x()) - x[2]);
    Eigen::VectorXd u(2);
    u[0] = std::clamp(cfg.gains.kp * delta.norm(), 0.0, 3.0);
    u[1] = std::clamp(4.0 * cfg.gains.kd * heading_err, -2.0, 2.0);
    if (cfg.control_noise_std > 0.0) {
      u[0] = std::max(0.0, u[0] + cfg.control_noise_std * rng.gaussian());
      u[1] += cfg.control_noise_std * rng.gaussian();
    }
    return u;
  };
  Eigen::VectorXd x0(3);
  x0 << start.x(), start.y(), std::atan2(dir.y(), dir.x());
  return detail::collect_residual_data(true_field, nominal_field, dubins_residual_rows(), x0,
                                       controller, cfg, count, seed);
}

}  // namespace mppc

#endif  // MPPC_DYNAMICS_HPP
