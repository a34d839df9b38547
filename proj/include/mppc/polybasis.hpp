#ifndef MPPC_POLYBASIS_HPP
#define MPPC_POLYBASIS_HPP

#include <Eigen/Core>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>

namespace mppc {

struct LegendreEval {
  double value;
  double d1;
  double d2;
};

/// Evaluates the degree-K Legendre polynomial and its first two derivatives
/// via the three-term recurrence (n+1)P_{n+1} = (2n+1) tau P_n - n P_{n-1}.
inline LegendreEval legendre_eval(int degree, double tau) {
  if (degree < 0) throw std::invalid_argument("legendre_eval: negative degree");
  if (std::abs(tau) > 1.0 + 1e-9)
    throw std::invalid_argument("legendre_eval: tau outside [-1,1]");
  if (degree == 0) return {1.0, 0.0, 0.0};

  double p_prev = 1.0, d_prev = 0.0, dd_prev = 0.0;  // P_0
  double p = tau, d = 1.0, dd = 0.0;                 // P_1
  for (int n = 1; n < degree; ++n) {
    const double a = 2.0 * n + 1.0;
    const double p_next = (a * tau * p - n * p_prev) / (n + 1.0);
    const double d_next = (a * (p + tau * d) - n * d_prev) / (n + 1.0);
    const double dd_next = (a * (2.0 * d + tau * dd) - n * dd_prev) / (n + 1.0);
    p_prev = p;
    d_prev = d;
    dd_prev = dd;
    p = p_next;
    d = d_next;
    dd = dd_next;
  }
  return {p, d, dd};
}

/// Legendre-Gauss nodes: the K roots of P_K, ascending. Newton iteration from
/// Chebyshev-based initial guesses, step-halving safeguard, mirrored about 0
/// so the node set is exactly symmetric.
inline Eigen::VectorXd lg_nodes(int order) {
  if (order < 1 || order > 200)
    throw std::invalid_argument("lg_nodes: order must lie in [1, 200]");

  Eigen::VectorXd nodes(order);
  const int half = order / 2;
  const double pi = 3.14159265358979323846264338327950288;

  for (int i = 0; i < half; ++i) {
    // i-th root counted from tau = +1 downwards.
    double tau = std::cos(pi * (4.0 * (i + 1) - 1.0) / (4.0 * order + 2.0));
    tau *= 1.0 - 1.0 / (8.0 * order * order) + 1.0 / (8.0 * std::pow(double(order), 3));

    bool converged = false;
    for (int it = 0; it < 100; ++it) {
      const LegendreEval e = legendre_eval(order, tau);
      if (std::abs(e.value) <= 1e-12) {
        converged = true;
        break;
      }
      double step = e.value / e.d1;
      // Bisection-flavoured safeguard: halve overshooting steps.
      while (std::abs(tau - step) >= 1.0) step *= 0.5;
      tau -= step;
      if (std::abs(step) < 1e-16) {
        converged = std::abs(legendre_eval(order, tau).value) <= 1e-12;
        break;
      }
    }
    if (!converged)
      throw std::runtime_error("lg_nodes: Newton failed to converge for K=" +
                               std::to_string(order));

    nodes[order - 1 - i] = tau;
    nodes[i] = -tau;
  }
  if (order % 2 == 1) nodes[half] = 0.0;  // odd K always has the root at 0
  return nodes;
}

/// Gauss weights w_i = 2 / ((1 - tau_i^2) * P'_K(tau_i)^2).
inline Eigen::VectorXd quadrature_weights(const Eigen::VectorXd& nodes) {
  const int order = static_cast<int>(nodes.size());
  Eigen::VectorXd w(order);
  for (int i = 0; i < order; ++i) {
    const double tau = nodes[i];
    const double d1 = legendre_eval(order, tau).d1;
    w[i] = 2.0 / ((1.0 - tau * tau) * d1 * d1);
  }
  // Mirror so w_k == w_{K+1-k} bit-exactly.
  for (int i = 0; i < order / 2; ++i) w[order - 1 - i] = w[i];
  return w;
}

/// Differentiation matrix of the Gauss pseudospectral method, built on
/// g(tau) = (1 + tau) P_K(tau). Rows k = 1..K (interior nodes), columns
/// i = 0..K where column 0 belongs to the boundary node tau_0 = -1.
/// Row k applied to samples X(tau_0..tau_K) gives the derivative of their
/// degree-K interpolant at tau_k.
inline Eigen::MatrixXd differentiation_matrix(const Eigen::VectorXd& interior_nodes) {
  const int order = static_cast<int>(interior_nodes.size());
  Eigen::VectorXd all(order + 1);
  all[0] = -1.0;
  all.tail(order) = interior_nodes;

  Eigen::VectorXd gdot(order + 1), gddot(order + 1);
  for (int i = 0; i <= order; ++i) {
    const LegendreEval e = legendre_eval(order, all[i]);
    gdot[i] = e.value + (1.0 + all[i]) * e.d1;
    gddot[i] = 2.0 * e.d1 + (1.0 + all[i]) * e.d2;
  }

  Eigen::MatrixXd d(order, order + 1);
  for (int k = 1; k <= order; ++k) {
    for (int i = 0; i <= order; ++i) {
      if (k == i) {
        d(k - 1, i) = gddot[i] / (2.0 * gdot[i]);
      } else {
        d(k - 1, i) = gdot[k] / ((all[k] - all[i]) * gdot[i]);
      }
    }
  }
  return d;
}

/// Lagrange interpolation on arbitrary distinct support nodes (direct product
/// form; exactly cardinal at the support points).
inline double lagrange_interpolate(const Eigen::VectorXd& nodes,
                                   const Eigen::VectorXd& values, double tau) {
  const int n = static_cast<int>(nodes.size());
  if (values.size() != n)
    throw std::invalid_argument("lagrange_interpolate: size mismatch");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (nodes[i] == nodes[j])
        throw std::invalid_argument("lagrange_interpolate: duplicate nodes");

  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    double basis = 1.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      basis *= (tau - nodes[j]) / (nodes[i] - nodes[j]);
    }
    acc += basis * values[i];
  }
  return acc;
}

/// Row-wise variant: column c of `values` holds samples of component c.
inline Eigen::VectorXd lagrange_interpolate_rows(const Eigen::VectorXd& nodes,
                                                 const Eigen::MatrixXd& values,
                                                 double tau) {
  Eigen::VectorXd out(values.cols());
  for (int c = 0; c < values.cols(); ++c)
    out[c] = lagrange_interpolate(nodes, values.col(c), tau);
  return out;
}

/// Affine map tau in [-1,1]  <->  t in [t0, tf].
inline double time_from_tau(double tau, double t0, double tf) {
  if (!(tf > t0)) throw std::invalid_argument("time_from_tau: tf <= t0");
  return t0 + 0.5 * (tau + 1.0) * (tf - t0);
}

inline double tau_from_time(double t, double t0, double tf) {
  if (!(tf > t0)) throw std::invalid_argument("tau_from_time: tf <= t0");
  return 2.0 * (t - t0) / (tf - t0) - 1.0;
}

/// One phase worth of collocation data. Instances are immutable and cached
/// per order, so they can be shared freely across threads.
struct CollocationGrid {
  int order = 0;               // K
  Eigen::VectorXd nodes;       // tau_1..tau_K, ascending
  Eigen::VectorXd weights;     // w_1..w_K
  Eigen::MatrixXd diff;        // K x (K+1); column 0 is tau_0 = -1
  Eigen::VectorXd nodes_with_initial;  // [-1, tau_1..tau_K]

  static CollocationGrid build(int order) {
    CollocationGrid g;
    g.order = order;
    g.nodes = lg_nodes(order);
    g.weights = quadrature_weights(g.nodes);
    g.diff = differentiation_matrix(g.nodes);
    g.nodes_with_initial.resize(order + 1);
    g.nodes_with_initial[0] = -1.0;
    g.nodes_with_initial.tail(order) = g.nodes;
    return g;
  }

  static const CollocationGrid& get(int order) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<CollocationGrid>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(order);
    if (it == cache.end())
      it = cache.emplace(order, std::make_unique<CollocationGrid>(build(order))).first;
    return *it->second;
  }
};

}  // namespace mppc

#endif  // MPPC_POLYBASIS_HPP
