#ifndef MPPC_GP_HPP
#define MPPC_GP_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "mppc/rng.hpp"

namespace mppc {

/// Squared-exponential kernel hyperparameters for one scalar output.
/// Lengthscales are stored directly; the ARD quadratic form uses
/// W = diag(1 / l_j^2).
struct KernelHyperparams {
  double signal_std = 1.0;
  double noise_std = 0.1;
  Eigen::VectorXd lengthscales;

  Eigen::VectorXd inv_sq_lengthscales() const {
    return lengthscales.array().square().inverse().matrix();
  }

  void validate() const {
    if (!(signal_std > 0.0)) throw std::invalid_argument("signal_std must be > 0");
    if (noise_std < 0.0) throw std::invalid_argument("noise_std must be >= 0");
    if ((lengthscales.array() <= 0.0).any())
      throw std::invalid_argument("lengthscales must be > 0");
  }
};

/// Inputs are state-control rows z_i = (x_i, u_i); column j of `targets`
/// holds the observations of output dimension j. One independent scalar GP
/// is fitted per target column.
struct TrainingSet {
  Eigen::MatrixXd inputs;   // N x d
  Eigen::MatrixXd targets;  // N x m
};

inline double kernel_eval(const Eigen::VectorXd& zi, const Eigen::VectorXd& zj,
                          const KernelHyperparams& hp) {
  if (zi.size() != zj.size() || zi.size() != hp.lengthscales.size())
    throw std::invalid_argument("kernel_eval: dimension mismatch");
  const Eigen::ArrayXd delta = (zi - zj).array() / hp.lengthscales.array();
  return hp.signal_std * hp.signal_std * std::exp(-0.5 * delta.square().sum());
}

namespace detail {

/// Cholesky with escalating diagonal jitter. Starts at 1e-10, grows x10 up
/// to 1e-4 of the mean diagonal, then fails hard.
inline Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd a, double* jitter_used = nullptr) {
  const double mean_diag = a.diagonal().mean();
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    if (jitter_used) *jitter_used = 0.0;
    return llt;
  }
  double jitter = 1e-10;
  const double cap = 1e-4 * std::max(mean_diag, 1e-300);
  while (jitter <= cap) {
    Eigen::MatrixXd aj = a;
    aj.diagonal().array() += jitter;
    llt.compute(aj);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter;
      return llt;
    }
    jitter *= 10.0;
  }
  throw std::runtime_error("robust_llt: matrix not positive definite after jitter escalation");
}

}  // namespace detail

/// Exact GP regressor with one independent SE-kernel GP per output column.
class GpModel {
 public:
  GpModel() = default;

  static GpModel fit(const TrainingSet& data, const std::vector<KernelHyperparams>& hp) {
    if (data.inputs.rows() < 1) throw std::invalid_argument("GpModel::fit: N >= 1 required");
    if (static_cast<int>(hp.size()) != data.targets.cols())
      throw std::invalid_argument("GpModel::fit: one hyperparameter set per output column");
    GpModel model;
    model.inputs_ = data.inputs;
    model.hp_ = hp;
    const int n = static_cast<int>(data.inputs.rows());
    const int m = static_cast<int>(data.targets.cols());
    model.chol_.reserve(m);
    model.alpha_.resize(n, m);
    for (int j = 0; j < m; ++j) {
      hp[j].validate();
      if (hp[j].lengthscales.size() != data.inputs.cols())
        throw std::invalid_argument("GpModel::fit: lengthscale dimension mismatch");
      Eigen::MatrixXd ky = gram(data.inputs, hp[j]);
      ky.diagonal().array() += hp[j].noise_std * hp[j].noise_std;
      model.chol_.push_back(detail::robust_llt(std::move(ky)));
      model.alpha_.col(j) = model.chol_.back().solve(data.targets.col(j));
    }
    model.targets_ = data.targets;
    return model;
  }

  bool fitted() const { return !chol_.empty(); }
  int input_dim() const { return static_cast<int>(inputs_.cols()); }
  int output_dim() const { return static_cast<int>(chol_.size()); }
  const Eigen::MatrixXd& training_inputs() const { return inputs_; }
  const Eigen::MatrixXd& training_targets() const { return targets_; }
  const std::vector<KernelHyperparams>& hyperparams() const { return hp_; }

  struct Prediction {
    Eigen::VectorXd mean;
    Eigen::VectorXd variance;
  };

  /// Posterior mean only; skips the variance back-solves.
  Eigen::VectorXd predict_mean(const Eigen::VectorXd& z) const {
    require_fitted();
    const int m = output_dim();
    Eigen::VectorXd mean(m);
    for (int j = 0; j < m; ++j) mean[j] = cross_kernel(z, j).dot(alpha_.col(j));
    return mean;
  }

  Prediction predict(const Eigen::VectorXd& z) const {
    require_fitted();
    const int m = output_dim();
    Prediction out;
    out.mean.resize(m);
    out.variance.resize(m);
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd kstar = cross_kernel(z, j);
      out.mean[j] = kstar.dot(alpha_.col(j));
      const Eigen::VectorXd v =
          chol_[j].matrixL().solve(kstar);
      const double prior = hp_[j].signal_std * hp_[j].signal_std;
      double var = prior - v.squaredNorm();
      if (var < 0.0) var = 0.0;
      out.variance[j] = var;
    }
    return out;
  }

  /// d mean_j / d z as row j of the returned m x d matrix, using
  /// d k(z, z_i) / d z = -k(z, z_i) W (z - z_i).
  Eigen::MatrixXd predict_mean_gradient(const Eigen::VectorXd& z) const {
    require_fitted();
    const int m = output_dim();
    const int d = input_dim();
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(m, d);
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd w = hp_[j].inv_sq_lengthscales();
      const Eigen::VectorXd kstar = cross_kernel(z, j);
      for (int i = 0; i < inputs_.rows(); ++i) {
        const Eigen::VectorXd diff = z - inputs_.row(i).transpose();
        grad.row(j) -= (alpha_(i, j) * kstar[i]) * (w.array() * diff.array()).matrix().transpose();
      }
    }
    return grad;
  }

 private:
  static Eigen::MatrixXd gram(const Eigen::MatrixXd& inputs, const KernelHyperparams& hp) {
    const int n = static_cast<int>(inputs.rows());
    Eigen::MatrixXd k(n, n);
    const double sig2 = hp.signal_std * hp.signal_std;
    const Eigen::MatrixXd scaled =
        inputs.array().rowwise() / hp.lengthscales.transpose().array();
    for (int i = 0; i < n; ++i) {
      k(i, i) = sig2;
      for (int j = i + 1; j < n; ++j) {
        const double d2 = (scaled.row(i) - scaled.row(j)).squaredNorm();
        k(i, j) = k(j, i) = sig2 * std::exp(-0.5 * d2);
      }
    }
    return k;
  }

  Eigen::VectorXd cross_kernel(const Eigen::VectorXd& z, int j) const {
    const int n = static_cast<int>(inputs_.rows());
    Eigen::VectorXd kstar(n);
    for (int i = 0; i < n; ++i)
      kstar[i] = kernel_eval(z, inputs_.row(i).transpose(), hp_[j]);
    return kstar;
  }

  void require_fitted() const {
    if (!fitted()) throw std::logic_error("GpModel: predict on unfitted model");
  }

  Eigen::MatrixXd inputs_;
  Eigen::MatrixXd targets_;
  std::vector<KernelHyperparams> hp_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_;
  Eigen::MatrixXd alpha_;  // N x m
};

struct HyperTrainResult {
  std::vector<KernelHyperparams> hyperparams;
  std::vector<double> log_marginal_likelihood;
  bool degraded = false;  // no restart managed an accepted ascent step
};

namespace detail {

struct LmlEval {
  double value;
  Eigen::VectorXd grad;  // d/d(log l_1..d, log sigma_s, log sigma_n)
};

inline LmlEval log_marginal_likelihood(const Eigen::MatrixXd& inputs,
                                       const Eigen::VectorXd& y,
                                       const KernelHyperparams& hp) {
  const int n = static_cast<int>(inputs.rows());
  const int d = static_cast<int>(inputs.cols());
  const double sig2 = hp.signal_std * hp.signal_std;
  const Eigen::MatrixXd scaled =
      inputs.array().rowwise() / hp.lengthscales.transpose().array();

  Eigen::MatrixXd kf(n, n);
  for (int i = 0; i < n; ++i) {
    kf(i, i) = sig2;
    for (int j = i + 1; j < n; ++j) {
      const double d2 = (scaled.row(i) - scaled.row(j)).squaredNorm();
      kf(i, j) = kf(j, i) = sig2 * std::exp(-0.5 * d2);
    }
  }
  Eigen::MatrixXd ky = kf;
  ky.diagonal().array() += hp.noise_std * hp.noise_std;

  const auto llt = robust_llt(std::move(ky));
  const Eigen::VectorXd alpha = llt.solve(y);

  double logdet = 0.0;
  for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixLLT()(i, i));

  LmlEval out;
  out.value = -0.5 * y.dot(alpha) - logdet - 0.5 * n * std::log(2.0 * 3.14159265358979323846);

  // G = alpha alpha^T - Ky^{-1};  dLML/dtheta = 0.5 tr(G dKy/dtheta)
  Eigen::MatrixXd g = alpha * alpha.transpose();
  g -= llt.solve(Eigen::MatrixXd::Identity(n, n));

  out.grad.resize(d + 2);
  for (int l = 0; l < d; ++l) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double delta = scaled(i, l) - scaled(j, l);
        acc += g(i, j) * kf(i, j) * delta * delta;
      }
    out.grad[l] = 0.5 * acc;
  }
  out.grad[d] = (g.array() * kf.array()).sum();  // 0.5 tr(G * 2 Kf)
  out.grad[d + 1] = hp.noise_std * hp.noise_std * g.trace();
  return out;
}

inline KernelHyperparams hp_from_log(const Eigen::VectorXd& theta, int d) {
  KernelHyperparams hp;
  hp.lengthscales = theta.head(d).array().exp().matrix();
  hp.signal_std = std::exp(theta[d]);
  hp.noise_std = std::exp(theta[d + 1]);
  return hp;
}

}  // namespace detail

/// Trains SE-kernel hyperparameters per output dimension by maximizing the
/// log marginal likelihood over log-parameters: gradient ascent with
/// backtracking, best of `restarts` seeded random initializations around
/// `init`.
inline HyperTrainResult train_hyperparams(const TrainingSet& data,
                                          const KernelHyperparams& init, int restarts,
                                          std::uint64_t seed = 0,
                                          int max_iterations = 120) {
  if (data.inputs.rows() < 2)
    throw std::invalid_argument("train_hyperparams: N >= 2 required");
  init.validate();
  const int d = static_cast<int>(data.inputs.cols());
  const int m = static_cast<int>(data.targets.cols());
  if (init.lengthscales.size() != d)
    throw std::invalid_argument("train_hyperparams: init lengthscale dimension mismatch");

  Eigen::VectorXd theta0(d + 2);
  theta0.head(d) = init.lengthscales.array().log().matrix();
  theta0[d] = std::log(init.signal_std);
  theta0[d + 1] = std::log(std::max(init.noise_std, 1e-6));

  const double log_lo = std::log(1e-4), log_hi = std::log(1e6);
  Rng rng(seed);

  HyperTrainResult result;
  result.hyperparams.resize(m);
  result.log_marginal_likelihood.resize(m);
  bool any_accepted_overall = false;

  for (int j = 0; j < m; ++j) {
    const Eigen::VectorXd y = data.targets.col(j);
    double best_val = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_theta = theta0;

    for (int rs = 0; rs < std::max(1, restarts); ++rs) {
      Eigen::VectorXd theta = theta0;
      if (rs > 0)
        for (int i = 0; i < theta.size(); ++i) theta[i] += 0.5 * rng.gaussian();
      theta = theta.cwiseMax(log_lo).cwiseMin(log_hi);

      detail::LmlEval cur;
      try {
        cur = detail::log_marginal_likelihood(data.inputs, y, detail::hp_from_log(theta, d));
      } catch (const std::runtime_error&) {
        continue;
      }

      double step = 0.1;
      for (int it = 0; it < max_iterations; ++it) {
        const Eigen::VectorXd dir = cur.grad.normalized();
        if (!dir.allFinite() || cur.grad.norm() < 1e-7) break;
        bool accepted = false;
        for (int bt = 0; bt < 25; ++bt) {
          Eigen::VectorXd trial =
              (theta + step * dir).cwiseMax(log_lo).cwiseMin(log_hi);
          detail::LmlEval cand;
          try {
            cand = detail::log_marginal_likelihood(data.inputs, y,
                                                   detail::hp_from_log(trial, d));
          } catch (const std::runtime_error&) {
            step *= 0.5;
            continue;
          }
          if (cand.value > cur.value + 1e-12) {
            theta = trial;
            cur = cand;
            accepted = true;
            any_accepted_overall = true;
            step = std::min(step * 2.0, 2.0);
            break;
          }
          step *= 0.5;
        }
        if (!accepted || step < 1e-10) break;
      }
      if (cur.value > best_val) {
        best_val = cur.value;
        best_theta = theta;
      }
    }

    result.hyperparams[j] = detail::hp_from_log(best_theta, d);
    result.log_marginal_likelihood[j] = best_val;
  }
  result.degraded = !any_accepted_overall;
  return result;
}

}  // namespace mppc

#endif  // MPPC_GP_HPP
