#ifndef MPPC_SSGP_HPP
#define MPPC_SSGP_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

#include "mppc/gp.hpp"
#include "mppc/rng.hpp"

namespace mppc {

/// Random Fourier frequencies for the SE kernel: columns of `frequencies`
/// are drawn i.i.d. from N(0, W^{-1}), i.e. component j ~ N(0, 1/l_j^2).
struct SpectralBasis {
  int num_features = 0;         // r
  Eigen::MatrixXd frequencies;  // d x r
  double signal_std = 1.0;
  double noise_std = 0.1;
  std::uint64_t seed = 0;

  int input_dim() const { return static_cast<int>(frequencies.rows()); }
  int map_dim() const { return 2 * num_features; }
};

inline SpectralBasis sample_basis(const KernelHyperparams& hp, int num_features,
                                  std::uint64_t seed) {
  if (num_features < 1) throw std::invalid_argument("sample_basis: r >= 1 required");
  hp.validate();
  const int d = static_cast<int>(hp.lengthscales.size());
  SpectralBasis basis;
  basis.num_features = num_features;
  basis.signal_std = hp.signal_std;
  basis.noise_std = hp.noise_std;
  basis.seed = seed;
  basis.frequencies.resize(d, num_features);
  Rng rng(seed);
  for (int c = 0; c < num_features; ++c)
    for (int i = 0; i < d; ++i)
      basis.frequencies(i, c) = rng.gaussian() / hp.lengthscales[i];
  return basis;
}

/// phi(z) = (sigma_s / sqrt(r)) [cos(Omega^T z); sin(Omega^T z)], a 2r-vector
/// with ||phi(z)||^2 = sigma_s^2 for every z.
inline Eigen::VectorXd feature_map(const SpectralBasis& basis, const Eigen::VectorXd& z) {
  if (z.size() != basis.input_dim())
    throw std::invalid_argument("feature_map: input dimension mismatch");
  const int r = basis.num_features;
  const double scale = basis.signal_std / std::sqrt(double(r));
  const Eigen::VectorXd proj = basis.frequencies.transpose() * z;
  Eigen::VectorXd phi(2 * r);
  phi.head(r) = scale * proj.array().cos();
  phi.tail(r) = scale * proj.array().sin();
  return phi;
}

/// d phi / d z, a 2r x d matrix.
inline Eigen::MatrixXd feature_map_jacobian(const SpectralBasis& basis,
                                            const Eigen::VectorXd& z) {
  const int r = basis.num_features;
  const double scale = basis.signal_std / std::sqrt(double(r));
  const Eigen::VectorXd proj = basis.frequencies.transpose() * z;
  Eigen::MatrixXd jac(2 * r, basis.input_dim());
  for (int i = 0; i < r; ++i) {
    jac.row(i) = -scale * std::sin(proj[i]) * basis.frequencies.col(i).transpose();
    jac.row(r + i) = scale * std::cos(proj[i]) * basis.frequencies.col(i).transpose();
  }
  return jac;
}

namespace detail {

/// In-place rank-1 update of an upper-triangular Cholesky factor:
/// R^T R + v v^T  ->  Rnew^T Rnew  (LINPACK-style Givens sweep).
/// Returns false if a nonpositive or non-finite diagonal appears.
inline bool chol_rank1_update(Eigen::MatrixXd& r_upper, Eigen::VectorXd v) {
  const int n = static_cast<int>(r_upper.rows());
  for (int k = 0; k < n; ++k) {
    const double rkk = r_upper(k, k);
    if (!(rkk > 0.0) || !std::isfinite(rkk)) return false;
    const double rad = std::hypot(rkk, v[k]);
    const double c = rad / rkk;
    const double s = v[k] / rkk;
    r_upper(k, k) = rad;
    if (!(rad > 0.0) || !std::isfinite(rad)) return false;
    for (int j = k + 1; j < n; ++j) {
      r_upper(k, j) = (r_upper(k, j) + s * v[j]) / c;
      v[j] = c * v[j] - s * r_upper(k, j);
    }
  }
  return true;
}

}  // namespace detail

/// Sparse Spectrum GP posterior state over a shared basis. The information
/// matrix A = Phi Phi^T + sigma_n^2 I is held as its upper Cholesky factor R,
/// the feature-target accumulator b = Phi Y drives the weight solve
/// w = (R^T R)^{-1} b, and the forgetting factor governs the online
/// recurrence A <- lambda A + (1 - lambda) phi phi^T.
class SsgpState {
 public:
  SsgpState() = default;

  /// Batch posterior. N = 0 is the pure-prior start (A = sigma_n^2 I, w = 0).
  static SsgpState batch_fit(const TrainingSet& data, const SpectralBasis& basis,
                             double forgetting = 0.999) {
    if (forgetting <= 0.0 || forgetting > 1.0)
      throw std::invalid_argument("SsgpState: forgetting factor must lie in (0, 1]");
    SsgpState st;
    st.basis_ = basis;
    st.forgetting_ = forgetting;
    const int dim = basis.map_dim();
    const int n = static_cast<int>(data.inputs.rows());
    const int m = data.targets.cols() > 0 ? static_cast<int>(data.targets.cols()) : 1;
    const double noise2 = basis.noise_std * basis.noise_std;

    Eigen::MatrixXd a = noise2 * Eigen::MatrixXd::Identity(dim, dim);
    st.accumulator_ = Eigen::MatrixXd::Zero(dim, m);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd phi = feature_map(basis, data.inputs.row(i).transpose());
      a.selfadjointView<Eigen::Lower>().rankUpdate(phi);
      st.accumulator_ += phi * data.targets.row(i);
    }
    a.triangularView<Eigen::StrictlyUpper>() =
        a.triangularView<Eigen::StrictlyLower>().transpose();
    st.chol_upper_ = gp_chol_upper(a);
    st.samples_seen_ = n;
    st.refresh_weights();
    return st;
  }

  const SpectralBasis& basis() const { return basis_; }
  double forgetting() const { return forgetting_; }
  long samples_seen() const { return samples_seen_; }
  int output_dim() const { return static_cast<int>(accumulator_.cols()); }
  long rebuild_count() const { return rebuild_count_; }
  bool weights_current() const { return weights_current_; }
  const Eigen::MatrixXd& chol_upper() const { return chol_upper_; }
  const Eigen::MatrixXd& accumulator() const { return accumulator_; }
  const Eigen::MatrixXd& weights() const { return weights_; }

  /// One observation: A <- lambda A + (1-lambda) phi phi^T realized as a
  /// sqrt(lambda) scaling of R plus a rank-1 update with sqrt(1-lambda) phi;
  /// b <- lambda b + (1-lambda) phi y^T. Weights go stale until
  /// refresh_weights(). lambda = 1 is an exact fixed point of both
  /// equations, so the state is left untouched.
  void online_update(const Eigen::VectorXd& z, const Eigen::VectorXd& y) {
    require_initialized();
    if (!z.allFinite() || !y.allFinite())
      throw std::invalid_argument("online_update: non-finite sample");
    if (y.size() != output_dim())
      throw std::invalid_argument("online_update: target dimension mismatch");
    ++samples_seen_;
    if (forgetting_ == 1.0) return;

    const Eigen::VectorXd phi = feature_map(basis_, z);
    Eigen::MatrixXd r_trial = std::sqrt(forgetting_) * chol_upper_;
    if (detail::chol_rank1_update(r_trial, std::sqrt(1.0 - forgetting_) * phi)) {
      chol_upper_ = std::move(r_trial);
    } else {
      // Degenerate factor: rebuild from the dense information matrix.
      Eigen::MatrixXd a = forgetting_ * (chol_upper_.transpose() * chol_upper_);
      a.selfadjointView<Eigen::Lower>().rankUpdate(phi, 1.0 - forgetting_);
      a.triangularView<Eigen::StrictlyUpper>() =
          a.triangularView<Eigen::StrictlyLower>().transpose();
      chol_upper_ = gp_chol_upper(a);
      ++rebuild_count_;
    }
    accumulator_ = forgetting_ * accumulator_ + (1.0 - forgetting_) * (phi * y.transpose());
    weights_current_ = false;
  }

  /// Two triangular solves of (R^T R) w = b. Lazy by design: call once per
  /// batch of updates.
  void refresh_weights() {
    require_initialized();
    weights_ = chol_upper_.transpose().triangularView<Eigen::Lower>().solve(accumulator_);
    weights_ = chol_upper_.triangularView<Eigen::Upper>().solve(weights_);
    weights_current_ = true;
  }

  struct Prediction {
    Eigen::VectorXd mean;
    double variance = 0.0;  // shared across output dimensions
  };

  /// Posterior mean only; skips the variance solve.
  Eigen::VectorXd predict_mean(const Eigen::VectorXd& z) const {
    require_initialized();
    if (!weights_current_)
      throw std::logic_error("SsgpState::predict_mean: weights stale, call refresh_weights()");
    return weights_.transpose() * feature_map(basis_, z);
  }

  Prediction predict(const Eigen::VectorXd& z) const {
    require_initialized();
    if (!weights_current_)
      throw std::logic_error("SsgpState::predict: weights stale, call refresh_weights()");
    const Eigen::VectorXd phi = feature_map(basis_, z);
    Prediction out;
    out.mean = weights_.transpose() * phi;
    const Eigen::VectorXd u =
        chol_upper_.transpose().triangularView<Eigen::Lower>().solve(phi);
    const double noise2 = basis_.noise_std * basis_.noise_std;
    out.variance = noise2 * (1.0 + u.squaredNorm());
    return out;
  }

  /// d mean / d z as an m x d matrix: w^T dphi/dz.
  Eigen::MatrixXd predict_mean_gradient(const Eigen::VectorXd& z) const {
    require_initialized();
    if (!weights_current_)
      throw std::logic_error("SsgpState::predict_mean_gradient: weights stale");
    return weights_.transpose() * feature_map_jacobian(basis_, z);
  }

 private:
  static Eigen::MatrixXd gp_chol_upper(const Eigen::MatrixXd& a) {
    const auto llt = detail::robust_llt(a);
    return Eigen::MatrixXd(llt.matrixU());
  }

  void require_initialized() const {
    if (chol_upper_.size() == 0)
      throw std::logic_error("SsgpState: state not initialized (batch_fit first)");
  }

  SpectralBasis basis_;
  Eigen::MatrixXd chol_upper_;   // R, 2r x 2r
  Eigen::MatrixXd accumulator_;  // b, 2r x m
  Eigen::MatrixXd weights_;      // w, 2r x m
  double forgetting_ = 0.999;
  long samples_seen_ = 0;
  long rebuild_count_ = 0;
  bool weights_current_ = false;
};

}  // namespace mppc

#endif  // MPPC_SSGP_HPP
