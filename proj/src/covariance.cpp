// SPDX-License-Identifier: Apache-2.0
#include "silab/covariance.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "silab/errors.hpp"

namespace silab {

SpikedCovariance::SpikedCovariance(int dim, double kappa_, Eigen::VectorXd theta_)
    : d(dim), kappa(kappa_), theta(std::move(theta_)) {
  if (d < 1) throw ArgumentError("SpikedCovariance: dimension must be positive");
  if (!(kappa >= 0.0) || !std::isfinite(kappa)) {
    throw ArgumentError("SpikedCovariance: kappa must be finite and nonnegative");
  }
  if (theta.size() != d) throw ArgumentError("SpikedCovariance: theta has wrong dimension");
  if (std::abs(theta.norm() - 1.0) > 1e-8) {
    throw ArgumentError("SpikedCovariance: theta must be a unit vector");
  }
}

GeneralCovariance::GeneralCovariance(Eigen::MatrixXd matrix, double eig_floor)
    : matrix_(std::move(matrix)) {
  const auto n = matrix_.rows();
  if (n < 1 || matrix_.cols() != n) {
    throw ArgumentError("GeneralCovariance: matrix must be square and nonempty");
  }
  if (!matrix_.allFinite()) throw NumericError("GeneralCovariance: non-finite entries");
  const double asym = (matrix_ - matrix_.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-10) {
    throw ArgumentError("GeneralCovariance: matrix is not symmetric (max deviation " +
                        std::to_string(asym) + ")");
  }
  eig_floor_ = eig_floor >= 0.0 ? eig_floor : 1e-10 * matrix_.trace() / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(matrix_);
  if (es.info() != Eigen::Success) {
    throw NumericError("GeneralCovariance: eigendecomposition failed");
  }
  eigenvectors_ = es.eigenvectors();
  eigenvalues_ = es.eigenvalues().cwiseMax(eig_floor_);
  const double op = eigenvalues_.cwiseAbs().maxCoeff();
  const double recon =
      (eigenvectors_ * es.eigenvalues().asDiagonal() * eigenvectors_.transpose() - matrix_)
          .cwiseAbs()
          .maxCoeff();
  if (recon > 1e-8 * std::max(op, 1e-300)) {
    throw NumericError("GeneralCovariance: reconstruction check failed");
  }
}

namespace {

double power_exponent(MatrixPower p) {
  switch (p) {
    case MatrixPower::full: return 1.0;
    case MatrixPower::half: return 0.5;
    case MatrixPower::inv_half: return -0.5;
    case MatrixPower::inverse: return -1.0;
  }
  throw ArgumentError("cov_power_apply: unknown power");
}

}  // namespace

Eigen::VectorXd cov_power_apply(const Covariance& cov, MatrixPower p,
                                const Eigen::VectorXd& v) {
  if (!v.allFinite()) throw NumericError("cov_power_apply: non-finite input vector");
  const double e = power_exponent(p);
  if (const auto* sp = std::get_if<SpikedCovariance>(&cov)) {
    if (v.size() != sp->d) throw ArgumentError("cov_power_apply: dimension mismatch");
    // Sigma^e = theta theta^T + (1+kappa)^{-e} (I - theta theta^T).
    const double bulk = std::pow(1.0 + sp->kappa, -e);
    const double t = sp->theta.dot(v);
    return bulk * v + (1.0 - bulk) * t * sp->theta;
  }
  const auto& gc = std::get<GeneralCovariance>(cov);
  if (v.size() != gc.dim()) throw ArgumentError("cov_power_apply: dimension mismatch");
  const Eigen::VectorXd proj = gc.eigenvectors().transpose() * v;
  return gc.eigenvectors() * (gc.eigenvalues().array().pow(e) * proj.array()).matrix();
}

int cov_dim(const Covariance& cov) {
  if (const auto* sp = std::get_if<SpikedCovariance>(&cov)) return sp->d;
  return std::get<GeneralCovariance>(cov).dim();
}

double cov_lambda_min(const Covariance& cov) {
  if (const auto* sp = std::get_if<SpikedCovariance>(&cov)) {
    return sp->d == 1 ? 1.0 : 1.0 / (1.0 + sp->kappa);
  }
  return std::get<GeneralCovariance>(cov).eigenvalues().minCoeff();
}

double cov_lambda_max(const Covariance& cov) {
  if (std::get_if<SpikedCovariance>(&cov)) return 1.0;
  return std::get<GeneralCovariance>(cov).eigenvalues().maxCoeff();
}

Eigen::MatrixXd cov_dense(const Covariance& cov) {
  if (const auto* sp = std::get_if<SpikedCovariance>(&cov)) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(sp->d, sp->d);
    m += sp->kappa * sp->theta * sp->theta.transpose();
    return m / (1.0 + sp->kappa);
  }
  return std::get<GeneralCovariance>(cov).matrix();
}

}  // namespace silab
