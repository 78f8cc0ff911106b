// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <variant>

#include <Eigen/Core>

namespace silab {

/// Rank-one spiked covariance (I_d + kappa theta theta^T) / (1 + kappa)
/// with a unit spike direction theta. Eigenvalues are exactly 1 along
/// theta and 1/(1+kappa) on its orthogonal complement, so every matrix
/// power applies in O(d) closed form.
struct SpikedCovariance {
  int d = 0;
  double kappa = 0.0;
  Eigen::VectorXd theta;

  SpikedCovariance() = default;
  SpikedCovariance(int dim, double kappa_, Eigen::VectorXd theta_);
};

/// Dense symmetric positive semi-definite covariance with an eagerly
/// computed eigendecomposition; eigenvalues are floored so inverse powers
/// stay defined. The floor defaults to 1e-10 * trace/d.
class GeneralCovariance {
 public:
  explicit GeneralCovariance(Eigen::MatrixXd matrix, double eig_floor = -1.0);

  const Eigen::MatrixXd& matrix() const { return matrix_; }
  const Eigen::VectorXd& eigenvalues() const { return eigenvalues_; }
  const Eigen::MatrixXd& eigenvectors() const { return eigenvectors_; }
  double eig_floor() const { return eig_floor_; }
  int dim() const { return static_cast<int>(matrix_.rows()); }

 private:
  Eigen::MatrixXd matrix_;
  Eigen::MatrixXd eigenvectors_;
  Eigen::VectorXd eigenvalues_;
  double eig_floor_ = 0.0;
};

using Covariance = std::variant<SpikedCovariance, GeneralCovariance>;

/// Matrix powers supported by cov_power_apply.
enum class MatrixPower { full, half, inv_half, inverse };

/// Apply Sigma^p to a vector: O(d) closed form for the spiked model,
/// eigen-basis application for the general model.
Eigen::VectorXd cov_power_apply(const Covariance& cov, MatrixPower p,
                                const Eigen::VectorXd& v);

int cov_dim(const Covariance& cov);
double cov_lambda_min(const Covariance& cov);
double cov_lambda_max(const Covariance& cov);

/// Dense matrix form (for tests and small-d diagnostics).
Eigen::MatrixXd cov_dense(const Covariance& cov);

}  // namespace silab
