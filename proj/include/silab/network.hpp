// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "silab/data.hpp"
#include "silab/errors.hpp"
#include "silab/flows.hpp"

namespace silab {

/// Two-layer ReLU predictor y(x) = sum_j a_j relu(<W_j, x> + b_j).
struct TwoLayerNet {
  Eigen::MatrixXd weights;  // m x d, one direction per row
  Eigen::VectorXd outer;    // m second-layer coefficients
  Eigen::VectorXd biases;   // m

  int width() const { return static_cast<int>(weights.rows()); }
  int dim() const { return static_cast<int>(weights.cols()); }
};

double predict(const TwoLayerNet& net, const Eigen::VectorXd& x);
Eigen::VectorXd predict(const TwoLayerNet& net, const Eigen::MatrixXd& inputs);

struct TrainConfig {
  int m = 512;
  /// Bias range; negative selects sqrt(ln(n d)).
  double delta = -1.0;
  /// Ridge weight; negative selects 0.1 (m sigma^2 + m eps_dir + 1) where
  /// eps_dir = 1 - achieved stage-1 alignment.
  double lambda = -1.0;
  /// Second-layer horizon; negative selects ln(1e3) / lambda.
  double t_prime = -1.0;
  /// Second-layer step; negative selects 1 / (lambda_max(Phi^T Phi / n) + lambda).
  double dt_a = -1.0;
  FlowKind stage1_kind = FlowKind::empirical_preconditioned;
  FlowConfig stage1;
  long n = 4096;
  /// Unlabeled pool for the covariance estimate; negative selects n.
  long n_unlabeled = -1;
  std::uint64_t seed = 1;
};

struct Stage1Result {
  Eigen::VectorXd direction;  // ||Sigma_hat^{1/2} direction|| = 1
  FlowTrace trace;
  double alignment = 0.0;  // final transformed alignment (NaN without truth)
};

/// Stage 1: run the configured empirical flow from a conditioned uniform
/// init and normalize the endpoint to unit transformed norm. truth, when
/// given, conditions the init sign and provides alignment stopping.
Stage1Result stage1_train(const Dataset& data, const GeneralCovariance& sigma_hat,
                          const TrainConfig& config, const SingleIndexTask* truth);

/// i.i.d. Unif(-delta, delta), deterministic per seed.
Eigen::VectorXd sample_biases(int m, double delta, std::uint64_t seed);

struct Stage2Result {
  Eigen::VectorXd outer;        // Euler endpoint a^{T'}
  Eigen::VectorXd outer_exact;  // closed-form ridge minimizer a*
  std::vector<double> objective;  // ridge objective per recorded step
  double lambda = 0.0;
  double t_prime = 0.0;
  double dt = 0.0;
};

/// Stage 2: Euler-discretized gradient flow on
/// (1/2n) ||Phi a - y||^2 + (lambda/2) ||a||^2 from a_j = 1/m, with
/// Phi_ij = relu(<W_j, x_i> + b_j). Raises InstabilityError when
/// dt (lambda_max(Phi^T Phi / n) + lambda) >= 2.
Stage2Result stage2_train(const TwoLayerNet& net, const Dataset& data, double lambda,
                          double t_prime, double dt);

struct TrainResult {
  TwoLayerNet net;
  FlowTrace stage1_trace;
  double stage1_alignment = 0.0;
  Eigen::VectorXd outer_exact;
  std::vector<double> stage2_objective;
  double delta = 0.0;
  double lambda = 0.0;
  double t_prime = 0.0;
};

/// Layer-wise training: stage-1 direction recovery, replication across all
/// m rows, uniform biases, ridge-regularized second-layer flow.
TrainResult train_two_layer(const SingleIndexTask& task, const Dataset& data,
                            const TrainConfig& config);

/// Monte-Carlo mean of (y_hat - y)^2 on n_test fresh samples from the task.
/// The draw is independent of sample_dataset streams for the same seed.
double test_risk(const TwoLayerNet& net, const SingleIndexTask& task, long n_test,
                 std::uint64_t seed);

/// JSON round trip; weights stored row-major.
std::string net_to_json(const TwoLayerNet& net, std::uint64_t seed,
                        const std::string& config_digest);
TwoLayerNet net_from_json(const std::string& text);

}  // namespace silab
