// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <Eigen/Core>

#include "silab/covariance.hpp"
#include "silab/hermite.hpp"

namespace silab {

/// Planted geometry: target direction u, spike direction theta with
/// <u, theta> = d^{-r1}, and spike strength kappa = d^{r2}.
struct Geometry {
  Eigen::VectorXd u;
  Eigen::VectorXd theta;
  double kappa = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
  std::uint64_t seed = 0;
};

/// A single-index regression task: responses depend on the input only
/// through <u, x> / ||Sigma^{1/2} u||, composed with the link, plus
/// centered Gaussian noise of standard deviation noise_sigma.
struct SingleIndexTask {
  Eigen::VectorXd u;
  LinkFunction link;
  HermiteSeries link_series;
  double noise_sigma = 0.0;
  Covariance covariance;
};

/// Labeled rows (inputs, responses) plus unlabeled rows used only for
/// covariance estimation.
struct Dataset {
  Eigen::MatrixXd inputs;     // n x d
  Eigen::VectorXd responses;  // n
  Eigen::MatrixXd unlabeled;  // n_unlabeled x d
  std::uint64_t seed = 0;
};

/// Draw the planted geometry for dimension d: u uniform on the sphere,
/// theta at angle arccos(d^{-r1}) from u, kappa = d^{r2}.
/// Requires d >= 2, r1 in [0, 1/2], r2 in [0, 1].
Geometry construct_geometry(int d, double r1, double r2, std::uint64_t seed);

/// Assemble a task from a geometry and a named link.
SingleIndexTask make_task(const Geometry& geom, const std::string& link_name,
                          double noise_sigma);

/// Sample n labeled and n_unlabeled unlabeled rows: x = Sigma^{1/2} z with
/// z standard normal, y = link(<u,x>/||Sigma^{1/2}u||) + noise.
/// Fully determined by (task, n, n_unlabeled, seed).
Dataset sample_dataset(const SingleIndexTask& task, int n, int n_unlabeled,
                       std::uint64_t seed);

/// Empirical second-moment matrix of the unlabeled rows (X^T X / n'),
/// eigendecomposed with the given floor. Errors when there are no rows.
GeneralCovariance estimate_covariance(const Eigen::MatrixXd& unlabeled,
                                      double eig_floor = -1.0);

/// The normalized transformed target Sigma^{1/2} u / ||Sigma^{1/2} u||,
/// always taken with the exact task covariance.
Eigen::VectorXd transformed_target(const SingleIndexTask& task);

/// Transformed alignment <Sigma_hat^{1/2} w, u_bar> / ||Sigma_hat^{1/2} w||.
/// Note the asymmetry: the weight is whitened with the estimate passed
/// here while u_bar comes from the exact covariance.
double alignment_bar(const Eigen::VectorXd& w, const Covariance& sigma_hat,
                     const Eigen::VectorXd& u_bar);

/// Uniform unit-sphere initialization; when condition_positive is set the
/// sign is flipped so the transformed alignment against u_bar is positive.
/// Draws with exactly zero alignment are resampled.
Eigen::VectorXd init_first_layer(int d, std::uint64_t seed, bool condition_positive,
                                 const Covariance& sigma_hat,
                                 const Eigen::VectorXd& u_bar);

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset_csv(const std::filesystem::path& path);
void save_dataset_binary(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset_binary(const std::filesystem::path& path);

}  // namespace silab
