// SPDX-License-Identifier: Apache-2.0
#include "silab/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "silab/rng.hpp"

namespace silab {

namespace {

void check_net(const TwoLayerNet& net) {
  if (net.weights.rows() < 1 || net.weights.cols() < 1) {
    throw ArgumentError("network: empty weight matrix");
  }
  if (net.outer.size() != net.weights.rows() || net.biases.size() != net.weights.rows()) {
    throw ArgumentError("network: outer/bias length must match the width");
  }
}

Eigen::MatrixXd hidden_features(const TwoLayerNet& net, const Eigen::MatrixXd& inputs) {
  return ((inputs * net.weights.transpose()).rowwise() + net.biases.transpose())
      .cwiseMax(0.0);
}

}  // namespace

double predict(const TwoLayerNet& net, const Eigen::VectorXd& x) {
  check_net(net);
  if (x.size() != net.dim()) throw ArgumentError("predict: input dimension mismatch");
  return (net.weights * x + net.biases).cwiseMax(0.0).dot(net.outer);
}

Eigen::VectorXd predict(const TwoLayerNet& net, const Eigen::MatrixXd& inputs) {
  check_net(net);
  if (inputs.cols() != net.dim()) throw ArgumentError("predict: input dimension mismatch");
  return hidden_features(net, inputs) * net.outer;
}

Stage1Result stage1_train(const Dataset& data, const GeneralCovariance& sigma_hat,
                          const TrainConfig& config, const SingleIndexTask* truth) {
  if (config.stage1_kind != FlowKind::empirical_normalized &&
      config.stage1_kind != FlowKind::empirical_preconditioned) {
    throw ArgumentError("stage1_train: stage-1 flow kind must be empirical");
  }
  const int d = static_cast<int>(data.inputs.cols());
  const Covariance cov_view = sigma_hat;

  Eigen::VectorXd w0;
  Eigen::VectorXd ubar;
  if (truth) {
    ubar = transformed_target(*truth);
    w0 = init_first_layer(d, config.seed, true, cov_view, ubar);
  } else {
    w0 = Rng(config.seed).child("init").sphere_vector(d);
  }

  const FlowProblem problem =
      FlowProblem::empirical(data, sigma_hat, make_link("relu"), truth);
  FlowTrace trace = integrate_flow(config.stage1_kind, w0, problem, config.stage1);

  const Eigen::VectorXd shw = cov_power_apply(cov_view, MatrixPower::full, trace.final_w);
  const double norm = std::sqrt(trace.final_w.dot(shw));
  if (!(norm > 1e-300)) throw NumericError("stage1_train: degenerate final direction");

  Stage1Result out;
  out.direction = trace.final_w / norm;
  out.alignment = truth ? alignment_bar(out.direction, cov_view, ubar)
                        : std::numeric_limits<double>::quiet_NaN();
  out.trace = std::move(trace);
  return out;
}

Eigen::VectorXd sample_biases(int m, double delta, std::uint64_t seed) {
  if (m < 1) throw ArgumentError("sample_biases: width must be >= 1");
  if (!(delta > 0.0)) throw ArgumentError("sample_biases: delta must be positive");
  Rng rng = Rng(seed).child("bias");
  Eigen::VectorXd b(m);
  for (int j = 0; j < m; ++j) b[j] = rng.uniform(-delta, delta);
  return b;
}

Stage2Result stage2_train(const TwoLayerNet& net, const Dataset& data, double lambda,
                          double t_prime, double dt) {
  check_net(net);
  const auto n = data.inputs.rows();
  if (n < 1) throw ArgumentError("stage2_train: empty dataset");
  if (data.inputs.cols() != net.dim()) throw ArgumentError("stage2_train: dimension mismatch");
  if (!(lambda >= 0.0)) throw ArgumentError("stage2_train: lambda must be nonnegative");
  if (!(t_prime > 0.0)) throw ArgumentError("stage2_train: t_prime must be positive");

  const int m = net.width();
  const Eigen::MatrixXd phi = hidden_features(net, data.inputs);
  const Eigen::MatrixXd quad = phi.transpose() * phi / double(n);
  const Eigen::VectorXd lin = phi.transpose() * data.responses / double(n);
  const double offset = data.responses.squaredNorm() / (2.0 * double(n));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(quad);
  if (es.info() != Eigen::Success) throw NumericError("stage2_train: eigensolver failed");
  const double lam_max = es.eigenvalues().maxCoeff();

  Stage2Result out;
  out.lambda = lambda;
  out.t_prime = t_prime;
  out.dt = dt > 0.0 ? dt : 1.0 / (lam_max + lambda);
  if (out.dt * (lam_max + lambda) >= 2.0) {
    throw InstabilityError("stage2_train: dt (lambda_max + lambda) = " +
                           std::to_string(out.dt * (lam_max + lambda)) + " >= 2");
  }

  Eigen::MatrixXd ridge = quad;
  ridge.diagonal().array() += lambda;
  out.outer_exact = Eigen::LDLT<Eigen::MatrixXd>(ridge).solve(lin);

  const long steps = std::max(1L, static_cast<long>(std::ceil(t_prime / out.dt - 1e-9)));
  Eigen::VectorXd a = Eigen::VectorXd::Constant(m, 1.0 / double(m));
  out.objective.reserve(steps + 1);
  for (long k = 0; k < steps; ++k) {
    const Eigen::VectorXd ha = quad * a + lambda * a;
    out.objective.push_back(0.5 * a.dot(ha) - a.dot(lin) + offset);
    a -= out.dt * (ha - lin);
    if (!a.allFinite()) throw NumericError("stage2_train: non-finite coefficients");
  }
  out.objective.push_back(0.5 * a.dot(quad * a + lambda * a) - a.dot(lin) + offset);
  out.outer = std::move(a);
  return out;
}

TrainResult train_two_layer(const SingleIndexTask& task, const Dataset& data,
                            const TrainConfig& config) {
  if (config.m < 1) throw ArgumentError("train_two_layer: width must be >= 1");
  const GeneralCovariance sigma_hat = estimate_covariance(data.unlabeled);
  Stage1Result s1 = stage1_train(data, sigma_hat, config, &task);

  const double nd = double(data.inputs.rows()) * double(data.inputs.cols());
  const double delta = config.delta > 0.0 ? config.delta : std::sqrt(std::log(std::max(nd, 3.0)));
  const double eps_dir = std::clamp(1.0 - s1.alignment, 0.0, 2.0);
  const double sigma2 = task.noise_sigma * task.noise_sigma;
  const double lambda = config.lambda >= 0.0
                            ? config.lambda
                            : 0.1 * (config.m * sigma2 + config.m * eps_dir + 1.0);
  if (config.t_prime <= 0.0 && !(lambda > 0.0)) {
    throw ArgumentError("train_two_layer: automatic t_prime needs lambda > 0");
  }
  const double t_prime = config.t_prime > 0.0 ? config.t_prime : std::log(1e3) / lambda;

  TrainResult out;
  out.net.weights = s1.direction.transpose().replicate(config.m, 1);
  out.net.biases = sample_biases(config.m, delta, config.seed);
  out.net.outer = Eigen::VectorXd::Constant(config.m, 1.0 / double(config.m));
  Stage2Result s2 = stage2_train(out.net, data, lambda, t_prime, config.dt_a);
  out.net.outer = s2.outer;
  out.stage1_trace = std::move(s1.trace);
  out.stage1_alignment = s1.alignment;
  out.outer_exact = std::move(s2.outer_exact);
  out.stage2_objective = std::move(s2.objective);
  out.delta = delta;
  out.lambda = lambda;
  out.t_prime = t_prime;
  return out;
}

double test_risk(const TwoLayerNet& net, const SingleIndexTask& task, long n_test,
                 std::uint64_t seed) {
  check_net(net);
  if (n_test < 1) throw ArgumentError("test_risk: n_test must be >= 1");
  const int d = static_cast<int>(task.u.size());
  if (net.dim() != d) throw ArgumentError("test_risk: dimension mismatch");
  const Eigen::VectorXd su = cov_power_apply(task.covariance, MatrixPower::half, task.u);
  const double nu = su.norm();
  if (!(nu > 1e-300)) throw NumericError("test_risk: degenerate transformed target");

  Rng rng = Rng(seed).child("test");
  double acc = 0.0;
  for (long i = 0; i < n_test; ++i) {
    const Eigen::VectorXd z = rng.normal_vector(d);
    const Eigen::VectorXd x = cov_power_apply(task.covariance, MatrixPower::half, z);
    double y = task.link.eval(su.dot(z) / nu);
    if (task.noise_sigma > 0.0) y += task.noise_sigma * rng.normal();
    const double err = predict(net, x) - y;
    acc += err * err;
  }
  return acc / double(n_test);
}

std::string net_to_json(const TwoLayerNet& net, std::uint64_t seed,
                        const std::string& config_digest) {
  check_net(net);
  nlohmann::json j;
  j["width"] = net.width();
  j["dim"] = net.dim();
  std::vector<double> w(net.width() * net.dim());
  for (int i = 0; i < net.width(); ++i) {
    for (int k = 0; k < net.dim(); ++k) w[size_t(i) * net.dim() + k] = net.weights(i, k);
  }
  j["weights"] = w;
  j["outer"] = std::vector<double>(net.outer.data(), net.outer.data() + net.outer.size());
  j["biases"] = std::vector<double>(net.biases.data(), net.biases.data() + net.biases.size());
  j["seed"] = seed;
  j["config_digest"] = config_digest;
  return j.dump(1);
}

TwoLayerNet net_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("net_from_json: ") + e.what());
  }
  if (!j.contains("width") || !j.contains("dim") || !j.contains("weights") ||
      !j.contains("outer") || !j.contains("biases")) {
    throw ArgumentError("net_from_json: missing fields");
  }
  const int m = j["width"].get<int>();
  const int d = j["dim"].get<int>();
  const auto w = j["weights"].get<std::vector<double>>();
  const auto a = j["outer"].get<std::vector<double>>();
  const auto b = j["biases"].get<std::vector<double>>();
  if (m < 1 || d < 1 || w.size() != size_t(m) * size_t(d) || a.size() != size_t(m) ||
      b.size() != size_t(m)) {
    throw ArgumentError("net_from_json: inconsistent shapes");
  }
  TwoLayerNet net;
  net.weights.resize(m, d);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < d; ++k) net.weights(i, k) = w[size_t(i) * d + k];
  }
  net.outer = Eigen::Map<const Eigen::VectorXd>(a.data(), m);
  net.biases = Eigen::Map<const Eigen::VectorXd>(b.data(), m);
  return net;
}

}  // namespace silab
