// SPDX-License-Identifier: Apache-2.0
#include "silab/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "silab/errors.hpp"
#include "silab/io.hpp"
#include "silab/rng.hpp"

namespace silab {

Geometry construct_geometry(int d, double r1, double r2, std::uint64_t seed) {
  if (d < 2) throw ArgumentError("construct_geometry: need d >= 2");
  if (!(r1 >= 0.0 && r1 <= 0.5)) throw ArgumentError("construct_geometry: r1 must lie in [0, 1/2]");
  if (!(r2 >= 0.0 && r2 <= 1.0)) throw ArgumentError("construct_geometry: r2 must lie in [0, 1]");
  Rng rng(seed);
  Geometry g;
  g.r1 = r1;
  g.r2 = r2;
  g.seed = seed;
  g.kappa = std::pow(double(d), r2);
  g.u = rng.child("u").sphere_vector(d);
  const double cos_a = std::pow(double(d), -r1);
  const double sin_a = std::sqrt(std::max(0.0, 1.0 - cos_a * cos_a));
  Rng aux = rng.child("theta");
  Eigen::VectorXd v;
  for (;;) {
    v = aux.normal_vector(d);
    v -= g.u.dot(v) * g.u;
    const double n = v.norm();
    if (n > 1e-12) {
      v /= n;
      break;
    }
  }
  g.theta = cos_a * g.u + sin_a * v;
  g.theta.normalize();
  return g;
}

SingleIndexTask make_task(const Geometry& geom, const std::string& link_name,
                          double noise_sigma) {
  if (!(noise_sigma >= 0.0)) throw ArgumentError("make_task: noise_sigma must be nonnegative");
  SingleIndexTask task;
  task.u = geom.u;
  task.link = make_link(link_name);
  const int nodes = std::max(40, 22 + static_cast<int>(std::ceil(task.link.growth_exponent / 2.0)) + 2);
  task.link_series = hermite_coeffs(task.link, 20, nodes);
  task.noise_sigma = noise_sigma;
  task.covariance = SpikedCovariance(static_cast<int>(geom.u.size()), geom.kappa, geom.theta);
  return task;
}

Dataset sample_dataset(const SingleIndexTask& task, int n, int n_unlabeled,
                       std::uint64_t seed) {
  if (n < 0 || n_unlabeled < 0) throw ArgumentError("sample_dataset: negative sample count");
  const int d = static_cast<int>(task.u.size());
  const double target_norm = cov_power_apply(task.covariance, MatrixPower::half, task.u).norm();
  if (!(target_norm > 0.0)) throw NumericError("sample_dataset: degenerate target norm");

  Rng rng(seed);
  Rng xs = rng.child("inputs");
  Rng noise = rng.child("noise");
  Rng un = rng.child("unlabeled");

  Dataset data;
  data.seed = seed;
  data.inputs.resize(n, d);
  data.responses.resize(n);
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x = cov_power_apply(task.covariance, MatrixPower::half, xs.normal_vector(d));
    data.inputs.row(i) = x.transpose();
    const double proj = task.u.dot(x) / target_norm;
    data.responses[i] = task.link.eval(proj) + task.noise_sigma * noise.normal();
  }
  data.unlabeled.resize(n_unlabeled, d);
  for (int i = 0; i < n_unlabeled; ++i) {
    data.unlabeled.row(i) =
        cov_power_apply(task.covariance, MatrixPower::half, un.normal_vector(d)).transpose();
  }
  return data;
}

GeneralCovariance estimate_covariance(const Eigen::MatrixXd& unlabeled, double eig_floor) {
  if (unlabeled.rows() < 1) {
    throw ArgumentError("estimate_covariance: no unlabeled rows to estimate from");
  }
  Eigen::MatrixXd second = unlabeled.transpose() * unlabeled / double(unlabeled.rows());
  // Symmetrize away the last-bit asymmetry of the accumulated product.
  second = ((second + second.transpose()) * 0.5).eval();
  return GeneralCovariance(std::move(second), eig_floor);
}

Eigen::VectorXd transformed_target(const SingleIndexTask& task) {
  Eigen::VectorXd ub = cov_power_apply(task.covariance, MatrixPower::half, task.u);
  const double n = ub.norm();
  if (!(n > 0.0)) throw NumericError("transformed_target: degenerate norm");
  return ub / n;
}

double alignment_bar(const Eigen::VectorXd& w, const Covariance& sigma_hat,
                     const Eigen::VectorXd& u_bar) {
  const Eigen::VectorXd sw = cov_power_apply(sigma_hat, MatrixPower::half, w);
  const double n = sw.norm();
  if (!(n > 1e-300)) throw NumericError("alignment_bar: degenerate transformed norm");
  return sw.dot(u_bar) / n;
}

Eigen::VectorXd init_first_layer(int d, std::uint64_t seed, bool condition_positive,
                                 const Covariance& sigma_hat,
                                 const Eigen::VectorXd& u_bar) {
  if (d < 1) throw ArgumentError("init_first_layer: dimension must be positive");
  if (u_bar.size() != d) throw ArgumentError("init_first_layer: u_bar has wrong dimension");
  Rng rng = Rng(seed).child("init");
  for (;;) {
    Eigen::VectorXd w = rng.sphere_vector(d);
    const double a = alignment_bar(w, sigma_hat, u_bar);
    if (a == 0.0) continue;
    if (condition_positive && a < 0.0) w = -w;
    return w;
  }
}

// ------------------------------------------------------------------ export

void save_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open for writing: " + path.string());
  const auto d = data.inputs.cols();
  out << "d,n,n_unlabeled,seed\n"
      << d << "," << data.inputs.rows() << "," << data.unlabeled.rows() << ","
      << data.seed << "\n";
  for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) out << io::fmt(data.inputs(i, j)) << ",";
    out << io::fmt(data.responses[i]) << "\n";
  }
  for (Eigen::Index i = 0; i < data.unlabeled.rows(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      out << (j ? "," : "") << io::fmt(data.unlabeled(i, j));
    }
    out << "\n";
  }
  if (!out) throw NumericError("write failed: " + path.string());
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open for reading: " + path.string());
  std::string header, counts;
  if (!std::getline(in, header) || !std::getline(in, counts)) {
    throw ArgumentError("truncated dataset file: " + path.string());
  }
  long d = 0, n = 0, nu = 0;
  unsigned long long seed = 0;
  if (std::sscanf(counts.c_str(), "%ld,%ld,%ld,%llu", &d, &n, &nu, &seed) != 4 ||
      d < 1 || n < 0 || nu < 0) {
    throw ArgumentError("malformed dataset header in " + path.string());
  }
  Dataset data;
  data.seed = seed;
  data.inputs.resize(n, d);
  data.responses.resize(n);
  data.unlabeled.resize(nu, d);
  std::string line;
  for (long i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw ArgumentError("truncated dataset rows");
    const char* p = line.c_str();
    char* end = nullptr;
    for (long j = 0; j < d; ++j) {
      data.inputs(i, j) = std::strtod(p, &end);
      if (end == p || *end != ',') throw ArgumentError("malformed dataset row");
      p = end + 1;
    }
    data.responses[i] = std::strtod(p, &end);
    if (end == p) throw ArgumentError("malformed dataset row");
  }
  for (long i = 0; i < nu; ++i) {
    if (!std::getline(in, line)) throw ArgumentError("truncated unlabeled rows");
    const char* p = line.c_str();
    char* end = nullptr;
    for (long j = 0; j < d; ++j) {
      data.unlabeled(i, j) = std::strtod(p, &end);
      if (end == p || (*end != ',' && j + 1 < d)) throw ArgumentError("malformed unlabeled row");
      p = end + 1;
    }
  }
  return data;
}

namespace {
constexpr char kMagic[8] = {'S', 'I', 'D', 'S', '0', '0', '0', '1'};
}

void save_dataset_binary(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot open for writing: " + path.string());
  out.write(kMagic, 8);
  const std::int64_t dims[3] = {data.inputs.cols(), data.inputs.rows(), data.unlabeled.rows()};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(&data.seed), 8);
  out.write(reinterpret_cast<const char*>(data.inputs.data()),
            static_cast<std::streamsize>(sizeof(double) * data.inputs.size()));
  out.write(reinterpret_cast<const char*>(data.responses.data()),
            static_cast<std::streamsize>(sizeof(double) * data.responses.size()));
  out.write(reinterpret_cast<const char*>(data.unlabeled.data()),
            static_cast<std::streamsize>(sizeof(double) * data.unlabeled.size()));
  if (!out) throw NumericError("write failed: " + path.string());
}

Dataset load_dataset_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArgumentError("cannot open for reading: " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw ArgumentError("not a dataset file: " + path.string());
  }
  std::int64_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  Dataset data;
  in.read(reinterpret_cast<char*>(&data.seed), 8);
  if (!in || dims[0] < 1 || dims[1] < 0 || dims[2] < 0) {
    throw ArgumentError("malformed dataset file: " + path.string());
  }
  data.inputs.resize(dims[1], dims[0]);
  data.responses.resize(dims[1]);
  data.unlabeled.resize(dims[2], dims[0]);
  in.read(reinterpret_cast<char*>(data.inputs.data()),
          static_cast<std::streamsize>(sizeof(double) * data.inputs.size()));
  in.read(reinterpret_cast<char*>(data.responses.data()),
          static_cast<std::streamsize>(sizeof(double) * data.responses.size()));
  in.read(reinterpret_cast<char*>(data.unlabeled.data()),
          static_cast<std::streamsize>(sizeof(double) * data.unlabeled.size()));
  if (!in) throw ArgumentError("truncated dataset file: " + path.string());
  return data;
}

}  // namespace silab
