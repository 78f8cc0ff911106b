// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <Eigen/Dense>

#include "silab/covariance.hpp"
#include "silab/data.hpp"
#include "silab/errors.hpp"
#include "silab/rng.hpp"

using namespace silab;

namespace {

Eigen::MatrixXd spiked_dense(int d, double kappa, const Eigen::VectorXd& theta) {
  return (Eigen::MatrixXd::Identity(d, d) + kappa * theta * theta.transpose()) /
         (1.0 + kappa);
}

double op_norm(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("spiked closed form matches a dense eigendecomposition") {
  for (const int d : {5, 50}) {
    for (const double kappa : {0.5, 10.0}) {
      Rng rng = Rng(7).child("spiked").child(static_cast<std::uint64_t>(d));
      const Eigen::VectorXd theta = rng.sphere_vector(d);
      const Covariance spiked = SpikedCovariance(d, kappa, theta);
      const Covariance dense = GeneralCovariance(spiked_dense(d, kappa, theta));

      for (const MatrixPower p : {MatrixPower::full, MatrixPower::half,
                                  MatrixPower::inv_half, MatrixPower::inverse}) {
        const Eigen::VectorXd v = rng.normal_vector(d);
        const Eigen::VectorXd a = cov_power_apply(spiked, p, v);
        const Eigen::VectorXd b = cov_power_apply(dense, p, v);
        CHECK((a - b).norm() < 1e-10 * v.norm());
      }
    }
  }
}

TEST_CASE("spiked eigenvalues are one along the spike and damped elsewhere") {
  const int d = 12;
  const double kappa = 3.0;
  Rng rng = Rng(9).child("eigs");
  const Eigen::VectorXd theta = rng.sphere_vector(d);
  const Covariance cov = SpikedCovariance(d, kappa, theta);

  CHECK(cov_lambda_max(cov) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cov_lambda_min(cov) == doctest::Approx(1.0 / (1.0 + kappa)).epsilon(1e-14));
  CHECK(cov_dim(cov) == d);

  const Eigen::VectorXd along = cov_power_apply(cov, MatrixPower::full, theta);
  CHECK((along - theta).norm() < 1e-12);

  Eigen::VectorXd perp = rng.normal_vector(d);
  perp -= perp.dot(theta) * theta;
  perp.normalize();
  const Eigen::VectorXd damped = cov_power_apply(cov, MatrixPower::full, perp);
  CHECK((damped - perp / (1.0 + kappa)).norm() < 1e-12);
}

TEST_CASE("matrix power composition is consistent") {
  const int d = 9;
  Rng rng = Rng(11).child("powers");
  const Eigen::VectorXd theta = rng.sphere_vector(d);

  Eigen::MatrixXd noise = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j <= i; ++j) {
      noise(i, j) = noise(j, i) = 0.05 * rng.normal();
    }
  }
  const Eigen::MatrixXd dense =
      spiked_dense(d, 2.0, theta) + noise.transpose() * noise;

  for (const Covariance& cov :
       {Covariance(SpikedCovariance(d, 2.0, theta)),
        Covariance(GeneralCovariance(dense))}) {
    const Eigen::VectorXd v = rng.normal_vector(d);
    const Eigen::VectorXd half_twice = cov_power_apply(
        cov, MatrixPower::half, cov_power_apply(cov, MatrixPower::half, v));
    CHECK((half_twice - cov_power_apply(cov, MatrixPower::full, v)).norm() <
          1e-10 * v.norm());

    const Eigen::VectorXd round_trip = cov_power_apply(
        cov, MatrixPower::inv_half, cov_power_apply(cov, MatrixPower::half, v));
    CHECK((round_trip - v).norm() < 1e-10 * v.norm());

    const Eigen::VectorXd inverse_full = cov_power_apply(
        cov, MatrixPower::inverse, cov_power_apply(cov, MatrixPower::full, v));
    CHECK((inverse_full - v).norm() < 1e-10 * v.norm());
  }
}

TEST_CASE("general covariance floors tiny eigenvalues") {
  Eigen::MatrixXd near_singular(3, 3);
  near_singular << 1.0, 0.0, 0.0, 0.0, 1e-18, 0.0, 0.0, 0.0, 2.0;

  const GeneralCovariance floored(near_singular, 1e-6);
  CHECK(floored.eigenvalues().minCoeff() >= 1e-6 - 1e-15);
  const Covariance cov = floored;
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(3);
  CHECK(cov_power_apply(cov, MatrixPower::inv_half, v).allFinite());

  const GeneralCovariance defaulted(near_singular);
  CHECK(defaulted.eig_floor() > 0.0);
  CHECK(defaulted.eigenvalues().minCoeff() >= defaulted.eig_floor() - 1e-15);
}

TEST_CASE("geometry construction pins alignment and spike magnitude") {
  const int d = 64;
  const Geometry geom = construct_geometry(d, 0.5, 0.75, 42);
  CHECK(geom.u.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(geom.theta.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(geom.theta.dot(geom.u) ==
        doctest::Approx(std::pow(double(d), -0.5)).epsilon(1e-10));
  CHECK(geom.kappa == doctest::Approx(std::pow(double(d), 0.75)).epsilon(1e-12));

  const Geometry aligned = construct_geometry(d, 0.0, 0.3, 42);
  CHECK((aligned.theta - aligned.u).norm() < 1e-14);

  const Geometry again = construct_geometry(d, 0.5, 0.75, 42);
  CHECK((again.u - geom.u).norm() == 0.0);
  CHECK((again.theta - geom.theta).norm() == 0.0);

  CHECK_THROWS_AS(construct_geometry(1, 0.0, 0.5, 1), ArgumentError);
  CHECK_THROWS_AS(construct_geometry(8, 0.6, 0.5, 1), ArgumentError);
  CHECK_THROWS_AS(construct_geometry(8, 0.1, 1.2, 1), ArgumentError);
}

TEST_CASE("sampled inputs match the task distribution") {
  const Geometry geom = construct_geometry(6, 0.3, 0.7, 5);
  const SingleIndexTask task = make_task(geom, "relu", 0.5);
  const Dataset data = sample_dataset(task, 100000, 100000, 13);

  REQUIRE(data.inputs.rows() == 100000);
  REQUIRE(data.inputs.cols() == 6);
  CHECK(data.inputs.colwise().mean().cwiseAbs().maxCoeff() < 0.02);

  const Eigen::MatrixXd centered =
      data.unlabeled.rowwise() - data.unlabeled.colwise().mean();
  const Eigen::MatrixXd emp =
      centered.transpose() * centered / double(data.unlabeled.rows());
  CHECK(op_norm(emp - cov_dense(task.covariance)) < 0.05);

  // relu of a standard normal projection has mean 1/sqrt(2 pi).
  CHECK(std::abs(data.responses.mean() - 0.3989422804014327) < 0.02);
}

TEST_CASE("covariance estimate converges in operator norm") {
  const Geometry geom = construct_geometry(20, 0.2, 0.5, 3);
  const SingleIndexTask task = make_task(geom, "identity", 0.0);
  const Dataset data = sample_dataset(task, 2, 20000, 21);
  const GeneralCovariance estimate = estimate_covariance(data.unlabeled);
  CHECK(op_norm(estimate.matrix() - cov_dense(task.covariance)) < 0.1);
}

TEST_CASE("transformed target is the normalized half-power image") {
  const Geometry geom = construct_geometry(10, 0.4, 0.6, 17);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Eigen::VectorXd ubar = transformed_target(task);
  CHECK(ubar.norm() == doctest::Approx(1.0).epsilon(1e-12));

  const Eigen::VectorXd image =
      cov_power_apply(task.covariance, MatrixPower::half, task.u);
  CHECK((ubar - image / image.norm()).norm() < 1e-12);
}

TEST_CASE("transformed alignment is bounded and exact at the preimage") {
  const Geometry geom = construct_geometry(8, 0.25, 0.5, 23);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Eigen::VectorXd ubar = transformed_target(task);

  Rng rng = Rng(31).child("alignment");
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd w = rng.normal_vector(8);
    CHECK(std::abs(alignment_bar(w, task.covariance, ubar)) <= 1.0 + 1e-12);
  }

  const Eigen::VectorXd preimage =
      cov_power_apply(task.covariance, MatrixPower::inv_half, ubar);
  CHECK(alignment_bar(preimage, task.covariance, ubar) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conditioned initialization has positive alignment and fair signs") {
  const int d = 16;
  const Geometry geom = construct_geometry(d, 0.25, 0.5, 29);
  const Covariance cov = SpikedCovariance(d, geom.kappa, geom.theta);
  const Eigen::VectorXd ubar =
      cov_power_apply(cov, MatrixPower::half, geom.u).normalized();

  int positive = 0;
  const int trials = 2000;
  for (int i = 0; i < trials; ++i) {
    const Eigen::VectorXd w = init_first_layer(d, 1000 + i, false, cov, ubar);
    if (alignment_bar(w, cov, ubar) > 0.0) ++positive;
  }
  CHECK(positive > trials * 0.45);
  CHECK(positive < trials * 0.55);

  for (int i = 0; i < 50; ++i) {
    const Eigen::VectorXd w = init_first_layer(d, 5000 + i, true, cov, ubar);
    CHECK(alignment_bar(w, cov, ubar) > 0.0);
  }

  const Eigen::VectorXd a = init_first_layer(d, 77, true, cov, ubar);
  const Eigen::VectorXd b = init_first_layer(d, 77, true, cov, ubar);
  CHECK((a - b).norm() == 0.0);
}

TEST_CASE("dataset csv and binary round trips are exact") {
  const Geometry geom = construct_geometry(3, 0.2, 0.4, 19);
  const SingleIndexTask task = make_task(geom, "cube", 0.3);
  const Dataset data = sample_dataset(task, 7, 4, 37);

  const auto dir = std::filesystem::temp_directory_path() / "silab_covmodel_rt";
  std::filesystem::create_directories(dir);

  save_dataset_csv(dir / "data.csv", data);
  const Dataset csv = load_dataset_csv(dir / "data.csv");
  CHECK((csv.inputs - data.inputs).norm() == 0.0);
  CHECK((csv.responses - data.responses).norm() == 0.0);
  CHECK((csv.unlabeled - data.unlabeled).norm() == 0.0);
  CHECK(csv.seed == data.seed);

  save_dataset_binary(dir / "data.bin", data);
  const Dataset bin = load_dataset_binary(dir / "data.bin");
  CHECK((bin.inputs - data.inputs).norm() == 0.0);
  CHECK((bin.responses - data.responses).norm() == 0.0);
  CHECK((bin.unlabeled - data.unlabeled).norm() == 0.0);
  CHECK(bin.seed == data.seed);
}

TEST_CASE("input validation rejects malformed requests") {
  const Geometry geom = construct_geometry(4, 0.1, 0.5, 2);
  const SingleIndexTask task = make_task(geom, "relu", 0.1);
  CHECK_THROWS_AS(sample_dataset(task, -1, 4, 1), ArgumentError);
  CHECK_THROWS_AS(make_task(geom, "unknown_link", 0.1), ArgumentError);
  CHECK_THROWS_AS(make_task(geom, "relu", -0.5), ArgumentError);
  CHECK_THROWS_AS(estimate_covariance(Eigen::MatrixXd()), ArgumentError);
}
