// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include <Eigen/Dense>

#include "silab/data.hpp"
#include "silab/errors.hpp"
#include "silab/flows.hpp"
#include "silab/io.hpp"
#include "silab/rng.hpp"

using namespace silab;

namespace {

// Identity-covariance geometry with the spike placed on the target.
Geometry flat_geometry(int d, double kappa, std::uint64_t seed) {
  const Eigen::VectorXd u = Rng(seed).child("target").sphere_vector(d);
  return Geometry{u, u, kappa, 0.0, 0.0, seed};
}

Eigen::VectorXd mix(const Eigen::VectorXd& axis, const Eigen::VectorXd& other,
                    double m) {
  Eigen::VectorXd perp = other - other.dot(axis) * axis;
  perp.normalize();
  return m * axis + std::sqrt(1.0 - m * m) * perp;
}

}  // namespace

TEST_CASE("flow kind and integrator tokens round trip") {
  for (const auto kind :
       {FlowKind::population_spherical, FlowKind::population_normalized,
        FlowKind::population_preconditioned, FlowKind::empirical_normalized,
        FlowKind::empirical_preconditioned}) {
    CHECK(parse_flow_kind(flow_kind_name(kind)) == kind);
  }
  CHECK_THROWS_AS(parse_flow_kind("newton"), ArgumentError);
  CHECK(parse_integrator("rk4") == Integrator::rk4);
  CHECK_THROWS_AS(parse_integrator("leapfrog"), ArgumentError);
}

TEST_CASE("relu series sign detects sign flips") {
  const HermiteSeries plus = relu_hermite_series(12);
  CHECK(relu_series_sign(plus) == 1);
  CHECK(relu_series_sign(scaled(plus, -1.0)) == -1);
  CHECK(relu_series_sign(hermite_coeffs(make_link("hermite:3"))) == 0);
}

TEST_CASE("population normalized flow matches the separable closed form") {
  // With a matched order-2 link and identity covariance the alignment obeys
  // dm/dt = 2m(1 - m^2), whose 0.1 -> 0.5 transit takes ln(33)/4.
  const Geometry geom = flat_geometry(16, 0.0, 3);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Eigen::VectorXd ubar = transformed_target(task);
  const Eigen::VectorXd w0 =
      mix(ubar, Rng(3).child("perp").sphere_vector(16), 0.1);

  FlowConfig fc;
  fc.dt = 1e-3;
  fc.t_max = 5.0;
  const FlowTrace trace = integrate_flow(
      FlowKind::population_normalized, w0,
      FlowProblem::population(task, task.link_series), fc);

  REQUIRE(trace.hit_half.has_value());
  CHECK(std::abs(*trace.hit_half - 0.87412689036662) < 0.01 * 0.875);
}

TEST_CASE("scalar drift equals the vector drift on the spike axis") {
  const HermiteSeries g = hermite_coeffs(make_link("hermite:4"));
  const HermiteSeries phi = relu_hermite_series(20);
  const int d = 12;

  for (const double kappa : {1.0, 10.0, 100.0}) {
    const Geometry geom = flat_geometry(d, kappa, 41);
    const SingleIndexTask task = make_task(geom, "hermite:4", 0.0);
    for (double m = -0.9; m <= 0.9 + 1e-9; m += 0.15) {
      const Eigen::VectorXd w =
          mix(task.u, Rng(8).child("side").sphere_vector(d), m);
      const double vector_drift =
          task.u.dot(population_spherical_rhs(w, task, g, phi));
      const double scalar_drift = spherical_scalar_rhs(m, kappa, g, phi);
      CHECK(std::abs(vector_drift - scalar_drift) < 1e-8);
    }
  }
}

TEST_CASE("preconditioned population flow ignores the covariance") {
  FlowConfig fc;
  fc.dt = 1e-3;
  fc.t_max = 5.0;

  std::vector<double> hits;
  for (const double kappa : {0.0, 100.0}) {
    const Geometry geom = flat_geometry(16, kappa, 6);
    const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
    const Eigen::VectorXd ubar = transformed_target(task);
    const Eigen::VectorXd w0 =
        mix(ubar, Rng(6).child("perp").sphere_vector(16), 0.1);
    const FlowTrace trace = integrate_flow(
        FlowKind::population_preconditioned, w0,
        FlowProblem::population(task, task.link_series), fc);
    REQUIRE(trace.hit_half.has_value());
    hits.push_back(*trace.hit_half);
  }
  CHECK(std::abs(hits[0] - hits[1]) < 1e-9);
}

TEST_CASE("empirical flow tracks the population flow at large n") {
  const int d = 10;
  const Geometry geom = flat_geometry(d, 0.0, 15);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Eigen::VectorXd ubar = transformed_target(task);

  FlowConfig fc;
  fc.dt = 5e-3;
  fc.t_max = 4.0;
  fc.eps_target = 0.2;

  const Eigen::VectorXd wbar0 =
      mix(ubar, Rng(15).child("perp").sphere_vector(d), 0.3);
  const FlowTrace pop = integrate_flow(
      FlowKind::population_normalized, wbar0,
      FlowProblem::population(task, relu_hermite_series(20)), fc);

  const Dataset data = sample_dataset(task, 100000, 100000, 77);
  const GeneralCovariance sigma_hat = estimate_covariance(data.unlabeled);
  const Covariance view = sigma_hat;
  const Eigen::VectorXd w0 =
      cov_power_apply(view, MatrixPower::inv_half, wbar0);
  const FlowTrace emp = integrate_flow(
      FlowKind::empirical_normalized, w0,
      FlowProblem::empirical(data, sigma_hat, make_link("relu"), &task), fc);

  REQUIRE(pop.hit_half.has_value());
  REQUIRE(emp.hit_half.has_value());
  CHECK(std::abs(*pop.hit_half - *emp.hit_half) < 0.05 * *pop.hit_half);
}

TEST_CASE("correlation gradient matches finite differences") {
  const Geometry geom = construct_geometry(8, 0.3, 0.6, 21);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.1);
  const Dataset data = sample_dataset(task, 200, 400, 22);
  const GeneralCovariance sigma_hat = estimate_covariance(data.unlabeled);
  const LinkFunction phi = make_link("relu");

  Rng rng = Rng(23).child("fd");
  const Eigen::VectorXd w = rng.sphere_vector(8) * 1.3;
  const CorrGrad cg = empirical_corr_grad(w, data, sigma_hat, phi);

  const double h = 1e-5;
  for (int k = 0; k < 8; ++k) {
    Eigen::VectorXd lo = w, hi = w;
    hi(k) += h;
    lo(k) -= h;
    const double fd = (empirical_corr_grad(hi, data, sigma_hat, phi).value -
                       empirical_corr_grad(lo, data, sigma_hat, phi).value) /
                      (2 * h);
    CHECK(std::abs(fd - cg.grad(k)) <
          1e-5 * std::max(1.0, std::abs(cg.grad(k))));
  }
}

TEST_CASE("correlation gradient is tangent to its weight ray") {
  const Geometry geom = construct_geometry(8, 0.2, 0.5, 25);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Dataset data = sample_dataset(task, 300, 300, 26);
  const GeneralCovariance sigma_hat = estimate_covariance(data.unlabeled);

  Rng rng = Rng(27).child("euler");
  for (int i = 0; i < 10; ++i) {
    const Eigen::VectorXd w = rng.normal_vector(8);
    const CorrGrad cg =
        empirical_corr_grad(w, data, sigma_hat, make_link("relu"));
    CHECK(std::abs(cg.grad.dot(w)) < 1e-10 * cg.grad.norm() * w.norm());
  }
}

TEST_CASE("single sample identity covariance gradient has a closed form") {
  const int d = 5;
  Rng rng = Rng(33).child("single");
  Dataset data;
  data.inputs = rng.normal_vector(d).transpose();
  data.responses = Eigen::VectorXd::Constant(1, 0.8);
  data.unlabeled = Eigen::MatrixXd::Identity(d, d);
  const GeneralCovariance identity(Eigen::MatrixXd::Identity(d, d));

  const Eigen::VectorXd w = rng.normal_vector(d);
  const Eigen::VectorXd x = data.inputs.row(0).transpose();
  const double y = data.responses(0);
  const double q = w.dot(x);
  const double nu = w.norm();
  const LinkFunction phi = make_link("relu");

  // C(w) = phi(q / nu) y; grad = y phi'(q/nu) (x / nu - q w / nu^3), negated.
  const Eigen::VectorXd expected =
      -y * phi.deriv(q / nu) * (x / nu - q * w / (nu * nu * nu));
  const CorrGrad cg = empirical_corr_grad(w, data, identity, phi);
  CHECK((cg.grad - expected).norm() < 1e-12 * std::max(1.0, expected.norm()));
  CHECK(cg.value == doctest::Approx(-phi.eval(q / nu) * y).epsilon(1e-12));
}

TEST_CASE("scalar trap drift matches frozen values and stays negative") {
  const HermiteSeries h4 = hermite_coeffs(make_link("hermite:4"));
  const HermiteSeries phi = relu_hermite_series(20);

  // d = 1e4, kappa = d^{2/3} / 10, m = 1/sqrt(d).
  const double kappa = std::pow(1e4, 2.0 / 3.0) / 10.0;
  CHECK(spherical_scalar_rhs(1e-2, kappa, h4, phi) ==
        doctest::Approx(-0.00499930109147599).epsilon(1e-10));

  const std::vector<double> frozen_sup{-4.315966157552327e-05,
                                       -4.703247490254762e-05,
                                       -4.877491605774534e-05};
  const std::vector<double> dims{100.0, 1000.0, 10000.0};
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const double k = std::pow(dims[i], 0.4);
    const double top = 3.0 / std::sqrt(dims[i]);
    double sup = -1e300;
    for (int j = 0; j < 400; ++j) {
      const double m = 1e-4 + (top - 1e-4) * j / 399.0;
      sup = std::max(sup, spherical_scalar_rhs(m, k, h4, phi));
    }
    CHECK(sup < 0.0);
    CHECK(sup == doctest::Approx(frozen_sup[i]).epsilon(1e-6));
  }
}

TEST_CASE("escape horizon profile covers the three regimes") {
  CHECK(tau_horizon(1, 0.037) == doctest::Approx(1.0));
  CHECK(tau_horizon(2, 0.1) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  CHECK(tau_horizon(4, 0.1) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(default_t_max(2, 0.1, 0.01, 0.5) ==
        doctest::Approx(50.0 * (std::log(10.0) + std::log(100.0)) / 0.5)
            .epsilon(1e-12));
  CHECK_THROWS_AS(tau_horizon(0, 0.1), ArgumentError);
  CHECK_THROWS_AS(tau_horizon(3, 1.5), ArgumentError);
}

TEST_CASE("trace csv records metadata and alignment columns") {
  const Geometry geom = flat_geometry(8, 0.0, 51);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Eigen::VectorXd ubar = transformed_target(task);
  const Eigen::VectorXd w0 =
      mix(ubar, Rng(51).child("perp").sphere_vector(8), 0.2);

  FlowConfig fc;
  fc.dt = 1e-2;
  fc.t_max = 1.0;
  fc.record_stride = 5;
  const FlowTrace trace = integrate_flow(
      FlowKind::population_normalized, w0,
      FlowProblem::population(task, task.link_series), fc);

  const auto dir = std::filesystem::temp_directory_path() / "silab_flows_trace";
  std::filesystem::create_directories(dir);
  const auto path = dir / "trace.csv";
  save_trace_csv(path, trace, {{"kind", "pop_normalized"}, {"seed", "51"}});

  const io::CsvContent content = io::read_csv(path);
  REQUIRE(content.header.size() == 3);
  CHECK(content.header[0] == "t");
  CHECK(content.header[1] == "alignment_bar");
  CHECK(content.header[2] == "alignment_raw");
  CHECK(content.rows.size() == trace.times.size());
  bool found_kind = false;
  for (const auto& [key, value] : content.metadata) {
    if (key == "kind" && value == "pop_normalized") found_kind = true;
  }
  CHECK(found_kind);
}

TEST_CASE("alignment crossings are ordered and the trace is monotone") {
  const Geometry geom = flat_geometry(12, 0.0, 61);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Eigen::VectorXd ubar = transformed_target(task);
  const Eigen::VectorXd w0 =
      mix(ubar, Rng(61).child("perp").sphere_vector(12), 0.15);

  FlowConfig fc;
  fc.dt = 1e-3;
  fc.t_max = 10.0;
  fc.eps_target = 0.05;
  const FlowTrace trace = integrate_flow(
      FlowKind::population_preconditioned, w0,
      FlowProblem::population(task, task.link_series), fc);

  REQUIRE(trace.hit_half.has_value());
  REQUIRE(trace.hit_eps.has_value());
  CHECK(*trace.hit_half < *trace.hit_eps);
  CHECK(std::is_sorted(trace.alignments_bar.begin(), trace.alignments_bar.end()));
  CHECK(trace.sup_alignment <= 1.0 + 1e-12);
  CHECK(trace.t_end == doctest::Approx(*trace.hit_eps));
}

TEST_CASE("flow configuration is validated") {
  const Geometry geom = flat_geometry(8, 0.0, 71);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const FlowProblem problem = FlowProblem::population(task, task.link_series);
  const Eigen::VectorXd w0 = task.u;

  FlowConfig bad_eps;
  bad_eps.dt = 1e-3;
  bad_eps.t_max = 1.0;
  bad_eps.eps_target = 0.0;
  CHECK_THROWS_AS(
      integrate_flow(FlowKind::population_normalized, w0, problem, bad_eps),
      ArgumentError);

  FlowConfig bad_dt;
  bad_dt.dt = std::numeric_limits<double>::infinity();
  bad_dt.t_max = 1.0;
  CHECK_THROWS_AS(
      integrate_flow(FlowKind::population_normalized, w0, problem, bad_dt),
      ArgumentError);

  FlowConfig bad_stride;
  bad_stride.dt = 1e-3;
  bad_stride.t_max = 1.0;
  bad_stride.record_stride = 0;
  CHECK_THROWS_AS(
      integrate_flow(FlowKind::population_normalized, w0, problem, bad_stride),
      ArgumentError);

  FlowProblem no_task;
  no_task.g_series = task.link_series;
  no_task.phi_series = task.link_series;
  CHECK_THROWS_AS(
      integrate_flow(FlowKind::population_normalized, w0, no_task, FlowConfig{}),
      ArgumentError);
}

TEST_CASE("rk4 integration agrees with euler at matched accuracy") {
  const Geometry geom = flat_geometry(10, 0.0, 81);
  const SingleIndexTask task = make_task(geom, "hermite:2", 0.0);
  const Eigen::VectorXd ubar = transformed_target(task);
  const Eigen::VectorXd w0 =
      mix(ubar, Rng(81).child("perp").sphere_vector(10), 0.1);
  const FlowProblem problem = FlowProblem::population(task, task.link_series);

  FlowConfig euler;
  euler.dt = 1e-4;
  euler.t_max = 3.0;
  FlowConfig rk4;
  rk4.dt = 1e-2;
  rk4.t_max = 3.0;
  rk4.integrator = Integrator::rk4;

  const FlowTrace a =
      integrate_flow(FlowKind::population_normalized, w0, problem, euler);
  const FlowTrace b =
      integrate_flow(FlowKind::population_normalized, w0, problem, rk4);
  REQUIRE(a.hit_half.has_value());
  REQUIRE(b.hit_half.has_value());
  CHECK(std::abs(*a.hit_half - *b.hit_half) < 0.02 * *a.hit_half);
}

TEST_CASE("scalar alignment integration reproduces the spiked trap") {
  const HermiteSeries h4 = hermite_coeffs(make_link("hermite:4"));
  const HermiteSeries phi = relu_hermite_series(20);

  FlowConfig fc;
  fc.dt = 0.01;
  fc.t_max = 100.0;
  fc.record_stride = 100;
  const double m0 = 0.02;
  const FlowTrace trace = integrate_scalar_alignment(m0, 100.0, h4, phi, fc);

  CHECK(trace.sup_alignment <= m0 + 1e-9);
  CHECK_FALSE(trace.hit_half.has_value());
  CHECK(trace.t_end == doctest::Approx(100.0).epsilon(1e-6));
}
