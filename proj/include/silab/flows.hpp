// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "silab/data.hpp"
#include "silab/errors.hpp"

namespace silab {

enum class FlowKind {
  population_spherical,       // sphere-constrained flow of w under the exact risk
  population_normalized,      // whitened-weight flow of w_bar, correlation drift
  population_preconditioned,  // whitened flow with the covariance factored out
  empirical_normalized,       // sample correlation flow of w, learning rate ||S^1/2 w||^2
  empirical_preconditioned    // same, preconditioned by the inverse covariance estimate
};

enum class Integrator { euler, rk4 };

/// Parse "pop_spherical", "pop_normalized", "pop_precond", "emp_normalized",
/// "emp_precond"; anything else raises ArgumentError listing the tokens.
FlowKind parse_flow_kind(const std::string& token);
std::string flow_kind_name(FlowKind kind);

/// Parse "euler" / "rk4".
Integrator parse_integrator(const std::string& token);
std::string integrator_name(Integrator integrator);

struct FlowConfig {
  /// Step size; negative selects 1e-3 for population kinds and
  /// 0.05 / lambda_max(Sigma_hat) for empirical kinds.
  double dt = -1.0;
  /// Horizon; negative selects 50 (tau_s(m0_bar) + ln(1/eps_target)) / lambda_min.
  double t_max = -1.0;
  /// Stop once the transformed alignment reaches 1 - eps_target.
  double eps_target = 0.01;
  /// Keep every record_stride-th sample in the trace (crossings are still
  /// detected at every step).
  int record_stride = 1;
  Integrator integrator = Integrator::euler;
};

struct FlowTrace {
  std::vector<double> times;
  std::vector<double> alignments_bar;  // <S^1/2 w, u_bar> / ||S^1/2 w||
  std::vector<double> alignments_raw;  // <w, u> / ||w||
  Eigen::VectorXd final_w;
  std::optional<double> hit_half;      // first time alignments_bar >= 1/2
  std::optional<double> hit_eps;       // first time alignments_bar >= 1 - eps_target
  std::optional<double> hit_eps_raw;   // first time alignments_raw >= 1 - eps_target
  double sup_alignment = 0.0;          // max over steps of |alignments_raw|
  double t_end = 0.0;
};

/// A step produced a non-finite state. Carries everything recorded up to
/// the last valid step.
class FlowDivergedError : public NumericError {
 public:
  FlowDivergedError(const std::string& msg, FlowTrace t)
      : NumericError(msg), trace(std::move(t)) {}
  FlowTrace trace;
};

/// Everything a flow kind may need. Population kinds require task;
/// empirical kinds require data + sigma_hat and use task (when present)
/// only to measure alignments and stop at the target.
struct FlowProblem {
  const SingleIndexTask* task = nullptr;
  HermiteSeries g_series;
  HermiteSeries phi_series;
  LinkFunction phi;
  const Dataset* data = nullptr;
  const GeneralCovariance* sigma_hat = nullptr;

  static FlowProblem population(const SingleIndexTask& task, HermiteSeries phi_series);
  static FlowProblem empirical(const Dataset& data, const GeneralCovariance& sigma_hat,
                               LinkFunction phi, const SingleIndexTask* truth);
};

/// Exact ReLU Hermite coefficients (closed form):
/// b_0 = 1/sqrt(2 pi), b_1 = 1/2, b_j = 0 for odd j >= 3,
/// b_j = (-1)^{j/2+1} (j-3)!! / (sqrt(2 pi) sqrt(j!)) for even j >= 2.
HermiteSeries relu_hermite_series(int max_order);

/// +1 / -1 when the series matches (sign-flipped) ReLU coefficients,
/// 0 otherwise. Spherical population formulas only hold for these.
int relu_series_sign(const HermiteSeries& phi_series);

/// Negative spherical gradient of the population risk at unit w,
/// -(I - w w^T) grad R(w), for a (sign-flipped) ReLU activation.
/// Other activations raise UnsupportedActivationError.
Eigen::VectorXd population_spherical_rhs(const Eigen::VectorXd& w,
                                         const SingleIndexTask& task,
                                         const HermiteSeries& g_series,
                                         const HermiteSeries& phi_series);

/// Alignment drift dm/dt of the spherical population flow when the spike
/// and target directions coincide. Requires a (sign-flipped) ReLU series
/// and a centered link (first coefficient of g below tolerance).
double spherical_scalar_rhs(double m, double kappa, const HermiteSeries& g_series,
                            const HermiteSeries& phi_series);

/// Whitened-weight population drift
/// -zeta(<w_bar,u_bar>) (I - w_bar w_bar^T) Sigma (I - w_bar w_bar^T) u_bar.
Eigen::VectorXd population_normalized_rhs(const Eigen::VectorXd& w_bar,
                                          const SingleIndexTask& task,
                                          const HermiteSeries& g_series,
                                          const HermiteSeries& phi_series);

/// Preconditioned whitened drift
/// (I - w_bar w_bar^T) (-zeta(m) u_bar - psi(m) w_bar). The covariance
/// drops out entirely, so the alignment obeys dm/dt = -zeta(m)(1 - m^2).
Eigen::VectorXd population_preconditioned_rhs(const Eigen::VectorXd& w_bar,
                                              const SingleIndexTask& task,
                                              const HermiteSeries& g_series,
                                              const HermiteSeries& phi_series);

struct CorrGrad {
  double value = 0.0;     // negated sample correlation -C(w)
  Eigen::VectorXd grad;   // its exact gradient
};

/// Negated sample correlation
/// C(w) = (1/n) sum_i phi(<w, x_i> / ||S^1/2 w||) y_i and its exact
/// gradient. The gradient is tangent to the ||S^1/2 w|| level set:
/// <grad, w> = 0 holds to rounding (Euler's identity for the
/// 0-homogeneous objective).
CorrGrad empirical_corr_grad(const Eigen::VectorXd& w, const Dataset& data,
                             const GeneralCovariance& sigma_hat,
                             const LinkFunction& phi);

/// Integrate a flow from w0 (whitened coordinates for the population
/// normalized / preconditioned kinds, raw weights otherwise). Spherical
/// state is renormalized after every step. Stops at t_max or when the
/// transformed alignment reaches 1 - eps_target. A non-finite state
/// raises FlowDivergedError carrying the trace so far.
FlowTrace integrate_flow(FlowKind kind, const Eigen::VectorXd& w0,
                         const FlowProblem& problem, const FlowConfig& config);

/// Integrate the scalar alignment ODE of the spiked spherical flow
/// (spike aligned with the target). alignments_raw carries m,
/// alignments_bar the transformed alignment it implies.
FlowTrace integrate_scalar_alignment(double m0, double kappa,
                                     const HermiteSeries& g_series,
                                     const HermiteSeries& phi_series,
                                     const FlowConfig& config);

/// Escape horizon scale: 1 for s = 1, ln(1/z) for s = 2, z^{2-s} above.
double tau_horizon(int s, double z);

/// Default integration horizon 50 (tau_s(m0_bar) + ln(1/eps)) / lambda_min.
double default_t_max(int s, double m0_bar, double eps, double lambda_min);

/// Trace CSV: "# key=value" metadata, then t, alignment_bar, alignment_raw.
void save_trace_csv(const std::filesystem::path& path, const FlowTrace& trace,
                    const std::vector<std::pair<std::string, std::string>>& metadata);

}  // namespace silab
