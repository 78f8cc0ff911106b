// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "silab/data.hpp"
#include "silab/flows.hpp"
#include "silab/network.hpp"

namespace silab {

enum class ExperimentKind {
  spiked_trap_demo,
  tau_scaling,
  sample_complexity_probe,
  phase_diagram,
  init_alignment,
  stein_check,
  full_pipeline
};

ExperimentKind parse_experiment_kind(const std::string& token);
std::string experiment_kind_name(ExperimentKind kind);

/// Least squares of ln(y) on ln(x). Requires positive data and >= 2 points;
/// slope_se is 0 when the fit has no residual degrees of freedom.
struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double r2 = 0.0;
  int n = 0;
};
FitResult fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> values);

/// Run body(0..count-1) on up to `workers` threads. Items must not depend on
/// execution order; the first exception thrown by any item is rethrown.
void parallel_for(long count, int workers, const std::function<void(long)>& body);

/// Optional memoization hooks for expensive work items. Keys are canonical
/// parameter strings; values are the numbers the item produced. Runners
/// consult lookup before computing and call store after, which is how
/// run_experiment resumes interrupted sweeps without recomputation.
struct WorkCache {
  std::function<std::optional<std::vector<double>>(const std::string& key)> lookup;
  std::function<void(const std::string& key, const std::vector<double>& values)> store;
};

/// Monte-Carlo check of the correlated-projection identity
/// E[f(<w,z>) g(<u,z>) z] = E[f g'] u + E[f (g <w,z> - g' <u,w>)] w
/// at shared samples; deviations carry per-component standard errors.
struct SteinCheckResult {
  Eigen::VectorXd lhs;
  Eigen::VectorXd rhs;
  double max_deviation = 0.0;
  double se_at_max = 0.0;
  double max_sigmas = 0.0;  // max over components of |deviation| / SE
};
SteinCheckResult stein_check(const LinkFunction& f, const LinkFunction& g,
                             const Eigen::VectorXd& w, const Eigen::VectorXd& u,
                             long n_mc, std::uint64_t seed);

/// Spike-aligned trap demo: spherical flow from sphere-marginal inits stays
/// below 3/sqrt(d) while the normalized flow escapes from the same start.
struct TrapDemoConfig {
  std::vector<int> d_list{100, 1000, 10000};
  double kappa_exponent = 0.4;  // kappa = d^exponent
  std::string link = "hermite:4";
  int n_seeds = 50;
  double dt = 0.01;
  double t_max = 1e3;
  double contrast_dt = 0.01;
  double contrast_eps = 0.01;
  double contrast_t_mult = 2.0;
  std::uint64_t seed = 1;
  int workers = 1;
  const WorkCache* cache = nullptr;
};
struct TrapDemoRun {
  std::string key;
  int d = 0;
  int seed_index = 0;
  double m0 = 0.0;
  double sup_alignment = 0.0;
  double bound = 0.0;  // 3/sqrt(d)
};
struct TrapContrastRun {
  std::string key;
  int d = 0;
  double m0_bar = 0.0;
  double final_alignment = 0.0;
  std::optional<double> hit_eps;
  double t_end = 0.0;
};
struct TrapDemoResult {
  std::vector<TrapDemoRun> runs;
  std::vector<double> median_sup;  // per d
  std::vector<TrapContrastRun> contrasts;
  FitResult fit;  // log median sup vs log d
  bool all_within_bound = true;
};
TrapDemoResult run_spiked_trap_demo(const TrapDemoConfig& config);

/// Escape-time profile: time to alignment 1/2 of the identity-covariance
/// normalized flow, fitted against 1/m0 per information exponent.
struct TauScalingConfig {
  std::vector<int> s_list{3, 4};
  double m0_lo = 0.01;
  double m0_hi = 0.1;
  int m0_count = 6;
  int d = 8;
  double dt = 1e-3;
  std::uint64_t seed = 1;
  int workers = 1;
  const WorkCache* cache = nullptr;
};
struct TauScalingRow {
  std::string key;
  int s = 0;
  double m0 = 0.0;
  double hit_half = 0.0;
};
struct TauScalingResult {
  std::vector<TauScalingRow> rows;
  std::vector<FitResult> fits;  // one per entry of s_list
};
TauScalingResult run_tau_scaling(const TauScalingConfig& config);

/// Smallest n at which at least success_prob of the seeds reach alignment
/// 1 - eps, located by doubling then geometric bisection.
struct ProbeConfig {
  int d = 32;
  double r1 = 0.0;
  double r2 = 1.0;
  std::string link = "hermite:2";
  std::string phi;  // empty: matched to link
  double noise_sigma = 0.0;
  FlowKind kind = FlowKind::empirical_normalized;
  double eps = 0.1;
  double success_prob = 0.7;
  int n_seeds = 10;
  long n_lo = 64;
  long n_hi = 32768;
  double resolution = 1.1;
  double dt = -1.0;
  double t_max_mult = 12.0;
  /// Horizon mult * (tau_s(m0_bar) + ln(1/eps)); the plain kinds additionally
  /// divide by lambda_min(Sigma_hat) as their convergence theory requires.
  bool theorem_horizon = true;
  bool verify_upper_first = true;
  std::uint64_t seed = 1;
  int workers = 1;
  const WorkCache* cache = nullptr;
};
struct ProbeEval {
  std::string key;
  long n = 0;
  double success_fraction = 0.0;
};
struct ProbeResult {
  long n_star = 0;
  bool at_lower_bound = false;
  std::vector<ProbeEval> evals;
};
ProbeResult probe_sample_complexity(const ProbeConfig& config);

/// Exponent fits of log n* against log d over an (r1, r2) grid.
struct PhaseCell {
  double r1 = 0.0;
  double r2 = 0.0;
};
struct PhaseDiagramConfig {
  std::vector<int> d_list{16, 32, 64};
  std::vector<PhaseCell> cells;
  ProbeConfig probe;  // template; d, r1, r2 are overridden per cell
};
struct PhaseCellResult {
  double r1 = 0.0;
  double r2 = 0.0;
  std::string regime;  // "r2<r1", "r1<r2<2r1", "2r1<r2", or "boundary"
  double predicted_exponent = 0.0;  // NaN on boundary cells
  FitResult fit;
  std::vector<long> n_stars;  // per d; -1 marks a failed probe
  bool failed = false;
  std::string note;
};
struct PhaseDiagramResult {
  std::vector<PhaseCellResult> cells;
};
PhaseDiagramResult run_phase_diagram(const PhaseDiagramConfig& config);

/// Sample-complexity exponent the convergence theory predicts for a cell,
/// by flow family (d^{1+2 r2} prefactor for the plain kinds, d for the
/// preconditioned ones, times the regime-dependent escape cost).
double predicted_complexity_exponent(double r1, double r2, int s, bool preconditioned);

/// Median transformed initial alignment per dimension with a log-log fit.
struct InitAlignmentConfig {
  std::vector<int> d_list{256, 1024, 4096};
  double r1 = 0.0;
  double r2 = 0.0;
  int n_seeds = 200;
  std::uint64_t seed = 1;
  int workers = 1;
};
struct InitAlignmentRow {
  std::string key;
  int d = 0;
  int seed_index = 0;
  double alignment = 0.0;
};
struct InitAlignmentResult {
  std::vector<InitAlignmentRow> rows;
  std::vector<double> medians;  // per d
  FitResult fit;
  double predicted_slope = 0.0;
};
InitAlignmentResult run_init_alignment(const InitAlignmentConfig& config);
double predicted_init_slope(double r1, double r2);

/// Layer-wise training end to end over widths and seeds; reports test risk.
struct PipelineConfig {
  int d = 32;
  double r1 = 0.0;
  double r2 = 1.0;
  std::string link = "hermite:2";
  double noise_sigma = 0.1;
  std::vector<int> m_list{32, 512};
  long n = 32768;
  long n_unlabeled = -1;  // negative: same as n
  long n_test = 20000;
  int n_seeds = 5;
  TrainConfig train;  // template; m, n, seed are overridden per run
  std::uint64_t seed = 1;
  int workers = 1;
  const WorkCache* cache = nullptr;
};
struct PipelineRow {
  std::string key;
  int m = 0;
  int seed_index = 0;
  double risk = 0.0;
  double alignment = 0.0;
  double lambda = 0.0;
};
struct PipelineResult {
  std::vector<int> m_list;
  std::vector<PipelineRow> rows;
  std::vector<double> median_risk;  // per width
};
PipelineResult run_full_pipeline(const PipelineConfig& config);

/// Run a JSON experiment spec, write <stem>_rows.csv and <stem>_summary.json
/// under the resolved output directory, and return the summary. Heavy work
/// items are memoized in <stem>_cache.csv so interrupted sweeps resume
/// without recomputation; outputs are byte-identical across reruns and
/// worker counts.
struct ExperimentOutput {
  std::filesystem::path rows_csv;
  std::filesystem::path summary_json;
  nlohmann::json summary;
};
ExperimentOutput run_experiment(const nlohmann::json& spec, int workers);

}  // namespace silab
