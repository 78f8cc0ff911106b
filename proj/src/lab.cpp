// SPDX-License-Identifier: Apache-2.0
#include "silab/lab.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "silab/errors.hpp"
#include "silab/io.hpp"
#include "silab/rng.hpp"

namespace silab {

namespace {

constexpr double kBoundaryTol = 1e-12;

/// Canonical "head|k=v|k=v" parameter strings. They seed per-item random
/// streams and key the work cache, so every field that can change a result
/// must be added and doubles must go through io::fmt.
class KeyBuilder {
 public:
  explicit KeyBuilder(std::string_view head) { out_ << head; }

  KeyBuilder& add(std::string_view key, const std::string& value) {
    out_ << '|' << key << '=' << value;
    return *this;
  }
  KeyBuilder& add(std::string_view key, const char* value) {
    return add(key, std::string(value));
  }
  KeyBuilder& add(std::string_view key, double value) {
    return add(key, io::fmt(value));
  }
  KeyBuilder& add(std::string_view key, long value) {
    return add(key, std::to_string(value));
  }
  KeyBuilder& add(std::string_view key, int value) {
    return add(key, std::to_string(value));
  }
  KeyBuilder& add(std::string_view key, std::uint64_t value) {
    return add(key, std::to_string(value));
  }

  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

std::optional<std::vector<double>> cache_lookup(const WorkCache* cache,
                                                const std::string& key) {
  if (cache == nullptr || !cache->lookup) return std::nullopt;
  return cache->lookup(key);
}

void cache_store(const WorkCache* cache, const std::string& key,
                 const std::vector<double>& values) {
  if (cache != nullptr && cache->store) cache->store(key, values);
}

int require_info_exponent(const HermiteSeries& series, const std::string& what) {
  const auto s = information_exponent(series);
  if (!s) {
    throw ArgumentError(what + " has no detectable information exponent");
  }
  return *s;
}

Eigen::VectorXd unit_orthogonal(Rng rng, const Eigen::VectorXd& axis) {
  Eigen::VectorXd v = rng.sphere_vector(static_cast<int>(axis.size()));
  v -= v.dot(axis) * axis;
  const double norm = v.norm();
  if (!(norm > 0.0)) {
    throw NumericError("degenerate draw while building an orthogonal direction");
  }
  return v / norm;
}

}  // namespace

ExperimentKind parse_experiment_kind(const std::string& token) {
  if (token == "spiked_trap_demo" || token == "theorem1_demo") {
    return ExperimentKind::spiked_trap_demo;
  }
  if (token == "tau_scaling") return ExperimentKind::tau_scaling;
  if (token == "sample_complexity_probe" || token == "n_star_probe") {
    return ExperimentKind::sample_complexity_probe;
  }
  if (token == "phase_diagram") return ExperimentKind::phase_diagram;
  if (token == "init_alignment") return ExperimentKind::init_alignment;
  if (token == "stein_check") return ExperimentKind::stein_check;
  if (token == "full_pipeline") return ExperimentKind::full_pipeline;
  throw ArgumentError(
      "unknown experiment '" + token +
      "'; expected one of spiked_trap_demo, tau_scaling, sample_complexity_probe, "
      "phase_diagram, init_alignment, stein_check, full_pipeline");
}

std::string experiment_kind_name(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::spiked_trap_demo: return "spiked_trap_demo";
    case ExperimentKind::tau_scaling: return "tau_scaling";
    case ExperimentKind::sample_complexity_probe: return "sample_complexity_probe";
    case ExperimentKind::phase_diagram: return "phase_diagram";
    case ExperimentKind::init_alignment: return "init_alignment";
    case ExperimentKind::stein_check: return "stein_check";
    case ExperimentKind::full_pipeline: return "full_pipeline";
  }
  throw ArgumentError("invalid experiment kind");
}

FitResult fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) {
    throw ArgumentError("fit_loglog needs x and y of equal length");
  }
  const int n = static_cast<int>(x.size());
  if (n < 2) throw ArgumentError("fit_loglog needs at least two points");

  std::vector<double> lx(n), ly(n);
  for (int i = 0; i < n; ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
      throw ArgumentError("fit_loglog needs strictly positive data");
    }
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }

  double mx = 0.0, my = 0.0;
  for (int i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;

  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (int i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) {
    throw ArgumentError("fit_loglog needs at least two distinct x values");
  }

  FitResult fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;

  double ssr = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
    ssr += r * r;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
  fit.slope_se = n > 2 ? std::sqrt(std::max(ssr, 0.0) / (n - 2) / sxx) : 0.0;
  return fit;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ArgumentError("median of an empty list");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  std::nth_element(values.begin(), values.begin() + mid - 1, values.end());
  return 0.5 * (values[mid - 1] + upper);
}

void parallel_for(long count, int workers, const std::function<void(long)>& body) {
  if (count <= 0) return;
  if (!body) throw ArgumentError("parallel_for needs a body");
  const long use = std::min<long>(std::max(workers, 1), count);
  if (use <= 1) {
    for (long i = 0; i < count; ++i) body(i);
    return;
  }

  std::atomic<long> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex guard;

  auto drain = [&]() {
    while (!failed.load(std::memory_order_relaxed)) {
      const long i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(guard);
        if (!first_error) first_error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(use));
  for (long t = 0; t < use; ++t) pool.emplace_back(drain);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

SteinCheckResult stein_check(const LinkFunction& f, const LinkFunction& g,
                             const Eigen::VectorXd& w, const Eigen::VectorXd& u,
                             long n_mc, std::uint64_t seed) {
  const int d = static_cast<int>(w.size());
  if (d < 1 || u.size() != d) {
    throw ArgumentError("stein_check needs w and u of equal dimension");
  }
  if (std::abs(w.norm() - 1.0) > 1e-8 || std::abs(u.norm() - 1.0) > 1e-8) {
    throw ArgumentError("stein_check needs unit vectors");
  }
  if (n_mc < 2) throw ArgumentError("stein_check needs at least two samples");
  if (!f.eval || !g.eval || !g.deriv) {
    throw ArgumentError("stein_check needs callable links, g with a derivative");
  }

  const double rho = w.dot(u);
  Rng rng = Rng(seed).child("stein");

  Eigen::VectorXd sum_lhs = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sum_rhs = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sum_diff = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sum_diff2 = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd z(d), lhs(d), rhs(d), diff(d);

  for (long i = 0; i < n_mc; ++i) {
    z = rng.normal_vector(d);
    const double a = w.dot(z);
    const double b = u.dot(z);
    const double fa = f.eval(a);
    const double gb = g.eval(b);
    const double gp = g.deriv(b);
    lhs = (fa * gb) * z;
    rhs = (fa * gp) * u + (fa * (gb * a - gp * rho)) * w;
    diff = lhs - rhs;
    sum_lhs += lhs;
    sum_rhs += rhs;
    sum_diff += diff;
    sum_diff2.array() += diff.array().square();
  }

  const double inv = 1.0 / static_cast<double>(n_mc);
  SteinCheckResult result;
  result.lhs = sum_lhs * inv;
  result.rhs = sum_rhs * inv;

  for (int k = 0; k < d; ++k) {
    const double mean_k = sum_diff(k) * inv;
    const double var_k = std::max(0.0, sum_diff2(k) * inv - mean_k * mean_k) *
                         (static_cast<double>(n_mc) / (n_mc - 1.0));
    const double se_k = std::sqrt(var_k * inv);
    const double dev = std::abs(mean_k);
    if (dev > result.max_deviation) {
      result.max_deviation = dev;
      result.se_at_max = se_k;
    }
    double sigmas = 0.0;
    if (se_k > 0.0) {
      sigmas = dev / se_k;
    } else if (dev > 0.0) {
      sigmas = std::numeric_limits<double>::infinity();
    }
    result.max_sigmas = std::max(result.max_sigmas, sigmas);
  }
  return result;
}

TrapDemoResult run_spiked_trap_demo(const TrapDemoConfig& config) {
  if (config.d_list.empty()) {
    throw ArgumentError("spiked_trap_demo needs a nonempty d list");
  }
  for (const int d : config.d_list) {
    if (d < 4) throw ArgumentError("spiked_trap_demo needs every d >= 4");
  }
  if (config.n_seeds < 1) throw ArgumentError("spiked_trap_demo needs n_seeds >= 1");
  if (!(config.dt > 0.0) || !(config.t_max > 0.0) || !(config.contrast_dt > 0.0)) {
    throw ArgumentError("spiked_trap_demo needs positive dt, t_max, contrast_dt");
  }
  if (!(config.contrast_eps > 0.0 && config.contrast_eps < 1.0)) {
    throw ArgumentError("contrast_eps must lie in (0, 1)");
  }
  if (!(config.contrast_t_mult > 0.0)) {
    throw ArgumentError("contrast_t_mult must be positive");
  }

  const LinkFunction g = make_link(config.link);
  const HermiteSeries g_series = hermite_coeffs(g);
  const int s = require_info_exponent(g_series, "link '" + config.link + "'");
  if (s < 3) {
    throw ArgumentError("the trap needs information exponent >= 3; link '" +
                        config.link + "' has s = " + std::to_string(s));
  }
  if (std::abs(g_series.coeffs[0]) > 1e-8 * std::max(1.0, g_series.l2_norm())) {
    throw ArgumentError("the trap needs a centered link; '" + config.link +
                        "' has a nonzero mean");
  }
  const double exponent_cap = static_cast<double>(s - 2) / (s - 1);
  if (!(config.kappa_exponent > 0.0) ||
      config.kappa_exponent > exponent_cap + kBoundaryTol) {
    throw ArgumentError("kappa_exponent must lie in (0, (s-2)/(s-1)] = (0, " +
                        io::fmt(exponent_cap) + "]; got " +
                        io::fmt(config.kappa_exponent));
  }

  const HermiteSeries phi_plus = relu_hermite_series(20);
  const int nd = static_cast<int>(config.d_list.size());
  const int ns = config.n_seeds;

  TrapDemoResult result;
  result.runs.resize(static_cast<std::size_t>(nd) * ns);

  parallel_for(static_cast<long>(nd) * ns, config.workers, [&](long item) {
    const int di = static_cast<int>(item / ns);
    const int i = static_cast<int>(item % ns);
    const int d = config.d_list[di];
    const double kappa = std::pow(static_cast<double>(d), config.kappa_exponent);

    TrapDemoRun row;
    row.key = KeyBuilder("trap")
                  .add("link", config.link)
                  .add("kexp", config.kappa_exponent)
                  .add("dt", config.dt)
                  .add("tmax", config.t_max)
                  .add("d", d)
                  .add("i", i)
                  .add("root", config.seed)
                  .str();
    row.d = d;
    row.seed_index = i;
    row.bound = 3.0 / std::sqrt(static_cast<double>(d));

    if (const auto hit = cache_lookup(config.cache, row.key);
        hit && hit->size() == 2) {
      row.m0 = (*hit)[0];
      row.sup_alignment = (*hit)[1];
    } else {
      Rng rng = Rng(config.seed)
                    .child("trap")
                    .child(static_cast<std::uint64_t>(d))
                    .child(static_cast<std::uint64_t>(i));
      row.m0 = rng.sphere_vector(d)(0);

      FlowConfig fc;
      fc.dt = config.dt;
      fc.t_max = config.t_max;
      fc.record_stride = 1000;
      const FlowTrace trace =
          integrate_scalar_alignment(row.m0, kappa, g_series, phi_plus, fc);
      row.sup_alignment = trace.sup_alignment;
      cache_store(config.cache, row.key, {row.m0, row.sup_alignment});
    }
    result.runs[static_cast<std::size_t>(item)] = row;
  });

  for (const TrapDemoRun& run : result.runs) {
    if (run.sup_alignment > run.bound + kBoundaryTol) result.all_within_bound = false;
  }

  result.median_sup.resize(nd);
  result.contrasts.resize(nd);

  parallel_for(nd, config.workers, [&](long dij) {
    const int di = static_cast<int>(dij);
    const int d = config.d_list[di];

    std::vector<double> sups(ns);
    std::vector<std::pair<double, int>> order(ns);
    for (int i = 0; i < ns; ++i) {
      const TrapDemoRun& run = result.runs[static_cast<std::size_t>(di) * ns + i];
      sups[i] = run.sup_alignment;
      order[i] = {std::abs(run.m0), i};
    }
    result.median_sup[di] = median(sups);

    // Contrast starts from the run whose |m0| is the lower median, with the
    // sign conditioned positive (the links here are even in the projection).
    std::sort(order.begin(), order.end());
    const double m0c = order[static_cast<std::size_t>((ns - 1) / 2)].first;

    TrapContrastRun contrast;
    contrast.key = KeyBuilder("trap_contrast")
                       .add("link", config.link)
                       .add("kexp", config.kappa_exponent)
                       .add("cdt", config.contrast_dt)
                       .add("ceps", config.contrast_eps)
                       .add("cmult", config.contrast_t_mult)
                       .add("d", d)
                       .add("m0", m0c)
                       .add("root", config.seed)
                       .str();
    contrast.d = d;

    if (const auto hit = cache_lookup(config.cache, contrast.key);
        hit && hit->size() == 5) {
      contrast.m0_bar = (*hit)[0];
      contrast.final_alignment = (*hit)[1];
      if ((*hit)[2] > 0.5) contrast.hit_eps = (*hit)[3];
      contrast.t_end = (*hit)[4];
    } else {
      const std::uint64_t gseed = stable_hash(contrast.key);
      const Geometry geom =
          construct_geometry(d, 0.0, config.kappa_exponent, gseed);
      const SingleIndexTask task = make_task(geom, config.link, 0.0);
      const double kappa = geom.kappa;
      const double mbar0 =
          m0c * std::sqrt((1.0 + kappa) / (1.0 + kappa * m0c * m0c));

      const Eigen::VectorXd ubar = transformed_target(task);
      const Eigen::VectorXd v = unit_orthogonal(Rng(gseed).child("contrast"), ubar);
      const Eigen::VectorXd w0 =
          mbar0 * ubar + std::sqrt(std::max(0.0, 1.0 - mbar0 * mbar0)) * v;

      const HermiteSeries phi_c = zeta(g_series, phi_plus, mbar0) < 0.0
                                      ? phi_plus
                                      : scaled(phi_plus, -1.0);
      const double c_lead =
          std::abs(s * g_series.coeffs[s] * phi_c.coeffs[s]);
      if (!(c_lead > 1e-12)) {
        throw ArgumentError("the activation has no drive at order s = " +
                            std::to_string(s) + " against link '" + config.link +
                            "'");
      }

      FlowConfig fc;
      fc.dt = config.contrast_dt;
      fc.eps_target = config.contrast_eps;
      fc.record_stride = 1000;
      fc.t_max = config.contrast_t_mult *
                 ((1.0 / (mbar0 * mbar0) + 1.0 / config.contrast_eps) /
                      (2.0 * c_lead) +
                  10.0);

      const FlowProblem problem = FlowProblem::population(task, phi_c);
      const FlowTrace trace =
          integrate_flow(FlowKind::population_normalized, w0, problem, fc);

      contrast.m0_bar = mbar0;
      contrast.final_alignment = ubar.dot(trace.final_w) / trace.final_w.norm();
      contrast.hit_eps = trace.hit_eps;
      contrast.t_end = trace.t_end;
      cache_store(config.cache, contrast.key,
                  {contrast.m0_bar, contrast.final_alignment,
                   contrast.hit_eps ? 1.0 : 0.0, contrast.hit_eps.value_or(-1.0),
                   contrast.t_end});
    }
    result.contrasts[di] = contrast;
  });

  std::vector<double> ds(config.d_list.begin(), config.d_list.end());
  result.fit = fit_loglog(ds, result.median_sup);
  return result;
}

TauScalingResult run_tau_scaling(const TauScalingConfig& config) {
  if (config.s_list.empty()) throw ArgumentError("tau_scaling needs a nonempty s list");
  for (const int s : config.s_list) {
    if (s < 1) throw ArgumentError("tau_scaling needs every s >= 1");
  }
  if (!(config.m0_lo > 0.0 && config.m0_lo < config.m0_hi && config.m0_hi < 1.0)) {
    throw ArgumentError("tau_scaling needs 0 < m0_lo < m0_hi < 1");
  }
  if (config.m0_count < 2) throw ArgumentError("tau_scaling needs m0_count >= 2");
  if (config.d < 2) throw ArgumentError("tau_scaling needs d >= 2");
  if (!(config.dt > 0.0)) throw ArgumentError("tau_scaling needs positive dt");

  const int nk = config.m0_count;
  const int nsv = static_cast<int>(config.s_list.size());

  TauScalingResult result;
  result.rows.resize(static_cast<std::size_t>(nsv) * nk);

  parallel_for(static_cast<long>(nsv) * nk, config.workers, [&](long item) {
    const int si = static_cast<int>(item / nk);
    const int k = static_cast<int>(item % nk);
    const int s = config.s_list[si];
    const double m0 = config.m0_lo *
                      std::pow(config.m0_hi / config.m0_lo,
                               static_cast<double>(k) / (nk - 1));
    const std::string link_name = "hermite:" + std::to_string(s);

    TauScalingRow row;
    row.key = KeyBuilder("tau")
                  .add("link", link_name)
                  .add("d", config.d)
                  .add("dt", config.dt)
                  .add("m0", m0)
                  .add("root", config.seed)
                  .str();
    row.s = s;
    row.m0 = m0;

    if (const auto hit = cache_lookup(config.cache, row.key);
        hit && hit->size() == 1) {
      row.hit_half = (*hit)[0];
    } else {
      const std::uint64_t rseed = stable_hash(row.key);
      Rng rng(rseed);
      Eigen::VectorXd u = rng.child("target").sphere_vector(config.d);
      Geometry geom{u, u, 0.0, 0.0, 0.0, rseed};
      const SingleIndexTask task = make_task(geom, link_name, 0.0);

      const Eigen::VectorXd ubar = transformed_target(task);
      const Eigen::VectorXd v = unit_orthogonal(rng.child("perp"), ubar);
      const Eigen::VectorXd w0 =
          m0 * ubar + std::sqrt(std::max(0.0, 1.0 - m0 * m0)) * v;

      FlowConfig fc;
      fc.dt = config.dt;
      fc.eps_target = 0.25;
      fc.record_stride = 1000;
      fc.t_max = 4.0 * tau_horizon(s, m0) + 20.0;

      const FlowProblem problem = FlowProblem::population(task, task.link_series);
      const FlowTrace trace =
          integrate_flow(FlowKind::population_normalized, w0, problem, fc);
      if (!trace.hit_half) {
        throw NumericError("flow never reached alignment 1/2 for s = " +
                           std::to_string(s) + ", m0 = " + io::fmt(m0));
      }
      row.hit_half = *trace.hit_half;
      cache_store(config.cache, row.key, {row.hit_half});
    }
    result.rows[static_cast<std::size_t>(item)] = row;
  });

  result.fits.resize(nsv);
  for (int si = 0; si < nsv; ++si) {
    std::vector<double> inv_m0(nk), times(nk);
    for (int k = 0; k < nk; ++k) {
      const TauScalingRow& row = result.rows[static_cast<std::size_t>(si) * nk + k];
      inv_m0[k] = 1.0 / row.m0;
      times[k] = row.hit_half;
    }
    result.fits[si] = fit_loglog(inv_m0, times);
  }
  return result;
}

namespace {

bool probe_run_succeeds(const ProbeConfig& config, const LinkFunction& phi, int s,
                        long n, long seed_index) {
  const std::string base = KeyBuilder("probe-seed")
                               .add("root", config.seed)
                               .add("i", seed_index)
                               .str();
  const std::uint64_t geom_seed = stable_hash(base + "|geom");
  const std::uint64_t data_seed = stable_hash(base + "|data");
  const std::uint64_t init_seed = stable_hash(base + "|init");

  const Geometry geom =
      construct_geometry(config.d, config.r1, config.r2, geom_seed);
  const SingleIndexTask task = make_task(geom, config.link, config.noise_sigma);
  const Dataset data = sample_dataset(task, static_cast<int>(n),
                                      static_cast<int>(n), data_seed);
  const GeneralCovariance sigma_hat = estimate_covariance(data.unlabeled);
  const Covariance sigma_view = sigma_hat;

  const Eigen::VectorXd ubar = transformed_target(task);
  const Eigen::VectorXd w0 =
      init_first_layer(config.d, init_seed, true, sigma_view, ubar);
  const double m0_bar = alignment_bar(w0, sigma_view, ubar);

  double horizon =
      config.t_max_mult * (tau_horizon(s, m0_bar) + std::log(1.0 / config.eps));
  if (config.theorem_horizon && config.kind == FlowKind::empirical_normalized) {
    horizon /= cov_lambda_min(task.covariance);
  }

  FlowConfig fc;
  fc.dt = config.dt;
  fc.t_max = horizon;
  fc.eps_target = config.eps;
  fc.record_stride = 4096;

  const FlowProblem problem = FlowProblem::empirical(data, sigma_hat, phi, &task);
  try {
    const FlowTrace trace = integrate_flow(config.kind, w0, problem, fc);
    return trace.hit_eps.has_value();
  } catch (const FlowDivergedError&) {
    return false;
  }
}

}  // namespace

ProbeResult probe_sample_complexity(const ProbeConfig& config) {
  if (config.d < 2 || config.d > 64) {
    throw ArgumentError("sample-complexity probes support 2 <= d <= 64; got " +
                        std::to_string(config.d));
  }
  if (!(config.eps > 0.0 && config.eps < 1.0)) {
    throw ArgumentError("probe eps must lie in (0, 1)");
  }
  if (!(config.success_prob > 0.0 && config.success_prob <= 1.0)) {
    throw ArgumentError("success_prob must lie in (0, 1]");
  }
  if (config.n_seeds < 1) throw ArgumentError("probe needs n_seeds >= 1");
  if (config.n_lo < 1 || config.n_hi < config.n_lo) {
    throw ArgumentError("probe needs 1 <= n_lo <= n_hi");
  }
  if (!(config.resolution > 1.0)) {
    throw ArgumentError("bisection resolution must exceed 1");
  }
  if (!(config.t_max_mult > 0.0)) {
    throw ArgumentError("t_max_mult must be positive");
  }
  if (config.kind != FlowKind::empirical_normalized &&
      config.kind != FlowKind::empirical_preconditioned) {
    throw ArgumentError(
        "the probe varies the labeled sample count; pick an empirical flow kind");
  }

  const std::string phi_name = config.phi.empty() ? config.link : config.phi;
  const LinkFunction phi = make_link(phi_name);
  const HermiteSeries g_series = hermite_coeffs(make_link(config.link));
  const int s = require_info_exponent(g_series, "link '" + config.link + "'");

  const std::string prefix = KeyBuilder("probe")
                                 .add("d", config.d)
                                 .add("r1", config.r1)
                                 .add("r2", config.r2)
                                 .add("link", config.link)
                                 .add("phi", phi_name)
                                 .add("sigma", config.noise_sigma)
                                 .add("kind", flow_kind_name(config.kind))
                                 .add("eps", config.eps)
                                 .add("mult", config.t_max_mult)
                                 .add("thm", config.theorem_horizon ? 1 : 0)
                                 .add("dt", config.dt)
                                 .add("seeds", config.n_seeds)
                                 .add("root", config.seed)
                                 .str();

  std::map<long, std::pair<std::string, double>> fractions;
  auto evaluate = [&](long n) -> double {
    if (const auto it = fractions.find(n); it != fractions.end()) {
      return it->second.second;
    }
    const std::string key = prefix + "|n=" + std::to_string(n);
    double fraction;
    if (const auto hit = cache_lookup(config.cache, key); hit && hit->size() == 1) {
      fraction = (*hit)[0];
    } else {
      std::atomic<int> successes{0};
      parallel_for(config.n_seeds, config.workers, [&](long i) {
        if (probe_run_succeeds(config, phi, s, n, i)) {
          successes.fetch_add(1, std::memory_order_relaxed);
        }
      });
      fraction = static_cast<double>(successes.load()) / config.n_seeds;
      cache_store(config.cache, key, {fraction});
    }
    fractions[n] = {key, fraction};
    return fraction;
  };
  const auto succeeds = [&](double fraction) {
    return fraction + kBoundaryTol >= config.success_prob;
  };

  ProbeResult result;
  if (config.verify_upper_first) {
    const double f_hi = evaluate(config.n_hi);
    if (!succeeds(f_hi)) {
      throw InfeasibleBracketError(
          "no success at the upper bound: fraction " + io::fmt(f_hi) + " < " +
          io::fmt(config.success_prob) + " at n = " + std::to_string(config.n_hi));
    }
  }

  if (succeeds(evaluate(config.n_lo))) {
    result.n_star = config.n_lo;
    result.at_lower_bound = true;
  } else {
    long lo = config.n_lo;
    long hi = config.n_hi;
    bool bracketed = false;
    long cursor = config.n_lo;
    while (cursor < config.n_hi) {
      const long next = std::min(cursor * 2, config.n_hi);
      if (succeeds(evaluate(next))) {
        lo = cursor;
        hi = next;
        bracketed = true;
        break;
      }
      cursor = next;
    }
    if (!bracketed) {
      throw InfeasibleBracketError(
          "no success at the upper bound n = " + std::to_string(config.n_hi));
    }
    while (static_cast<double>(hi) / lo > config.resolution) {
      long mid = std::llround(std::sqrt(static_cast<double>(lo) *
                                        static_cast<double>(hi)));
      mid = std::max(lo + 1, std::min(mid, hi - 1));
      if (mid <= lo || mid >= hi) break;
      if (succeeds(evaluate(mid))) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    result.n_star = hi;
  }

  result.evals.reserve(fractions.size());
  for (const auto& [n, entry] : fractions) {
    result.evals.push_back({entry.first, n, entry.second});
  }
  return result;
}

double predicted_complexity_exponent(double r1, double r2, int s,
                                     bool preconditioned) {
  if (std::abs(r2 - r1) < kBoundaryTol || std::abs(r2 - 2.0 * r1) < kBoundaryTol) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double escape;
  if (r2 < r1) {
    escape = 1.0;
  } else if (r2 < 2.0 * r1) {
    escape = 1.0 - 2.0 * (r2 - r1);
  } else {
    escape = 1.0 - r2;
  }
  double exponent = 1.0 + (s - 1) * escape;
  if (!preconditioned) exponent += 2.0 * r2;
  return exponent;
}

PhaseDiagramResult run_phase_diagram(const PhaseDiagramConfig& config) {
  if (config.d_list.size() < 3) {
    throw ArgumentError("phase_diagram needs at least three dimensions to fit");
  }
  if (config.cells.empty()) {
    throw ArgumentError("phase_diagram needs a nonempty cell list");
  }

  const HermiteSeries g_series = hermite_coeffs(make_link(config.probe.link));
  const int s = require_info_exponent(g_series, "link '" + config.probe.link + "'");
  const bool preconditioned =
      config.probe.kind == FlowKind::empirical_preconditioned;

  PhaseDiagramResult result;
  result.cells.reserve(config.cells.size());

  for (const PhaseCell& cell : config.cells) {
    PhaseCellResult out;
    out.r1 = cell.r1;
    out.r2 = cell.r2;
    const bool boundary = std::abs(cell.r2 - cell.r1) < kBoundaryTol ||
                          std::abs(cell.r2 - 2.0 * cell.r1) < kBoundaryTol;
    if (boundary) {
      out.regime = "boundary";
    } else if (cell.r2 < cell.r1) {
      out.regime = "r2<r1";
    } else if (cell.r2 < 2.0 * cell.r1) {
      out.regime = "r1<r2<2r1";
    } else {
      out.regime = "2r1<r2";
    }
    out.predicted_exponent =
        predicted_complexity_exponent(cell.r1, cell.r2, s, preconditioned);
    out.n_stars.assign(config.d_list.size(), -1);

    for (std::size_t j = 0; j < config.d_list.size(); ++j) {
      ProbeConfig pc = config.probe;
      pc.d = config.d_list[j];
      pc.r1 = cell.r1;
      pc.r2 = cell.r2;
      try {
        out.n_stars[j] = probe_sample_complexity(pc).n_star;
      } catch (const InfeasibleBracketError& e) {
        out.failed = true;
        out.note += "d=" + std::to_string(pc.d) + ": " + e.what() + "; ";
      } catch (const NumericError& e) {
        out.failed = true;
        out.note += "d=" + std::to_string(pc.d) + ": " + e.what() + "; ";
      }
    }

    std::vector<double> xs, ys;
    for (std::size_t j = 0; j < config.d_list.size(); ++j) {
      if (out.n_stars[j] > 0) {
        xs.push_back(static_cast<double>(config.d_list[j]));
        ys.push_back(static_cast<double>(out.n_stars[j]));
      }
    }
    if (xs.size() >= 2) {
      out.fit = fit_loglog(xs, ys);
    } else {
      out.failed = true;
      out.note += "too few successful probes to fit; ";
    }
    result.cells.push_back(std::move(out));
  }
  return result;
}

double predicted_init_slope(double r1, double r2) {
  if (r2 <= r1) return -0.5;
  if (r2 <= 2.0 * r1) return r2 - r1 - 0.5;
  return (r2 - 1.0) / 2.0;
}

InitAlignmentResult run_init_alignment(const InitAlignmentConfig& config) {
  if (config.d_list.size() < 2) {
    throw ArgumentError("init_alignment needs at least two dimensions to fit");
  }
  for (const int d : config.d_list) {
    if (d < 2) throw ArgumentError("init_alignment needs every d >= 2");
  }
  if (config.n_seeds < 100) {
    throw ArgumentError("init_alignment needs at least 100 seeds per dimension");
  }

  const int nd = static_cast<int>(config.d_list.size());
  const int ns = config.n_seeds;

  InitAlignmentResult result;
  result.rows.resize(static_cast<std::size_t>(nd) * ns);

  parallel_for(static_cast<long>(nd) * ns, config.workers, [&](long item) {
    const int di = static_cast<int>(item / ns);
    const int i = static_cast<int>(item % ns);
    const int d = config.d_list[di];

    const std::string base = KeyBuilder("init_alignment")
                                 .add("r1", config.r1)
                                 .add("r2", config.r2)
                                 .add("d", d)
                                 .add("root", config.seed)
                                 .str();
    // One geometry per dimension; only the initialization varies with i.
    const Geometry geom =
        construct_geometry(d, config.r1, config.r2, stable_hash(base + "|geom"));
    const Covariance cov = SpikedCovariance(d, geom.kappa, geom.theta);
    const Eigen::VectorXd ubar =
        cov_power_apply(cov, MatrixPower::half, geom.u).normalized();
    const Eigen::VectorXd w0 = init_first_layer(
        d, stable_hash(base + "|w|i=" + std::to_string(i)), true, cov, ubar);

    InitAlignmentRow row;
    row.key = base + "|i=" + std::to_string(i);
    row.d = d;
    row.seed_index = i;
    row.alignment = alignment_bar(w0, cov, ubar);
    result.rows[static_cast<std::size_t>(item)] = row;
  });

  result.medians.resize(nd);
  for (int di = 0; di < nd; ++di) {
    std::vector<double> values(ns);
    for (int i = 0; i < ns; ++i) {
      values[i] = result.rows[static_cast<std::size_t>(di) * ns + i].alignment;
    }
    result.medians[di] = median(values);
  }

  std::vector<double> ds(config.d_list.begin(), config.d_list.end());
  result.fit = fit_loglog(ds, result.medians);
  result.predicted_slope = predicted_init_slope(config.r1, config.r2);
  return result;
}

PipelineResult run_full_pipeline(const PipelineConfig& config) {
  if (config.m_list.empty()) {
    throw ArgumentError("full_pipeline needs a nonempty width list");
  }
  for (const int m : config.m_list) {
    if (m < 1) throw ArgumentError("full_pipeline needs every width >= 1");
  }
  if (config.n < 2 || config.n > (1L << 30)) {
    throw ArgumentError("full_pipeline needs 2 <= n <= 2^30");
  }
  if (config.n_test < 2) throw ArgumentError("full_pipeline needs n_test >= 2");
  if (config.n_seeds < 1) throw ArgumentError("full_pipeline needs n_seeds >= 1");

  const long nu = config.n_unlabeled < 0 ? config.n : config.n_unlabeled;
  if (nu < 1 || nu > (1L << 30)) {
    throw ArgumentError("full_pipeline needs 1 <= n_unlabeled <= 2^30");
  }

  const int nm = static_cast<int>(config.m_list.size());
  const int ns = config.n_seeds;

  PipelineResult result;
  result.m_list = config.m_list;
  result.rows.resize(static_cast<std::size_t>(nm) * ns);

  parallel_for(static_cast<long>(nm) * ns, config.workers, [&](long item) {
    const int mi = static_cast<int>(item / ns);
    const int i = static_cast<int>(item % ns);
    const int m = config.m_list[mi];

    PipelineRow row;
    row.key = KeyBuilder("pipeline")
                  .add("d", config.d)
                  .add("r1", config.r1)
                  .add("r2", config.r2)
                  .add("link", config.link)
                  .add("sigma", config.noise_sigma)
                  .add("n", config.n)
                  .add("nu", nu)
                  .add("ntest", config.n_test)
                  .add("kind", flow_kind_name(config.train.stage1_kind))
                  .add("delta", config.train.delta)
                  .add("lambda", config.train.lambda)
                  .add("tprime", config.train.t_prime)
                  .add("dta", config.train.dt_a)
                  .add("s1dt", config.train.stage1.dt)
                  .add("s1tmax", config.train.stage1.t_max)
                  .add("s1eps", config.train.stage1.eps_target)
                  .add("s1int", integrator_name(config.train.stage1.integrator))
                  .add("m", m)
                  .add("i", i)
                  .add("root", config.seed)
                  .str();
    row.m = m;
    row.seed_index = i;

    if (const auto hit = cache_lookup(config.cache, row.key);
        hit && hit->size() == 3) {
      row.risk = (*hit)[0];
      row.alignment = (*hit)[1];
      row.lambda = (*hit)[2];
    } else {
      // Seed entropy depends on the seed index alone so that all widths see
      // the same task, data, and test draw (paired comparisons).
      const std::string seed_base = KeyBuilder("pipeline-seed")
                                        .add("root", config.seed)
                                        .add("i", i)
                                        .str();
      const Geometry geom = construct_geometry(
          config.d, config.r1, config.r2, stable_hash(seed_base + "|geom"));
      const SingleIndexTask task =
          make_task(geom, config.link, config.noise_sigma);
      const Dataset data =
          sample_dataset(task, static_cast<int>(config.n),
                         static_cast<int>(nu), stable_hash(seed_base + "|data"));

      TrainConfig tc = config.train;
      tc.m = m;
      tc.n = config.n;
      tc.n_unlabeled = nu;
      tc.seed = stable_hash(seed_base + "|train");

      const TrainResult trained = train_two_layer(task, data, tc);
      row.risk = test_risk(trained.net, task, config.n_test,
                           stable_hash(seed_base + "|risk"));
      row.alignment = trained.stage1_alignment;
      row.lambda = trained.lambda;
      cache_store(config.cache, row.key, {row.risk, row.alignment, row.lambda});
    }
    result.rows[static_cast<std::size_t>(item)] = row;
  });

  result.median_risk.resize(nm);
  for (int mi = 0; mi < nm; ++mi) {
    std::vector<double> risks(ns);
    for (int i = 0; i < ns; ++i) {
      risks[i] = result.rows[static_cast<std::size_t>(mi) * ns + i].risk;
    }
    result.median_risk[mi] = median(risks);
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON experiment dispatch
// ---------------------------------------------------------------------------

namespace {

/// Append-only memo of finished work items backing WorkCache. Lines are
/// (key digest, canonical parameters, semicolon-joined values); the file is
/// rewritten in key order once a sweep completes so reruns are byte-stable.
class RowCache {
 public:
  explicit RowCache(std::filesystem::path file) : file_(std::move(file)) {
    if (std::filesystem::exists(file_)) {
      const io::CsvContent content = io::read_csv(file_);
      for (const auto& row : content.rows) {
        if (row.size() == 3) entries_[row[0]] = {row[1], parse_values(row[2])};
      }
    } else {
      io::write_csv(file_, {}, {"key", "parameters", "values"}, {});
    }
  }

  std::optional<std::vector<double>> lookup(const std::string& canonical) {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = entries_.find(io::digest(canonical));
    if (it == entries_.end()) return std::nullopt;
    return it->second.second;
  }

  void store(const std::string& canonical, const std::vector<double>& values) {
    std::lock_guard<std::mutex> lock(mutex_);
    const std::string key = io::digest(canonical);
    if (entries_.count(key) > 0) return;
    entries_[key] = {canonical, values};
    std::ofstream out(file_, std::ios::app);
    out << key << ',' << canonical << ',' << join_values(values) << '\n';
  }

  void rewrite_sorted() {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::vector<std::string>> rows;
    rows.reserve(entries_.size());
    for (const auto& [key, entry] : entries_) {
      rows.push_back({key, entry.first, join_values(entry.second)});
    }
    io::write_csv(file_, {}, {"key", "parameters", "values"}, rows);
  }

 private:
  static std::string join_values(const std::vector<double>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i > 0) out += ';';
      out += io::fmt(values[i]);
    }
    return out;
  }

  static std::vector<double> parse_values(const std::string& text) {
    std::vector<double> values;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t stop = text.find(';', start);
      const std::string piece =
          text.substr(start, stop == std::string::npos ? stop : stop - start);
      if (!piece.empty()) values.push_back(std::stod(piece));
      if (stop == std::string::npos) break;
      start = stop + 1;
    }
    return values;
  }

  std::filesystem::path file_;
  std::map<std::string, std::pair<std::string, std::vector<double>>> entries_;
  std::mutex mutex_;
};

/// Typed view over a JSON object that tracks consumed keys; finish() rejects
/// anything left over so config typos fail loudly.
class SpecReader {
 public:
  SpecReader(const nlohmann::json& j, std::string where)
      : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ArgumentError(where_ + " must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    known_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError(where_ + "." + key + " has the wrong type: " + e.what());
    }
  }

  nlohmann::json raw(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) ? j_.at(key) : nlohmann::json();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (known_.count(item.key()) == 0) {
        throw ArgumentError("unknown key '" + item.key() + "' in " + where_);
      }
    }
  }

  const std::string& where() const { return where_; }

 private:
  const nlohmann::json& j_;
  std::string where_;
  std::set<std::string> known_;
};

/// Root seed plus, where the experiment has one, a seed count. "seeds" may be
/// an integer count or an explicit list (the first entry becomes the root
/// when no separate "seed" is given).
void read_seed_fields(SpecReader& reader, std::uint64_t* seed, int* n_seeds) {
  const bool have_scalar = reader.has("seed");
  *seed = reader.get<std::uint64_t>("seed", *seed);
  if (!reader.has("seeds")) {
    if (n_seeds != nullptr) *n_seeds = reader.get<int>("n_seeds", *n_seeds);
    return;
  }
  const nlohmann::json seeds = reader.raw("seeds");
  if (seeds.is_number_integer()) {
    if (n_seeds == nullptr) {
      throw ArgumentError(reader.where() + ".seeds: this experiment takes a "
                          "single root seed; use \"seed\"");
    }
    *n_seeds = seeds.get<int>();
  } else if (seeds.is_array() && !seeds.empty()) {
    if (n_seeds != nullptr) *n_seeds = static_cast<int>(seeds.size());
    if (!have_scalar) *seed = seeds.front().get<std::uint64_t>();
  } else {
    throw ArgumentError(reader.where() +
                        ".seeds must be an integer count or a nonempty list");
  }
  if (n_seeds != nullptr) *n_seeds = reader.get<int>("n_seeds", *n_seeds);
}

ProbeConfig parse_probe_config(SpecReader& reader) {
  ProbeConfig c;
  c.d = reader.get<int>("d", c.d);
  c.r1 = reader.get<double>("r1", c.r1);
  c.r2 = reader.get<double>("r2", c.r2);
  c.link = reader.get<std::string>("link", c.link);
  c.phi = reader.get<std::string>("phi", c.phi);
  c.noise_sigma = reader.get<double>("noise_sigma", c.noise_sigma);
  c.kind = parse_flow_kind(
      reader.get<std::string>("kind", flow_kind_name(c.kind)));
  c.eps = reader.get<double>("eps", c.eps);
  c.success_prob = reader.get<double>("success_prob", c.success_prob);
  c.n_lo = reader.get<long>("n_lo", c.n_lo);
  c.n_hi = reader.get<long>("n_hi", c.n_hi);
  c.resolution = reader.get<double>("resolution", c.resolution);
  c.dt = reader.get<double>("dt", c.dt);
  c.t_max_mult = reader.get<double>("t_max_mult", c.t_max_mult);
  c.theorem_horizon = reader.get<bool>("theorem_horizon", c.theorem_horizon);
  c.verify_upper_first =
      reader.get<bool>("verify_upper_first", c.verify_upper_first);
  read_seed_fields(reader, &c.seed, &c.n_seeds);
  return c;
}

TrainConfig parse_train_config(const nlohmann::json& j, const std::string& where) {
  TrainConfig c;
  if (j.is_null()) return c;
  SpecReader reader(j, where);
  c.delta = reader.get<double>("delta", c.delta);
  c.lambda = reader.get<double>("lambda", c.lambda);
  c.t_prime = reader.get<double>("t_prime", c.t_prime);
  c.dt_a = reader.get<double>("dt_a", c.dt_a);
  c.stage1_kind = parse_flow_kind(
      reader.get<std::string>("stage1_kind", flow_kind_name(c.stage1_kind)));
  const nlohmann::json stage1 = reader.raw("stage1");
  if (!stage1.is_null()) {
    SpecReader s1(stage1, where + ".stage1");
    c.stage1.dt = s1.get<double>("dt", c.stage1.dt);
    c.stage1.t_max = s1.get<double>("t_max", c.stage1.t_max);
    c.stage1.eps_target = s1.get<double>("eps_target", c.stage1.eps_target);
    c.stage1.record_stride = s1.get<int>("record_stride", c.stage1.record_stride);
    c.stage1.integrator = parse_integrator(
        s1.get<std::string>("integrator", integrator_name(c.stage1.integrator)));
    s1.finish();
  }
  reader.finish();
  return c;
}

std::vector<PhaseCell> parse_cells(const nlohmann::json& arr,
                                   const std::string& where) {
  if (!arr.is_array() || arr.empty()) {
    throw ArgumentError(where + " must be a nonempty list of (r1, r2) cells");
  }
  std::vector<PhaseCell> cells;
  cells.reserve(arr.size());
  for (const auto& entry : arr) {
    PhaseCell cell;
    if (entry.is_array() && entry.size() == 2) {
      cell.r1 = entry.at(0).get<double>();
      cell.r2 = entry.at(1).get<double>();
    } else if (entry.is_object() && entry.contains("r1") && entry.contains("r2")) {
      cell.r1 = entry.at("r1").get<double>();
      cell.r2 = entry.at("r2").get<double>();
    } else {
      throw ArgumentError(where + " entries must be [r1, r2] pairs or "
                          "{\"r1\":..., \"r2\":...} objects");
    }
    cells.push_back(cell);
  }
  return cells;
}

nlohmann::json fit_json(const FitResult& fit) {
  return nlohmann::json{{"slope", fit.slope},
                        {"intercept", fit.intercept},
                        {"slope_se", fit.slope_se},
                        {"r2", fit.r2},
                        {"n", fit.n}};
}

struct SteinCase {
  std::string f = "identity";
  std::string g = "identity";
  double rho = 0.0;
};

std::vector<SteinCase> parse_stein_cases(const nlohmann::json& arr,
                                         const std::string& where) {
  if (arr.is_null()) {
    return {{"identity", "identity", 0.0},
            {"phase_retrieval", "identity", 0.0},
            {"relu", "hermite:3", 0.6}};
  }
  if (!arr.is_array() || arr.empty()) {
    throw ArgumentError(where + " must be a nonempty list of cases");
  }
  std::vector<SteinCase> cases;
  for (const auto& entry : arr) {
    SpecReader reader(entry, where + " entry");
    SteinCase c;
    c.f = reader.get<std::string>("f", c.f);
    c.g = reader.get<std::string>("g", c.g);
    c.rho = reader.get<double>("rho", c.rho);
    reader.finish();
    cases.push_back(c);
  }
  return cases;
}

}  // namespace

ExperimentOutput run_experiment(const nlohmann::json& spec, int workers) {
  SpecReader top(spec, "spec");
  const std::string token = top.get<std::string>("experiment", "");
  if (token.empty()) throw ArgumentError("spec.experiment is required");
  const ExperimentKind kind = parse_experiment_kind(token);
  const std::string name = experiment_kind_name(kind);
  const std::string stem = top.get<std::string>("output", name);
  const bool timing = top.get<bool>("timing", false);

  const auto rows_path = io::resolve_output(stem + "_rows.csv");
  const auto summary_path = io::resolve_output(stem + "_summary.json");
  RowCache row_cache(io::resolve_output(stem + "_cache.csv"));
  WorkCache hooks{
      [&row_cache](const std::string& key) { return row_cache.lookup(key); },
      [&row_cache](const std::string& key, const std::vector<double>& values) {
        row_cache.store(key, values);
      }};

  const auto started = std::chrono::steady_clock::now();
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  nlohmann::json summary;
  summary["experiment"] = name;

  switch (kind) {
    case ExperimentKind::spiked_trap_demo: {
      TrapDemoConfig c;
      c.d_list = top.get<std::vector<int>>("d_list", c.d_list);
      c.kappa_exponent = top.get<double>("kappa_exponent", c.kappa_exponent);
      c.link = top.get<std::string>("link", c.link);
      c.dt = top.get<double>("dt", c.dt);
      c.t_max = top.get<double>("t_max", c.t_max);
      c.contrast_dt = top.get<double>("contrast_dt", c.contrast_dt);
      c.contrast_eps = top.get<double>("contrast_eps", c.contrast_eps);
      c.contrast_t_mult = top.get<double>("contrast_t_mult", c.contrast_t_mult);
      read_seed_fields(top, &c.seed, &c.n_seeds);
      c.workers = workers;
      c.cache = &hooks;

      const TrapDemoResult r = run_spiked_trap_demo(c);

      header = {"key", "d", "seed_index", "m0", "sup_alignment", "bound", "within"};
      for (const TrapDemoRun& run : r.runs) {
        rows.push_back({io::digest(run.key), std::to_string(run.d),
                        std::to_string(run.seed_index), io::fmt(run.m0),
                        io::fmt(run.sup_alignment), io::fmt(run.bound),
                        run.sup_alignment <= run.bound + kBoundaryTol ? "1" : "0"});
      }

      summary["config"] = {{"d_list", c.d_list},
                           {"kappa_exponent", c.kappa_exponent},
                           {"link", c.link},
                           {"n_seeds", c.n_seeds},
                           {"dt", c.dt},
                           {"t_max", c.t_max},
                           {"contrast_dt", c.contrast_dt},
                           {"contrast_eps", c.contrast_eps},
                           {"contrast_t_mult", c.contrast_t_mult},
                           {"seed", c.seed}};
      summary["fit"] = fit_json(r.fit);
      summary["d_list"] = c.d_list;
      summary["median_sup"] = r.median_sup;
      summary["all_within_bound"] = r.all_within_bound;
      nlohmann::json contrasts = nlohmann::json::array();
      for (const TrapContrastRun& cr : r.contrasts) {
        nlohmann::json e{{"d", cr.d},
                         {"m0_bar", cr.m0_bar},
                         {"final_alignment", cr.final_alignment},
                         {"t_end", cr.t_end}};
        e["hit_eps"] = cr.hit_eps ? nlohmann::json(*cr.hit_eps)
                                  : nlohmann::json();
        contrasts.push_back(e);
      }
      summary["contrasts"] = contrasts;
      break;
    }

    case ExperimentKind::tau_scaling: {
      TauScalingConfig c;
      c.s_list = top.get<std::vector<int>>("s_list", c.s_list);
      c.m0_lo = top.get<double>("m0_lo", c.m0_lo);
      c.m0_hi = top.get<double>("m0_hi", c.m0_hi);
      c.m0_count = top.get<int>("m0_count", c.m0_count);
      c.d = top.get<int>("d", c.d);
      c.dt = top.get<double>("dt", c.dt);
      read_seed_fields(top, &c.seed, nullptr);
      c.workers = workers;
      c.cache = &hooks;

      const TauScalingResult r = run_tau_scaling(c);

      header = {"key", "s", "m0", "hit_half"};
      for (const TauScalingRow& row : r.rows) {
        rows.push_back({io::digest(row.key), std::to_string(row.s),
                        io::fmt(row.m0), io::fmt(row.hit_half)});
      }

      summary["config"] = {{"s_list", c.s_list}, {"m0_lo", c.m0_lo},
                           {"m0_hi", c.m0_hi},   {"m0_count", c.m0_count},
                           {"d", c.d},           {"dt", c.dt},
                           {"seed", c.seed}};
      nlohmann::json fits = nlohmann::json::array();
      for (std::size_t si = 0; si < c.s_list.size(); ++si) {
        fits.push_back({{"s", c.s_list[si]},
                        {"expected_slope", c.s_list[si] - 2},
                        {"fit", fit_json(r.fits[si])}});
      }
      summary["fits"] = fits;
      break;
    }

    case ExperimentKind::sample_complexity_probe: {
      ProbeConfig c = parse_probe_config(top);
      c.workers = workers;
      c.cache = &hooks;

      const ProbeResult r = probe_sample_complexity(c);

      header = {"key", "n", "success_fraction"};
      for (const ProbeEval& eval : r.evals) {
        rows.push_back({io::digest(eval.key), std::to_string(eval.n),
                        io::fmt(eval.success_fraction)});
      }

      summary["config"] = {{"d", c.d},
                           {"r1", c.r1},
                           {"r2", c.r2},
                           {"link", c.link},
                           {"phi", c.phi.empty() ? c.link : c.phi},
                           {"noise_sigma", c.noise_sigma},
                           {"kind", flow_kind_name(c.kind)},
                           {"eps", c.eps},
                           {"success_prob", c.success_prob},
                           {"n_seeds", c.n_seeds},
                           {"n_lo", c.n_lo},
                           {"n_hi", c.n_hi},
                           {"resolution", c.resolution},
                           {"t_max_mult", c.t_max_mult},
                           {"seed", c.seed}};
      summary["n_star"] = r.n_star;
      summary["at_lower_bound"] = r.at_lower_bound;
      break;
    }

    case ExperimentKind::phase_diagram: {
      PhaseDiagramConfig c;
      c.d_list = top.get<std::vector<int>>("d_list", c.d_list);
      c.cells = parse_cells(top.raw("cells"), "spec.cells");
      const nlohmann::json probe_spec = top.raw("probe");
      if (!probe_spec.is_null()) {
        SpecReader pr(probe_spec, "spec.probe");
        c.probe = parse_probe_config(pr);
        pr.finish();
      }
      c.probe.workers = workers;
      c.probe.cache = &hooks;

      const PhaseDiagramResult r = run_phase_diagram(c);

      header = {"key", "r1", "r2", "d", "n_star", "regime", "failed"};
      nlohmann::json cells = nlohmann::json::array();
      for (const PhaseCellResult& cell : r.cells) {
        for (std::size_t j = 0; j < c.d_list.size(); ++j) {
          const std::string key = KeyBuilder("phase")
                                      .add("r1", cell.r1)
                                      .add("r2", cell.r2)
                                      .add("d", c.d_list[j])
                                      .add("link", c.probe.link)
                                      .add("kind", flow_kind_name(c.probe.kind))
                                      .add("root", c.probe.seed)
                                      .str();
          rows.push_back({io::digest(key), io::fmt(cell.r1), io::fmt(cell.r2),
                          std::to_string(c.d_list[j]),
                          std::to_string(cell.n_stars[j]), cell.regime,
                          cell.failed ? "1" : "0"});
        }
        nlohmann::json e{{"r1", cell.r1},
                         {"r2", cell.r2},
                         {"regime", cell.regime},
                         {"predicted_exponent", cell.predicted_exponent},
                         {"n_stars", cell.n_stars},
                         {"failed", cell.failed},
                         {"note", cell.note}};
        e["fit"] = cell.fit.n > 0 ? fit_json(cell.fit) : nlohmann::json();
        cells.push_back(e);
      }
      summary["config"] = {{"d_list", c.d_list},
                           {"link", c.probe.link},
                           {"kind", flow_kind_name(c.probe.kind)},
                           {"eps", c.probe.eps},
                           {"n_seeds", c.probe.n_seeds},
                           {"seed", c.probe.seed}};
      summary["cells"] = cells;
      break;
    }

    case ExperimentKind::init_alignment: {
      InitAlignmentConfig c;
      c.d_list = top.get<std::vector<int>>("d_list", c.d_list);
      c.r1 = top.get<double>("r1", c.r1);
      c.r2 = top.get<double>("r2", c.r2);
      read_seed_fields(top, &c.seed, &c.n_seeds);
      c.workers = workers;

      const InitAlignmentResult r = run_init_alignment(c);

      header = {"key", "d", "seed_index", "alignment"};
      for (const InitAlignmentRow& row : r.rows) {
        rows.push_back({io::digest(row.key), std::to_string(row.d),
                        std::to_string(row.seed_index), io::fmt(row.alignment)});
      }

      summary["config"] = {{"d_list", c.d_list}, {"r1", c.r1},
                           {"r2", c.r2},         {"n_seeds", c.n_seeds},
                           {"seed", c.seed}};
      summary["medians"] = r.medians;
      summary["fit"] = fit_json(r.fit);
      summary["predicted_slope"] = r.predicted_slope;
      break;
    }

    case ExperimentKind::stein_check: {
      const std::vector<SteinCase> cases =
          parse_stein_cases(top.raw("cases"), "spec.cases");
      const int d = top.get<int>("d", 2);
      const long n_mc = top.get<long>("n_mc", 1000000L);
      std::uint64_t seed = 1;
      read_seed_fields(top, &seed, nullptr);
      if (d < 2) throw ArgumentError("stein_check needs d >= 2");

      header = {"key", "f", "g", "rho", "max_deviation", "se_at_max",
                "max_sigmas"};
      nlohmann::json case_rows = nlohmann::json::array();
      double worst = 0.0;
      for (std::size_t ci = 0; ci < cases.size(); ++ci) {
        const SteinCase& sc = cases[ci];
        if (!(sc.rho >= -1.0 && sc.rho <= 1.0)) {
          throw ArgumentError("stein case rho must lie in [-1, 1]");
        }
        Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
        Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
        w(0) = 1.0;
        u(0) = sc.rho;
        u(1) = std::sqrt(std::max(0.0, 1.0 - sc.rho * sc.rho));

        const std::string key = KeyBuilder("stein")
                                    .add("f", sc.f)
                                    .add("g", sc.g)
                                    .add("rho", sc.rho)
                                    .add("d", d)
                                    .add("nmc", n_mc)
                                    .add("root", seed)
                                    .str();
        const SteinCheckResult r =
            stein_check(make_link(sc.f), make_link(sc.g), w, u, n_mc,
                        stable_hash(key));
        rows.push_back({io::digest(key), sc.f, sc.g, io::fmt(sc.rho),
                        io::fmt(r.max_deviation), io::fmt(r.se_at_max),
                        io::fmt(r.max_sigmas)});
        case_rows.push_back({{"f", sc.f},
                             {"g", sc.g},
                             {"rho", sc.rho},
                             {"max_deviation", r.max_deviation},
                             {"se_at_max", r.se_at_max},
                             {"max_sigmas", r.max_sigmas}});
        worst = std::max(worst, r.max_sigmas);
      }

      summary["config"] = {{"d", d}, {"n_mc", n_mc}, {"seed", seed}};
      summary["cases"] = case_rows;
      summary["worst_sigmas"] = worst;
      break;
    }

    case ExperimentKind::full_pipeline: {
      PipelineConfig c;
      c.d = top.get<int>("d", c.d);
      c.r1 = top.get<double>("r1", c.r1);
      c.r2 = top.get<double>("r2", c.r2);
      c.link = top.get<std::string>("link", c.link);
      c.noise_sigma = top.get<double>("noise_sigma", c.noise_sigma);
      c.m_list = top.get<std::vector<int>>("m_list", c.m_list);
      c.n = top.get<long>("n", c.n);
      c.n_unlabeled = top.get<long>("n_unlabeled", c.n_unlabeled);
      c.n_test = top.get<long>("n_test", c.n_test);
      c.train = parse_train_config(top.raw("train"), "spec.train");
      read_seed_fields(top, &c.seed, &c.n_seeds);
      c.workers = workers;
      c.cache = &hooks;

      const PipelineResult r = run_full_pipeline(c);

      header = {"key", "m", "seed_index", "risk", "alignment", "lambda"};
      for (const PipelineRow& row : r.rows) {
        rows.push_back({io::digest(row.key), std::to_string(row.m),
                        std::to_string(row.seed_index), io::fmt(row.risk),
                        io::fmt(row.alignment), io::fmt(row.lambda)});
      }

      bool decreasing = true;
      for (std::size_t mi = 1; mi < r.median_risk.size(); ++mi) {
        if (!(r.median_risk[mi] < r.median_risk[mi - 1])) decreasing = false;
      }
      summary["config"] = {{"d", c.d},
                           {"r1", c.r1},
                           {"r2", c.r2},
                           {"link", c.link},
                           {"noise_sigma", c.noise_sigma},
                           {"m_list", c.m_list},
                           {"n", c.n},
                           {"n_unlabeled", c.n_unlabeled},
                           {"n_test", c.n_test},
                           {"n_seeds", c.n_seeds},
                           {"seed", c.seed}};
      summary["m_list"] = r.m_list;
      summary["median_risk"] = r.median_risk;
      summary["risk_decreasing"] = decreasing;
      break;
    }
  }

  top.finish();
  row_cache.rewrite_sorted();
  io::write_csv(rows_path, {{"experiment", name}}, header, rows);
  io::save_json(summary_path, summary);

  if (timing) {
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    std::ofstream out(io::resolve_output(stem + "_timing.txt"));
    out << io::fmt(seconds) << '\n';
  }

  ExperimentOutput output;
  output.rows_csv = rows_path;
  output.summary_json = summary_path;
  output.summary = summary;
  return output;
}

}  // namespace silab
