// SPDX-License-Identifier: Apache-2.0
#include "silab/flows.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "silab/io.hpp"

namespace silab {

FlowKind parse_flow_kind(const std::string& token) {
  if (token == "pop_spherical") return FlowKind::population_spherical;
  if (token == "pop_normalized") return FlowKind::population_normalized;
  if (token == "pop_precond") return FlowKind::population_preconditioned;
  if (token == "emp_normalized") return FlowKind::empirical_normalized;
  if (token == "emp_precond") return FlowKind::empirical_preconditioned;
  throw ArgumentError("unknown flow kind '" + token +
                      "' (expected pop_spherical, pop_normalized, pop_precond, "
                      "emp_normalized, or emp_precond)");
}

std::string flow_kind_name(FlowKind kind) {
  switch (kind) {
    case FlowKind::population_spherical: return "pop_spherical";
    case FlowKind::population_normalized: return "pop_normalized";
    case FlowKind::population_preconditioned: return "pop_precond";
    case FlowKind::empirical_normalized: return "emp_normalized";
    case FlowKind::empirical_preconditioned: return "emp_precond";
  }
  throw ArgumentError("flow_kind_name: bad enum value");
}

Integrator parse_integrator(const std::string& token) {
  if (token == "euler") return Integrator::euler;
  if (token == "rk4") return Integrator::rk4;
  throw ArgumentError("unknown integrator '" + token + "' (expected euler or rk4)");
}

std::string integrator_name(Integrator integrator) {
  return integrator == Integrator::euler ? "euler" : "rk4";
}

FlowProblem FlowProblem::population(const SingleIndexTask& task, HermiteSeries phi_series) {
  FlowProblem p;
  p.task = &task;
  p.g_series = task.link_series;
  p.phi_series = std::move(phi_series);
  return p;
}

FlowProblem FlowProblem::empirical(const Dataset& data, const GeneralCovariance& sigma_hat,
                                   LinkFunction phi, const SingleIndexTask* truth) {
  FlowProblem p;
  p.task = truth;
  if (truth) p.g_series = truth->link_series;
  p.phi = std::move(phi);
  p.data = &data;
  p.sigma_hat = &sigma_hat;
  return p;
}

HermiteSeries relu_hermite_series(int max_order) {
  if (max_order < 0) throw ArgumentError("relu_hermite_series: negative order");
  HermiteSeries s;
  s.coeffs.assign(max_order + 1, 0.0);
  s.coeffs[0] = 1.0 / std::sqrt(2.0 * M_PI);
  if (max_order >= 1) s.coeffs[1] = 0.5;
  double log_fact = 0.0;  // ln(j!)
  double double_fact = 1.0;  // (j-3)!! for the current even j
  for (int j = 2; j <= max_order; ++j) {
    log_fact += std::log(double(j));
    if (j % 2 == 0) {
      if (j > 2) double_fact *= double(j - 3);
      const double sign = (j / 2) % 2 == 0 ? -1.0 : 1.0;
      s.coeffs[j] = sign * double_fact * std::exp(-0.5 * log_fact) / std::sqrt(2.0 * M_PI);
    }
  }
  return s;
}

int relu_series_sign(const HermiteSeries& phi_series) {
  if (phi_series.coeffs.empty()) return 0;
  static const HermiteSeries exact = relu_hermite_series(40);
  const int top = std::min(phi_series.max_order(), exact.max_order());
  double dev_plus = 0.0, dev_minus = 0.0;
  for (int j = 0; j <= top; ++j) {
    dev_plus = std::max(dev_plus, std::abs(phi_series.coeffs[j] - exact.coeffs[j]));
    dev_minus = std::max(dev_minus, std::abs(phi_series.coeffs[j] + exact.coeffs[j]));
  }
  constexpr double tol = 2e-3;
  if (dev_plus <= tol) return 1;
  if (dev_minus <= tol) return -1;
  return 0;
}

namespace {

// Shared coefficient sums for the (sign-flipped) ReLU spherical formulas.
struct SphericalCoeffs {
  double zeta_tilde;  // -sum_j j a_j b_j mbar^{j-1}
  double psi_sum;     // sum_j (j-1) a_j b_j mbar^j
};

SphericalCoeffs spherical_sums(const HermiteSeries& g, int sign, double mbar) {
  static const HermiteSeries relu = relu_hermite_series(40);
  const int top = std::min(g.max_order(), relu.max_order());
  double zt = 0.0, ps = 0.0;
  double pw = 1.0;  // mbar^{j-1}
  for (int j = 1; j <= top; ++j) {
    const double ab = g.coeffs[j] * sign * relu.coeffs[j];
    zt += j * ab * pw;
    ps += (j - 1) * ab * pw * mbar;
    pw *= mbar;
  }
  // The j = 0 term of the radial sum, -a_0 b_0; zero for centered links.
  ps += -g.coeffs[0] * sign * relu.coeffs[0];
  return {-zt, ps};
}

int require_relu(const HermiteSeries& phi_series, const char* where) {
  const int sign = relu_series_sign(phi_series);
  if (sign == 0) {
    throw UnsupportedActivationError(std::string(where) +
                                     ": closed form requires a (sign-flipped) ReLU activation");
  }
  return sign;
}

}  // namespace

Eigen::VectorXd population_spherical_rhs(const Eigen::VectorXd& w,
                                         const SingleIndexTask& task,
                                         const HermiteSeries& g_series,
                                         const HermiteSeries& phi_series) {
  const int sign = require_relu(phi_series, "population_spherical_rhs");
  if (w.size() != task.u.size()) throw ArgumentError("population_spherical_rhs: dimension mismatch");
  const Eigen::VectorXd sw = cov_power_apply(task.covariance, MatrixPower::half, w);
  const double nu = sw.norm();
  if (!(nu > 1e-300)) throw NumericError("population_spherical_rhs: degenerate transformed norm");
  const Eigen::VectorXd ubar = transformed_target(task);
  const double mbar = sw.dot(ubar) / nu;
  const auto sums = spherical_sums(g_series, sign, mbar);
  // grad R(w) = Sigma (psi_t w + zeta_t u); E[phi^2] = 1/2 for +-ReLU.
  const double psi_t = sums.psi_sum / nu + 0.5;
  const Eigen::VectorXd grad =
      cov_power_apply(task.covariance, MatrixPower::full, psi_t * w + sums.zeta_tilde * task.u);
  return -(grad - grad.dot(w) * w);
}

double spherical_scalar_rhs(double m, double kappa, const HermiteSeries& g_series,
                            const HermiteSeries& phi_series) {
  const int sign = require_relu(phi_series, "spherical_scalar_rhs");
  if (!(kappa >= 0.0)) throw ArgumentError("spherical_scalar_rhs: kappa must be nonnegative");
  if (!(m > -1.0 && m < 1.0)) throw ArgumentError("spherical_scalar_rhs: m must lie in (-1, 1)");
  if (!g_series.coeffs.empty() &&
      std::abs(g_series.coeffs[0]) > 1e-10 * std::max(1.0, g_series.l2_norm())) {
    throw ArgumentError("spherical_scalar_rhs: link must be centered (zeroth coefficient)");
  }
  const double denom = 1.0 + kappa * m * m;
  const double nu = std::sqrt(denom / (1.0 + kappa));
  const double mbar = m * std::sqrt((1.0 + kappa) / denom);
  const auto sums = spherical_sums(g_series, sign, mbar);
  const double psi_t = sums.psi_sum / nu + 0.5;
  return -(sums.zeta_tilde + kappa * psi_t * m / (1.0 + kappa)) * (1.0 - m * m);
}

Eigen::VectorXd population_normalized_rhs(const Eigen::VectorXd& w_bar,
                                          const SingleIndexTask& task,
                                          const HermiteSeries& g_series,
                                          const HermiteSeries& phi_series) {
  if (w_bar.size() != task.u.size()) throw ArgumentError("population_normalized_rhs: dimension mismatch");
  const Eigen::VectorXd ubar = transformed_target(task);
  const double m = w_bar.dot(ubar);
  const Eigen::VectorXd uperp = ubar - m * w_bar;
  const Eigen::VectorXd su = cov_power_apply(task.covariance, MatrixPower::full, uperp);
  return -zeta(g_series, phi_series, m) * (su - w_bar.dot(su) * w_bar);
}

Eigen::VectorXd population_preconditioned_rhs(const Eigen::VectorXd& w_bar,
                                              const SingleIndexTask& task,
                                              const HermiteSeries& g_series,
                                              const HermiteSeries& phi_series) {
  if (w_bar.size() != task.u.size()) throw ArgumentError("population_preconditioned_rhs: dimension mismatch");
  const Eigen::VectorXd ubar = transformed_target(task);
  const double m = w_bar.dot(ubar);
  const Eigen::VectorXd drive =
      -zeta(g_series, phi_series, m) * ubar - psi(g_series, phi_series, m) * w_bar;
  return drive - w_bar.dot(drive) * w_bar;
}

CorrGrad empirical_corr_grad(const Eigen::VectorXd& w, const Dataset& data,
                             const GeneralCovariance& sigma_hat, const LinkFunction& phi) {
  const auto n = data.inputs.rows();
  if (n < 1) throw ArgumentError("empirical_corr_grad: empty dataset");
  if (w.size() != data.inputs.cols()) throw ArgumentError("empirical_corr_grad: dimension mismatch");
  if (!w.allFinite()) throw NumericError("empirical_corr_grad: non-finite weights");
  if (!phi.eval || !phi.deriv) throw ArgumentError("empirical_corr_grad: activation needs eval and deriv");
  const Covariance cov = sigma_hat;  // variant view for the power helpers
  const Eigen::VectorXd shw = cov_power_apply(cov, MatrixPower::full, w);
  const double nu2 = w.dot(shw);
  if (!(nu2 > 1e-300)) throw NumericError("empirical_corr_grad: degenerate transformed norm");
  const double nu = std::sqrt(nu2);

  const Eigen::VectorXd q = data.inputs * w;
  Eigen::VectorXd v(n);
  double c = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double arg = q[i] / nu;
    c += phi.eval(arg) * data.responses[i];
    v[i] = phi.deriv(arg) * data.responses[i];
  }
  c /= double(n);
  const Eigen::VectorXd p = data.inputs.transpose() * v / double(n);
  const double s = v.dot(q) / double(n);
  CorrGrad out;
  out.value = -c;
  out.grad = -(p / nu - (s / (nu2 * nu)) * shw);
  if (!out.grad.allFinite()) throw NumericError("empirical_corr_grad: non-finite gradient");
  return out;
}

double tau_horizon(int s, double z) {
  if (s < 1) throw ArgumentError("tau_horizon: exponent must be >= 1");
  if (!(z > 0.0 && z < 1.0)) throw ArgumentError("tau_horizon: argument must lie in (0, 1)");
  if (s == 1) return 1.0;
  if (s == 2) return std::log(1.0 / z);
  return std::pow(z, 2.0 - double(s));
}

double default_t_max(int s, double m0_bar, double eps, double lambda_min) {
  if (!(eps > 0.0 && eps < 1.0)) throw ArgumentError("default_t_max: eps must lie in (0, 1)");
  if (!(lambda_min > 0.0)) throw ArgumentError("default_t_max: lambda_min must be positive");
  const double z = std::min(std::max(std::abs(m0_bar), 1e-8), 1.0 - 1e-12);
  return 50.0 * (tau_horizon(s, z) + std::log(1.0 / eps)) / lambda_min;
}

namespace {

struct LoopFns {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> rhs;
  std::function<double(const Eigen::VectorXd&)> align_bar;
  std::function<double(const Eigen::VectorXd&)> align_raw;
  bool renormalize = false;
  bool have_truth = true;
};

FlowTrace run_loop(Eigen::VectorXd state, const LoopFns& fns, double dt, double t_max,
                   double eps_target, int stride, Integrator integrator) {
  FlowTrace trace;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  long last_recorded = -1;
  auto record = [&](long step, double t, double ab, double ar) {
    if (step == last_recorded) return;
    trace.times.push_back(t);
    trace.alignments_bar.push_back(ab);
    trace.alignments_raw.push_back(ar);
    last_recorded = step;
  };
  auto step_state = [&](const Eigen::VectorXd& w) {
    auto norm_of = [&](Eigen::VectorXd v) {
      if (fns.renormalize) {
        const double n = v.norm();
        if (n > 1e-300) v /= n;
      }
      return v;
    };
    if (integrator == Integrator::euler) {
      return norm_of(w + dt * fns.rhs(w));
    }
    const Eigen::VectorXd k1 = fns.rhs(w);
    const Eigen::VectorXd k2 = fns.rhs(norm_of(w + 0.5 * dt * k1));
    const Eigen::VectorXd k3 = fns.rhs(norm_of(w + 0.5 * dt * k2));
    const Eigen::VectorXd k4 = fns.rhs(norm_of(w + dt * k3));
    return norm_of(w + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
  };

  for (long step = 0;; ++step) {
    const double t = double(step) * dt;
    double ab = nan, ar = nan;
    if (fns.have_truth) {
      try {
        ab = fns.align_bar(state);
        ar = fns.align_raw(state);
      } catch (const NumericError& e) {
        trace.final_w = state;
        trace.t_end = t;
        throw FlowDivergedError(std::string("flow diverged: ") + e.what(), trace);
      }
      if (!std::isfinite(ab) || !std::isfinite(ar)) {
        trace.final_w = state;
        trace.t_end = t;
        throw FlowDivergedError("flow diverged: non-finite alignment", trace);
      }
      trace.sup_alignment = std::max(trace.sup_alignment, std::abs(ar));
      if (!trace.hit_half && ab >= 0.5) trace.hit_half = t;
      if (!trace.hit_eps && ab >= 1.0 - eps_target) trace.hit_eps = t;
      if (!trace.hit_eps_raw && ar >= 1.0 - eps_target) trace.hit_eps_raw = t;
    }
    const bool stop = trace.hit_eps.has_value() || t >= t_max * (1.0 - 1e-12);
    if (step % stride == 0 || stop) record(step, t, ab, ar);
    if (stop) {
      trace.t_end = t;
      break;
    }
    Eigen::VectorXd next = step_state(state);
    if (!next.allFinite()) {
      record(step, t, ab, ar);
      trace.final_w = state;
      trace.t_end = t;
      throw FlowDivergedError("flow diverged: non-finite state at t = " + io::fmt(t + dt), trace);
    }
    state = std::move(next);
  }
  trace.final_w = state;
  return trace;
}

void validate_config(double dt, double t_max, const FlowConfig& cfg) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ArgumentError("integrate_flow: dt must be positive");
  if (!(t_max > 0.0) || !std::isfinite(t_max)) throw ArgumentError("integrate_flow: t_max must be positive");
  if (!(cfg.eps_target > 0.0 && cfg.eps_target < 1.0)) {
    throw ArgumentError("integrate_flow: eps_target must lie in (0, 1)");
  }
  if (cfg.record_stride < 1) throw ArgumentError("integrate_flow: record_stride must be >= 1");
}

}  // namespace

FlowTrace integrate_flow(FlowKind kind, const Eigen::VectorXd& w0,
                         const FlowProblem& problem, const FlowConfig& config) {
  const bool population = kind == FlowKind::population_spherical ||
                          kind == FlowKind::population_normalized ||
                          kind == FlowKind::population_preconditioned;
  if (population && problem.task == nullptr) {
    throw ArgumentError("integrate_flow: population kinds need a task");
  }
  if (!population && (problem.data == nullptr || problem.sigma_hat == nullptr)) {
    throw ArgumentError("integrate_flow: empirical kinds need data and a covariance estimate");
  }
  if (!w0.allFinite() || w0.size() < 1) throw ArgumentError("integrate_flow: bad initial state");
  const int d = static_cast<int>(w0.size());
  if (population) {
    const bool spiked = std::holds_alternative<SpikedCovariance>(problem.task->covariance);
    if ((spiked && d > 100000) || (!spiked && d > 4096)) {
      throw ArgumentError("integrate_flow: dimension exceeds the population cap");
    }
  } else if (d > 64) {
    throw ArgumentError("integrate_flow: dimension exceeds the empirical cap (64)");
  }

  LoopFns fns;
  fns.have_truth = problem.task != nullptr;

  Eigen::VectorXd ubar;
  Covariance sigma_hat_view = SpikedCovariance(1, 0.0, Eigen::VectorXd::Ones(1));
  if (fns.have_truth) {
    ubar = transformed_target(*problem.task);
    if (ubar.size() != d) throw ArgumentError("integrate_flow: state dimension mismatch");
  }
  if (!population) sigma_hat_view = *problem.sigma_hat;

  Eigen::VectorXd state = w0;
  if (population) state /= state.norm();

  switch (kind) {
    case FlowKind::population_spherical:
      fns.renormalize = true;
      fns.rhs = [&problem](const Eigen::VectorXd& w) {
        return population_spherical_rhs(w, *problem.task, problem.g_series, problem.phi_series);
      };
      fns.align_bar = [&problem, ubar](const Eigen::VectorXd& w) {
        return alignment_bar(w, problem.task->covariance, ubar);
      };
      fns.align_raw = [&problem](const Eigen::VectorXd& w) {
        return problem.task->u.dot(w) / w.norm();
      };
      break;
    case FlowKind::population_normalized:
    case FlowKind::population_preconditioned:
      fns.renormalize = true;
      if (kind == FlowKind::population_normalized) {
        fns.rhs = [&problem](const Eigen::VectorXd& wb) {
          return population_normalized_rhs(wb, *problem.task, problem.g_series, problem.phi_series);
        };
      } else {
        fns.rhs = [&problem](const Eigen::VectorXd& wb) {
          return population_preconditioned_rhs(wb, *problem.task, problem.g_series, problem.phi_series);
        };
      }
      fns.align_bar = [ubar](const Eigen::VectorXd& wb) { return wb.dot(ubar); };
      fns.align_raw = [&problem](const Eigen::VectorXd& wb) {
        const Eigen::VectorXd w = cov_power_apply(problem.task->covariance, MatrixPower::inv_half, wb);
        return problem.task->u.dot(w) / w.norm();
      };
      break;
    case FlowKind::empirical_normalized:
    case FlowKind::empirical_preconditioned: {
      const bool precond = kind == FlowKind::empirical_preconditioned;
      fns.rhs = [&problem, &cov = sigma_hat_view, precond](const Eigen::VectorXd& w) -> Eigen::VectorXd {
        const Eigen::VectorXd shw = cov_power_apply(cov, MatrixPower::full, w);
        const double nu2 = w.dot(shw);
        if (!(nu2 > 1e-300)) throw NumericError("empirical flow: degenerate transformed norm");
        const double nu = std::sqrt(nu2);
        const auto& X = problem.data->inputs;
        const auto n = X.rows();
        const Eigen::VectorXd q = X * w;
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
          v[i] = problem.phi.deriv(q[i] / nu) * problem.data->responses[i];
        }
        const Eigen::VectorXd p = X.transpose() * v / double(n);
        const double s = v.dot(q) / double(n);
        if (precond) {
          return nu * cov_power_apply(cov, MatrixPower::inverse, p) - (s / nu) * w;
        }
        return nu * p - (s / nu) * shw;
      };
      if (fns.have_truth) {
        fns.align_bar = [&sigma_hat_view, ubar](const Eigen::VectorXd& w) {
          return alignment_bar(w, sigma_hat_view, ubar);
        };
        fns.align_raw = [&problem](const Eigen::VectorXd& w) {
          return problem.task->u.dot(w) / w.norm();
        };
      }
      break;
    }
  }

  double dt = config.dt;
  if (dt <= 0.0) {
    dt = population ? 1e-3
                    : 0.05 / std::max(problem.sigma_hat->eigenvalues().maxCoeff(), 1e-12);
  }
  double t_max = config.t_max;
  if (t_max <= 0.0) {
    if (!fns.have_truth) {
      throw ArgumentError("integrate_flow: t_max must be given when no task is attached");
    }
    const auto s = information_exponent(problem.g_series);
    if (!s) throw ArgumentError("integrate_flow: cannot size the horizon for a flat link");
    const double m0b = fns.align_bar(state);
    const double lam = population ? cov_lambda_min(problem.task->covariance)
                                  : problem.sigma_hat->eigenvalues().minCoeff();
    t_max = default_t_max(*s, m0b, config.eps_target, lam);
  }
  validate_config(dt, t_max, config);
  return run_loop(std::move(state), fns, dt, t_max, config.eps_target, config.record_stride,
                  config.integrator);
}

FlowTrace integrate_scalar_alignment(double m0, double kappa, const HermiteSeries& g_series,
                                     const HermiteSeries& phi_series, const FlowConfig& config) {
  if (!(m0 > -1.0 && m0 < 1.0)) throw ArgumentError("integrate_scalar_alignment: m0 must lie in (-1, 1)");
  double dt = config.dt > 0.0 ? config.dt : 1e-3;
  double t_max = config.t_max;
  if (t_max <= 0.0) {
    const auto s = information_exponent(g_series);
    if (!s) throw ArgumentError("integrate_scalar_alignment: cannot size the horizon for a flat link");
    const double m0b = m0 * std::sqrt((1.0 + kappa) / (1.0 + kappa * m0 * m0));
    t_max = default_t_max(*s, m0b, config.eps_target, 1.0 / (1.0 + kappa));
  }
  validate_config(dt, t_max, config);

  LoopFns fns;
  fns.renormalize = false;
  fns.have_truth = true;
  fns.rhs = [&](const Eigen::VectorXd& m) {
    Eigen::VectorXd out(1);
    const double mv = std::clamp(m[0], -1.0 + 1e-15, 1.0 - 1e-15);
    out[0] = spherical_scalar_rhs(mv, kappa, g_series, phi_series);
    return out;
  };
  fns.align_raw = [](const Eigen::VectorXd& m) { return m[0]; };
  fns.align_bar = [kappa](const Eigen::VectorXd& m) {
    return m[0] * std::sqrt((1.0 + kappa) / (1.0 + kappa * m[0] * m[0]));
  };
  Eigen::VectorXd m(1);
  m[0] = m0;
  return run_loop(std::move(m), fns, dt, t_max, config.eps_target, config.record_stride,
                  config.integrator);
}

void save_trace_csv(const std::filesystem::path& path, const FlowTrace& trace,
                    const std::vector<std::pair<std::string, std::string>>& metadata) {
  auto meta = metadata;
  meta.emplace_back("t_end", io::fmt(trace.t_end));
  meta.emplace_back("sup_alignment", io::fmt(trace.sup_alignment));
  meta.emplace_back("hit_half", trace.hit_half ? io::fmt(*trace.hit_half) : "none");
  meta.emplace_back("hit_eps", trace.hit_eps ? io::fmt(*trace.hit_eps) : "none");
  std::vector<std::vector<std::string>> rows;
  rows.reserve(trace.times.size());
  for (size_t i = 0; i < trace.times.size(); ++i) {
    rows.push_back({io::fmt(trace.times[i]), io::fmt(trace.alignments_bar[i]),
                    io::fmt(trace.alignments_raw[i])});
  }
  io::write_csv(path, meta, {"t", "alignment_bar", "alignment_raw"}, rows);
}

}  // namespace silab
