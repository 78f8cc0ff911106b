// SPDX-License-Identifier: Apache-2.0
//
// silab: command-line front end. Subcommands cover single flow runs,
// one-shot layer-wise training, JSON experiment sweeps, the Stein identity
// checker, and Hermite coefficient inspection.

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "silab/covariance.hpp"
#include "silab/data.hpp"
#include "silab/errors.hpp"
#include "silab/flows.hpp"
#include "silab/hermite.hpp"
#include "silab/io.hpp"
#include "silab/lab.hpp"
#include "silab/network.hpp"
#include "silab/rng.hpp"

namespace {

using silab::ArgumentError;

/// Apply "a.b.c=value" overrides; values parse as JSON when possible and
/// fall back to plain strings.
void apply_overrides(nlohmann::json& config, const std::vector<std::string>& sets) {
  for (const std::string& entry : sets) {
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ArgumentError("--set expects key=value; got '" + entry + "'");
    }
    const std::string path = entry.substr(0, eq);
    const std::string text = entry.substr(eq + 1);

    nlohmann::json* node = &config;
    std::size_t start = 0;
    while (true) {
      const std::size_t dot = path.find('.', start);
      const std::string key =
          path.substr(start, dot == std::string::npos ? dot : dot - start);
      if (key.empty()) {
        throw ArgumentError("--set has an empty key segment in '" + path + "'");
      }
      if (dot == std::string::npos) {
        nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
        (*node)[key] = value.is_discarded() ? nlohmann::json(text) : value;
        break;
      }
      node = &(*node)[key];
      if (!node->is_object() && !node->is_null()) {
        throw ArgumentError("--set path '" + path + "' descends into a non-object");
      }
      start = dot + 1;
    }
  }
}

template <typename T>
T json_get(const nlohmann::json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("config key '" + key + "' has the wrong type: " + e.what());
  }
}

void reject_unknown_keys(const nlohmann::json& j,
                         const std::vector<std::string>& allowed,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (const std::string& key : allowed) {
      if (item.key() == key) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw ArgumentError("unknown key '" + item.key() + "' in " + where);
    }
  }
}

struct FlowArgs {
  std::string kind = "pop_normalized";
  std::string link;
  std::string phi;
  int d = 16;
  double m0 = 0.1;
  double kappa = 0.0;
  double noise_sigma = 0.0;
  long n = 4096;
  long n_unlabeled = -1;
  double dt = -1.0;
  double t_max = -1.0;
  double eps = 0.01;
  int stride = 1;
  std::string integrator = "euler";
  std::uint64_t seed = 1;
  std::string out;
};

void print_optional_time(const char* label, const std::optional<double>& t) {
  std::cout << label << ' ' << (t ? silab::io::fmt(*t) : "none") << '\n';
}

int run_flow(const FlowArgs& args) {
  using namespace silab;
  if (args.d < 2) throw ArgumentError("flow needs --d >= 2");
  if (!(std::abs(args.m0) < 1.0)) {
    throw ArgumentError("flow needs |m0| < 1");
  }
  if (args.kappa < 0.0) throw ArgumentError("flow needs --kappa >= 0");

  const FlowKind kind = parse_flow_kind(args.kind);
  const std::string phi_name = args.phi.empty() ? args.link : args.phi;

  Rng rng(args.seed);
  const Eigen::VectorXd u = rng.child("target").sphere_vector(args.d);
  const Geometry geom{u, u, args.kappa, 0.0, 0.0, args.seed};
  const SingleIndexTask task = make_task(geom, args.link, args.noise_sigma);

  FlowConfig fc;
  fc.dt = args.dt;
  fc.t_max = args.t_max;
  fc.eps_target = args.eps;
  fc.record_stride = args.stride;
  fc.integrator = parse_integrator(args.integrator);

  const Eigen::VectorXd ubar = transformed_target(task);
  Eigen::VectorXd perp = rng.child("perp").sphere_vector(args.d);
  perp -= perp.dot(ubar) * ubar;
  perp.normalize();
  const double rest = std::sqrt(std::max(0.0, 1.0 - args.m0 * args.m0));

  FlowTrace trace;
  if (kind == FlowKind::empirical_normalized ||
      kind == FlowKind::empirical_preconditioned) {
    const long nu = args.n_unlabeled < 0 ? args.n : args.n_unlabeled;
    if (args.n < 1 || nu < 1) throw ArgumentError("flow needs --n >= 1");
    const Dataset data =
        sample_dataset(task, static_cast<int>(args.n), static_cast<int>(nu),
                       Rng(args.seed).child("data").next_u64());
    const GeneralCovariance sigma_hat = estimate_covariance(data.unlabeled);
    const Covariance view = sigma_hat;
    // Start at transformed alignment exactly m0 under the estimate.
    const Eigen::VectorXd z = args.m0 * ubar + rest * perp;
    const Eigen::VectorXd w0 = cov_power_apply(view, MatrixPower::inv_half, z);
    const FlowProblem problem =
        FlowProblem::empirical(data, sigma_hat, make_link(phi_name), &task);
    trace = integrate_flow(kind, w0, problem, fc);
  } else {
    Eigen::VectorXd start_axis = ubar;
    if (kind == FlowKind::population_spherical) start_axis = task.u;
    Eigen::VectorXd side = perp;
    side -= side.dot(start_axis) * start_axis;
    side.normalize();
    const Eigen::VectorXd w0 = args.m0 * start_axis + rest * side;
    const FlowProblem problem =
        FlowProblem::population(task, hermite_coeffs(make_link(phi_name)));
    trace = integrate_flow(kind, w0, problem, fc);
  }

  if (!args.out.empty()) {
    const auto path = io::resolve_output(args.out);
    save_trace_csv(path, trace,
                   {{"kind", args.kind},
                    {"link", args.link},
                    {"phi", phi_name},
                    {"d", std::to_string(args.d)},
                    {"m0", io::fmt(args.m0)},
                    {"kappa", io::fmt(args.kappa)},
                    {"eps", io::fmt(args.eps)},
                    {"seed", std::to_string(args.seed)}});
    std::cout << "wrote " << path.string() << '\n';
  }

  std::cout << "kind " << args.kind << '\n';
  std::cout << "t_end " << io::fmt(trace.t_end) << '\n';
  std::cout << "sup_alignment " << io::fmt(trace.sup_alignment) << '\n';
  if (!trace.alignments_bar.empty()) {
    std::cout << "final_alignment " << io::fmt(trace.alignments_bar.back())
              << '\n';
  }
  print_optional_time("hit_half", trace.hit_half);
  print_optional_time("hit_eps", trace.hit_eps);
  return 0;
}

int run_train(const std::string& config_path, const std::vector<std::string>& sets,
              std::optional<std::uint64_t> seed_flag, const std::string& out) {
  using namespace silab;
  nlohmann::json cfg = io::load_json(config_path);
  apply_overrides(cfg, sets);
  if (seed_flag) cfg["seed"] = *seed_flag;
  reject_unknown_keys(cfg,
                      {"d", "r1", "r2", "link", "noise_sigma", "n", "n_unlabeled",
                       "n_test", "seed", "train"},
                      "train config");

  const int d = json_get<int>(cfg, "d", 32);
  const double r1 = json_get<double>(cfg, "r1", 0.0);
  const double r2 = json_get<double>(cfg, "r2", 1.0);
  const std::string link = json_get<std::string>(cfg, "link", "hermite:2");
  const double noise_sigma = json_get<double>(cfg, "noise_sigma", 0.1);
  const long n = json_get<long>(cfg, "n", 4096);
  const long n_unlabeled = json_get<long>(cfg, "n_unlabeled", -1);
  const long n_test = json_get<long>(cfg, "n_test", 10000);
  const std::uint64_t seed = json_get<std::uint64_t>(cfg, "seed", 1);
  if (n < 2 || n_test < 2) throw ArgumentError("train needs n >= 2 and n_test >= 2");

  TrainConfig tc;
  if (cfg.contains("train")) {
    const nlohmann::json& t = cfg.at("train");
    reject_unknown_keys(t,
                        {"m", "delta", "lambda", "t_prime", "dt_a", "stage1_kind",
                         "stage1"},
                        "train config's train block");
    tc.m = json_get<int>(t, "m", tc.m);
    tc.delta = json_get<double>(t, "delta", tc.delta);
    tc.lambda = json_get<double>(t, "lambda", tc.lambda);
    tc.t_prime = json_get<double>(t, "t_prime", tc.t_prime);
    tc.dt_a = json_get<double>(t, "dt_a", tc.dt_a);
    tc.stage1_kind = parse_flow_kind(
        json_get<std::string>(t, "stage1_kind", flow_kind_name(tc.stage1_kind)));
    if (t.contains("stage1")) {
      const nlohmann::json& s1 = t.at("stage1");
      reject_unknown_keys(
          s1, {"dt", "t_max", "eps_target", "record_stride", "integrator"},
          "train config's stage1 block");
      tc.stage1.dt = json_get<double>(s1, "dt", tc.stage1.dt);
      tc.stage1.t_max = json_get<double>(s1, "t_max", tc.stage1.t_max);
      tc.stage1.eps_target =
          json_get<double>(s1, "eps_target", tc.stage1.eps_target);
      tc.stage1.record_stride =
          json_get<int>(s1, "record_stride", tc.stage1.record_stride);
      tc.stage1.integrator = parse_integrator(json_get<std::string>(
          s1, "integrator", integrator_name(tc.stage1.integrator)));
    }
  }
  tc.n = n;
  tc.n_unlabeled = n_unlabeled;
  tc.seed = stable_hash(std::to_string(seed) + "|train");

  const Geometry geom =
      construct_geometry(d, r1, r2, stable_hash(std::to_string(seed) + "|geom"));
  const SingleIndexTask task = make_task(geom, link, noise_sigma);
  const Dataset data = sample_dataset(
      task, static_cast<int>(n),
      static_cast<int>(n_unlabeled < 0 ? n : n_unlabeled),
      stable_hash(std::to_string(seed) + "|data"));

  const TrainResult trained = train_two_layer(task, data, tc);
  const double risk = test_risk(trained.net, task, n_test,
                                stable_hash(std::to_string(seed) + "|risk"));

  if (!out.empty()) {
    const auto path = io::resolve_output(out);
    std::ofstream file(path);
    if (!file) throw ArgumentError("cannot write " + path.string());
    file << net_to_json(trained.net, seed, io::digest(cfg.dump()));
    std::cout << "wrote " << path.string() << '\n';
  }

  std::cout << "stage1_alignment " << io::fmt(trained.stage1_alignment) << '\n';
  std::cout << "lambda " << io::fmt(trained.lambda) << '\n';
  if (!trained.stage2_objective.empty()) {
    std::cout << "stage2_objective " << io::fmt(trained.stage2_objective.back())
              << '\n';
  }
  std::cout << "test_risk " << io::fmt(risk) << '\n';
  return 0;
}

int run_experiment_cmd(const std::string& config_path,
                       const std::vector<std::string>& sets,
                       std::optional<std::uint64_t> seed_flag, int workers) {
  using namespace silab;
  if (workers < 1) throw ArgumentError("--workers must be >= 1");
  nlohmann::json spec = io::load_json(config_path);
  apply_overrides(spec, sets);
  if (seed_flag) spec["seed"] = *seed_flag;

  const ExperimentOutput output = run_experiment(spec, workers);
  std::cout << "wrote " << output.rows_csv.string() << '\n';
  std::cout << "wrote " << output.summary_json.string() << '\n';
  return 0;
}

int run_stein(const std::string& f, const std::string& g, double rho, int d,
              long n_mc, std::uint64_t seed) {
  using namespace silab;
  if (d < 2) throw ArgumentError("stein needs --d >= 2");
  if (!(rho >= -1.0 && rho <= 1.0)) throw ArgumentError("--rho must lie in [-1, 1]");

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(d);
  w(0) = 1.0;
  u(0) = rho;
  u(1) = std::sqrt(std::max(0.0, 1.0 - rho * rho));

  const SteinCheckResult r =
      stein_check(make_link(f), make_link(g), w, u, n_mc, seed);
  std::cout << "max_deviation " << io::fmt(r.max_deviation) << '\n';
  std::cout << "se_at_max " << io::fmt(r.se_at_max) << '\n';
  std::cout << "max_sigmas " << io::fmt(r.max_sigmas) << '\n';
  return 0;
}

int run_hermite(const std::string& link, int order, int nodes) {
  using namespace silab;
  if (order < 0) throw ArgumentError("--order must be >= 0");
  const LinkFunction g = make_link(link);
  const HermiteSeries series = hermite_coeffs(g, order, nodes);
  std::cout << "link " << link << '\n';
  for (std::size_t j = 0; j < series.coeffs.size(); ++j) {
    std::cout << "alpha_" << j << ' ' << io::fmt(series.coeffs[j]) << '\n';
  }
  const auto s = information_exponent(series);
  std::cout << "information_exponent " << (s ? std::to_string(*s) : "none")
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"silab: gradient-flow learning of single index models under "
               "spiked covariance"};
  app.require_subcommand(1);

  std::string output_dir;
  app.add_option("--output-dir", output_dir,
                 "Directory for output files (equivalent to SILAB_OUTPUT_DIR)");

  FlowArgs flow_args;
  CLI::App* flow = app.add_subcommand("flow", "Integrate one flow, print summary")->fallthrough();
  flow->add_option("--kind", flow_args.kind,
                   "pop_spherical | pop_normalized | pop_precond | "
                   "emp_normalized | emp_precond");
  flow->add_option("--link", flow_args.link, "Target link g")->required();
  flow->add_option("--phi", flow_args.phi, "Activation (default: same as link)");
  flow->add_option("--d", flow_args.d, "Dimension");
  flow->add_option("--m0", flow_args.m0, "Initial alignment");
  flow->add_option("--kappa", flow_args.kappa, "Spike magnitude (spike = target)");
  flow->add_option("--noise-sigma", flow_args.noise_sigma, "Label noise sd");
  flow->add_option("--n", flow_args.n, "Labeled samples (empirical kinds)");
  flow->add_option("--n-unlabeled", flow_args.n_unlabeled,
                   "Unlabeled samples (default: same as --n)");
  flow->add_option("--dt", flow_args.dt, "Step size (negative: automatic)");
  flow->add_option("--t-max", flow_args.t_max, "Horizon (negative: automatic)");
  flow->add_option("--eps", flow_args.eps, "Stop at alignment 1 - eps");
  flow->add_option("--stride", flow_args.stride, "Trace record stride");
  flow->add_option("--integrator", flow_args.integrator, "euler | rk4");
  flow->add_option("--seed", flow_args.seed, "Root seed");
  flow->add_option("--out", flow_args.out, "Trace CSV path");

  std::string train_config;
  std::string train_out;
  std::vector<std::string> train_sets;
  std::optional<std::uint64_t> train_seed;
  CLI::App* train = app.add_subcommand("train", "Run layer-wise training once")->fallthrough();
  train->add_option("--config", train_config, "Task + training JSON")->required();
  train->add_option("--set", train_sets, "Override config key: a.b=value");
  train->add_option("--seed", train_seed, "Override the root seed");
  train->add_option("--out", train_out, "Write the trained network as JSON");

  std::string exp_config;
  std::vector<std::string> exp_sets;
  std::optional<std::uint64_t> exp_seed;
  int exp_workers = 1;
  CLI::App* experiment =
      app.add_subcommand("experiment", "Run a JSON experiment spec")->fallthrough();
  experiment->add_option("--config", exp_config, "Experiment JSON")->required();
  experiment->add_option("--set", exp_sets, "Override spec key: a.b=value");
  experiment->add_option("--seed", exp_seed, "Override the root seed");
  experiment->add_option("--workers", exp_workers, "Worker threads");

  std::string stein_f = "identity";
  std::string stein_g = "identity";
  double stein_rho = 0.0;
  int stein_d = 2;
  long stein_n_mc = 1000000;
  std::uint64_t stein_seed = 1;
  CLI::App* stein =
      app.add_subcommand("stein", "Monte-Carlo check of the projection identity")->fallthrough();
  stein->add_option("--f", stein_f, "Outer link f");
  stein->add_option("--g", stein_g, "Inner link g (needs a derivative)");
  stein->add_option("--rho", stein_rho, "Correlation <w, u>");
  stein->add_option("--d", stein_d, "Dimension");
  stein->add_option("--n-mc", stein_n_mc, "Monte-Carlo samples");
  stein->add_option("--seed", stein_seed, "Root seed");

  std::string hermite_link;
  int hermite_order = 8;
  int hermite_nodes = 40;
  CLI::App* hermite =
      app.add_subcommand("hermite", "Print Hermite coefficients of a link")->fallthrough();
  hermite->add_option("--link", hermite_link, "Link name")->required();
  hermite->add_option("--order", hermite_order, "Highest coefficient order");
  hermite->add_option("--nodes", hermite_nodes, "Gauss-Hermite nodes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (!output_dir.empty()) setenv("SILAB_OUTPUT_DIR", output_dir.c_str(), 1);
    if (flow->parsed()) return run_flow(flow_args);
    if (train->parsed()) {
      return run_train(train_config, train_sets, train_seed, train_out);
    }
    if (experiment->parsed()) {
      return run_experiment_cmd(exp_config, exp_sets, exp_seed, exp_workers);
    }
    if (stein->parsed()) {
      return run_stein(stein_f, stein_g, stein_rho, stein_d, stein_n_mc,
                       stein_seed);
    }
    if (hermite->parsed()) {
      return run_hermite(hermite_link, hermite_order, hermite_nodes);
    }
    return 2;
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
