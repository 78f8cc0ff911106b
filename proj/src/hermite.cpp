// SPDX-License-Identifier: Apache-2.0
#include "silab/hermite.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "silab/errors.hpp"

namespace silab {

namespace {
constexpr int kMaxStableOrder = 60;
}

double HermiteSeries::l2_norm() const {
  double s = 0.0;
  for (double c : coeffs) s += c * c;
  return std::sqrt(s);
}

double hermite_eval(int j, double z, bool allow_high_order) {
  if (j < 0) throw ArgumentError("hermite_eval: order must be nonnegative");
  if (j > kMaxStableOrder && !allow_high_order) {
    throw ArgumentError("hermite_eval: order " + std::to_string(j) +
                        " exceeds the stability cap " +
                        std::to_string(kMaxStableOrder) +
                        "; pass allow_high_order to override");
  }
  if (!std::isfinite(z)) throw NumericError("hermite_eval: non-finite input");
  if (j == 0) return 1.0;
  double prev = 1.0;
  double cur = z;
  for (int k = 1; k < j; ++k) {
    const double next = (z * cur - std::sqrt(double(k)) * prev) / std::sqrt(double(k + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

QuadratureRule gauss_hermite_rule(int num_nodes) {
  if (num_nodes < 1) throw ArgumentError("gauss_hermite_rule: need at least one node");
  if (num_nodes > 1000) throw ArgumentError("gauss_hermite_rule: node count too large");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(num_nodes, num_nodes);
  for (int k = 1; k < num_nodes; ++k) {
    const double b = std::sqrt(double(k));
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
  if (es.info() != Eigen::Success) {
    throw NumericError("gauss_hermite_rule: eigensolver failed");
  }
  QuadratureRule rule;
  rule.nodes.resize(num_nodes);
  rule.weights.resize(num_nodes);
  for (int i = 0; i < num_nodes; ++i) {
    rule.nodes[i] = es.eigenvalues()[i];
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = v0 * v0;
  }
  return rule;
}

HermiteSeries hermite_coeffs(const LinkFunction& f, int max_order, int num_nodes) {
  if (max_order < 0) throw ArgumentError("hermite_coeffs: max_order must be nonnegative");
  if (!f.eval) throw ArgumentError("hermite_coeffs: link has no eval");
  const int needed = max_order + static_cast<int>(std::ceil(f.growth_exponent / 2.0)) + 2;
  if (num_nodes < needed) {
    throw ArgumentError("hermite_coeffs: " + std::to_string(num_nodes) +
                        " nodes cannot resolve order " + std::to_string(max_order) +
                        " with growth exponent " + std::to_string(f.growth_exponent) +
                        " (need >= " + std::to_string(needed) + ")");
  }
  const QuadratureRule rule = gauss_hermite_rule(num_nodes);
  HermiteSeries series;
  series.coeffs.assign(max_order + 1, 0.0);
  for (int i = 0; i < num_nodes; ++i) {
    const double z = rule.nodes[i];
    const double wf = rule.weights[i] * f.eval(z);
    if (!std::isfinite(wf)) throw NumericError("hermite_coeffs: link produced non-finite value");
    // One recurrence sweep per node fills every order.
    double prev = 1.0;
    double cur = z;
    series.coeffs[0] += wf;
    if (max_order >= 1) series.coeffs[1] += wf * z;
    for (int j = 2; j <= max_order; ++j) {
      const double next = (z * cur - std::sqrt(double(j - 1)) * prev) / std::sqrt(double(j));
      prev = cur;
      cur = next;
      series.coeffs[j] += wf * cur;
    }
  }
  return series;
}

std::optional<int> information_exponent(const HermiteSeries& series, double tol) {
  if (tol < 0.0) tol = 1e-8 * series.l2_norm();
  for (int j = 1; j <= series.max_order(); ++j) {
    if (std::abs(series.coeffs[j]) > tol) return j;
  }
  return std::nullopt;
}

double zeta(const HermiteSeries& g_series, const HermiteSeries& phi_series, double omega) {
  if (!std::isfinite(omega)) throw NumericError("zeta: non-finite correlation");
  const int top = std::min(g_series.max_order(), phi_series.max_order());
  double acc = 0.0;
  double wpow = 1.0;  // omega^{j-1}
  for (int j = 1; j <= top; ++j) {
    acc += j * g_series.coeffs[j] * phi_series.coeffs[j] * wpow;
    wpow *= omega;
  }
  return -acc;
}

double psi(const HermiteSeries& g_series, const HermiteSeries& phi_series, double omega) {
  if (!std::isfinite(omega)) throw NumericError("psi: non-finite correlation");
  const int top = std::min(phi_series.max_order(), g_series.max_order() + 2);
  double acc = 0.0;
  double wpow = 1.0;  // omega^{k-2}
  for (int k = 2; k <= top; ++k) {
    acc += std::sqrt(double(k) * (k - 1)) * phi_series.coeffs[k] * g_series.coeffs[k - 2] * wpow;
    wpow *= omega;
  }
  return -acc;
}

CorrelationCondition check_correlation_condition(const LinkFunction& g,
                                                 const LinkFunction& phi,
                                                 double c,
                                                 std::span<const double> grid) {
  if (!(c > 0.0)) throw ArgumentError("check_correlation_condition: c must be positive");
  if (grid.empty()) throw ArgumentError("check_correlation_condition: empty grid");
  for (double w : grid) {
    if (!(w > 0.0) || !(w <= 1.0)) {
      throw ArgumentError("check_correlation_condition: grid points must lie in (0, 1]");
    }
  }
  const HermiteSeries gs = hermite_coeffs(g);
  const HermiteSeries ps = hermite_coeffs(phi);
  CorrelationCondition rep;
  rep.info_exponent = information_exponent(gs);
  if (!rep.info_exponent) return rep;
  const int s = *rep.info_exponent;
  double best = std::numeric_limits<double>::infinity();
  for (double w : grid) {
    const double lhs = -zeta(gs, ps, w);
    if (!(lhs > 0.0)) {
      rep.certified_c = 0.0;
      rep.holds = false;
      return rep;
    }
    best = std::min(best, lhs / std::pow(w, s - 1));
  }
  rep.certified_c = best;
  rep.holds = best >= c;
  return rep;
}

LinkFunction make_link(const std::string& name) {
  LinkFunction f;
  f.name = name;
  if (name == "relu") {
    f.eval = [](double z) { return z > 0.0 ? z : 0.0; };
    f.deriv = [](double z) { return z > 0.0 ? 1.0 : 0.0; };  // value 0 at the kink
    f.growth_exponent = 1.0;
    return f;
  }
  if (name == "identity") {
    f.eval = [](double z) { return z; };
    f.deriv = [](double) { return 1.0; };
    f.growth_exponent = 1.0;
    return f;
  }
  if (name == "cube") {
    f.eval = [](double z) { return z * z * z; };
    f.deriv = [](double z) { return 3.0 * z * z; };
    f.growth_exponent = 3.0;
    return f;
  }
  if (name == "phase_retrieval") {
    f.eval = [](double z) { return z * z; };
    f.deriv = [](double z) { return 2.0 * z; };
    f.growth_exponent = 2.0;
    return f;
  }
  if (name.rfind("hermite:", 0) == 0) {
    int s = 0;
    try {
      size_t pos = 0;
      s = std::stoi(name.substr(8), &pos);
      if (pos != name.size() - 8) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ArgumentError("make_link: malformed order in '" + name + "'");
    }
    if (s < 1 || s > kMaxStableOrder) {
      throw ArgumentError("make_link: hermite order out of range in '" + name + "'");
    }
    f.eval = [s](double z) { return hermite_eval(s, z); };
    f.deriv = [s](double z) {
      return s == 0 ? 0.0 : std::sqrt(double(s)) * hermite_eval(s - 1, z);
    };
    f.growth_exponent = static_cast<double>(s);
    return f;
  }
  throw ArgumentError("make_link: unknown link '" + name + "'");
}

HermiteSeries scaled(HermiteSeries s, double factor) {
  for (double& c : s.coeffs) c *= factor;
  return s;
}

}  // namespace silab
