// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace silab {

/// Coefficients of an L2(gamma) expansion in the orthonormal Hermite basis
/// {h_j}, where gamma is the standard Gaussian measure and
/// h_0 = 1, h_1 = z, h_{j+1}(z) = (z h_j(z) - sqrt(j) h_{j-1}(z)) / sqrt(j+1).
struct HermiteSeries {
  std::vector<double> coeffs;  ///< coeffs[j] multiplies h_j

  int max_order() const { return static_cast<int>(coeffs.size()) - 1; }
  double l2_norm() const;
};

/// A scalar function together with its derivative and a polynomial growth
/// bound |f(z)| <= C (1 + |z|^p); the bound drives quadrature sizing.
struct LinkFunction {
  std::string name;
  std::function<double(double)> eval;
  std::function<double(double)> deriv;
  double growth_exponent = 1.0;
};

/// Nodes and weights of a Gaussian quadrature rule. Weights include the
/// Gaussian density, so sum(weights) == 1 and
/// sum_i weights[i] f(nodes[i]) ~ E[f(Z)], Z ~ N(0,1).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Certification report for the correlation-decay condition
/// zeta(w) <= -c w^{s-1} on a grid, where s is the information exponent
/// of g. certified_c is the largest constant supported by the grid
/// (zero when the sign condition fails anywhere).
struct CorrelationCondition {
  bool holds = false;
  double certified_c = 0.0;
  std::optional<int> info_exponent;
};

/// Evaluate the orthonormal Hermite polynomial h_j at z by the stable
/// three-term recurrence. Orders above 60 amplify rounding at large |z|
/// and are rejected unless allow_high_order is set.
double hermite_eval(int j, double z, bool allow_high_order = false);

/// Gauss-Hermite rule with num_nodes nodes for the standard Gaussian
/// weight, computed from the symmetric tridiagonal Jacobi matrix
/// (diagonal 0, off-diagonal sqrt(k)). Exact for polynomials of degree
/// <= 2*num_nodes - 1.
QuadratureRule gauss_hermite_rule(int num_nodes);

/// Hermite coefficients of f up to max_order, by quadrature:
/// coeffs[j] = sum_i w_i f(n_i) h_j(n_i). Requires
/// num_nodes >= max_order + ceil(growth_exponent / 2) + 2 so that each
/// integrand is resolved exactly up to the quadrature's degree.
HermiteSeries hermite_coeffs(const LinkFunction& f, int max_order = 20,
                             int num_nodes = 40);

/// Smallest j >= 1 with |coeffs[j]| > tol; empty when no coefficient
/// clears the threshold. A negative tol selects the default threshold
/// 1e-8 relative to the series l2 norm.
std::optional<int> information_exponent(const HermiteSeries& series,
                                        double tol = -1.0);

/// Correlation decay of the alignment drift:
/// zeta(w) = -sum_{j>=1} j a_j b_j w^{j-1}, where a are the coefficients
/// of g and b those of phi. Equals -E[phi'(Z_w) g'(Z_u)] when the two
/// standard normals have correlation w.
double zeta(const HermiteSeries& g_series, const HermiteSeries& phi_series,
            double omega);

/// Radial drift coefficient
/// psi(w) = -E[phi'(A) g(B) A - phi'(A) g'(B) w], corr(A, B) = w, via the
/// product expansion psi(w) = -sum_{k>=2} sqrt(k(k-1)) b_k a_{k-2} w^{k-2}.
double psi(const HermiteSeries& g_series, const HermiteSeries& phi_series,
           double omega);

/// Check zeta(w) <= -c w^{s-1} for every w in grid (all grid points must
/// lie in (0, 1]). Propagates an absent information exponent by returning
/// holds = false with info_exponent empty.
CorrelationCondition check_correlation_condition(const LinkFunction& g,
                                                 const LinkFunction& phi,
                                                 double c,
                                                 std::span<const double> grid);

/// Named links: "relu", "identity", "cube", "phase_retrieval" (z -> z^2),
/// and "hermite:<s>" for the orthonormal Hermite polynomial of order s.
LinkFunction make_link(const std::string& name);

/// Series scaled by a constant factor (e.g. a sign flip of the activation).
HermiteSeries scaled(HermiteSeries s, double factor);

}  // namespace silab
