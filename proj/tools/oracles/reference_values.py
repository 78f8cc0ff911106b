#!/usr/bin/env python3
"""Independent reference values for the C++ test suite.

Everything here is computed with numpy/mpmath only, by methods that do not
share code with the library (direct quadrature of defining integrals, closed
forms, partial-fraction integration of scalar ODEs). The printed values are
frozen into the C++ tests as expected constants.
"""
import json
import math

import mpmath as mp
import numpy as np

mp.mp.dps = 30

out = {}


# ---------------------------------------------------------------- hermite ---
def hermite_norm(j, z):
    """Normalized probabilists' Hermite polynomial via explicit He_j / sqrt(j!)."""
    return float(mp.hermite(j, z / mp.sqrt(2)) / mp.power(2, j / mp.mpf(2)) / mp.sqrt(mp.factorial(j)))


out["h2_at_0"] = hermite_norm(2, 0.0)
out["h5_at_1p3"] = hermite_norm(5, 1.3)
out["h12_at_0p7"] = hermite_norm(12, 0.7)
out["h3_at_m2p1"] = hermite_norm(3, -2.1)

# Gauss-Hermite (probabilists', weights summing to 1) for K = 4.
nodes, weights = np.polynomial.hermite_e.hermegauss(4)
weights = weights / math.sqrt(2 * math.pi)
out["gh4_nodes"] = sorted(nodes.tolist())
out["gh4_weights"] = [w for _, w in sorted(zip(nodes.tolist(), weights.tolist()))]

# ReLU coefficients in the normalized basis, by direct quadrature on [0, inf).
def relu_coeff(j):
    f = lambda z: z * mp.hermite(j, z / mp.sqrt(2)) / mp.power(2, j / mp.mpf(2)) / mp.sqrt(mp.factorial(j)) * mp.exp(-z * z / 2) / mp.sqrt(2 * mp.pi)
    return float(mp.quad(f, [0, mp.inf]))


out["relu_beta"] = [relu_coeff(j) for j in range(9)]
out["relu_beta_closed"] = [
    1 / math.sqrt(2 * math.pi), 0.5, 1 / math.sqrt(4 * math.pi), 0.0,
    -0.5 * math.sqrt(2 / math.pi) / math.sqrt(24), 0.0,
    1.5 * math.sqrt(2 / math.pi) / math.sqrt(720), 0.0,
]
out["relu_sq_norm"] = 0.5  # E[relu(z)^2] for z ~ N(0,1)

# cube and phase-retrieval expansions.
out["cube_alpha"] = [0.0, 3.0, 0.0, math.sqrt(6.0)]
out["square_alpha"] = [1.0, 0.0, math.sqrt(2.0)]


# ------------------------------------------------------------- zeta / psi ---
def series_zeta(alpha, beta, w):
    return -sum(j * a * b * w ** (j - 1) for j, (a, b) in enumerate(zip(alpha, beta)) if j >= 1)


def series_psi(alpha, beta, w):
    # -sum_{k>=2} sqrt(k(k-1)) beta_k alpha_{k-2} w^{k-2}
    s = 0.0
    for k in range(2, min(len(beta), len(alpha) + 2)):
        s += math.sqrt(k * (k - 1)) * beta[k] * alpha[k - 2] * w ** (k - 2)
    return -s


def coeffs_of(name, J=24):
    K = 64
    n, w = np.polynomial.hermite_e.hermegauss(K)
    w = w / math.sqrt(2 * math.pi)
    if name == "relu":
        f = np.maximum(n, 0.0)
    elif name == "cube":
        f = n ** 3
    elif name == "identity":
        f = n
    elif name.startswith("h"):
        s = int(name[1:])
        f = np.array([hermite_norm(s, z) for z in n])
    H = np.array([[hermite_norm(j, z) for j in range(J + 1)] for z in n])
    return (w[:, None] * f[:, None] * H).sum(axis=0)


def quad_psi(phi_name, alpha_g, w):
    """psi by 2-D quadrature of -E[phi'(a) g(b) a - phi'(a) g'(b) w], corr(a,b)=w."""
    K = 120
    n, q = np.polynomial.hermite_e.hermegauss(K)
    q = q / math.sqrt(2 * math.pi)
    A = n[:, None] * np.ones(K)[None, :]
    C = np.ones(K)[:, None] * n[None, :]
    B = w * A + math.sqrt(max(0.0, 1 - w * w)) * C
    W2 = q[:, None] * q[None, :]
    if phi_name == "relu":
        dphi = (A > 0).astype(float)
    g = np.zeros_like(B)
    gp = np.zeros_like(B)
    for j, a in enumerate(alpha_g):
        if a == 0.0:
            continue
        hj = np.vectorize(lambda z: hermite_norm(j, z))(B)
        g += a * hj
        if j >= 1:
            gp += a * math.sqrt(j) * np.vectorize(lambda z: hermite_norm(j - 1, z))(B)
    val = -(W2 * (dphi * g * A - dphi * gp * w)).sum()
    return float(val)


relu_b = out["relu_beta_closed"] + [0.0] * 20
h2_a = [0.0, 0.0, 1.0]
h4_a = [0.0, 0.0, 0.0, 0.0, 1.0]
out["psi_relu_h2_series"] = {str(w): series_psi(h2_a, relu_b, w) for w in (0.0, 0.3, 0.6, 0.9)}
out["psi_relu_h2_quad"] = {str(w): quad_psi("relu", h2_a, w) for w in (0.0, 0.3, 0.6, 0.9)}
out["psi_relu_h4_series"] = {str(w): series_psi(h4_a, relu_b, w) for w in (0.3, 0.7)}
out["psi_relu_h4_quad"] = {str(w): quad_psi("relu", h4_a, w) for w in (0.3, 0.7)}

out["zeta_relu_h2"] = {str(w): series_zeta(h2_a, relu_b, w) for w in (0.1, 0.5, 0.9)}
out["zeta_h3_h3"] = {str(w): -3 * w * w for w in (0.1, 0.5, 0.9)}
out["zeta_identity_cube"] = -3.0  # only j=1 overlaps: -1*3*1


# ------------------------------------------------- scalar ODE hitting times ---
def hit_time_exact_s2(m0):
    # dm/dt = 2 m (1 - m^2): logistic in q = m^2.
    return 0.25 * (math.log(0.25 / 0.75) - math.log(m0 * m0 / (1 - m0 * m0)))


def hit_time_exact_s3(m0):
    return (1.0 / m0 - math.atanh(m0) - 2.0 + math.atanh(0.5)) / 3.0


def hit_time_exact_s4(m0):
    F = lambda m: -1.0 / (2 * m * m) + math.log(m / math.sqrt(1 - m * m))
    return 0.25 * (F(0.5) - F(m0))


out["hit_half_s2_m0_0p1"] = hit_time_exact_s2(0.1)
grid = np.geomspace(0.01, 0.1, 6)
out["tau_grid"] = grid.tolist()
for s, fn in ((3, hit_time_exact_s3), (4, hit_time_exact_s4)):
    T = np.array([fn(m) for m in grid])
    x = np.log(1.0 / grid)
    A = np.vstack([x, np.ones_like(x)]).T
    slope = np.linalg.lstsq(A, np.log(T), rcond=None)[0][0]
    out[f"tau_exact_times_s{s}"] = T.tolist()
    out[f"tau_exact_slope_s{s}"] = float(slope)


# ------------------------------------------ spiked-trap scalar drift check ---
def scalar_drift(m, kappa, alpha, beta):
    """dm/dt for the theta = u spherical ODE with a 1-homogeneous activation."""
    nrm = math.sqrt((1 + kappa * m * m) / (1 + kappa))
    mbar = m * math.sqrt((1 + kappa) / (1 + kappa * m * m))
    zt = -sum(j * a * b * mbar ** (j - 1) for j, (a, b) in enumerate(zip(alpha, beta)) if j >= 1)
    pt = sum((j - 1) * a * b * mbar ** j for j, (a, b) in enumerate(zip(alpha, beta))) / nrm + 0.5
    return -(zt + kappa * pt * m / (1 + kappa)) * (1 - m * m)


h4_full = [0.0, 0.0, 0.0, 0.0, 1.0]
d_ex, s_ex = 1e4, 4
kap_ex = d_ex ** ((s_ex - 2) / (s_ex - 1)) / 10
out["trap_drift_example"] = scalar_drift(1 / math.sqrt(d_ex), kap_ex, h4_full, relu_b)

worst = []
for d in (100, 1000, 10000):
    kap = d ** 0.4
    ms = np.linspace(1e-4, 3 / math.sqrt(d), 400)
    worst.append(max(scalar_drift(m, kap, h4_full, relu_b) for m in ms))
out["trap_drift_sup_over_band"] = worst  # all must be < 0

# Large-spike recovery: phi = relu, g = cube, kappa = 10/m0^2.
def recovery_hit(kappa, m0, eps, dt=1e-5):
    m, t = m0, 0.0
    while m < 1 - eps:
        m += dt * (1.5 - 0.5 * kappa * m / (1 + kappa)) * (1 - m * m)
        t += dt
        if t > 100:
            return None
    return t


out["recovery_hit_kappa1000"] = recovery_hit(1000.0, 0.1, 0.01)
out["recovery_bound"] = 1.5 * math.log(2 / 0.01) / (1.5 - 0.5)

# Normalized-contrast ODE (theta = u): dm/dt = -zeta(m) [(1-m^2)^2 + m^2(1-m^2)/(1+k)].
def contrast_hit(kappa, m0, target=0.99, dt=5e-3):
    c4 = 4 * abs(relu_b[4])
    m, t = m0, 0.0
    while m < target:
        zeta = -c4 * m ** 3  # sign-flipped relu against h4: -4*|b4|*m^3... zeta(m) = -0.3257 m^3
        rate = -zeta * ((1 - m * m) ** 2 + m * m * (1 - m * m) / (1 + kappa))
        m += dt * rate
        t += dt
        if t > 1e6:
            return None
    return t


contrast = {}
for d in (100, 1000, 10000):
    kap = d ** 0.4
    m0 = 0.6745 / math.sqrt(d)
    m0bar = m0 * math.sqrt((1 + kap) / (1 + kap * m0 * m0))
    contrast[str(d)] = {"m0bar_median": m0bar, "hit_0p99": contrast_hit(kap, m0bar)}
out["contrast_hits"] = contrast


# ----------------------------------------------------------- Stein / ridge ---
out["stein_square_identity"] = "lhs = u + 2*rho*w exactly"

Phi = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
y = np.array([1.0, 2.0, 3.0])
lam = 0.1
H = Phi.T @ Phi / 3 + lam * np.eye(2)
astar = np.linalg.solve(H, Phi.T @ y / 3)
out["ridge_phi"] = Phi.tolist()
out["ridge_y"] = y.tolist()
out["ridge_lambda"] = lam
out["ridge_astar"] = astar.tolist()
out["ridge_eigs"] = np.linalg.eigvalsh(H).tolist()

# Median initial alignments under the exact spiked geometry (regime sanity).
rng = np.random.default_rng(7)
cells = {"r1_0p5_r2_0p05": (0.5, 0.05, -0.5), "r1_0p35_r2_0p65": (0.35, 0.65, -0.2), "r1_0p05_r2_0p9": (0.05, 0.9, -0.05)}
init_stats = {}
for name, (r1, r2, pred) in cells.items():
    meds = {}
    for d in (256, 1024, 4096):
        kap = d ** r2
        cos_a = d ** (-r1)
        u = np.zeros(d); u[0] = 1.0
        th = math.sqrt(1 - cos_a**2)
        theta = np.zeros(d); theta[0] = cos_a; theta[1] = th
        sq = lambda v: (v + (math.sqrt(1 + kap) - 1) * (theta @ v) * theta) / math.sqrt(1 + kap)
        ubar = sq(u); ubar /= np.linalg.norm(ubar)
        vals = []
        for _ in range(400):
            w = rng.standard_normal(d); w /= np.linalg.norm(w)
            sw = sq(w)
            vals.append(abs(sw @ ubar) / np.linalg.norm(sw))
        meds[d] = float(np.median(vals))
    xs = np.log([256, 1024, 4096]); ys = np.log([meds[256], meds[1024], meds[4096]])
    A = np.vstack([xs, np.ones_like(xs)]).T
    slope = float(np.linalg.lstsq(A, ys, rcond=None)[0][0])
    init_stats[name] = {"medians": meds, "slope": slope, "predicted": pred}
out["init_alignment"] = init_stats

print(json.dumps(out, indent=1))
