#!/usr/bin/env python3
"""Probe ordering study: does n*(precond) < n*(plain) hold anywhere near
criterion 9's cell, and under which activation/noise choices?"""
import numpy as np

def h2(z): return (z * z - 1.0) / np.sqrt(2.0)
def h2p(z): return np.sqrt(2.0) * z
def relu(z): return np.maximum(z, 0.0)
def relup(z): return (z > 0).astype(float)

def make_problem(d, r1, r2, seed):
    rng = np.random.default_rng(seed)
    kappa = float(d) ** r2
    u = rng.standard_normal(d); u /= np.linalg.norm(u)
    v = rng.standard_normal(d); v -= (v @ u) * u; v /= np.linalg.norm(v)
    c = float(d) ** (-r1)
    theta = c * u + np.sqrt(1 - c * c) * v
    return kappa, u, theta, rng

def sigma_half_apply(z, kappa, theta):
    bulk = (1.0 + kappa) ** -0.5
    return bulk * z + (1.0 - bulk) * (z @ theta)[:, None] * theta[None, :]

def run(kind, phi, d, r1, r2, n, eps, t_mult, seed, sigma=0.0):
    kappa, u, theta, rng = make_problem(d, r1, r2, 1000 + seed)
    z = rng.standard_normal((n, d))
    x = sigma_half_apply(z, kappa, theta)
    su = (u + kappa * (u @ theta) * theta) / (1.0 + kappa)  # Sigma u
    su_half = sigma_half_apply(u[None, :], kappa, theta)[0]  # Sigma^{1/2} u
    nrm = np.sqrt(u @ su)
    y = h2(x @ u / nrm)
    if sigma > 0:
        y = y + sigma * rng.standard_normal(n)
    zu = rng.standard_normal((n, d))
    xu = sigma_half_apply(zu, kappa, theta)
    S = xu.T @ xu / n
    evals, evecs = np.linalg.eigh(S)
    evals = np.maximum(evals, 1e-10 * np.trace(S) / d)
    lam_max = evals.max()
    Shalf = (evecs * np.sqrt(evals)) @ evecs.T
    Sinv = (evecs * (1.0 / evals)) @ evecs.T
    Sfull = (evecs * evals) @ evecs.T
    ubar = su_half / np.linalg.norm(su_half)
    f, fp = (h2, h2p) if phi == "h2" else (relu, relup)
    w = rng.standard_normal(d); w /= np.linalg.norm(w)
    sw = Shalf @ w
    if sw @ ubar < 0: w = -w; sw = -sw
    m0bar = (sw @ ubar) / np.linalg.norm(sw)
    tau = np.log(1.0 / min(max(abs(m0bar), 1e-8), 0.999))
    t_max = t_mult * (tau + np.log(1.0 / eps))
    dt = 0.05 / lam_max
    steps = int(np.ceil(t_max / dt))
    for k in range(steps):
        sw = Shalf @ w
        nu = np.linalg.norm(sw)
        if (sw @ ubar) / nu >= 1.0 - eps:
            return m0bar, k * dt
        q = x @ w
        v_ = fp(q / nu) * y
        p = x.T @ v_ / n
        s_ = v_ @ q / n
        dw = nu * (Sinv @ p) - (s_ / nu) * w if kind == "precond" else nu * p - (s_ / nu) * (Sfull @ w)
        w = w + dt * dw
        if not np.all(np.isfinite(w)): return m0bar, None
    return m0bar, None

def nstar_per_seed(kind, phi, d, r1, r2, eps, t_mult, seeds, sigma=0.0, n_lo=64, n_hi=32768):
    out = []
    for sd in seeds:
        n = n_lo
        found = None
        while n <= n_hi:
            m0b, hit = run(kind, phi, d, r1, r2, n, eps, t_mult, sd, sigma)
            if hit is not None:
                found = n
                break
            n *= 2
        out.append(found if found else np.inf)
    return out

seeds = list(range(10))
for (r1, phi, sigma) in [(0.0, "h2", 0.0), (0.0, "relu", 0.0), (0.0, "h2", 0.5),
                          (0.25, "h2", 0.0), (0.25, "relu", 0.0), (0.4, "h2", 0.0)]:
    pl = nstar_per_seed("plain", phi, 32, r1, 1.0, 0.1, 12.0, seeds, sigma)
    pr = nstar_per_seed("precond", phi, 32, r1, 1.0, 0.1, 12.0, seeds, sigma)
    print(f"r1={r1} phi={phi} sigma={sigma}: plain median={np.median(pl):>8} precond median={np.median(pr):>8}")
    print(f"   plain  {pl}")
    print(f"   precond{pr}")
