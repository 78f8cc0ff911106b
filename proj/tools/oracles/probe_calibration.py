#!/usr/bin/env python3
"""Calibrate horizons and expected n* for the empirical-flow probes.

Replicates the emp_normalized / emp_precond dynamics with numpy to answer:
  1. how long does the plain flow need at d=32, r1=0, r2=1, g=phi=h2?
  2. what success fractions vs n do both kinds show (10 seeds)?
  3. total step budget for the bisection probe (criterion 9, 30 min cap).
  4. stage-1 alignment at n=n'=32768 for criterion 11.
"""
import numpy as np
import time

def h2(z):
    return (z * z - 1.0) / np.sqrt(2.0)

def h2p(z):
    return np.sqrt(2.0) * z

def make_problem(d, r2, seed):
    rng = np.random.default_rng(seed)
    kappa = float(d) ** r2
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    theta = u.copy()  # r1 = 0
    return kappa, u, theta, rng

def sample(d, n, nprime, kappa, u, theta, rng):
    def x_of(z):
        # Sigma^{1/2} z with Sigma = (I + kappa theta theta^T)/(1+kappa)
        bulk = (1.0 + kappa) ** -0.5
        return bulk * z + (1.0 - bulk) * (z @ theta)[:, None] * theta[None, :]
    z = rng.standard_normal((n, d))
    x = x_of(z)
    su = (u + 0.0) / np.sqrt(1.0 + kappa) + (1.0 - (1.0 + kappa) ** -0.5) / np.sqrt(1.0 + kappa) * 0  # placeholder
    # transformed target: Sigma^{1/2} u, r1=0 -> u = theta -> Sigma^{1/2}u = u
    su = u
    y = h2(x @ u / np.linalg.norm(su))
    zu = rng.standard_normal((nprime, d))
    xu = x_of(zu)
    return x, y, xu

def run_flow(kind, x, y, xu, u, eps, t_max, seed_init):
    n, d = x.shape
    S = xu.T @ xu / xu.shape[0]
    evals, evecs = np.linalg.eigh(S)
    evals = np.maximum(evals, 1e-10 * np.trace(S) / d)
    lam_max = evals.max()
    Shalf = (evecs * np.sqrt(evals)) @ evecs.T
    Sinv = (evecs * (1.0 / evals)) @ evecs.T
    ubar = u  # exact transformed target (r1=0)
    rng = np.random.default_rng(seed_init)
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    sw = Shalf @ w
    if sw @ ubar < 0:
        w = -w
        sw = -sw
    dt = 0.05 / lam_max
    steps = int(np.ceil(t_max / dt))
    m0bar = (sw @ ubar) / np.linalg.norm(sw)
    hit = None
    for k in range(steps):
        sw = Shalf @ w
        nu = np.linalg.norm(sw)
        ab = (sw @ ubar) / nu
        if ab >= 1.0 - eps:
            hit = k * dt
            break
        q = x @ w
        v = h2p(q / nu) * y
        p = x.T @ v / n
        s = v @ q / n
        if kind == "plain":
            dw = nu * p - (s / nu) * (S @ w)
        else:
            dw = nu * (Sinv @ p) - (s / nu) * w
        w = w + dt * dw
        if not np.all(np.isfinite(w)):
            return m0bar, None, np.nan
    sw = Shalf @ w
    ab = (sw @ ubar) / np.linalg.norm(sw)
    return m0bar, hit, ab

def probe(kind, d, r2, n_list, seeds, eps, t_mult):
    rows = []
    for n in n_list:
        succ = 0
        hits = []
        for sd in seeds:
            kappa, u, theta, rng = make_problem(d, r2, 1000 + sd)
            x, y, xu = sample(d, n, n, kappa, u, theta, rng)
            # horizon: t_mult * (tau_2(m0bar) + ln(1/eps)); m0bar unknown pre-run,
            # use a generous fixed guess tau <= ln(1/0.05) ~= 3
            t_max = t_mult * (3.0 + np.log(1.0 / eps))
            m0b, hit, ab = run_flow(kind, x, y, xu, u, eps, t_max, 77 + sd)
            if hit is not None:
                succ += 1
                hits.append(hit)
        rows.append((n, succ / len(seeds), np.median(hits) if hits else np.nan))
    return rows

t0 = time.time()
seeds = list(range(10))
print("== plain emp_normalized, d=32 r2=1 s=2, eps=0.1, t_mult=12 ==")
for row in probe("plain", 32, 1.0, [64, 128, 256, 512, 1024, 2048, 4096], seeds, 0.1, 12.0):
    print(f"  n={row[0]:6d} success={row[1]:.2f} median_hit={row[2]:.2f}")
print("== precond emp, d=32 r2=1 s=2, eps=0.1, t_mult=12 ==")
for row in probe("precond", 32, 1.0, [64, 128, 256, 512, 1024, 2048, 4096], seeds, 0.1, 12.0):
    print(f"  n={row[0]:6d} success={row[1]:.2f} median_hit={row[2]:.2f}")
print(f"[{time.time()-t0:.1f}s]")

print("== stage-1 alignment at n=n'=32768, d=32, r2=1, eps_target=0.01, precond ==")
for sd in range(5):
    kappa, u, theta, rng = make_problem(32, 1.0, 2000 + sd)
    x, y, xu = sample(32, 32768, 32768, kappa, u, theta, rng)
    t_max = 12.0 * (3.0 + np.log(100.0))
    m0b, hit, ab = run_flow("precond", x, y, xu, u, 0.01, t_max, 900 + sd)
    print(f"  seed={sd} m0bar={m0b:.3f} hit={hit} final_ab={ab:.5f}")
print(f"[{time.time()-t0:.1f}s total]")
