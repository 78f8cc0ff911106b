#!/usr/bin/env python3
"""Does the preconditioning benefit appear at r1=1/2 (spike nearly orthogonal
to target), with theorem-matched horizons (plain gets the 1/lambda_min factor)?"""
import numpy as np
import time

def h2(z): return (z * z - 1.0) / np.sqrt(2.0)
def h2p(z): return np.sqrt(2.0) * z

def run(kind, d, r1, r2, n, eps, t_mult, seed):
    rng = np.random.default_rng(1000 + seed)
    kappa = float(d) ** r2
    u = rng.standard_normal(d); u /= np.linalg.norm(u)
    v = rng.standard_normal(d); v -= (v @ u) * u; v /= np.linalg.norm(v)
    c = float(d) ** (-r1)
    theta = c * u + np.sqrt(1.0 - c * c) * v

    def xh(z):
        bulk = (1.0 + kappa) ** -0.5
        return bulk * z + (1.0 - bulk) * (z @ theta)[:, None] * theta[None, :]

    x = xh(rng.standard_normal((n, d)))
    su_half = xh(u[None, :])[0]
    nrm = np.linalg.norm(su_half)
    y = h2(x @ u / nrm)
    xu = xh(rng.standard_normal((n, d)))
    S = xu.T @ xu / n
    evals, evecs = np.linalg.eigh(S)
    evals = np.maximum(evals, 1e-10 * np.trace(S) / d)
    lam_max, lam_min = evals.max(), evals.min()
    Shalf = (evecs * np.sqrt(evals)) @ evecs.T
    Sinv = (evecs * (1.0 / evals)) @ evecs.T
    Sfull = (evecs * evals) @ evecs.T
    ubar = su_half / nrm
    w = rng.standard_normal(d); w /= np.linalg.norm(w)
    sw = Shalf @ w
    if sw @ ubar < 0: w = -w
    sw = Shalf @ w
    m0bar = (sw @ ubar) / np.linalg.norm(sw)
    tau = np.log(1.0 / min(max(abs(m0bar), 1e-8), 0.999))
    t_max = t_mult * (tau + np.log(1.0 / eps))
    if kind == "plain":
        t_max /= lam_min
    dt = 0.05 / lam_max
    for k in range(int(np.ceil(t_max / dt))):
        sw = Shalf @ w
        nu = np.linalg.norm(sw)
        if (sw @ ubar) / nu >= 1.0 - eps:
            return k * dt
        q = x @ w
        v_ = h2p(q / nu) * y
        p = x.T @ v_ / n
        s_ = v_ @ q / n
        dw = nu * (Sinv @ p) - (s_ / nu) * w if kind == "precond" else nu * p - (s_ / nu) * (Sfull @ w)
        w = w + dt * dw
        if not np.all(np.isfinite(w)): return None
    return None

t0 = time.time()
for r1 in [0.5, 0.45]:
    for kind in ["plain", "precond"]:
        meds = []
        for sd in range(10):
            n, found = 64, None
            while n <= 32768:
                hit = run(kind, 32, r1, 1.0, n, 0.1, 4.0, sd)
                if hit is not None:
                    found = n
                    break
                n *= 2
            meds.append(found if found else np.inf)
        print(f"r1={r1} {kind:8s}: median={np.median(meds):>8} {meds}  [{time.time()-t0:.0f}s]")
