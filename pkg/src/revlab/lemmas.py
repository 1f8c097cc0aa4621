"""Desk-scale Monte-Carlo checks of the concentration and initialization lemmas."""

from __future__ import annotations

import math

import numpy as np

from .bilinear import init_theta, ode_bound_check, ode_trajectories, pair_probs
from .datasets import build_bilinear_pairs
from .embeddings import EmbeddingSet, almost_normal_check, check_almost_orthonormal, chi_sq_tail_check, min_dim_for_eps
from .numerics import Rng
from .oracles import Check


def orthonormal_check(rng: Rng, n: int = 50, eps: float = 0.2, delta: float = 0.01, seeds: int = 100,
                      d: int | None = None) -> Check:
    d = min_dim_for_eps(n, eps, delta) if d is None else d
    devs = []
    for s in range(seeds):
        E = EmbeddingSet.gaussian(n, d, rng.substream(f"trial-{s}"))
        devs.append(check_almost_orthonormal(E, eps)[1])
    ok = sum(dv <= eps for dv in devs)
    need = math.ceil((1 - delta) * seeds)
    return Check("almost_orthonormal", ok >= need,
                 {"n": n, "d": d, "eps": eps, "delta": delta, "successes": ok, "trials": seeds,
                  "required_successes": need, "worst_deviation": max(devs)})


def chi_squared_check(rng: Rng, cases=((100, 1.0), (100, 2.0)), trials: int = 100_000) -> Check:
    rows = []
    for t, x in cases:
        r = chi_sq_tail_check(t, x, trials, rng.substream(f"t{t}-x{x}"))
        rows.append({"t": t, "x": x, "upper_freq": r.upper_emp, "lower_freq": r.lower_emp,
                     "bound": r.bound, "passed": r.passed})
    return Check("chi_squared_tail", all(r["passed"] for r in rows), {"trials": trials, "cases": rows})


def almost_normal(rng: Rng, d: int = 1000, v: float = 0.2, trials: int = 20_000) -> Check:
    freq, bound = almost_normal_check(d, v, trials, rng)
    slack = 3.0 * math.sqrt(min(bound, 1.0) * (1 - min(bound, 1.0)) / trials)
    return Check("almost_normal", freq <= bound + slack,
                 {"d": d, "v": v, "trials": trials, "freq": freq, "bound": bound})


def ode_check(c1: float = 0.5, c2: float = 0.7, c3: float = 2.0, t_end: float = 20.0) -> Check:
    t, f1, f2 = ode_trajectories(c1, c2, c3, 2.0, 1.5, t_end)
    equal = ode_bound_check(t, f1, f2, c1, c2, c3, tol=1e-9)
    max_gap1 = float(np.abs(equal.f1_bound - f1).max())
    max_gap2 = float(np.abs(equal.f2_bound - f2).max())
    t, g1, g2 = ode_trajectories(c1, c2, c3, 2.0, 1.5, t_end, f1_rate=2.0, f2_rate=0.0)
    strict = ode_bound_check(t, g1, g2, c1, c2, c3, tol=0.0)
    strict_below = bool(np.all(g1[1:] < strict.f1_bound[1:]))
    passed = equal.passed and max_gap1 <= 1e-9 and max_gap2 <= 1e-9 and strict.passed and strict_below
    return Check("ode_bound", passed, {"c1": c1, "c2": c2, "c3": c3, "equality_gap_f1": max_gap1,
                                       "equality_gap_f2": max_gap2, "strict_case_below": strict_below})


def initial_uniform_check(rng: Rng, m: int = 64, n: int = 8, d: int = 512, sigma: float = 1e-3,
                          seeds: int = 20) -> Check:
    lo, hi = 1 / (2 * m), 3 / (2 * m)
    worst_lo, worst_hi = 1.0, 0.0
    for s in range(seeds):
        r = rng.substream(f"seed-{s}")
        D = build_bilinear_pairs(m, n, d, r.substream("dataset"))
        P = init_theta("gaussian", sigma, r.substream("init"), d)
        p = pair_probs(P.Theta, D, D.train + D.test)
        worst_lo, worst_hi = min(worst_lo, float(p.min())), max(worst_hi, float(p.max()))
    return Check("initial_near_uniform", lo < worst_lo and worst_hi < hi,
                 {"m": m, "d": d, "sigma": sigma, "seeds": seeds, "window": [lo, hi],
                  "min_prob": worst_lo, "max_prob": worst_hi})


def lemma_suite(seed: int = 0, *, orthonormal_d: int | None = None, trials: int = 100_000) -> dict:
    """Run every verifier; failures are reported, never raised."""
    rng = Rng(seed, "lemmas")
    checks = [
        initial_uniform_check(rng.substream("initial-uniform")),
        orthonormal_check(rng.substream("orthonormal"), d=orthonormal_d),
        almost_normal(rng.substream("almost-normal")),
        ode_check(),
        chi_squared_check(rng.substream("chi-squared"), trials=trials),
    ]
    return {"seed": seed, "passed": all(c.passed for c in checks), "checks": [c.to_dict() for c in checks]}
