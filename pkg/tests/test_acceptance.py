"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed in the terminal summary
(see conftest.py), so they appear even when output capture is on.
"""
from __future__ import annotations

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import optimize, stats

from sketchkm import KernelSpec, LossSpec, gram, output_matrix
from sketchkm.bench import parse_config, run_experiment
from sketchkm.losses import loss_subgradient, loss_value
from sketchkm.sketch import (DegenerateSketchError, dense_sparsified, generate_sketch,
                             optimal_sparsity, sketch_gram)
from sketchkm.solver import (AdamConfig, build_feature_maps, feature_objective,
                             fit_multioutput_sketched, fit_scalar_sketched, gamma_objective,
                             multioutput_feature_objective, multioutput_objective,
                             solve_feature_ridge, solve_krr_sketched)
from sketchkm.spectrum import k_satisfiable, psi, spectral_profile, theorem_c

RESULTS: list[str] = []


def verdict(num, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:>2}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _data(rng, n, q=2):
    X = rng.random((n, q))
    y = np.sin(3 * X[:, 0]) + X[:, 1] + 0.1 * rng.standard_normal(n)
    return X, y


def test_criterion_01_decomposition_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    ps = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
    worst = 0.0
    done = 0
    seed = 0
    while done < 100:
        seed += 1
        n = int(rng.integers(20, 501))
        s = int(rng.integers(1, min(50, n - 1) + 1))
        p = ps[int(rng.integers(len(ps)))]
        kind = ("psr", "psg")[done % 2]
        try:
            S = generate_sketch(kind, s, n, seed, p=p)
        except DegenerateSketchError:
            continue
        X = rng.standard_normal((n, 3))
        spec = KernelSpec.gaussian(float(rng.uniform(0.5, 5)))
        K = gram(spec, X)
        D = dense_sparsified(kind, s, n, seed, p)
        SK, SKS = sketch_gram(S, spec, X)
        ref1, ref2 = D @ K, D @ K @ D.T
        worst = max(worst, np.max(np.abs(SK - ref1)) / max(np.max(np.abs(ref1)), 1e-300),
                    np.max(np.abs(SKS - ref2)) / max(np.max(np.abs(ref2)), 1e-300))
        done += 1
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-10 and elapsed < 30,
            f"max relative error {worst:.2e} (<= 1e-10) over 100 operators in {elapsed:.1f}s (< 30s)")


def test_criterion_02_sketch_moments():
    t0 = time.perf_counter()
    checks = []
    # entry distribution of p-SR: +-1/sqrt(sp) w.p. p/2 each, 0 w.p. 1-p
    for p, seed in [(0.05, 1), (0.3, 2), (0.7, 3)]:
        s, n = 20, 10000
        D = generate_sketch("psr", s, n, seed, p=p).to_dense()
        a = 1 / math.sqrt(s * p)
        counts = [np.sum(D == a), np.sum(D == -a), np.sum(D == 0)]
        pv = stats.chisquare(counts, s * n * np.array([p / 2, p / 2, 1 - p])).pvalue
        checks.append(("psr chi2", pv, pv > 1e-3))
    # p-SG: mask frequency and normal values
    D = generate_sketch("psg", 20, 10000, 4, p=0.3).to_dense()
    pv = stats.kstest(D[D != 0] * math.sqrt(20 * 0.3), "norm").pvalue
    checks.append(("psg ks", pv, pv > 1e-3))
    # active columns: Binomial(n, 1 - (1-p)^s)
    s, n, p, reps = 10, 100, 0.1, 10000
    sp = np.array([generate_sketch("psr", s, n, k, p=p).s_prime for k in range(reps)])
    q = 1 - (1 - p) ** s
    mean, var = n * q, n * q * (1 - q)
    z_mean = abs(sp.mean() - mean) / math.sqrt(var / reps)
    z_var = abs(sp.var(ddof=1) - var) / (var * math.sqrt(2 / (reps - 1)))
    checks.append(("E[s'] z", z_mean, z_mean <= 3))
    checks.append(("Var[s'] z", z_var, z_var <= 4))
    elapsed = time.perf_counter() - t0
    ok = all(c[2] for c in checks) and elapsed < 60
    desc = ", ".join(f"{name}={val:.3g}" for name, val, _ in checks)
    verdict(2, ok, f"{desc}; {elapsed:.1f}s (< 60s)")


def _brute_delta(mu, step=1e-6):
    hi = max(1.0, math.sqrt(mu[0]))
    m = int(math.ceil(hi / step))
    for start in range(0, m, 200000):
        grid = (np.arange(start, min(start + 200000, m)) + 1) * step
        ok = psi(mu, grid) <= grid * grid
        if ok.any():
            return grid[np.argmax(ok)]
    return hi


def test_criterion_03_critical_radius():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        A = rng.standard_normal((8, 8))
        prof = spectral_profile(A @ A.T)
        worst = max(worst, abs(prof.delta_n - _brute_delta(prof.mu)))
    ident = spectral_profile(8 * np.eye(8))
    ok = worst <= 2e-6 and ident.delta_n_sq == 1.0 and ident.d_n == 1
    verdict(3, ok, f"max |bisection - grid| = {worst:.2e} (<= 2e-6); identity: "
                   f"delta^2 = {ident.delta_n_sq}, d_n = {ident.d_n}")


def test_criterion_04_k_satisfiability():
    n, bandwidth = 200, 0.1
    K = gram(KernelSpec.gaussian(bandwidth), np.linspace(0, 1, n)[:, None])
    prof = spectral_profile(K)
    c = theorem_c(1.0)
    s = 4 * prof.d_n
    gauss = sum(k_satisfiable(generate_sketch("gaussian", s, n, seed), prof, c).holds
                for seed in range(100))
    sub = [sum(k_satisfiable(generate_sketch("subsampling", s, n, 1000 * rep + seed), prof,
                             c).holds for seed in range(100)) for rep in range(5)]
    ok = gauss >= 90 and np.mean(sub) < gauss
    verdict(4, ok, f"d_n = {prof.d_n}, s = {s}, c = {c:.4f}: gaussian holds in {gauss}/100 "
                   f"(>= 90), subsampling mean {np.mean(sub):.1f}/100 (< gaussian)")


def test_criterion_05_statistical_dimension():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((500, 5))
    dns = {D: spectral_profile(gram(KernelSpec.polynomial(D, 1.0), X)).d_n for D in (1, 2, 3)}
    poly_ok = all(dns[D] <= D + 1 for D in dns)
    deltas, scaled = [], []
    for n in (100, 200, 400, 800):
        prof = spectral_profile(gram(KernelSpec.gaussian(0.1), np.linspace(0, 1, n)[:, None]))
        deltas.append(prof.delta_n_sq)
        scaled.append(n * prof.delta_n_sq / math.sqrt(math.log(n)))
    decreasing = all(a > b for a, b in zip(deltas, deltas[1:]))
    # bounded: the normalized radius stays within a factor 2 across sizes
    bounded = max(scaled) / min(scaled) <= 2.0
    verdict(5, poly_ok and decreasing and bounded,
            f"polynomial d_n = {dns} (need <= D+1); gaussian delta^2 = "
            f"{[round(d, 5) for d in deltas]} decreasing={decreasing}, "
            f"n delta^2/sqrt(log n) = {[round(v, 3) for v in scaled]} bounded={bounded}")


def _fd_worst(f, shape, rng, points=50, h=1e-6):
    worst = 0.0
    for _ in range(points):
        x = rng.standard_normal(shape)
        e = rng.standard_normal(shape)
        fd = (f(x + h * e)[0] - f(x - h * e)[0]) / (2 * h)
        worst = max(worst, abs(fd - np.sum(f(x)[1] * e)))
    return worst


def test_criterion_06_solver_correctness():
    rng = np.random.default_rng(6)
    spec = KernelSpec.gaussian(0.5)
    # (a) closed form vs ADAM, n = 200
    X, y = _data(rng, 200)
    S = generate_sketch("psr", 20, 200, 3, p=0.2)
    closed = solve_krr_sketched(spec, X, y, 1e-3, S)
    fit = fit_scalar_sketched(spec, X, y, LossSpec.square(), 1e-3, S,
                              AdamConfig(lr=0.01, batch_size=200, epochs=3000))
    gap_a = abs(fit.objective - closed.objective) / closed.objective
    # (b) equivalence of the gamma and feature problems
    gap_b1 = 0.0
    for seed in range(10):
        Xb, yb = _data(np.random.default_rng(100 + seed), 50)
        Sb = generate_sketch("psg", 10, 50, seed, p=0.5)
        ref = solve_krr_sketched(spec, Xb, yb, 1e-3, Sb).objective
        Z = build_feature_maps(Sb, spec, Xb).train_features()
        val = feature_objective(solve_feature_ridge(Z, yb, 1e-3), Z, yb, LossSpec.square(),
                                1e-3)[0]
        gap_b1 = max(gap_b1, abs(val - ref) / ref)
    Xh, yh = _data(rng, 100)
    Sh = generate_sketch("psr", 20, 100, 5, p=0.3)
    huber = LossSpec.huber(0.1)
    feat = fit_scalar_sketched(spec, Xh, yh, huber, 1e-3, Sh,
                               AdamConfig(lr=0.01, batch_size=100, epochs=4000))
    SK, SKS = sketch_gram(Sh, spec, Xh)
    direct = optimize.minimize(lambda g: gamma_objective(g, SK, SKS, yh, huber, 1e-3),
                               np.zeros(20), jac=True, method="L-BFGS-B",
                               options={"maxiter": 20000, "ftol": 1e-15, "gtol": 1e-12})
    gap_b2 = abs(feat.objective - direct.fun) / direct.fun
    # (c) finite differences, four losses, scalar and multi-output
    Xc, yc = _data(rng, 30)
    Sc = generate_sketch("gaussian", 6, 30, 0)
    SKc, SKSc = sketch_gram(Sc, spec, Xc)
    M = output_matrix("quantile_gaussian", gamma=1.0, taus=[0.2, 0.5, 0.8]).M
    worst_c = 0.0
    for loss in (LossSpec.square(), LossSpec.huber(0.3), LossSpec.eps_insensitive(0.1)):
        worst_c = max(worst_c, _fd_worst(
            lambda g: gamma_objective(g, SKc, SKSc, yc, loss, 1e-2), (6,), rng))
        Y3 = np.c_[yc, 2 * yc, -yc]
        worst_c = max(worst_c, _fd_worst(
            lambda G: multioutput_objective(G, SKc, SKSc, Y3, M, loss, 1e-2), (6, 3), rng))
    pin1, pin3 = LossSpec.pinball([0.4]), LossSpec.pinball([0.2, 0.5, 0.8])
    worst_c = max(worst_c, _fd_worst(
        lambda g: gamma_objective(g, SKc, SKSc, yc, pin1, 1e-2), (6,), rng))
    worst_c = max(worst_c, _fd_worst(
        lambda G: multioutput_objective(G, SKc, SKSc, yc[:, None], M, pin3, 1e-2), (6, 3), rng))
    ok = gap_a <= 1e-3 and gap_b1 <= 1e-8 and gap_b2 <= 1e-3 and worst_c <= 1e-5
    verdict(6, ok, f"(a) ADAM gap {gap_a:.2e} (<= 1e-3); (b) closed-form {gap_b1:.2e} "
                   f"(<= 1e-8), Huber descent {gap_b2:.2e} (<= 1e-3); (c) FD {worst_c:.2e} (<= 1e-5)")


def test_criterion_07_multioutput_decoupling():
    rng = np.random.default_rng(7)
    spec = KernelSpec.gaussian(0.5)
    X, y = _data(rng, 100)
    Y = np.c_[y, np.cos(4 * X[:, 1]), X[:, 0] ** 2]
    S = generate_sketch("psr", 15, 100, 2, p=0.3)
    m = fit_multioutput_sketched(spec, X, Y, output_matrix("identity", d=3), LossSpec.square(),
                                 1e-3, S, AdamConfig(lr=0.01, batch_size=100, epochs=4000))
    SK, SKS = sketch_gram(S, spec, X)
    gaps = []
    for j in range(3):
        ref = solve_krr_sketched(spec, X, Y[:, j], 1e-3, S, SK, SKS).objective
        col = gamma_objective(m.coef[:, j], SK, SKS, Y[:, j], LossSpec.square(), 1e-3)[0]
        gaps.append(abs(col - ref) / ref)
    verdict(7, max(gaps) <= 1e-3,
            f"per-column relative objective gaps {[f'{g:.1e}' for g in gaps]} (<= 1e-3)")


def _means(rec, kind):
    return {a["s"]: a[f"{rec['metrics'][0]}_mean"] for a in rec["aggregates"] if a["kind"] == kind}


@pytest.mark.slow
def test_criterion_08_friedman_robust():
    t0 = time.perf_counter()
    raw = {
        "name": "friedman_acceptance",
        "dataset": {"type": "friedman", "n_clean": 1980, "n_outlier": 20, "seed": 0},
        "task": {"type": "robust_scalar", "loss": "huber"},
        "standardize": {"x": True, "y": True},
        "hyperparameters": {"loss_param": 1.0},
        "cv": {"folds": 5, "lambdas": [1e-6, 1e-4, 1e-2],
               "model": {"kind": "psr", "s": 140, "p": "20/n"}},
        "solver": {"lr": 0.05, "epochs": 300, "batch_size": 256},
        "sweep": [{"kind": "exact"}, {"kind": "psr", "s": [40, 80, 140], "p": "20/n"},
                  {"kind": "gaussian", "s": [40, 80, 140]}],
        "replicates": 10,
        "seed": 0,
    }
    rec = run_experiment(parse_config(raw))
    elapsed = time.perf_counter() - t0
    psr, gau = _means(rec, "psr"), _means(rec, "gaussian")
    exact = _means(rec, "exact")[None]
    mono = all(d[40] >= d[80] >= d[140] for d in (psr, gau))
    close = abs(psr[140] - exact) <= 0.2 * exact
    fmt = lambda d: ", ".join(f"s={k}: {v:.4f}" for k, v in sorted(d.items()))  # noqa: E731
    verdict(8, mono and close and elapsed < 600,
            f"pSR [{fmt(psr)}], gaussian [{fmt(gau)}], exact {exact:.4f}; non-increasing={mono}, "
            f"pSR(140) within 20% of exact={close}; {elapsed:.0f}s (< 600s)")


def _apply_time(kind, s, n, X, spec, p=None, reps=3):
    best = np.inf
    for r in range(reps):
        t0 = time.perf_counter()
        S = generate_sketch(kind, s, n, r, p=p)
        sketch_gram(S, spec, X)
        best = min(best, time.perf_counter() - t0)
    return best


def test_criterion_09_timing_ordering():
    n, s = 5000, 100
    X = np.random.default_rng(9).random((n, 10))
    spec = KernelSpec.gaussian(2.0)
    t_sub = _apply_time("subsampling", s, n, X, spec)
    t_psr = _apply_time("psr", s, n, X, spec, p=20 / n)
    t_gau = _apply_time("gaussian", s, n, X, spec)
    ok = 1.5 * t_sub <= t_psr and 1.5 * t_psr <= t_gau
    verdict(9, ok, f"subsampling {t_sub:.3f}s, pSR {t_psr:.3f}s, gaussian {t_gau:.3f}s; "
                   f"ratios {t_psr / t_sub:.1f}x, {t_gau / t_psr:.1f}x (>= 1.5x each)")


@pytest.mark.slow
def test_criterion_10_joint_quantile():
    raw = {
        "name": "quantile_acceptance",
        "dataset": {"type": "heteroscedastic", "n": 1000, "seed": 0},
        "task": {"type": "joint_quantile", "taus": [0.1, 0.3, 0.5, 0.7, 0.9]},
        "cv": {"folds": 5, "bandwidth_factors": [0.1, 0.5, 1.0], "lambdas": [1e-5, 1e-4, 1e-3],
               "model": {"kind": "psr", "s": 50, "p": "20/n"}},
        "solver": {"lr": 0.05, "epochs": 300, "batch_size": 256},
        "sweep": [{"kind": "exact"}, {"kind": "psr", "s": 50, "p": "20/n"}],
        "replicates": 5,
        "seed": 0,
    }
    rec = run_experiment(parse_config(raw))
    agg = {a["kind"]: a for a in rec["aggregates"]}
    pin_s, pin_e = agg["psr"]["pinball_mean"], agg["exact"]["pinball_mean"]
    cross = agg["psr"]["crossing_mean"]
    ok = abs(pin_s - pin_e) <= 0.1 * pin_e and cross <= 0.05
    verdict(10, ok, f"gamma = {rec['hyperparameters']['gamma']}; pinball sketched {pin_s:.3f} vs "
                    f"exact {pin_e:.3f} (within 10%); crossing {cross:.4f} (<= 0.05)")


def test_criterion_11_optimal_sparsity():
    ps = {c: optimal_sparsity(c) for c in (0.5, 1.0, 5.0, 10.0)}
    verdict(11, all(0.65 <= p <= 0.75 for p in ps.values()),
            "p* = " + ", ".join(f"{p:.4f} (C0dn={c})" for c, p in ps.items()) + " in [0.65, 0.75]")


REPRO_CONFIGS = {
    "robust": {
        "dataset": {"type": "friedman", "n_clean": 200, "n_outlier": 5, "seed": 1},
        "task": {"type": "robust_scalar", "loss": "eps_insensitive"},
        "cv": {"folds": 3, "bandwidth_factors": [1.0, 5.0], "lambdas": [1e-4, 1e-2],
               "loss_params": [0.1, 0.5]},
        "sweep": [{"kind": "exact"}, {"kind": "psr", "s": [10, 20], "p": "20/n"},
                  {"kind": "accumulation", "s": 10, "m": 4}, {"kind": "countsketch", "s": 10}],
    },
    "quantile": {
        "dataset": {"type": "heteroscedastic", "n": 200, "seed": 1},
        "task": {"type": "joint_quantile"},
        "cv": {"folds": 3, "bandwidth_factors": [0.5], "lambdas": [1e-3], "gammas": [0, 10]},
        "sweep": [{"kind": "psg", "s": 15, "p": 0.3}, {"kind": "subsampling", "s": 15}],
    },
    "multioutput": {
        "dataset": {"type": "multioutput", "n": 200, "d": 3, "seed": 1},
        "task": {"type": "multioutput_ridge",
                 "output": {"provenance": "graph_laplacian_mix", "mu": 0.5,
                            "adjacency": [[0, 1, 0], [1, 0, 1], [0, 1, 0]]}},
        "hyperparameters": {"lam": 1e-3},
        "sweep": [{"kind": "exact"}, {"kind": "rademacher", "s": 20}],
    },
}


def test_criterion_12_reproducibility(tmp_path):
    same = {}
    for name, body in REPRO_CONFIGS.items():
        raw = dict(body, name=name, replicates=3, seed=11, threads=2,
                   solver={"epochs": 40, "batch_size": 64})
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps(raw))
        files = []
        for run in ("a", "b"):
            out = tmp_path / f"{name}_{run}"
            proc = subprocess.run([sys.executable, "-m", "sketchkm.bench.cli", "run",
                                   "--config", str(cfg), "--output", str(out)],
                                  capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            files.append((out / "metrics.csv").read_bytes())
        same[name] = files[0] == files[1]
    verdict(12, all(same.values()), f"metrics.csv identical across two runs: {same}")
