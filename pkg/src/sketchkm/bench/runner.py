"""Experiment execution: data preparation, grid CV, sketch sweeps, records."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import data as D
from .. import losses as L
from ..kernels import KernelSpec, gram, median_heuristic, output_matrix
from ..sketch import SketchError, generate_sketch, sketch_gram
from ..solver import (AdamConfig, SolverError, exact_features, feature_maps_from_gram,
                      fit_exact, fit_multioutput_sketched, fit_scalar_sketched, predict)
from ..spectrum import k_satisfiable, spectral_profile, theorem_c
from .config import DEFAULT_GRIDS, ConfigError, ExperimentConfig, SweepEntry

log = logging.getLogger(__name__)

THREADS_ENV = "SKETCHKM_THREADS"

METRICS_BY_TASK = {
    "robust_scalar": ("relative_mse",),
    "joint_quantile": ("pinball", "crossing"),
    "multioutput_ridge": ("arrmse",),
}
CV_METRIC = {"robust_scalar": "relative_mse", "joint_quantile": "pinball",
             "multioutput_ridge": "arrmse"}


def derive_seed(*keys) -> int:
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


# ---------------------------------------------------------------- data

def load_dataset(spec: dict) -> D.Dataset:
    kind = spec["type"]
    args = {k: v for k, v in spec.items() if k != "type"}
    try:
        if kind == "friedman":
            return D.gen_friedman_robust(**args)
        if kind == "heteroscedastic":
            return D.gen_heteroscedastic(**args)
        if kind == "multioutput":
            return D.gen_multioutput(**args)
        if "manifest" in spec:
            return D.load_manifest(spec["manifest"])[0]
        return D.load_csv(spec["path"], spec.get("target_columns", 1))
    except TypeError as e:
        raise ConfigError(f"bad dataset parameters: {e}") from None


def prepare_data(cfg: ExperimentConfig):
    ds = load_dataset(cfg.dataset)
    train, test = D.split(ds, cfg.split.get("test_fraction", 0.3), cfg.split.get("seed", 0))
    scaler = None
    if cfg.standardize.get("x", True) or cfg.standardize.get("y", False):
        tr, te, scaler = D.standardize(train, test, targets=cfg.standardize.get("y", False))
        if not cfg.standardize.get("x", True):
            tr = D.Dataset(train.X, tr.Y, train.names, train.target_names, "train")
            te = D.Dataset(test.X, te.Y, test.names, test.target_names, "test")
        train, test = tr, te
    return train, test, scaler


# ---------------------------------------------------------------- models

@dataclass(frozen=True)
class Hyper:
    bandwidth: float
    lam: float
    loss_param: float | None = None
    gamma: float | None = None

    def to_dict(self):
        return {"bandwidth": self.bandwidth, "lam": self.lam,
                "loss_param": self.loss_param, "gamma": self.gamma}


def make_kernel(cfg, hp: Hyper) -> KernelSpec:
    fam = cfg.kernel.get("family", "gaussian")
    if fam == "gaussian":
        return KernelSpec.gaussian(hp.bandwidth)
    if fam == "polynomial":
        return KernelSpec.polynomial(cfg.kernel.get("degree", 2), cfg.kernel.get("offset", 1.0))
    return KernelSpec.sobolev()


def make_loss(cfg, hp: Hyper) -> L.LossSpec:
    t = cfg.task
    if t["type"] == "robust_scalar":
        if t["loss"] == "huber":
            return L.LossSpec.huber(hp.loss_param)
        if t["loss"] == "eps_insensitive":
            return L.LossSpec.eps_insensitive(hp.loss_param)
        return L.LossSpec.square()
    if t["type"] == "joint_quantile":
        return L.LossSpec.pinball(t["taus"])
    return L.LossSpec.square()


def make_output(cfg, hp: Hyper, d):
    t = cfg.task
    if t["type"] == "joint_quantile":
        return output_matrix("quantile_gaussian", gamma=hp.gamma, taus=t["taus"])
    if t["type"] == "multioutput_ridge":
        spec = dict(t.get("output", {"provenance": "identity"}))
        prov = spec.pop("provenance", "identity")
        if prov == "identity":
            spec.setdefault("d", d)
        return output_matrix(prov, **spec)
    return None


def adam_config(cfg, seed) -> AdamConfig:
    keys = ("lr", "beta1", "beta2", "eps", "batch_size", "epochs")
    return AdamConfig(**{k: cfg.solver[k] for k in keys if k in cfg.solver}, seed=seed)


class _Cache:
    """Per-(bandwidth, sketch) precomputations shared across lambda/loss grids."""

    def __init__(self):
        self.store = {}

    def get(self, key, fn):
        if key not in self.store:
            self.store[key] = fn()
        return self.store[key]


def fit_entry(cfg, train: D.Dataset, entry: SweepEntry, hp: Hyper, sketch_seed, adam_seed,
              cache=None):
    """Fit one model; returns (model, fit_time, sketch_time)."""
    kernel = make_kernel(cfg, hp)
    loss = make_loss(cfg, hp)
    out = make_output(cfg, hp, train.Y.shape[1])
    acfg = adam_config(cfg, adam_seed)
    cache = cache or _Cache()
    scalar = cfg.task_type == "robust_scalar"
    if entry.exact:
        t0 = time.perf_counter()
        eig = cache.get(("exact", hp.bandwidth),
                        lambda: exact_features(gram(kernel, train.X)))
        t_eig = time.perf_counter() - t0
        if scalar:
            model = fit_exact(kernel, train.X, train.y, loss, hp.lam, acfg, eig=eig)
        else:
            model = fit_exact(kernel, train.X, train.Y, loss, hp.lam, acfg, M=out, eig=eig)
        # Gram evaluation excluded; the eigendecomposition counts as fitting
        return model, model.timings["optimize"] + t_eig, 0.0

    n = train.n
    key = (entry.kind, entry.s, entry.p, entry.m, sketch_seed, hp.bandwidth)

    def build():
        t0 = time.perf_counter()
        S = generate_sketch(entry.kind, entry.s, n, sketch_seed, p=entry.resolve_p(n),
                            m=entry.m)
        SK, SKS = sketch_gram(S, kernel, train.X)
        state = feature_maps_from_gram(SKS, SK=SK, sketch=S)
        return S, SK, SKS, state, time.perf_counter() - t0

    S, SK, SKS, state, t_sketch = cache.get(key, build)
    if scalar:
        model = fit_scalar_sketched(kernel, train.X, train.y, loss, hp.lam, S, acfg,
                                    state=state)
    else:
        model = fit_multioutput_sketched(kernel, train.X, train.Y, out, loss, hp.lam, S,
                                         acfg, SK=SK, SKS=SKS,
                                         parameterization=cfg.solver.get(
                                             "parameterization", "feature"))
    return model, t_sketch + model.timings["optimize"], t_sketch


def evaluate(cfg, model, train: D.Dataset, test: D.Dataset, scaler=None) -> dict:
    pred = predict(model, test.X)
    Y_test = test.Y
    if scaler is not None and scaler.y_mean is not None:
        pred = scaler.inverse_y(pred if pred.ndim == 2 else pred[:, None])
        Y_test = scaler.inverse_y(test.Y)
        train_Y = scaler.inverse_y(train.Y)
    else:
        train_Y = train.Y
    t = cfg.task_type
    if t == "robust_scalar":
        return {"relative_mse": L.relative_mse(pred, Y_test)}
    if t == "joint_quantile":
        return {"pinball": L.pinball_test_loss(pred, Y_test, cfg.task["taus"]),
                "crossing": L.crossing_loss(pred)}
    r = L.rrmse(pred, Y_test, train_Y.mean(axis=0))
    out = {"arrmse": float(np.mean(r))}
    out.update({f"rrmse_{j + 1}": float(v) for j, v in enumerate(r)})
    return out


# ---------------------------------------------------------------- CV

def _grid(cfg, train):
    hp, cv = cfg.hyperparameters, cfg.cv
    if "bandwidth" in hp:
        bws = [float(hp["bandwidth"])]
    elif cfg.kernel.get("family", "gaussian") != "gaussian":
        bws = [1.0]
    else:
        med = median_heuristic(train.X)
        bws = [med * f for f in cv.get("bandwidth_factors", DEFAULT_GRIDS["bandwidth_factors"])]
    lams = [float(hp["lam"])] if "lam" in hp else cv.get("lambdas", DEFAULT_GRIDS["lambdas"])
    t = cfg.task
    if t["type"] == "robust_scalar" and t["loss"] != "square":
        lps = ([float(hp["loss_param"])] if "loss_param" in hp
               else cv.get("loss_params", DEFAULT_GRIDS["loss_params"]))
    else:
        lps = [None]
    if t["type"] == "joint_quantile":
        gs = [float(hp["gamma"])] if "gamma" in hp else cv.get("gammas", DEFAULT_GRIDS["gammas"])
    else:
        gs = [None]
    return [Hyper(*c) for c in itertools.product(bws, lams, lps, gs)]


def _cv_entry(cfg, n_fold):
    spec = cfg.cv.get("model")
    if spec is None:
        sketched = [e for e in cfg.sweep if not e.exact]
        if not sketched or n_fold <= 2000:
            return SweepEntry("exact")
        s = max(e.s for e in sketched)
        return SweepEntry("psr", min(s, n_fold - 1), "20/n")
    if spec.get("kind") == "exact":
        return SweepEntry("exact")
    return SweepEntry(spec["kind"], spec["s"], spec.get("p"), spec.get("m"))


def select_hyperparameters(cfg, train: D.Dataset):
    """k-fold grid CV on the training split; returns (best Hyper, score table)."""
    grid = _grid(cfg, train)
    if len(grid) == 1:
        return grid[0], []
    folds = D.kfold_indices(train.n, int(cfg.cv.get("folds", 5)),
                            derive_seed(cfg.seed, 7919))
    metric = CV_METRIC[cfg.task_type]
    entry = _cv_entry(cfg, len(folds[0][0]))
    scores = np.zeros(len(grid))
    for f, (tr_idx, va_idx) in enumerate(folds):
        tr, va = train.subset(tr_idx), train.subset(va_idx)
        cache = _Cache()
        for g, hp in enumerate(grid):
            try:
                model, _, _ = fit_entry(cfg, tr, entry, hp, derive_seed(cfg.seed, 31, f),
                                        derive_seed(cfg.seed, 37, f), cache)
                scores[g] += evaluate(cfg, model, tr, va)[metric] / len(folds)
            except (SolverError, SketchError, np.linalg.LinAlgError) as e:
                log.warning("CV fit failed for %s: %s", hp, e)
                scores[g] = np.inf
    best = int(np.argmin(scores))
    table = [dict(h.to_dict(), score=float(sc)) for h, sc in zip(grid, scores)]
    return grid[best], table


# ---------------------------------------------------------------- experiment

def _threads(cfg):
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return max(1, int(cfg.threads or 1))


def _aggregate(rows, metric_names):
    groups = {}
    for r in rows:
        groups.setdefault(r["entry"], []).append(r)
    out = []
    for entry_idx in sorted(groups):
        rs = groups[entry_idx]
        ok = [r for r in rs if r["error"] is None]
        agg = {"entry": entry_idx, "kind": rs[0]["kind"], "s": rs[0]["s"], "p": rs[0]["p"],
               "m": rs[0]["m"], "n_ok": len(ok), "n_failed": len(rs) - len(ok)}
        names = list(metric_names) + sorted(
            {k for r in ok for k in r["metrics"] if k not in metric_names})
        for name in names + ["fit_time", "sketch_time"]:
            vals = np.array([r["metrics"][name] if name in r["metrics"] else r[name]
                             for r in ok], dtype=np.float64)
            agg[f"{name}_mean"] = float(vals.mean()) if vals.size else None
            agg[f"{name}_sd"] = float(vals.std(ddof=1)) if vals.size > 1 else (
                0.0 if vals.size else None)
        out.append(agg)
    return out


def run_experiment(cfg: ExperimentConfig, output=None) -> dict:
    """Run CV, then every sweep entry x replicate; optionally write files to ``output``."""
    train, test, scaler = prepare_data(cfg)
    for e in cfg.sweep:
        if not e.exact and not e.s < train.n:
            raise ConfigError(f"sketch size {e.s} must be below n_train={train.n}")
    hp, cv_table = select_hyperparameters(cfg, train)
    log.info("selected hyperparameters %s", hp)

    jobs = [(i, e, r) for i, e in enumerate(cfg.sweep) for r in range(cfg.replicates)]

    def run(job):
        i, e, r = job
        sseed, aseed = derive_seed(cfg.seed, i, r, 1), derive_seed(cfg.seed, i, r, 2)
        row = {"entry": i, "kind": e.kind, "s": e.s, "p": e.resolve_p(train.n),
               "m": e.m, "replicate": r, "sketch_seed": sseed, "adam_seed": aseed,
               "metrics": {}, "fit_time": None, "sketch_time": None, "error": None}
        try:
            model, fit_t, sk_t = fit_entry(cfg, train, e, hp, sseed, aseed)
            row["metrics"] = evaluate(cfg, model, train, test, scaler)
            row["fit_time"], row["sketch_time"] = fit_t, sk_t
            row["objective"] = model.objective
        except (SolverError, SketchError, np.linalg.LinAlgError) as err:
            row["error"] = f"{type(err).__name__}: {err}"
        return row

    threads = _threads(cfg)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]
    rows.sort(key=lambda r: (r["entry"], r["replicate"]))

    record = {
        "name": cfg.name,
        "task": cfg.task_type,
        "metrics": list(METRICS_BY_TASK[cfg.task_type]),
        "config": cfg.raw,
        "n_train": train.n,
        "n_test": test.n,
        "hyperparameters": hp.to_dict(),
        "cv": cv_table,
        "rows": rows,
        "aggregates": _aggregate(rows, METRICS_BY_TASK[cfg.task_type]),
    }
    out_dir = output or cfg.output
    if out_dir:
        write_record(record, out_dir)
    return record


def write_record(record, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "record.json").write_text(json.dumps(record, indent=2, sort_keys=True))
    metric_names = sorted({k for r in record["rows"] for k in r["metrics"]})
    base = ["entry", "kind", "s", "p", "m", "replicate", "sketch_seed", "adam_seed"]
    with (out / "metrics.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(base + metric_names + ["error"])
        for r in record["rows"]:
            w.writerow([r[k] for k in base] + [repr(r["metrics"].get(m)) for m in metric_names]
                       + [r["error"] or ""])
    with (out / "runs.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(base + metric_names + ["fit_time", "sketch_time", "error"])
        for r in record["rows"]:
            w.writerow([r[k] for k in base] + [repr(r["metrics"].get(m)) for m in metric_names]
                       + [r["fit_time"], r["sketch_time"], r["error"] or ""])


# ---------------------------------------------------------------- diagnostics

def sketch_diag(raw: dict) -> dict:
    """K-satisfiability frequencies of the configured sketches on a dataset's Gram matrix."""
    try:
        ds = load_dataset(raw["dataset"])
        sketches = raw["sketches"]
    except KeyError as e:
        raise ConfigError(f"missing config section {e}") from None
    n_max = int(raw.get("n_max", 2000))
    X = ds.X[:n_max]
    if raw.get("standardize", True):
        X = D.standardize(D.Dataset(X, ds.Y[:n_max]))[0].X
    kspec = dict(raw.get("kernel", {"family": "gaussian"}))
    fam = kspec.pop("family", "gaussian")
    if fam == "gaussian":
        kernel = KernelSpec.gaussian(kspec.get("bandwidth", median_heuristic(X)))
    elif fam == "polynomial":
        kernel = KernelSpec.polynomial(kspec.get("degree", 2), kspec.get("offset", 1.0))
    else:
        kernel = KernelSpec.sobolev()
    prof = spectral_profile(gram(kernel, X))
    reps = int(raw.get("replicates", 20))
    seed = int(raw.get("seed", 0))
    results = []
    for i, sk in enumerate(sketches):
        s = sk.get("s", "4dn")
        if isinstance(s, str):
            if not s.endswith("dn"):
                raise ConfigError(f"sketch size {s!r}: use an integer or '<k>dn'")
            s = int(float(s[:-2] or 1) * prof.d_n)
        s = min(s, X.shape[0] - 1)
        p = SweepEntry(sk["kind"], s, sk.get("p")).resolve_p(X.shape[0])
        c = sk.get("c", raw.get("c", "theorem"))
        c = theorem_c(p if p is not None else 1.0) if c == "theorem" else float(c)
        hits, l1, l2 = 0, [], []
        for r in range(reps):
            S = generate_sketch(sk["kind"], s, X.shape[0], derive_seed(seed, i, r),
                                p=p, m=sk.get("m"))
            res = k_satisfiable(S, prof, c)
            hits += res.holds
            l1.append(res.lhs1)
            l2.append(res.lhs2)
        results.append({"kind": sk["kind"], "s": s, "p": p, "m": sk.get("m"), "c": c,
                        "holds": hits, "replicates": reps,
                        "lhs1_mean": float(np.mean(l1)), "lhs2_mean": float(np.mean(l2)),
                        "bound2": c * prof.delta_n})
    return {"n": int(X.shape[0]), "kernel": kernel.to_dict(), "delta_n_sq": prof.delta_n_sq,
            "d_n": prof.d_n, "sketches": results}
