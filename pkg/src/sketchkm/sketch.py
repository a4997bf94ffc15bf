"""Sketch operators and sketched Gram products.

Sparsified sketches (p-SR, p-SG) are stored as ``S = mixing @ S_SS`` where
``mixing`` is s x s' dense and ``S_SS`` selects the s' columns listed in
``indices``.  Applying S to a kernel matrix therefore only needs the s' Gram
rows of the selected training points.

All randomness comes from ``numpy.random.Philox`` (a counter-based
generator) seeded with the operator's integer seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import _backend
from .kernels import KernelSpec, _as_2d, cross_gram

KINDS = ("psr", "psg", "gaussian", "rademacher", "subsampling", "accumulation",
         "countsketch")

# column chunk used when drawing sparsified sketches
_GEN_CHUNK = 8192
# max kernel entries held in memory while applying a sketch
_APPLY_BLOCK = 1 << 22


class SketchError(ValueError):
    pass


class DegenerateSketchError(SketchError):
    """Every column of a sparsified sketch came out null; retry with a new seed."""


def _rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class SketchOperator:
    kind: str
    s: int
    n: int
    seed: int
    p: float | None = None
    m: int | None = None
    mixing: np.ndarray | None = None
    indices: np.ndarray | None = None
    buckets: np.ndarray | None = None
    signs: np.ndarray | None = None

    @property
    def decomposed(self):
        return self.mixing is not None

    @property
    def s_prime(self):
        return int(self.indices.size) if self.decomposed else self.n

    @property
    def shape(self):
        return (self.s, self.n)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.s, self.n))
        if self.decomposed:
            out[:, self.indices] = self.mixing
        else:
            out[self.buckets, np.arange(self.n)] = self.signs
        return out

    def apply(self, A) -> np.ndarray:
        """S @ A for an n x k array (or n-vector)."""
        A = np.asarray(A, dtype=np.float64)
        vec = A.ndim == 1
        A2 = A[:, None] if vec else A
        if A2.shape[0] != self.n:
            raise ValueError(f"sketch has {self.n} columns, got {A2.shape[0]} rows")
        if self.decomposed:
            out = self.mixing @ A2[self.indices]
        else:
            out = np.zeros((self.s, A2.shape[1]))
            _backend.signed_scatter_rows(A2, self.buckets, self.signs, out)
        return out[:, 0] if vec else out

    def apply_transpose(self, G) -> np.ndarray:
        """S^T @ G for an s x k array (or s-vector)."""
        G = np.asarray(G, dtype=np.float64)
        vec = G.ndim == 1
        G2 = G[:, None] if vec else G
        if G2.shape[0] != self.s:
            raise ValueError(f"sketch has {self.s} rows, got {G2.shape[0]}")
        out = np.zeros((self.n, G2.shape[1]))
        if self.decomposed:
            out[self.indices] = self.mixing.T @ G2
        else:
            out[:] = self.signs[:, None] * G2[self.buckets]
        return out[:, 0] if vec else out

    def support(self):
        """Columns of S that may be nonzero, with the matching transpose factor.

        Returns ``(idx, T)`` such that ``S^T g`` restricted to ``idx`` equals
        ``T @ g`` and is zero elsewhere.
        """
        if self.decomposed:
            return self.indices, self.mixing.T
        T = np.zeros((self.n, self.s))
        T[np.arange(self.n), self.buckets] = self.signs
        return np.arange(self.n), T

    def to_record(self) -> dict:
        return {"kind": self.kind, "s": self.s, "n": self.n, "p": self.p,
                "m": self.m, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @classmethod
    def from_record(cls, rec) -> "SketchOperator":
        if isinstance(rec, str):
            rec = json.loads(rec)
        return generate_sketch(rec["kind"], rec["s"], rec["n"], rec["seed"],
                               p=rec.get("p"), m=rec.get("m"))


# ---------------------------------------------------------------- generation

def _sparsified_chunks(rng, s, n, p, rademacher):
    """Yield (start, B, R) column chunks: Bernoulli(p) mask and sign/normal values."""
    for start in range(0, n, _GEN_CHUNK):
        c = min(_GEN_CHUNK, n - start)
        B = rng.random((s, c)) < p
        if rademacher:
            R = rng.integers(0, 2, size=(s, c)).astype(np.float64) * 2.0 - 1.0
        else:
            R = rng.standard_normal((s, c))
        yield start, B, R


def _check_common(kind, s, n, p, m):
    if kind not in KINDS:
        raise SketchError(f"unknown sketch kind {kind!r}")
    if not (1 <= s < n):
        raise SketchError(f"need 1 <= s < n, got s={s}, n={n}")
    if kind in ("psr", "psg") and (p is None or not 0.0 < p <= 1.0):
        raise SketchError(f"p must lie in (0, 1], got {p}")
    if kind == "accumulation" and (m is None or int(m) < 1):
        raise SketchError(f"m must be >= 1, got {m}")


def dense_sparsified(kind, s, n, seed, p) -> np.ndarray:
    """Dense generation path for p-SR / p-SG, same draws as ``generate_sketch``."""
    _check_common(kind, s, n, p, None)
    scale = 1.0 / np.sqrt(s * p)
    out = np.zeros((s, n))
    for start, B, R in _sparsified_chunks(_rng(seed), s, n, p, kind == "psr"):
        out[:, start:start + B.shape[1]] = (B * R) * scale
    return out


def _generate_sparsified(kind, s, n, seed, p):
    scale = 1.0 / np.sqrt(s * p)
    idx_parts, mix_parts = [], []
    for start, B, R in _sparsified_chunks(_rng(seed), s, n, p, kind == "psr"):
        keep = np.flatnonzero(B.any(axis=0))
        idx_parts.append(keep + start)
        mix_parts.append((B[:, keep] * R[:, keep]) * scale)
    indices = np.concatenate(idx_parts)
    if indices.size == 0:
        raise DegenerateSketchError(
            f"all {n} columns null (s={s}, p={p}, seed={seed}); use another seed")
    mixing = np.concatenate(mix_parts, axis=1)
    return mixing, indices


def generate_sketch(kind, s, n, seed, p=None, m=None) -> SketchOperator:
    """Draw a sketch operator of shape s x n.

    kind: 'psr' / 'psg' (Bernoulli(p)-masked Rademacher / Gaussian entries
    scaled 1/sqrt(sp)), 'gaussian' / 'rademacher' (the p = 1 cases),
    'subsampling' (s distinct columns scaled sqrt(n/s)), 'accumulation'
    (sum of m signed sub-sampling sketches, scaled sqrt(n/(s m))) and
    'countsketch' (one +-1 per column at a uniform row).
    """
    s, n, seed = int(s), int(n), int(seed)
    if kind == "gaussian":
        kind, p = "psg", 1.0
        label = "gaussian"
    elif kind == "rademacher":
        kind, p = "psr", 1.0
        label = "rademacher"
    else:
        label = kind
    _check_common(kind, s, n, p, m)

    if kind in ("psr", "psg"):
        p = float(p)
        mixing, indices = _generate_sparsified(kind, s, n, seed, p)
        return SketchOperator(label, s, n, seed, p=p, mixing=mixing, indices=indices)

    rng = _rng(seed)
    if kind == "subsampling":
        indices = np.sort(rng.choice(n, size=s, replace=False))
        mixing = np.sqrt(n / s) * np.eye(s)
        return SketchOperator(kind, s, n, seed, mixing=mixing, indices=indices)

    if kind == "accumulation":
        m = int(m)
        picks = np.empty((m, s), dtype=np.int64)
        sgn = np.empty((m, s))
        for i in range(m):
            picks[i] = rng.choice(n, size=s, replace=False)
            sgn[i] = rng.integers(0, 2, size=s) * 2.0 - 1.0
        indices, pos = np.unique(picks.ravel(), return_inverse=True)
        rows = np.tile(np.arange(s), m)
        mixing = np.zeros((s, indices.size))
        np.add.at(mixing, (rows, pos), sgn.ravel())
        mixing *= np.sqrt(n / (s * m))
        keep = np.flatnonzero(np.any(mixing != 0, axis=0))
        return SketchOperator(kind, s, n, seed, m=m, mixing=mixing[:, keep],
                              indices=indices[keep])

    # countsketch
    buckets = rng.integers(0, s, size=n)
    signs = rng.integers(0, 2, size=n) * 2.0 - 1.0
    return SketchOperator(kind, s, n, seed, buckets=buckets, signs=signs)


def expected_active_columns(s, n, p) -> float:
    """Expected number of non-null columns of a p-sparsified s x n sketch."""
    if not 0.0 < p <= 1.0:
        raise SketchError(f"p must lie in (0, 1], got {p}")
    if s < 1:
        raise SketchError("s must be >= 1")
    return float(n * -np.expm1(s * np.log1p(-p))) if p < 1 else float(n)


def active_fraction(p, c0dn):
    """Fraction of active columns when s = c0dn / p^2."""
    return -np.expm1(c0dn / p**2 * np.log1p(-p)) if p < 1 else 1.0


def optimal_sparsity(c0dn: float) -> float:
    """Sparsity p minimizing the expected active-column fraction at s = c0dn / p^2."""
    if not c0dn > 0:
        raise SketchError("c0dn must be positive")

    # log of the null-column probability; the minimizer of active_fraction is
    # the maximizer of this, evaluated without underflow.
    def neg_log_null(p):
        if p >= 1.0:
            return np.inf
        return -c0dn * np.log1p(-p) / p**2

    grid = np.linspace(0.01, 0.99, 99)
    vals = np.array([neg_log_null(p) for p in grid])
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(neg_log_null, bracket=(lo, grid[k], hi),
                                   method="golden", tol=1e-10)
    return float(res.x)


# ---------------------------------------------------------------- application

def _block_rows(n):
    return max(1, _APPLY_BLOCK // max(1, n))


def sketch_cross(S: SketchOperator, spec: KernelSpec, X, X_other) -> np.ndarray:
    """S @ k(X, X_other): an s x |X_other| matrix.

    Decomposed sketches only evaluate the rows of the selected training
    points, in blocks; CountSketch evaluates all rows and scatters them.
    """
    X, X_other = _as_2d(X), _as_2d(X_other)
    if X.shape[0] != S.n:
        raise ValueError(f"sketch has n={S.n}, X has {X.shape[0]} rows")
    cols = X_other.shape[0]
    step = _block_rows(cols)
    if S.decomposed:
        idx = S.indices
        if S.kind == "subsampling":
            return S.mixing[0, 0] * cross_gram(spec, X[idx], X_other)
        out = np.zeros((S.s, cols))
        for a in range(0, idx.size, step):
            blk = cross_gram(spec, X[idx[a:a + step]], X_other)
            out += S.mixing[:, a:a + step] @ blk
        return out
    out = np.zeros((S.s, cols))
    for a in range(0, S.n, step):
        blk = cross_gram(spec, X[a:a + step], X_other)
        _backend.signed_scatter_rows(blk, S.buckets[a:a + step], S.signs[a:a + step], out)
    return out


def sketch_gram_left(S: SketchOperator, spec: KernelSpec, X) -> np.ndarray:
    """S K, computed without forming K when S is decomposed."""
    return sketch_cross(S, spec, X, X)


def _symmetrize(A):
    return 0.5 * (A + A.T)


def sketch_gram_both(S: SketchOperator, spec: KernelSpec, X) -> np.ndarray:
    """S K S^T (s x s, symmetrized).  Decomposed sketches need only the s' x s'
    sub-Gram of the selected points."""
    X = _as_2d(X)
    if X.shape[0] != S.n:
        raise ValueError(f"sketch has n={S.n}, X has {X.shape[0]} rows")
    if S.decomposed:
        Xs = X[S.indices]
        if S.kind == "subsampling":
            return _symmetrize(S.mixing[0, 0] ** 2 * cross_gram(spec, Xs, Xs))
        sub = SketchOperator(S.kind, S.s, S.s_prime, S.seed, mixing=S.mixing,
                             indices=np.arange(S.s_prime))
        left = sketch_cross(sub, spec, Xs, Xs)
        return _symmetrize(left @ S.mixing.T)
    return sketch_gram(S, spec, X)[1]


def sketch_gram(S: SketchOperator, spec: KernelSpec, X):
    """Return (S K, S K S^T), reusing S K for the second product."""
    SK = sketch_gram_left(S, spec, X)
    SKS = S.apply(SK.T).T
    return SK, _symmetrize(SKS)


# ---------------------------------------------------------------- RFF baseline

def rff_features(bandwidth, n_features, X, seed) -> np.ndarray:
    """Random Fourier features for exp(-||x - x'||^2 / bandwidth).

    Uses n_features / 2 frequencies drawn from N(0, 2/bandwidth I) and stacks
    cos/sin pairs scaled by sqrt(2 / n_features), so z(x)^T z(x) = 1.
    """
    if isinstance(bandwidth, KernelSpec):
        if bandwidth.family != "gaussian":
            raise SketchError("random Fourier features need a gaussian kernel")
        bandwidth = bandwidth.bandwidth
    n_features = int(n_features)
    if n_features < 2 or n_features % 2:
        raise SketchError("n_features must be a positive even integer")
    if not bandwidth > 0:
        raise SketchError("bandwidth must be positive")
    X = _as_2d(X)
    half = n_features // 2
    W = _rng(seed).standard_normal((X.shape[1], half)) * np.sqrt(2.0 / bandwidth)
    proj = X @ W
    return np.hstack([np.cos(proj), np.sin(proj)]) / np.sqrt(half)
