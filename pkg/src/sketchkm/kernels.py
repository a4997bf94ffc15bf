"""Scalar kernels, Gram blocks and output matrices for decomposable kernels."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import _backend

FAMILIES = ("gaussian", "polynomial", "sobolev")


@dataclass(frozen=True)
class KernelSpec:
    """A scalar kernel.

    ``gaussian``: exp(-||x - x'||^2 / bandwidth);
    ``polynomial``: (<x, x'> + offset)^degree;
    ``sobolev``: 1 + min(x, x') on scalar inputs in [0, 1].
    """

    family: str = "gaussian"
    bandwidth: float = 1.0
    degree: int = 2
    offset: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "gaussian" and not self.bandwidth > 0:
            raise ValueError("gaussian bandwidth must be positive")
        if self.family == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError("polynomial degree must be an integer >= 1")
            if self.offset < 0:
                raise ValueError("polynomial offset must be >= 0")

    @classmethod
    def gaussian(cls, bandwidth):
        return cls("gaussian", bandwidth=float(bandwidth))

    @classmethod
    def polynomial(cls, degree, offset=0.0):
        return cls("polynomial", degree=int(degree), offset=float(offset))

    @classmethod
    def sobolev(cls):
        return cls("sobolev")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def _code(self):
        if self.family == "gaussian":
            return _backend.GAUSSIAN, 1.0 / self.bandwidth, 1
        if self.family == "polynomial":
            return _backend.POLYNOMIAL, self.offset, self.degree
        return _backend.SOBOLEV, 0.0, 1


def _as_2d(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("inputs must be a 2-D array (n_samples, n_features)")
    return X


def _check_inputs(spec, *arrays):
    q = arrays[0].shape[1]
    for A in arrays[1:]:
        if A.shape[1] != q:
            raise ValueError(f"dimension mismatch: {q} vs {A.shape[1]} features")
    if spec.family == "sobolev":
        if q != 1:
            raise ValueError("sobolev kernel takes scalar inputs")
        for A in arrays:
            if A.size and (A.min() < 0.0 or A.max() > 1.0):
                raise ValueError("sobolev kernel inputs must lie in [0, 1]")


def cross_gram(spec: KernelSpec, A, B, backend=None) -> np.ndarray:
    """Kernel block with entries k(A_i, B_j)."""
    A, B = _as_2d(A), _as_2d(B)
    _check_inputs(spec, A, B)
    code, param, degree = spec._code()
    impl = _backend.get(backend) if backend else None
    return _backend.cross_kernel(code, A, B, param, degree, impl=impl)


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(cross_gram(spec, x[None, :], x2[None, :])[0, 0])


def gram(spec: KernelSpec, X, backend=None) -> np.ndarray:
    """Full n x n Gram matrix.  Exactly symmetric."""
    X = _as_2d(X)
    if X.shape[0] < 1:
        raise ValueError("need at least one sample")
    return cross_gram(spec, X, X, backend=backend)


def gram_rows(spec: KernelSpec, X, indices, backend=None) -> np.ndarray:
    """Rows ``indices`` of the Gram matrix of ``X`` without forming the rest.

    Bit-identical to ``gram(spec, X)[indices]``.
    """
    X = _as_2d(X)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n = X.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"row index out of range for n={n}")
    return cross_gram(spec, X[idx], X, backend=backend)


def kernel_expansion(spec: KernelSpec, X_new, basis, coef, backend=None) -> np.ndarray:
    """Evaluate sum_j coef[j] k(x, basis_j) at every row of ``X_new``.

    ``coef`` is (n_basis,) or (n_basis, d); the result has matching trailing
    shape.  Rows are independent: evaluating one row at a time gives the same
    bits as a batch.
    """
    X_new, basis = _as_2d(X_new), _as_2d(basis)
    _check_inputs(spec, X_new, basis)
    coef = np.asarray(coef, dtype=np.float64)
    vector = coef.ndim == 1
    beta = coef[:, None] if vector else coef
    if beta.shape[0] != basis.shape[0]:
        raise ValueError("coefficient count does not match basis size")
    code, param, degree = spec._code()
    impl = _backend.get(backend) if backend else None
    out = _backend.kernel_expansion(code, X_new, basis, beta, param, degree, impl=impl)
    return out[:, 0] if vector else out


def median_heuristic(X, max_points=1000, seed=0) -> float:
    """Median squared pairwise distance over (a subsample of) ``X``."""
    X = _as_2d(X)
    if X.shape[0] > max_points:
        rng = np.random.Generator(np.random.Philox(seed))
        X = X[rng.choice(X.shape[0], max_points, replace=False)]
    sq = np.sum(X * X, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    iu = np.triu_indices(X.shape[0], k=1)
    vals = d2[iu]
    vals = vals[vals > 0]
    return float(np.median(vals)) if vals.size else 1.0


# ---------------------------------------------------------------- outputs

OUTPUT_KINDS = ("identity", "quantile_gaussian", "graph_laplacian_mix")


@dataclass(frozen=True, eq=False)
class OutputMatrix:
    """PSD output matrix M of a decomposable kernel k(x, x') M."""

    M: np.ndarray
    provenance: str
    params: dict

    @property
    def d(self):
        return self.M.shape[0]

    def to_dict(self):
        params = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                  for k, v in self.params.items()}
        return {"provenance": self.provenance, "params": params}

    @classmethod
    def from_dict(cls, d):
        return output_matrix(d["provenance"], **d["params"])


def output_matrix(provenance: str, **params) -> OutputMatrix:
    """Build an output matrix.

    identity(d); quantile_gaussian(gamma, taus) with M_ij = exp(-gamma (tau_i - tau_j)^2);
    graph_laplacian_mix(adjacency, mu) with M = inv(mu L_P + (1 - mu) I),
    L_P = diag(P 1) - P.
    """
    if provenance == "identity":
        d = int(params["d"])
        if d < 1:
            raise ValueError("d must be >= 1")
        return OutputMatrix(np.eye(d), provenance, {"d": d})

    if provenance == "quantile_gaussian":
        gamma = float(params["gamma"])
        taus = np.asarray(params["taus"], dtype=np.float64)
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        if taus.ndim != 1 or taus.size < 1:
            raise ValueError("taus must be a non-empty vector")
        if np.any(taus <= 0) or np.any(taus >= 1) or np.any(np.diff(taus) <= 0):
            raise ValueError("quantile levels must be strictly increasing in (0, 1)")
        diff = taus[:, None] - taus[None, :]
        M = np.exp(-gamma * diff * diff)
        return OutputMatrix(M, provenance, {"gamma": gamma, "taus": taus.tolist()})

    if provenance == "graph_laplacian_mix":
        P = np.asarray(params["adjacency"], dtype=np.float64)
        mu = float(params["mu"])
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("adjacency must be square")
        if not np.array_equal(P, P.T) or not np.all((P == 0) | (P == 1)):
            raise ValueError("adjacency must be symmetric with 0/1 entries")
        if np.any(np.diag(P) != 0):
            raise ValueError("adjacency must have a zero diagonal")
        if not 0.0 <= mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        d = P.shape[0]
        L = np.diag(P.sum(axis=1)) - P
        A = mu * L + (1.0 - mu) * np.eye(d)
        if mu == 0.0:
            M = np.eye(d)
        else:
            w = np.linalg.eigvalsh(A)
            if w.min() <= 1e-12 * max(1.0, w.max()):
                raise np.linalg.LinAlgError("mu * L_P + (1 - mu) I is singular")
            M = np.linalg.inv(A)
            M = 0.5 * (M + M.T)
        return OutputMatrix(M, provenance, {"adjacency": P.tolist(), "mu": mu})

    raise ValueError(f"unknown output matrix provenance {provenance!r}")
