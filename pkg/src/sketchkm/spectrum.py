"""Critical radius, statistical dimension and K-satisfiability diagnostics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .sketch import SketchOperator

MAX_N = 5000


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    mu: np.ndarray          # eigenvalues of K/n, non-increasing
    U: np.ndarray           # matching orthonormal eigenvectors (columns)
    delta_n_sq: float
    d_n: int

    @property
    def n(self):
        return self.mu.size

    @property
    def delta_n(self):
        return float(np.sqrt(self.delta_n_sq))

    @property
    def U1(self):
        return self.U[:, :self.d_n]

    @property
    def U2(self):
        return self.U[:, self.d_n:]

    @property
    def D2(self):
        return np.diag(self.mu[self.d_n:])


def psi(mu, delta):
    """Local complexity ((1/n) sum_i min(delta^2, mu_i))^(1/2); vectorized in delta."""
    mu = np.asarray(mu, dtype=np.float64)
    d2 = np.square(np.asarray(delta, dtype=np.float64))
    return np.sqrt(np.mean(np.minimum(d2[..., None], mu), axis=-1))


def critical_radius(mu, tol=1e-12):
    """Smallest delta with psi(delta) <= delta^2, by bisection.

    Returns 0.0 when every eigenvalue is zero.
    """
    mu = np.asarray(mu, dtype=np.float64)
    if mu.size == 0 or mu.max() <= 0.0:
        return 0.0
    lo, hi = 0.0, max(1.0, float(np.sqrt(mu.max())))
    # invariant: psi(lo) > lo^2 (lo > 0) and psi(hi) <= hi^2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if psi(mu, mid) - mid * mid > 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def statistical_dimension(mu, delta_n_sq):
    below = np.flatnonzero(np.asarray(mu) <= delta_n_sq)
    return int(below[0]) + 1 if below.size else int(np.size(mu))


def spectral_profile(K) -> SpectralProfile:
    """Eigen-analysis of K/n: eigenpairs, critical radius and statistical dimension."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 1:
        raise ValueError("K must be a non-empty square matrix")
    n = K.shape[0]
    if n > MAX_N:
        raise ValueError(f"spectral_profile is limited to n <= {MAX_N}")
    scale = max(1.0, float(np.abs(K).max()))
    if np.abs(K - K.T).max() > 1e-10 * scale:
        raise ValueError("K is not symmetric")
    mu, U = np.linalg.eigh(0.5 * (K + K.T) / n)
    mu, U = mu[::-1].copy(), U[:, ::-1].copy()
    top = max(float(mu[0]), 0.0)
    if mu[-1] < -1e-6 * top or (top == 0.0 and mu[-1] < -1e-12):
        raise ValueError(f"K is not PSD (eigenvalue {mu[-1]:.3e})")
    mu = np.where(mu < 0.0, 0.0, mu)
    delta = critical_radius(mu)
    dsq = delta * delta
    return SpectralProfile(mu=mu, U=U, delta_n_sq=dsq,
                           d_n=statistical_dimension(mu, dsq))


def theorem_c(p: float) -> float:
    """K-satisfiability constant (2/sqrt(p)) (1 + sqrt(log 5)) + 1 for p-sparsified sketches."""
    if not p > 0:
        raise ValueError("p must be positive")
    return 2.0 / np.sqrt(p) * (1.0 + np.sqrt(np.log(5.0))) + 1.0


@dataclass(frozen=True)
class KSatResult:
    holds: bool
    lhs1: float
    lhs2: float
    bound2: float


def _apply(S, A):
    if isinstance(S, SketchOperator):
        return S.apply(A)
    return np.asarray(S, dtype=np.float64) @ A


def k_satisfiable(S, prof: SpectralProfile, c: float) -> KSatResult:
    """Check both K-satisfiability conditions for a sketch (operator or matrix).

    lhs1 = ||(S U1)^T S U1 - I||_op must be <= 1/2 and
    lhs2 = ||S U2 D2^(1/2)||_op must be <= c delta_n.
    """
    n_cols = S.n if isinstance(S, SketchOperator) else np.shape(S)[1]
    s = S.s if isinstance(S, SketchOperator) else np.shape(S)[0]
    if n_cols != prof.n:
        raise ValueError(f"sketch has {n_cols} columns, profile has n={prof.n}")
    if prof.d_n > s:
        warnings.warn(f"sketch size {s} below statistical dimension {prof.d_n}",
                      stacklevel=2)
    SU1 = _apply(S, prof.U1)
    lhs1 = float(np.linalg.norm(SU1.T @ SU1 - np.eye(prof.d_n), 2))
    if prof.d_n < prof.n:
        SU2 = _apply(S, prof.U2 * np.sqrt(prof.mu[prof.d_n:]))
        lhs2 = float(np.linalg.norm(SU2, 2))
    else:
        lhs2 = 0.0
    bound2 = c * prof.delta_n
    return KSatResult(holds=bool(lhs1 <= 0.5 and lhs2 <= bound2), lhs1=lhs1,
                      lhs2=lhs2, bound2=bound2)
