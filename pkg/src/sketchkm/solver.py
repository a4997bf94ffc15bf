"""Sketched and exact regularized ERM for scalar and decomposable multi-output kernels.

Scalar sketched problems are solved in the feature space of the sketch:
with (mu_i, v_i) the eigenpairs of S K S^T and K_r = V_r D_r^(-1/2), the
features z(x) = K_r^T S k_x turn the problem over gamma in R^s into a linear
model over omega in R^r with a plain ridge penalty.  Multi-output problems
learn Gamma in R^{s x d} (through the same whitening), never forming a
Kronecker product.
"""
from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from .kernels import KernelSpec, OutputMatrix, _as_2d, gram, kernel_expansion
from .sketch import SketchOperator, sketch_cross, sketch_gram

RANK_TOL = 1e-10


class SolverError(RuntimeError):
    """Optimization failed.  ``trace`` holds the per-epoch objective values."""

    def __init__(self, msg, trace=()):
        super().__init__(msg)
        self.trace = list(trace)


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1, beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class AdamResult:
    x: np.ndarray
    objective: float
    history: list
    best_epoch: int


def adam(objective, batch_grad, x0, n, config: AdamConfig) -> AdamResult:
    """Minibatch ADAM over ``n`` samples; returns the best full-objective iterate.

    ``objective(x)`` evaluates the full objective, ``batch_grad(x, idx)`` a
    stochastic (sub)gradient on the sample indices ``idx``.
    """
    rng = np.random.Generator(np.random.Philox(int(config.seed)))
    x = np.array(x0, dtype=np.float64)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b = min(config.batch_size, n)
    f0 = float(objective(x))
    history = [f0]
    if not np.isfinite(f0):
        raise SolverError("objective is not finite at initialization", history)
    best_x, best_f, best_epoch = x.copy(), f0, 0
    t = 0
    b1, b2 = config.beta1, config.beta2
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        for start in range(0, n, b):
            g = batch_grad(x, perm[start:start + b])
            t += 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            x = x - config.lr * mhat / (np.sqrt(vhat) + config.eps)
        f = float(objective(x))
        history.append(f)
        if not np.isfinite(f):
            raise SolverError(f"objective diverged at epoch {epoch}", history)
        if f < best_f:
            best_x, best_f, best_epoch = x.copy(), f, epoch
    return AdamResult(best_x, best_f, history, best_epoch)


# ---------------------------------------------------------------- feature maps

@dataclass(frozen=True, eq=False)
class FeatureMapState:
    rank: int
    kr: np.ndarray          # s x r, V_r D_r^(-1/2)
    eigvals: np.ndarray     # eigenvalues of S K S^T, descending
    eigvecs: np.ndarray
    SK: np.ndarray | None = None
    sketch: SketchOperator | None = None

    def train_features(self):
        """z(x_i) for the training points, stacked as rows (n x r)."""
        if self.SK is None:
            raise ValueError("state was built without S K")
        return self.SK.T @ self.kr


def feature_maps_from_gram(SKS, SK=None, sketch=None, rank_tol=RANK_TOL) -> FeatureMapState:
    SKS = np.asarray(SKS, dtype=np.float64)
    w, V = np.linalg.eigh(0.5 * (SKS + SKS.T))
    w, V = w[::-1].copy(), V[:, ::-1].copy()
    if w[0] <= 0:
        raise SolverError("S K S^T is numerically zero")
    r = int(np.sum(w > rank_tol * w[0]))
    kr = V[:, :r] / np.sqrt(w[:r])
    return FeatureMapState(rank=r, kr=kr, eigvals=w, eigvecs=V, SK=SK, sketch=sketch)


def build_feature_maps(S: SketchOperator, spec: KernelSpec, X, rank_tol=RANK_TOL):
    SK, SKS = sketch_gram(S, spec, X)
    return feature_maps_from_gram(SKS, SK=SK, sketch=S, rank_tol=rank_tol)


def featurize_many(state: FeatureMapState, spec: KernelSpec, X_train, X_new):
    """Rows z(x) = K_r^T S k_x for every x in ``X_new`` (m x r)."""
    return sketch_cross(state.sketch, spec, X_train, X_new).T @ state.kr


def featurize(state: FeatureMapState, spec: KernelSpec, X_train, x):
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return featurize_many(state, spec, X_train, x[None, :])[0]


# ---------------------------------------------------------------- objectives

def _col(y):
    y = np.asarray(y, dtype=np.float64)
    return y[:, None] if y.ndim == 1 else y


def feature_objective(omega, Z, y, loss: L.LossSpec, lam):
    """(1/n) sum l(z_i^T omega, y_i) + lam/2 ||omega||^2 and its gradient."""
    Y = _col(y)
    pred = Z @ omega
    val = np.mean(L.values(loss, pred[:, None], Y)) + 0.5 * lam * omega @ omega
    G = L.subgradients(loss, pred[:, None], Y)[:, 0]
    return float(val), Z.T @ G / Z.shape[0] + lam * omega


def gamma_objective(gamma, SK, SKS, y, loss: L.LossSpec, lam):
    """Sketched objective over gamma: (1/n) sum l([K S^T gamma]_i, y_i) + lam/2 gamma^T SKS^T gamma."""
    Y = _col(y)
    pred = SK.T @ gamma
    Sg = SKS @ gamma
    val = np.mean(L.values(loss, pred[:, None], Y)) + 0.5 * lam * gamma @ Sg
    G = L.subgradients(loss, pred[:, None], Y)[:, 0]
    return float(val), SK @ G / SK.shape[1] + lam * Sg


def exact_objective(alpha, K, y, loss: L.LossSpec, lam):
    """Unsketched objective over alpha in R^n."""
    return gamma_objective(alpha, K, K, y, loss, lam)


def multioutput_objective(Gamma, SK, SKS, Y, M, loss: L.LossSpec, lam):
    """(1/n) sum l([K S^T Gamma M]_i, y_i) + lam/2 Tr(S K S^T Gamma M Gamma^T) and its gradient."""
    Y = _col(Y)
    GM = Gamma @ M
    P = SK.T @ GM
    SG = SKS @ Gamma
    val = np.mean(L.values(loss, P, Y)) + 0.5 * lam * np.sum(SG * GM)
    G = L.subgradients(loss, P, Y)
    return float(val), (SK @ G) @ M / SK.shape[1] + lam * SG @ M


def multioutput_feature_objective(W, Z, Y, M, loss: L.LossSpec, lam):
    """Same objective in feature coordinates Gamma = K_r W: (1/n) sum l([Z W M]_i, y_i) + lam/2 Tr(W M W^T)."""
    Y = _col(Y)
    WM = W @ M
    P = Z @ WM
    val = np.mean(L.values(loss, P, Y)) + 0.5 * lam * np.sum(W * WM)
    G = L.subgradients(loss, P, Y)
    return float(val), (Z.T @ G) @ M / Z.shape[0] + lam * WM


# ---------------------------------------------------------------- models

COEF_NAMES = {"scalar_sketched": "omega", "scalar_sketched_closed": "gamma",
              "multioutput_sketched": "Gamma", "scalar_exact": "alpha",
              "multioutput_exact": "A"}


@dataclass(eq=False)
class FittedModel:
    kind: str
    kernel: KernelSpec
    lam: float
    coef: np.ndarray
    support: np.ndarray         # training rows carrying nonzero expansion weight
    expansion: np.ndarray       # f(x) = sum_j expansion[j] k(x, X_train[support[j]])
    X_train: np.ndarray
    sketch: SketchOperator | None = None
    output: OutputMatrix | None = None
    loss: L.LossSpec | None = None
    feature_state: FeatureMapState | None = None
    objective: float = float("nan")
    history: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def coef_name(self):
        return COEF_NAMES[self.kind]

    @property
    def multioutput(self):
        return self.expansion.ndim == 2


def _model_expansion(S, coef_s):
    """Restrict S^T coef_s to the sketch support."""
    idx, T = S.support()
    return idx, T @ coef_s


def predict(model: FittedModel, X_new) -> np.ndarray:
    """Evaluate the fitted function; (m,) for scalar models, (m, d) otherwise."""
    X_new = _as_2d(X_new)
    if X_new.shape[1] != model.X_train.shape[1]:
        raise ValueError(f"expected {model.X_train.shape[1]} features, got {X_new.shape[1]}")
    basis = model.X_train[model.support]
    return kernel_expansion(model.kernel, X_new, basis, model.expansion)


def _check_xy(X, y, lam):
    X = _as_2d(X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y have different sample counts")
    if not lam > 0:
        raise ValueError("regularization must be positive")
    return X, y


def fit_scalar_sketched(spec, X, y, loss, lam, S, adam_config=None, state=None,
                        rank_tol=RANK_TOL) -> FittedModel:
    """ADAM on the r-dimensional feature-map problem, starting from omega = 0."""
    X, y = _check_xy(X, y, lam)
    if y.ndim != 1:
        raise ValueError("scalar fit needs a 1-D target")
    cfg = adam_config or AdamConfig()
    t0 = time.perf_counter()
    if state is None:
        state = build_feature_maps(S, spec, X, rank_tol)
    Z = state.train_features()
    t1 = time.perf_counter()
    n = X.shape[0]
    Y = y[:, None]

    def obj(w):
        return feature_objective(w, Z, y, loss, lam)[0]

    def grad(w, idx):
        Zb = Z[idx]
        G = L.subgradients(loss, (Zb @ w)[:, None], Y[idx])[:, 0]
        return Zb.T @ G / idx.size + lam * w

    res = adam(obj, grad, np.zeros(state.rank), n, cfg)
    t2 = time.perf_counter()
    support, expansion = _model_expansion(S, state.kr @ res.x)
    return FittedModel("scalar_sketched", spec, lam, res.x, support, expansion, X,
                       sketch=S, loss=loss, feature_state=state,
                       objective=res.objective, history=res.history,
                       timings={"sketch": t1 - t0, "optimize": t2 - t1})


def _pinv_solve(A, b, rank_tol=RANK_TOL):
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    keep = w > rank_tol * max(w.max(), 0.0)
    return V[:, keep] @ ((V[:, keep].T @ b) / w[keep])


def solve_krr_sketched(spec, X, y, lam, S, SK=None, SKS=None) -> FittedModel:
    """Closed-form sketched kernel ridge: gamma = (SK K S^T + lam n SKS^T)^+ S K y."""
    X, y = _check_xy(X, y, lam)
    t0 = time.perf_counter()
    if SK is None or SKS is None:
        SK, SKS = sketch_gram(S, spec, X)
    n = X.shape[0]
    A = SK @ SK.T + lam * n * SKS
    gamma = _pinv_solve(A, SK @ y)
    support, expansion = _model_expansion(S, gamma)
    obj = gamma_objective(gamma, SK, SKS, y, L.LossSpec.square(), lam)[0]
    return FittedModel("scalar_sketched_closed", spec, lam, gamma, support, expansion, X,
                       sketch=S, loss=L.LossSpec.square(), objective=obj,
                       timings={"total": time.perf_counter() - t0})


def solve_feature_ridge(Z, y, lam):
    """Closed-form minimizer of the square-loss feature-map problem."""
    n, r = Z.shape
    return np.linalg.solve(Z.T @ Z / n + lam * np.eye(r), Z.T @ y / n)


def _exact_features(K, rank_tol=RANK_TOL):
    w, V = np.linalg.eigh(K)
    w, V = w[::-1], V[:, ::-1]
    r = int(np.sum(w > rank_tol * w[0]))
    return V[:, :r], w[:r]


def solve_krr_exact(spec, X, y, lam) -> FittedModel:
    """alpha = (K + lam n I)^{-1} y."""
    X, y = _check_xy(X, y, lam)
    K = gram(spec, X)
    n = X.shape[0]
    alpha = np.linalg.solve(K + lam * n * np.eye(n), y)
    obj = exact_objective(alpha, K, y, L.LossSpec.square(), lam)[0]
    return FittedModel("scalar_exact", spec, lam, alpha, np.arange(n), alpha, X,
                       loss=L.LossSpec.square(), objective=obj)


def fit_multioutput_sketched(spec, X, Y, M, loss, lam, S, adam_config=None,
                             parameterization="feature", SK=None, SKS=None,
                             rank_tol=RANK_TOL) -> FittedModel:
    """ADAM from Gamma = 0 (s x d) for the decomposable-kernel problem.

    By default the iterates live in whitened coordinates Gamma = K_r W, the
    same problem with a plain trace penalty Tr(W M W^T); ADAM on raw Gamma
    (``parameterization='gamma'``) inherits the conditioning of S K K S^T and
    stalls.  Neither path forms a Kronecker product.
    """
    X = _as_2d(X)
    Y = _col(Y)
    if Y.shape[0] != X.shape[0]:
        raise ValueError("X and Y have different sample counts")
    if not lam > 0:
        raise ValueError("regularization must be positive")
    Mmat = M.M if isinstance(M, OutputMatrix) else np.asarray(M, dtype=np.float64)
    d = Mmat.shape[0]
    if Mmat.shape != (d, d):
        raise ValueError("output matrix must be square")
    if loss.family == "pinball":
        if Y.shape[1] != 1 or len(loss.taus) != d:
            raise ValueError("pinball needs a scalar target and one level per output")
    elif Y.shape[1] != d:
        raise ValueError(f"targets have {Y.shape[1]} columns, output matrix is {d}x{d}")
    cfg = adam_config or AdamConfig()
    n = X.shape[0]
    t0 = time.perf_counter()
    if SK is None or SKS is None:
        SK, SKS = sketch_gram(S, spec, X)
    t1 = time.perf_counter()

    if parameterization == "gamma":
        SKT = np.ascontiguousarray(SK.T)

        def obj(G):
            return multioutput_objective(G, SK, SKS, Y, Mmat, loss, lam)[0]

        def grad(G, idx):
            GM = G @ Mmat
            sub = L.subgradients(loss, SKT[idx] @ GM, Y[idx])
            return (SKT[idx].T @ sub) @ Mmat / idx.size + lam * (SKS @ G) @ Mmat

        res = adam(obj, grad, np.zeros((S.s, d)), n, cfg)
        Gamma = res.x
        state = None
    elif parameterization == "feature":
        state = feature_maps_from_gram(SKS, SK=SK, sketch=S, rank_tol=rank_tol)
        Z = state.train_features()

        def obj(W):
            return multioutput_feature_objective(W, Z, Y, Mmat, loss, lam)[0]

        def grad(W, idx):
            WM = W @ Mmat
            sub = L.subgradients(loss, Z[idx] @ WM, Y[idx])
            return (Z[idx].T @ sub) @ Mmat / idx.size + lam * WM

        res = adam(obj, grad, np.zeros((state.rank, d)), n, cfg)
        Gamma = state.kr @ res.x
    else:
        raise ValueError(f"unknown parameterization {parameterization!r}")
    t2 = time.perf_counter()
    support, expansion = _model_expansion(S, Gamma @ Mmat)
    out = M if isinstance(M, OutputMatrix) else None
    return FittedModel("multioutput_sketched", spec, lam, Gamma, support, expansion, X,
                       sketch=S, output=out, loss=loss, feature_state=state,
                       objective=res.objective, history=res.history,
                       timings={"sketch": t1 - t0, "optimize": t2 - t1})


def exact_features(K, rank_tol=RANK_TOL):
    """Eigen-features of K: (V_r, w_r) with K ~= V_r diag(w_r) V_r^T."""
    return _exact_features(K, rank_tol)


def fit_exact(spec, X, y, loss, lam, adam_config=None, M=None, K=None, eig=None,
              rank_tol=RANK_TOL) -> FittedModel:
    """Unsketched baseline.

    Optimizes in the eigenbasis of K (alpha = V_r D_r^(-1/2) w), which has the
    same optimum as the problem over alpha but a plain ridge penalty.
    ``M`` switches to the multi-output problem with targets (n, d) (or (n, 1)
    for pinball).  ``eig`` reuses a precomputed ``exact_features(K)``.
    """
    X = _as_2d(X)
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != X.shape[0]:
        raise ValueError("X and y have different sample counts")
    if not lam > 0:
        raise ValueError("regularization must be positive")
    cfg = adam_config or AdamConfig()
    n = X.shape[0]
    t0 = time.perf_counter()
    if eig is None and K is None:
        K = gram(spec, X)
    t1 = time.perf_counter()
    V, w = eig if eig is not None else _exact_features(K, rank_tol)
    Z = V * np.sqrt(w)
    back = V / np.sqrt(w)

    if M is None:
        if y.ndim != 1:
            raise ValueError("scalar fit needs a 1-D target")
        Y = y[:, None]

        def obj(u):
            return feature_objective(u, Z, y, loss, lam)[0]

        def grad(u, idx):
            Zb = Z[idx]
            G = L.subgradients(loss, (Zb @ u)[:, None], Y[idx])[:, 0]
            return Zb.T @ G / idx.size + lam * u

        res = adam(obj, grad, np.zeros(Z.shape[1]), n, cfg)
        alpha = back @ res.x
        t2 = time.perf_counter()
        return FittedModel("scalar_exact", spec, lam, alpha, np.arange(n), alpha, X,
                           loss=loss, objective=res.objective, history=res.history,
                           timings={"gram": t1 - t0, "optimize": t2 - t1})

    Mmat = M.M if isinstance(M, OutputMatrix) else np.asarray(M, dtype=np.float64)
    Y = _col(y)
    d = Mmat.shape[0]

    def obj(W):
        return multioutput_feature_objective(W, Z, Y, Mmat, loss, lam)[0]

    def grad(W, idx):
        WM = W @ Mmat
        sub = L.subgradients(loss, Z[idx] @ WM, Y[idx])
        return (Z[idx].T @ sub) @ Mmat / idx.size + lam * WM

    res = adam(obj, grad, np.zeros((Z.shape[1], d)), n, cfg)
    A = back @ res.x
    t2 = time.perf_counter()
    return FittedModel("multioutput_exact", spec, lam, A, np.arange(n), A @ Mmat, X,
                       output=M if isinstance(M, OutputMatrix) else None, loss=loss,
                       objective=res.objective, history=res.history,
                       timings={"gram": t1 - t0, "optimize": t2 - t1})


# ---------------------------------------------------------------- persistence

def data_hash(X) -> str:
    X = np.ascontiguousarray(X, dtype=np.float64)
    h = hashlib.sha256()
    h.update(str(X.shape).encode())
    h.update(X.tobytes())
    return h.hexdigest()


def save_model(model: FittedModel, path):
    """Write coefficients, sketch record, kernel spec and a training-data hash (.npz)."""
    header = {
        "kind": model.kind,
        "kernel": model.kernel.to_dict(),
        "lam": model.lam,
        "sketch": model.sketch.to_record() if model.sketch is not None else None,
        "output": model.output.to_dict() if model.output is not None else None,
        "loss": model.loss.to_dict() if model.loss is not None else None,
        "objective": model.objective,
        "train_hash": data_hash(model.X_train),
        "n_train": int(model.X_train.shape[0]),
    }
    buf = io.BytesIO()
    np.savez(buf, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             coef=model.coef, support=model.support, expansion=model.expansion)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path, X_train) -> FittedModel:
    """Reload a model saved by ``save_model``; ``X_train`` must match the saved hash."""
    from .kernels import output_matrix
    from .sketch import SketchOperator as _SO

    X_train = _as_2d(X_train)
    with np.load(path) as z:
        header = json.loads(bytes(z["header"]).decode())
        coef, support, expansion = z["coef"], z["support"], z["expansion"]
    if data_hash(X_train) != header["train_hash"]:
        raise ValueError("training inputs do not match the saved model")
    sk = _SO.from_record(header["sketch"]) if header["sketch"] else None
    out = None
    if header["output"]:
        out = output_matrix(header["output"]["provenance"], **header["output"]["params"])
    loss = L.LossSpec.from_dict(header["loss"]) if header["loss"] else None
    return FittedModel(header["kind"], KernelSpec.from_dict(header["kernel"]),
                       header["lam"], coef, support, expansion, X_train, sketch=sk,
                       output=out, loss=loss, objective=header["objective"])
