"""Model kinds, prediction, and the calibration entry point.

Supported kinds:
  * ``Affine`` — single-output linear model with optional ridge penalty
  * ``KernelRidge`` — rbf kernel ridge regression over a stored training set
  * ``RandomForest`` — bootstrap-averaged regression trees (greedy fit)
  * ``DispatchLoad`` — optimization-form load model: quadratic utility
    allocated across periods under a total-energy equality and per-period
    bounds, with a ramp clip applied after the solve
  * ``Constant`` — fixed output vector; its calibration objective is a
    sphere centered on the target mean, which makes it a handy optimizer
    test bed as well as a trivial baseline
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from ..dataset import Dataset
from ..errors import DimensionMismatch, EmptyDataset, IncompatibleMethod
from . import forest as _forest
from .optimize import bfgs_minimize, pso_minimize


class Method(Enum):
    QUASI_NEWTON = "bfgs"
    PSO = "pso"
    CLOSED_FORM = "closed-form"


def _frozen_array(a) -> np.ndarray | None:
    if a is None:
        return None
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Affine:
    ridge: float = 0.0
    weights: np.ndarray | None = None
    intercept: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen_array(self.weights))
        if self.ridge < 0:
            raise DimensionMismatch("ridge penalty must be >= 0")


@dataclass(frozen=True)
class KernelRidge:
    """rbf kernel ridge; distances are measured on internally standardized features."""

    gamma: float = 10.0
    ridge: float = 1.0
    x_train: np.ndarray | None = None
    alpha: np.ndarray | None = None
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None

    def __post_init__(self):
        if self.gamma <= 0:
            raise DimensionMismatch("kernel bandwidth must be > 0")
        if self.ridge < 0:
            raise DimensionMismatch("ridge penalty must be >= 0")
        for name in ("x_train", "alpha", "feat_mean", "feat_std"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))


@dataclass(frozen=True)
class RandomForest:
    n_trees: int = 50
    max_depth: int = 8
    min_leaf: int = 3
    seed: int = 0
    trees: tuple = ()

    def __post_init__(self):
        if self.n_trees < 1:
            raise DimensionMismatch("forest needs at least one tree")


@dataclass(frozen=True)
class DispatchLoad:
    """Price-responsive consumption: maximize sum(shape_t*u_t - c/2*u_t^2 - p_t*u_t)
    subject to sum(u) = energy and 0 <= u_t <= upper, then clip ramps."""

    curvature: float = 1.0
    energy: float = 120.0
    upper: float = 11.0
    ramp: float = 1e3
    shape: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "shape", _frozen_array(self.shape))
        if self.upper <= 0 or self.ramp <= 0 or self.curvature < 0:
            raise DimensionMismatch("DispatchLoad requires upper > 0, ramp > 0, curvature >= 0")
        if self.shape is not None:
            slack = 1e-6 * max(1.0, self.upper)
            if self.energy > len(self.shape) * self.upper + slack:
                raise DimensionMismatch("energy exceeds what the per-period bound allows")

    @property
    def periods(self) -> int:
        return 0 if self.shape is None else len(self.shape)


@dataclass(frozen=True)
class Constant:
    value: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "value", _frozen_array(self.value))


ModelKind = Affine | KernelRidge | RandomForest | DispatchLoad | Constant


@dataclass(frozen=True)
class CalibratedModel:
    kind: ModelKind
    error: float

    def __post_init__(self):
        if self.error < 0:
            raise DimensionMismatch("calibration error must be >= 0")


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances via the gram identity."""
    d2 = (A * A).sum(axis=1)[:, None] + (B * B).sum(axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.maximum(d2, 0.0)


def project_box_simplex(z: np.ndarray, total: float, upper: float) -> np.ndarray:
    """Euclidean projection of rows of ``z`` onto {u: sum(u)=total, 0<=u<=upper}.

    Exact: S(lam) = sum(clip(z - lam, 0, upper)) is piecewise linear in lam,
    increasing as lam falls. Sweeping the sorted breakpoints (each z_t starts
    a coordinate growing, each z_t - upper saturates one) accumulates S and
    the slope, and the correct shift is interpolated in the bracketing
    segment.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    B, T = z.shape
    if total <= 0.0:
        return np.zeros_like(z)
    if total >= T * upper:
        return np.full_like(z, upper)
    bp = np.concatenate([z, z - upper], axis=1)              # (B, 2T)
    types = np.concatenate([np.ones(T), -np.ones(T)])
    order = np.argsort(-bp, axis=1, kind="stable")           # descending lam
    bps = np.take_along_axis(bp, order, axis=1)
    slope = np.cumsum(types[order], axis=1)                  # dS/d(-lam) after each breakpoint
    gaps = bps[:, :-1] - bps[:, 1:]
    S = np.concatenate(
        [np.zeros((B, 1)), np.cumsum(slope[:, :-1] * gaps, axis=1)], axis=1
    )                                                        # S at each breakpoint
    rows = np.arange(B)
    k = np.maximum(np.argmax(S >= total, axis=1), 1)         # first bracketing index
    sl = slope[rows, k - 1]
    lam = bps[rows, k - 1] - (total - S[rows, k - 1]) / sl
    return np.clip(z - lam[:, None], 0.0, upper)


def _dispatch_profiles(kind: DispatchLoad, prices: np.ndarray) -> np.ndarray:
    prices = np.atleast_2d(np.asarray(prices, dtype=float))
    if kind.shape is None or prices.shape[1] != kind.periods:
        raise DimensionMismatch(
            f"price vector width {prices.shape[1]} != model periods {kind.periods}"
        )
    c = max(kind.curvature, 1e-12)
    z = (kind.shape - prices) / c
    u = project_box_simplex(z, kind.energy, kind.upper)
    # ramp handling for prediction only: forward clip of period-to-period moves
    if kind.ramp < kind.upper:
        for t in range(1, u.shape[1]):
            u[:, t] = np.clip(u[:, t], u[:, t - 1] - kind.ramp, u[:, t - 1] + kind.ramp)
    return u


def predict_many(model: CalibratedModel, X: np.ndarray) -> np.ndarray:
    """Vectorized prediction over rows of ``X``; returns (n, target_dim)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    kind = model.kind
    if isinstance(kind, Affine):
        if kind.weights is None or X.shape[1] != kind.weights.shape[0]:
            raise DimensionMismatch("affine model dimension mismatch or model unfitted")
        return (X @ kind.weights + kind.intercept)[:, None]
    if isinstance(kind, KernelRidge):
        if kind.x_train is None:
            raise DimensionMismatch("kernel model is unfitted")
        if X.shape[1] != kind.x_train.shape[1]:
            raise DimensionMismatch("kernel model feature width mismatch")
        Xs = (X - kind.feat_mean) / kind.feat_std
        K = np.exp(-kind.gamma * _sq_dists(Xs, kind.x_train))
        return K @ kind.alpha
    if isinstance(kind, RandomForest):
        if not kind.trees:
            raise DimensionMismatch("forest model is unfitted")
        return _forest.predict_forest(kind.trees, X)
    if isinstance(kind, DispatchLoad):
        return _dispatch_profiles(kind, X)
    if isinstance(kind, Constant):
        if kind.value is None:
            raise DimensionMismatch("constant model is unfitted")
        return np.tile(kind.value, (X.shape[0], 1))
    raise DimensionMismatch(f"unknown model kind {kind!r}")


def predict(model: CalibratedModel, x: np.ndarray) -> np.ndarray:
    """Predict the target vector for one feature vector."""
    return predict_many(model, np.atleast_2d(np.asarray(x, dtype=float)))[0]


def training_mse(model: CalibratedModel, data: Dataset) -> float:
    """Mean squared error over every (sample, component) pair."""
    preds = predict_many(model, data.features)
    if preds.shape != data.targets.shape:
        raise DimensionMismatch(f"prediction shape {preds.shape} != targets {data.targets.shape}")
    return float(np.mean((preds - data.targets) ** 2))


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def _require_scalar_target(hd: Dataset, kind_name: str):
    if hd.target_dim != 1:
        raise IncompatibleMethod(f"{kind_name} fits scalar targets, got dim {hd.target_dim}")


def _fit_affine_closed_form(kind: Affine, hd: Dataset) -> Affine:
    _require_scalar_target(hd, "Affine")
    X = np.hstack([hd.features, np.ones((len(hd), 1))])
    y = hd.targets[:, 0]
    A = X.T @ X
    if kind.ridge > 0:
        reg = kind.ridge * np.eye(A.shape[0])
        reg[-1, -1] = 0.0  # intercept unpenalized
        A = A + reg
    coeffs, *_ = np.linalg.lstsq(A, X.T @ y, rcond=None)
    return replace(kind, weights=coeffs[:-1], intercept=float(coeffs[-1]))


def _fit_affine_bfgs(kind: Affine, hd: Dataset) -> Affine:
    _require_scalar_target(hd, "Affine")
    X, y = hd.features, hd.targets[:, 0]
    n = len(hd)

    def unpack(w):
        return w[:-1], w[-1]

    def f(w):
        wv, b = unpack(w)
        r = X @ wv + b - y
        return float(np.mean(r * r) + kind.ridge * (wv @ wv) / n)

    def g(w):
        wv, b = unpack(w)
        r = X @ wv + b - y
        gw = 2.0 * (X.T @ r) / n + 2.0 * kind.ridge * wv / n
        gb = 2.0 * r.mean()
        return np.concatenate([gw, [gb]])

    w0 = np.zeros(hd.feature_dim + 1)
    w_star, _, _ = bfgs_minimize(f, g, w0)
    return replace(kind, weights=w_star[:-1], intercept=float(w_star[-1]))


def _fit_kernel_ridge(kind: KernelRidge, hd: Dataset) -> KernelRidge:
    mean = hd.features.mean(axis=0)
    std = hd.features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    Xs = (hd.features - mean) / std
    K = np.exp(-kind.gamma * _sq_dists(Xs, Xs))
    A = K + kind.ridge * np.eye(len(hd))
    try:
        alpha = np.linalg.solve(A, hd.targets)
    except np.linalg.LinAlgError:
        alpha, *_ = np.linalg.lstsq(A, hd.targets, rcond=None)
    return replace(kind, x_train=Xs, alpha=alpha, feat_mean=mean, feat_std=std)


def _pso_box(kind: ModelKind, hd: Dataset):
    """Search box per kind, scaled from the data."""
    if isinstance(kind, Constant):
        lo = hd.targets.min(axis=0) - 1.0
        hi = hd.targets.max(axis=0) + 1.0
        return lo, hi
    if isinstance(kind, Affine):
        scale = max(float(np.abs(hd.targets).max()), 1.0)
        lo = np.full(hd.feature_dim + 1, -scale)
        hi = np.full(hd.feature_dim + 1, scale)
        return lo, hi
    if isinstance(kind, DispatchLoad):
        p_hi = float(np.percentile(hd.features, 95))
        T = hd.target_dim
        lo = np.concatenate([[1e-2], np.zeros(T)])
        hi = np.concatenate([[10.0], np.full(T, 1.5 * p_hi)])
        return lo, hi
    raise IncompatibleMethod(f"PSO box undefined for kind {type(kind).__name__}")


def _pso_assemble(kind: ModelKind, hd: Dataset, w: np.ndarray) -> ModelKind:
    if isinstance(kind, Constant):
        return replace(kind, value=w)
    if isinstance(kind, Affine):
        return replace(kind, weights=w[:-1], intercept=float(w[-1]))
    if isinstance(kind, DispatchLoad):
        energy = float(hd.targets.sum(axis=1).mean())
        upper = kind.upper if kind.upper >= hd.targets.max() else float(hd.targets.max())
        return replace(kind, curvature=float(w[0]), shape=w[1:], energy=energy, upper=upper)
    raise IncompatibleMethod(f"PSO assembly undefined for kind {type(kind).__name__}")


def _dispatch_warm_start(hd: Dataset) -> np.ndarray:
    """Regression seed for the dispatch fit: interior stationarity says
    u = w/c - p/c - lambda/c, so day-demeaned consumption regresses on
    day-demeaned prices with slope -1/c."""
    P, U = hd.features, hd.targets
    dp = P - P.mean(axis=1, keepdims=True)
    du = U - U.mean(axis=1, keepdims=True)
    denom = float((dp * dp).sum())
    d_hat = max(-float((du * dp).sum()) / max(denom, 1e-12), 1e-3)
    c0 = 1.0 / d_hat
    w0 = c0 * (U.mean(axis=0) + d_hat * P.mean(axis=0))
    return np.concatenate([[c0], w0])


def _fit_pso(kind: ModelKind, hd: Dataset, seed: int) -> ModelKind:
    lo, hi = _pso_box(kind, hd)

    if isinstance(kind, DispatchLoad):
        energy = float(hd.targets.sum(axis=1).mean())
        upper = max(kind.upper, float(hd.targets.max()))
        X, Y = hd.features, hd.targets
        n, T = X.shape

        def batch_objective(P):
            cs = np.maximum(P[:, 0], 1e-9)
            ws = P[:, 1:]
            z = (ws[:, None, :] - X[None, :, :]) / cs[:, None, None]
            u = project_box_simplex(z.reshape(-1, T), energy, upper).reshape(-1, n, T)
            return ((u - Y) ** 2).mean(axis=(1, 2))

        w_star, _ = pso_minimize(None, lo, hi, seed=seed, batch_f=batch_objective,
                                 warm_starts=_dispatch_warm_start(hd)[None, :])
        return _pso_assemble(kind, hd, w_star)

    def batch_objective(P):
        vals = np.empty(P.shape[0])
        for j, w in enumerate(P):
            model = CalibratedModel(_pso_assemble(kind, hd, w), 0.0)
            preds = predict_many(model, hd.features)
            vals[j] = np.mean((preds - hd.targets) ** 2)
        return vals

    w_star, _ = pso_minimize(None, lo, hi, seed=seed, batch_f=batch_objective)
    return _pso_assemble(kind, hd, w_star)


def calibrate(kind: ModelKind, hd: Dataset, method: Method = Method.CLOSED_FORM, seed: int = 0) -> CalibratedModel:
    """Fit ``kind`` on ``hd`` and return it with its recomputed training MSE.

    RandomForest uses its own greedy fit and ignores ``method``. QuasiNewton
    and ClosedForm apply to smooth kinds; PSO applies to any kind with a
    search box.
    """
    if len(hd) == 0:
        raise EmptyDataset("cannot calibrate on an empty dataset")
    if isinstance(kind, RandomForest):
        trees = _forest.fit_forest(hd.features, hd.targets, kind.n_trees, kind.max_depth, kind.min_leaf, kind.seed)
        fitted = replace(kind, trees=trees)
    elif method is Method.PSO:
        fitted = _fit_pso(kind, hd, seed)
    elif isinstance(kind, Affine):
        fitted = _fit_affine_bfgs(kind, hd) if method is Method.QUASI_NEWTON else _fit_affine_closed_form(kind, hd)
    elif isinstance(kind, KernelRidge):
        if method is Method.QUASI_NEWTON:
            raise IncompatibleMethod("KernelRidge calibrates in closed form")
        fitted = _fit_kernel_ridge(kind, hd)
    elif isinstance(kind, Constant):
        if method is Method.QUASI_NEWTON:
            raise IncompatibleMethod("Constant has no smooth parameterization to descend")
        # closed form: the sphere objective is minimized at the target mean
        fitted = replace(kind, value=hd.targets.mean(axis=0))
    elif isinstance(kind, DispatchLoad):
        raise IncompatibleMethod("DispatchLoad calibrates by PSO or the inverse-KKT solver")
    else:
        raise IncompatibleMethod(f"no calibration backend for kind {type(kind).__name__}")
    model = CalibratedModel(fitted, 0.0)
    return CalibratedModel(fitted, training_mse(model, hd))


# ---------------------------------------------------------------------------
# model library files
# ---------------------------------------------------------------------------

_KIND_TAGS = {
    Affine: "affine",
    KernelRidge: "kernel_ridge",
    RandomForest: "random_forest",
    DispatchLoad: "dispatch_load",
    Constant: "constant",
}


def _descriptor(kind: ModelKind, seed: int = 0) -> dict:
    doc = {"kind": _KIND_TAGS[type(kind)], "seed": seed}
    if isinstance(kind, Affine):
        doc["ridge"] = kind.ridge
    elif isinstance(kind, KernelRidge):
        doc.update(gamma=kind.gamma, ridge=kind.ridge)
    elif isinstance(kind, RandomForest):
        doc.update(n_trees=kind.n_trees, max_depth=kind.max_depth, min_leaf=kind.min_leaf, seed=kind.seed)
    elif isinstance(kind, DispatchLoad):
        doc.update(curvature=kind.curvature, energy=kind.energy, upper=kind.upper, ramp=kind.ramp)
    return doc


def kind_from_descriptor(doc: dict) -> tuple[ModelKind, int]:
    tag = doc.get("kind")
    seed = int(doc.get("seed", 0))
    if tag == "affine":
        return Affine(ridge=float(doc.get("ridge", 0.0))), seed
    if tag == "kernel_ridge":
        return KernelRidge(gamma=float(doc.get("gamma", 10.0)), ridge=float(doc.get("ridge", 1.0))), seed
    if tag == "random_forest":
        return (
            RandomForest(
                n_trees=int(doc.get("n_trees", 50)),
                max_depth=int(doc.get("max_depth", 8)),
                min_leaf=int(doc.get("min_leaf", 3)),
                seed=seed,
            ),
            seed,
        )
    if tag == "dispatch_load":
        shape = doc.get("shape")
        return (
            DispatchLoad(
                curvature=float(doc.get("curvature", 1.0)),
                energy=float(doc.get("energy", 120.0)),
                upper=float(doc.get("upper", 11.0)),
                ramp=float(doc.get("ramp", 1e3)),
                shape=None if shape is None else np.asarray(shape, dtype=float),
            ),
            seed,
        )
    if tag == "constant":
        return Constant(), seed
    raise IncompatibleMethod(f"unknown model kind tag {tag!r}")


def save_library(path, entries) -> None:
    """Write descriptors (or calibrated models) as a JSON array.

    ``entries`` holds dicts, bare kinds, or (CalibratedModel, seed) items;
    calibrated entries gain ``w_star`` and ``e_star`` fields.
    """
    docs = []
    for entry in entries:
        if isinstance(entry, dict):
            docs.append(entry)
            continue
        if isinstance(entry, CalibratedModel):
            model, seed = entry, 0
        elif isinstance(entry, tuple):
            model, seed = entry
        else:
            docs.append(_descriptor(entry))
            continue
        doc = _descriptor(model.kind, seed)
        doc["e_star"] = float(model.error)
        doc["w_star"] = _fitted_params(model.kind)
        docs.append(doc)
    Path(path).write_text(json.dumps(docs, indent=2, sort_keys=True), encoding="utf-8")


def _fitted_params(kind: ModelKind) -> dict:
    if isinstance(kind, Affine):
        return {
            "weights": None if kind.weights is None else [float(v) for v in kind.weights],
            "intercept": float(kind.intercept),
        }
    if isinstance(kind, DispatchLoad):
        return {
            "curvature": float(kind.curvature),
            "energy": float(kind.energy),
            "upper": float(kind.upper),
            "shape": None if kind.shape is None else [float(v) for v in kind.shape],
        }
    if isinstance(kind, Constant):
        return {"value": None if kind.value is None else [float(v) for v in kind.value]}
    # kernel/forest fitted state is data-sized; refit from the descriptor instead
    return {}


def load_library(path) -> list[dict]:
    docs = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(docs, list):
        raise IncompatibleMethod(f"{path}: model library must be a JSON array")
    return docs
