"""Accuracy metrics, probabilistic scores, and training diagnostics.

Covers point metrics (RMSE/MAPE/sMAPE), quantile scores (pinball, Winkler,
CRPS from three quantiles, CRPS skill), gradient noise against the
full-dataset gradient, the per-site manifold error decomposition, and the
PCA-projected loss-approximation landscape.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dataset import Dataset
from .errors import (
    AllTargetsBelowThreshold,
    DegenerateCovariance,
    DimensionMismatch,
    EmptyInput,
    LengthMismatch,
    MissingBaseline,
    OracleUnavailable,
)
from . import neural
from .neural import NetworkParams, NetworkSpec


# ---------------------------------------------------------------------------
# point metrics
# ---------------------------------------------------------------------------

def point_metrics(preds, ys, epsilon_y: float | None = None):
    """(RMSE, MAPE%, sMAPE%) over all components.

    MAPE averages |error|/|y| only where |y| >= epsilon_y; the threshold
    defaults to the 10th percentile of |y|. sMAPE terms with a zero
    denominator (both values zero) contribute zero.
    """
    preds = np.asarray(preds, dtype=float).ravel()
    ys = np.asarray(ys, dtype=float).ravel()
    if preds.size == 0:
        raise EmptyInput("point metrics need at least one prediction")
    if preds.shape != ys.shape:
        raise LengthMismatch(f"{preds.size} predictions vs {ys.size} targets")
    err = preds - ys
    rmse = float(np.sqrt(np.mean(err * err)))
    if epsilon_y is None:
        epsilon_y = float(np.percentile(np.abs(ys), 10.0))
    mask = np.abs(ys) >= epsilon_y
    if not mask.any():
        raise AllTargetsBelowThreshold(f"every |y| falls below epsilon_y={epsilon_y}")
    mape = float(100.0 * np.mean(np.abs(err[mask]) / np.abs(ys[mask])))
    denom = np.abs(ys) + np.abs(preds)
    terms = np.where(denom > 0.0, 2.0 * np.abs(err) / np.where(denom > 0.0, denom, 1.0), 0.0)
    smape = float(100.0 * np.mean(terms))
    return rmse, mape, smape


def pinball(preds, ys, q: float) -> float:
    return neural.loss(neural.Pinball(q), np.asarray(preds, float).ravel()[None, :],
                       np.asarray(ys, float).ravel()[None, :])


# ---------------------------------------------------------------------------
# probabilistic metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbMetrics:
    pinball: dict
    winkler: float
    crps: float
    crpss: float | None


def winkler_score(lower, upper, ys, level: float = 0.5) -> float:
    """Interval width plus (2/(1-level)) times the exceedance outside it."""
    lower = np.asarray(lower, float).ravel()
    upper = np.asarray(upper, float).ravel()
    ys = np.asarray(ys, float).ravel()
    if not (lower.shape == upper.shape == ys.shape):
        raise LengthMismatch("winkler series lengths differ")
    width = upper - lower
    penalty = 2.0 / (1.0 - level)
    scores = width.copy()
    below = ys < lower
    above = ys > upper
    scores[below] += penalty * (lower[below] - ys[below])
    scores[above] += penalty * (ys[above] - upper[above])
    return float(scores.mean())


def prob_metrics(q25, q50, q75, ys, baseline_crps: float | None = None,
                 require_crpss: bool = False, sort_quantiles: bool = False) -> ProbMetrics:
    """Quantile scores at the fixed 25/50/75% levels.

    CRPS is approximated from the three pinball values as (2/3) of their sum
    (reported as CRPS(3q) elsewhere); CRPSS is the percent improvement over
    ``baseline_crps``. ``sort_quantiles`` optionally repairs quantile
    crossings per time step before scoring.
    """
    series = [np.asarray(s, float).ravel() for s in (q25, q50, q75, ys)]
    if len({s.shape for s in series}) != 1:
        raise LengthMismatch("quantile/target series lengths differ")
    if series[0].size == 0:
        raise EmptyInput("probabilistic metrics need at least one step")
    q25v, q50v, q75v, ysv = series
    if sort_quantiles:
        stacked = np.sort(np.vstack([q25v, q50v, q75v]), axis=0)
        q25v, q50v, q75v = stacked
    pb = {
        0.25: pinball(q25v, ysv, 0.25),
        0.50: pinball(q50v, ysv, 0.50),
        0.75: pinball(q75v, ysv, 0.75),
    }
    ws = winkler_score(q25v, q75v, ysv, level=0.5)
    crps = (2.0 / 3.0) * sum(pb.values())
    crpss = None
    if baseline_crps is not None:
        crpss = float(100.0 * (1.0 - crps / baseline_crps))
    elif require_crpss:
        raise MissingBaseline("CRPSS requested without a baseline CRPS")
    return ProbMetrics(pb, ws, float(crps), crpss)


# ---------------------------------------------------------------------------
# report container
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    """Point and probabilistic metrics plus the overfitting gap.

    ``train_loss``/``test_loss`` use the scenario's training loss on the
    historical training set and the test set; ``overfit_gap`` is their
    difference. Probabilistic fields stay None for point tasks.
    """

    rmse: float
    mape: float
    smape: float
    train_loss: float
    test_loss: float
    overfit_gap: float
    pinball: dict | None = None
    winkler: float | None = None
    crps: float | None = None
    crpss: float | None = None
    mape_unguarded: float | None = None
    epsilon_y: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {
            "rmse": self.rmse,
            "mape": self.mape,
            "smape": self.smape,
            "pinball": None if self.pinball is None else {str(k): v for k, v in self.pinball.items()},
            "winkler": self.winkler,
            "crps": self.crps,
            "crpss": self.crpss,
            "train_loss": self.train_loss,
            "test_loss": self.test_loss,
            "overfit_gap": self.overfit_gap,
            "mape_unguarded": self.mape_unguarded,
            "epsilon_y": self.epsilon_y,
        }
        doc.update(self.extras)
        return doc

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# gradient noise
# ---------------------------------------------------------------------------

def gradient_noise(spec: NetworkSpec, params: NetworkParams, batch, full: Dataset,
                   kind: neural.Loss | None = None):
    """GN = batch gradient minus full-dataset gradient at the same parameters.

    Both gradients are evaluated with dropout disabled, so the result is
    deterministic. Returns (noise vector, Euclidean norm).
    """
    if hasattr(batch, "features"):
        bx, by = batch.features, batch.targets
    else:
        bx, by = batch
    kind = kind or spec.loss
    _, g_batch = neural.loss_and_grad(spec, params, bx, by, kind)
    _, g_full = neural.loss_and_grad(spec, params, full.features, full.targets, kind)
    gn = g_batch - g_full
    return gn, float(np.linalg.norm(gn))


# ---------------------------------------------------------------------------
# ground-truth oracle and manifold errors
# ---------------------------------------------------------------------------

@dataclass
class GroundTruthOracle:
    """Noise-free target source plus a large reference sample of the joint
    distribution; available for simulator tasks only."""

    query: Callable[[np.ndarray], np.ndarray]
    reference: Dataset

    def query_many(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, float))
        return np.stack([np.atleast_1d(np.asarray(self.query(x), float)) for x in X])


@dataclass(frozen=True)
class ManifoldErrors:
    """Per-site decomposition: (f - y_syn) = (f - y_real) - (y_syn - y_real)."""

    pred_minus_syn: np.ndarray
    pred_minus_real: np.ndarray
    syn_minus_real: np.ndarray

    def mean_abs(self) -> tuple[float, float, float]:
        return (
            float(np.abs(self.pred_minus_syn).mean()),
            float(np.abs(self.pred_minus_real).mean()),
            float(np.abs(self.syn_minus_real).mean()),
        )


def manifold_errors(spec: NetworkSpec, params: NetworkParams, sd: Dataset,
                    oracle: GroundTruthOracle | None,
                    to_model_space: Callable[[np.ndarray], np.ndarray] | None = None) -> ManifoldErrors:
    """Evaluate the three error terms at every synthetic site.

    ``sd`` carries raw-unit features; ``to_model_space`` maps them to the
    network's input scale (identity by default).
    """
    if oracle is None:
        raise OracleUnavailable("manifold errors need a ground-truth oracle (simulator tasks only)")
    if sd.n_synthetic != len(sd):
        raise DimensionMismatch("manifold errors are defined on synthetic sites")
    X = sd.features
    Xm = X if to_model_space is None else to_model_space(X)
    preds = np.atleast_2d(neural.forward(spec, params, Xm))
    y_syn = sd.targets
    y_real = oracle.query_many(X)
    if preds.shape != y_syn.shape or y_real.shape != y_syn.shape:
        raise DimensionMismatch("prediction/target shapes disagree at synthetic sites")
    return ManifoldErrors(preds - y_syn, preds - y_real, y_syn - y_real)


# ---------------------------------------------------------------------------
# PCA loss landscape
# ---------------------------------------------------------------------------

def power_iteration(cov: np.ndarray, tol: float = 1e-10, max_iter: int = 10000) -> tuple[float, np.ndarray]:
    """Dominant eigenpair of a symmetric PSD matrix, sign-fixed."""
    cov = np.asarray(cov, dtype=float)
    if not np.isfinite(cov).all() or np.abs(cov).max(initial=0.0) == 0.0:
        raise DegenerateCovariance("covariance matrix is zero or non-finite")
    v = np.zeros(cov.shape[0])
    v[int(np.argmax(np.diag(cov)))] = 1.0
    lam = 0.0
    for _ in range(max_iter):
        w = cov @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            raise DegenerateCovariance("covariance annihilates the start vector")
        w /= norm
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    lam = float(v @ cov @ v)
    # deterministic sign: largest-magnitude component positive
    j = int(np.argmax(np.abs(v)))
    if v[j] < 0:
        v = -v
    return lam, v


def first_component(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First principal direction and the column means used for centering."""
    X = np.atleast_2d(np.asarray(X, float))
    mu = X.mean(axis=0)
    Xc = X - mu
    cov = (Xc.T @ Xc) / max(len(X) - 1, 1)
    if np.abs(cov).max(initial=0.0) == 0.0:
        raise DegenerateCovariance("zero variance in every direction")
    _, v = power_iteration(cov)
    return v, mu


@dataclass
class LandscapeGrid:
    """|empirical loss - oracle loss| binned over the PCA-projected plane.

    Cells with no oracle members are NaN; cells with oracle members but no
    empirical members score the full oracle loss (the empirical loss function
    carries no information there).
    """

    grid: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray

    @property
    def mean_abs_error(self) -> float:
        vals = self.grid[np.isfinite(self.grid)]
        return float(vals.mean()) if vals.size else float("nan")

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cell_i", "cell_j", "abs_error"])
            R = self.grid.shape[0]
            for i in range(R):
                for j in range(R):
                    v = self.grid[i, j]
                    writer.writerow([i, j, "" if not np.isfinite(v) else repr(float(v))])


def landscape_projection(empirical: Dataset, ideal: Dataset, spec: NetworkSpec,
                         params: NetworkParams, resolution: int = 20,
                         to_model_space: Callable[[np.ndarray], np.ndarray] | None = None) -> LandscapeGrid:
    """Project inputs and targets to their first principal components and
    compare the empirical loss surface against the oracle-sample surface.

    The oracle sample must be at least 10x the empirical size. Per-sample
    losses are mean squared errors of the network at its trained parameters;
    cell values average member losses.
    """
    if len(ideal) < 10 * len(empirical):
        raise DimensionMismatch(
            f"oracle sample ({len(ideal)}) must be >= 10x empirical size ({len(empirical)})"
        )
    vx, mux = first_component(ideal.features)
    vy, muy = first_component(ideal.targets)

    def project(ds: Dataset):
        return (ds.features - mux) @ vx, (ds.targets - muy) @ vy

    def sample_losses(ds: Dataset):
        Xm = ds.features if to_model_space is None else to_model_space(ds.features)
        preds = np.atleast_2d(neural.forward(spec, params, Xm))
        return ((preds - ds.targets) ** 2).mean(axis=1)

    ix, iy = project(ideal)
    ex, ey = project(empirical)
    x_edges = np.linspace(ix.min(), ix.max(), resolution + 1)
    y_edges = np.linspace(iy.min(), iy.max(), resolution + 1)
    ideal_loss = sample_losses(ideal)
    emp_loss = sample_losses(empirical)

    def cell_means(px, py, losses):
        xi = np.clip(np.searchsorted(x_edges, px, side="right") - 1, 0, resolution - 1)
        yi = np.clip(np.searchsorted(y_edges, py, side="right") - 1, 0, resolution - 1)
        sums = np.zeros((resolution, resolution))
        counts = np.zeros((resolution, resolution))
        np.add.at(sums, (xi, yi), losses)
        np.add.at(counts, (xi, yi), 1.0)
        return sums, counts

    i_sums, i_counts = cell_means(ix, iy, ideal_loss)
    e_sums, e_counts = cell_means(ex, ey, emp_loss)
    grid = np.full((resolution, resolution), np.nan)
    has_ideal = i_counts > 0
    ideal_mean = np.where(has_ideal, i_sums / np.where(has_ideal, i_counts, 1.0), 0.0)
    emp_mean = np.where(e_counts > 0, e_sums / np.where(e_counts > 0, e_counts, 1.0), 0.0)
    grid[has_ideal] = np.abs(emp_mean - ideal_mean)[has_ideal]
    return LandscapeGrid(grid, x_edges, y_edges)
