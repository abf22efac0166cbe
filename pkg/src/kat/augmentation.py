"""Knowledge-based synthetic data generation and the two baseline augmenters.

The knowledge route: filter calibrated models by an accuracy requirement,
weight the survivors inversely to their calibration error, pick new feature
sites biased toward historically sparse regions, and label the sites with the
weighted ensemble prediction. DA1 (sample-and-average) and DA2 (multiplicative
jitter) are the conventional baselines.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import AllModelsFiltered, DatasetTooSmall, DimensionMismatch, EmptyDataset
from .classical import CalibratedModel, predict_many


@dataclass(frozen=True)
class AggregationConfig:
    """Filter/weight constants: ``alpha`` offsets errors, ``beta`` is the
    accuracy requirement (error units); models with error >= beta are dropped."""

    alpha: float = 0.0
    beta: float = 100.0

    def __post_init__(self):
        if self.alpha < 0:
            raise DimensionMismatch("alpha must be >= 0")
        if self.beta <= 0:
            raise DimensionMismatch("beta must be > 0")


@dataclass(frozen=True)
class EnsembleWeights:
    gamma: np.ndarray
    eligible: np.ndarray

    def __post_init__(self):
        gamma = np.ascontiguousarray(self.gamma, dtype=float)
        eligible = np.ascontiguousarray(self.eligible, dtype=bool)
        gamma.setflags(write=False)
        eligible.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "eligible", eligible)


def compute_weights(errors, cfg: AggregationConfig = AggregationConfig()) -> EnsembleWeights:
    """Inverse-error weights over models passing the accuracy filter.

    gamma_k is proportional to (e_k + alpha)^-1 on eligible models
    (e_k < beta) and exactly zero elsewhere. With alpha = 0 and some
    zero-error models, all mass concentrates uniformly on the zero-error
    group (the limit of the weighting rule).
    """
    errors = np.asarray(errors, dtype=float)
    if errors.ndim != 1 or errors.size == 0:
        raise DimensionMismatch("errors must be a nonempty vector")
    if (errors < 0).any():
        raise DimensionMismatch("calibration errors must be >= 0")
    eligible = errors < cfg.beta
    if not eligible.any():
        raise AllModelsFiltered(
            f"no model meets the accuracy requirement beta={cfg.beta} (min error {errors.min()})"
        )
    shifted = errors + cfg.alpha
    gamma = np.zeros_like(errors)
    zero_err = eligible & (shifted == 0.0)
    if zero_err.any():
        gamma[zero_err] = 1.0 / zero_err.sum()
    else:
        gamma[eligible] = 1.0 / shifted[eligible]
        gamma /= gamma.sum()
    return EnsembleWeights(gamma, eligible)


@dataclass(frozen=True)
class SiteGenConfig:
    """Settings for synthetic feature sites.

    ``margin`` widens the per-feature box beyond the historical range;
    ``sparse_bias`` is the fraction of sites drawn preferentially from
    low-density deciles of the historical marginals (the rest is a Latin
    hypercube over the box).
    """

    count: int
    margin: float = 0.05
    sparse_bias: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise DimensionMismatch("site count must be >= 1")
        if self.margin < 0:
            raise DimensionMismatch("margin must be >= 0")
        if not (0.0 <= self.sparse_bias <= 1.0):
            raise DimensionMismatch("sparse_bias must be in [0, 1]")


def generate_sites(hd: Dataset, cfg: SiteGenConfig) -> np.ndarray:
    """Draw ``cfg.count`` feature vectors inside the margin-widened box."""
    if len(hd) == 0:
        raise EmptyDataset("cannot generate sites from an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    X = hd.features
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    span = hi - lo
    box_lo = lo - cfg.margin * span
    box_hi = hi + cfg.margin * span
    d = X.shape[1]
    n_sparse = int(round(cfg.count * cfg.sparse_bias))
    n_lhs = cfg.count - n_sparse

    sites = np.empty((cfg.count, d))
    if n_lhs > 0:
        # Latin hypercube: stratified per feature with independent permutations
        for j in range(d):
            strata = (np.arange(n_lhs) + rng.random(n_lhs)) / n_lhs
            sites[:n_lhs, j] = box_lo[j] + rng.permutation(strata) * (box_hi[j] - box_lo[j])
    if n_sparse > 0:
        # per-feature decile histogram over the historical range; sample bins
        # with weight inverse to occupancy, uniform inside the chosen bin
        for j in range(d):
            if span[j] == 0.0:
                sites[n_lhs:, j] = lo[j]
                continue
            edges = np.linspace(lo[j], hi[j], 11)
            counts, _ = np.histogram(X[:, j], bins=edges)
            weights = 1.0 / (counts + 1.0)
            weights /= weights.sum()
            bins = rng.choice(10, size=n_sparse, p=weights)
            sites[n_lhs:, j] = edges[bins] + rng.random(n_sparse) * (edges[bins + 1] - edges[bins])
    return sites


def synthesize(models, weights: EnsembleWeights, sites, feature_names=None, target_names=None) -> Dataset:
    """Label sites with the weighted ensemble prediction; origin is synthetic."""
    sites = np.atleast_2d(np.asarray(sites, dtype=float))
    if len(models) != weights.gamma.shape[0]:
        raise DimensionMismatch(f"{len(models)} models vs {weights.gamma.shape[0]} weights")
    targets = None
    for model, w in zip(models, weights.gamma):
        if w == 0.0:
            continue
        pred = predict_many(model, sites)
        if targets is None:
            targets = w * pred
        elif pred.shape != targets.shape:
            raise DimensionMismatch("ensemble members disagree on target dimension")
        else:
            targets += w * pred
    if targets is None:
        raise AllModelsFiltered("ensemble weights are all zero")
    return Dataset(sites, targets, n_historical=0, feature_names=feature_names, target_names=target_names)


def augment_da1(hd: Dataset, count: int, seed: int) -> Dataset:
    """Baseline DA1: each new sample averages three distinct historical records."""
    if len(hd) < 3:
        raise DatasetTooSmall(f"DA1 needs at least 3 records, got {len(hd)}")
    rng = np.random.default_rng(seed)
    feats = np.empty((count, hd.feature_dim))
    targs = np.empty((count, hd.target_dim))
    for k in range(count):
        idx = rng.choice(len(hd), size=3, replace=False)
        feats[k] = hd.features[idx].mean(axis=0)
        targs[k] = hd.targets[idx].mean(axis=0)
    return Dataset(feats, targs, 0, hd.feature_names, hd.target_names)


def augment_da2(hd: Dataset, count: int, seed: int, fluctuation: float = 0.005) -> Dataset:
    """Baseline DA2: one historical record with +-0.5% multiplicative noise
    on every feature and target component."""
    if len(hd) < 1:
        raise DatasetTooSmall("DA2 needs at least one record")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(hd), size=count)
    noise_f = rng.uniform(-fluctuation, fluctuation, size=(count, hd.feature_dim))
    noise_t = rng.uniform(-fluctuation, fluctuation, size=(count, hd.target_dim))
    feats = hd.features[idx] * (1.0 + noise_f)
    targs = hd.targets[idx] * (1.0 + noise_t)
    return Dataset(feats, targs, 0, hd.feature_names, hd.target_names)
