"""Training loop with the dynamic-sampling mini-batch curriculum.

On a hybrid dataset, the historical share eta of each mini-batch rises
linearly from eta_min to eta_max over T schedule updates and then stays
flat; eta is updated once per iteration, before the batch is drawn. Datasets
without synthetic samples (and configs without eta bounds) fall back to plain
uniform mini-batching.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset
from .errors import DimensionMismatch, EmptyDataset, EmptyPool
from . import neural
from .neural import AdamState, NetworkParams, NetworkSpec, Train


@dataclass(frozen=True)
class MiniBatch:
    """A drawn batch: m1 leading historical rows, m2 synthetic rows."""

    features: np.ndarray
    targets: np.ndarray
    m1: int
    m2: int

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    @property
    def samples(self):
        from .dataset import Origin, Sample

        return [
            Sample(self.features[i], self.targets[i],
                   Origin.HISTORICAL if i < self.m1 else Origin.SYNTHETIC)
            for i in range(self.m)
        ]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    step_size: float = 1e-3
    iterations: int = 4000
    eta_min: float | None = None
    eta_max: float | None = None
    schedule_updates: int = 600        # T of the eta schedule
    loss: neural.Loss | None = None    # None: use the network spec's loss
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1 or self.schedule_updates < 1:
            raise DimensionMismatch("batch_size, iterations, and schedule_updates must be >= 1")
        if self.eta_min is not None and not (0.0 <= self.eta_min <= 1.0):
            raise DimensionMismatch("eta_min must be in [0, 1]")
        if self.eta_max is not None:
            if not (0.0 <= self.eta_max <= 1.0):
                raise DimensionMismatch("eta_max must be in [0, 1]")
            if self.eta_min is not None and self.eta_min > self.eta_max:
                raise DimensionMismatch("eta_min must not exceed eta_max")
            if self.eta_max > 0.9:
                warnings.warn(
                    f"eta_max={self.eta_max} exceeds the recommended 90% ceiling",
                    stacklevel=2,
                )

    @property
    def dynamic(self) -> bool:
        return self.eta_max is not None


@dataclass(frozen=True)
class SamplerState:
    eta: float
    updates_applied: int


def default_eta_min(data: Dataset, batch_size: int) -> float:
    """Uniform-sampling composition floor(m*n/N)/m."""
    return math.floor(batch_size * data.n_historical / len(data)) / batch_size


def resolve_eta_min(cfg: TrainConfig, data: Dataset) -> float:
    if cfg.eta_min is not None:
        return cfg.eta_min
    return default_eta_min(data, cfg.batch_size)


def eta_update(state: SamplerState, cfg: TrainConfig, eta_min: float | None = None) -> SamplerState:
    """One linear schedule step; eta stays put once it reaches eta_max."""
    lo = cfg.eta_min if eta_min is None else eta_min
    if cfg.eta_max is None or lo is None:
        raise DimensionMismatch("eta schedule requires eta_min and eta_max")
    step = (cfg.eta_max - lo) / cfg.schedule_updates
    return SamplerState(min(state.eta + step, cfg.eta_max), state.updates_applied + 1)


def _draw(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if k == 0:
        return np.empty(0, dtype=int)
    if pool.size == 0:
        raise EmptyPool("requested samples from an empty pool")
    replace_flag = pool.size < k
    return rng.choice(pool, size=k, replace=replace_flag)


def draw_minibatch(data: Dataset, eta: float, m: int, rng: np.random.Generator) -> MiniBatch:
    """m1 = floor(m*eta) historical rows plus m - m1 synthetic rows.

    Draws without replacement unless a pool is smaller than its quota.
    """
    m1 = math.floor(m * eta)
    m2 = m - m1
    hist = np.arange(data.n_historical)
    synt = np.arange(data.n_historical, len(data))
    idx = np.concatenate([_draw(hist, m1, rng), _draw(synt, m2, rng)])
    return MiniBatch(data.features[idx], data.targets[idx], m1, m2)


def draw_uniform(data: Dataset, m: int, rng: np.random.Generator) -> MiniBatch:
    """Plain uniform mini-batch; composition falls where it may."""
    idx = _draw(np.arange(len(data)), m, rng)
    idx = np.sort(idx)  # historical-first ordering for the m1 count
    m1 = int((idx < data.n_historical).sum())
    return MiniBatch(data.features[idx], data.targets[idx], m1, m - m1)


@dataclass(frozen=True)
class DiagnosticsFlags:
    grad_noise: bool = False
    full_loss_every: int = 50


@dataclass
class TrainTrace:
    """Per-iteration series plus the final parameters.

    ``loss`` is the mini-batch loss before each step; ``full_loss`` holds the
    whole-dataset loss sampled every ``full_loss_every`` iterations (keyed by
    iteration). ``grad_noise_norm`` is NaN when the diagnostic is off.
    """

    loss: np.ndarray
    eta: np.ndarray
    m1: np.ndarray
    grad_noise_norm: np.ndarray
    full_loss: dict
    params: NetworkParams

    def __len__(self) -> int:
        return self.loss.shape[0]

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "loss", "eta", "grad_noise_norm"])
            for i in range(len(self)):
                gn = self.grad_noise_norm[i]
                writer.writerow(
                    [i + 1, repr(float(self.loss[i])), repr(float(self.eta[i])),
                     "" if math.isnan(gn) else repr(float(gn))]
                )


def train(
    spec: NetworkSpec,
    data: Dataset,
    cfg: TrainConfig,
    diagnostics: DiagnosticsFlags = DiagnosticsFlags(),
    init: NetworkParams | None = None,
) -> TrainTrace:
    """Run the full loop: eta update, batch draw, backprop, Adam step.

    Dynamic sampling engages only when the config carries eta bounds AND the
    dataset actually contains synthetic samples; otherwise batches are drawn
    uniformly (the O/DA route).
    """
    if len(data) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if data.feature_dim != spec.flat_input_dim:
        raise DimensionMismatch(
            f"dataset feature dim {data.feature_dim} != network input {spec.flat_input_dim}"
        )
    kind = cfg.loss or spec.loss
    dynamic = cfg.dynamic and data.n_synthetic > 0
    eta_min = resolve_eta_min(cfg, data) if dynamic else 0.0

    params = init if init is not None else neural.init_params(spec, cfg.seed)
    adam = AdamState.fresh(params.dim, cfg.beta1, cfg.beta2, cfg.epsilon)
    rng = np.random.default_rng([cfg.seed, 1])
    dropout_rng = np.random.default_rng([cfg.seed, 2])
    state = SamplerState(eta_min, 0)

    n_it = cfg.iterations
    trace_loss = np.empty(n_it)
    trace_eta = np.empty(n_it)
    trace_m1 = np.empty(n_it, dtype=int)
    trace_gn = np.full(n_it, np.nan)
    full_loss: dict[int, float] = {}
    mode = Train(dropout_rng) if spec.has_dropout else neural.EVAL

    for it in range(n_it):
        if dynamic:
            state = eta_update(state, cfg, eta_min)
            batch = draw_minibatch(data, state.eta, cfg.batch_size, rng)
            trace_eta[it] = state.eta
        else:
            batch = draw_uniform(data, cfg.batch_size, rng)
            trace_eta[it] = batch.m1 / batch.m
        value, grad = neural.loss_and_grad(spec, params, batch.features, batch.targets, kind, mode)
        if diagnostics.grad_noise:
            if spec.has_dropout:
                _, g_batch = neural.loss_and_grad(spec, params, batch.features, batch.targets, kind)
            else:
                g_batch = grad
            _, g_full = neural.loss_and_grad(spec, params, data.features, data.targets, kind)
            trace_gn[it] = float(np.linalg.norm(g_batch - g_full))
        if diagnostics.full_loss_every and (it + 1) % diagnostics.full_loss_every == 0:
            preds = neural.forward(spec, params, data.features)
            full_loss[it + 1] = neural.loss(kind, preds, data.targets)
        params, adam = neural.adam_step(params, grad, adam, cfg.step_size)
        trace_loss[it] = value
        trace_m1[it] = batch.m1

    return TrainTrace(trace_loss, trace_eta, trace_m1, trace_gn, full_loss, params)
