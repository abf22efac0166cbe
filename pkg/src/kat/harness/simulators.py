"""Seeded simulators standing in for the two market case studies.

Case 1 (user modeling): daily 24-hour day-ahead price vectors drive a
price-responsive consumer; the ground-truth response allocates a fixed daily
energy across hours by a softmin temperature rule with iterative bound
projection, so every day satisfies the energy equality and per-hour bounds
exactly.

Case 2 (price forecasting): an hourly 6-feature series (price, load,
temperature, wind, solar, gas) with the price affine in net load plus a
congestion quadratic, heteroscedastic noise, and rare spikes; samples are
3-hour lagged feature windows predicting the next hour's price.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from ..dataset import Dataset
from ..diagnostics import GroundTruthOracle
from ..errors import InvalidConsumerParams


@dataclass(frozen=True)
class ConsumerParams:
    """Responsive consumer: softmin temperature, daily energy, hour bounds."""

    temperature: float = 6.0
    energy: float = 120.0
    floor: float = 0.0
    cap: float = 11.0
    ramp: float = 1e3

    def validate(self):
        if self.energy > 24.0 * self.cap:
            raise InvalidConsumerParams(f"energy {self.energy} exceeds 24*cap {24 * self.cap}")
        if self.energy < 24.0 * self.floor:
            raise InvalidConsumerParams("energy below what the hourly floor forces")
        if self.cap <= self.floor or self.temperature <= 0:
            raise InvalidConsumerParams("need cap > floor and temperature > 0")


@dataclass(frozen=True)
class MarketParams:
    """Case-2 price formation coefficients."""

    load_coeff: float = 1.15
    congestion_coeff: float = 0.035
    congestion_knee: float = 26.0
    gas_coeff: float = 2.8
    base_price: float = -6.0
    noise_base: float = 0.9
    noise_scarcity: float = 0.06


@dataclass(frozen=True)
class SimulatorConfig:
    task: str = "user-model"
    days: int = 730
    boundary: int = 546            # Case-1 training days
    hours: int = 6483              # Case-2 raw hours (6480 windowed samples)
    train_samples: int = 4320      # Case-2 training windows
    spike_prob: float = 0.06
    seed: int = 0
    consumer: ConsumerParams = field(default_factory=ConsumerParams)
    market: MarketParams = field(default_factory=MarketParams)
    oracle_size: int = 20480       # reference-sample size for the oracle


# ---------------------------------------------------------------------------
# case 1: user modeling
# ---------------------------------------------------------------------------

def _ar1(rng, n, rho, sigma):
    noise = rng.normal(0.0, sigma, n)
    return lfilter([1.0], [1.0, -rho], noise)


def _case1_prices(rng, days: int, spike_prob: float) -> np.ndarray:
    hours = np.arange(24)
    base = 35.0 + 10.0 * np.cos(2.0 * np.pi * (hours - 17.0) / 24.0)
    seasonal = 5.0 * np.sin(2.0 * np.pi * np.arange(days) / 365.25 + 1.0)
    wiggle = _ar1(rng, days * 24, rho=0.85, sigma=2.2).reshape(days, 24)
    prices = base[None, :] + seasonal[:, None] + wiggle
    spikes = rng.random(days) < spike_prob
    for d in np.flatnonzero(spikes):
        h0 = int(rng.integers(8, 21))
        width = int(rng.integers(1, 4))
        prices[d, h0 : h0 + width] += rng.uniform(25.0, 60.0)
    return np.maximum(prices, 1.0)


def softmin_allocation(prices: np.ndarray, consumer: ConsumerParams) -> np.ndarray:
    """Allocate daily energy across hours, cheap hours first, bounds exact.

    Shares follow softmax(-p/temperature); hours pushed above the cap are
    pinned there and the remaining energy is redistributed over free hours
    until feasible. Output rows satisfy sum(u) = energy and
    floor <= u <= cap exactly.
    """
    consumer.validate()
    arr = np.asarray(prices, dtype=float)
    P = np.atleast_2d(arr)
    B, T = P.shape
    L, U, E = consumer.floor, consumer.cap, consumer.energy
    logits = -P / consumer.temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    u = np.full((B, T), U)
    for b in range(B):
        free = np.ones(T, dtype=bool)
        while free.any():
            budget = E - (~free).sum() * U - free.sum() * L
            share = w[b][free]
            total = share.sum()
            if total <= 0.0:  # extreme temperatures: split the budget evenly
                u[b, free] = L + budget / free.sum()
                break
            alloc = L + budget * share / total
            over = alloc > U
            if not over.any():
                u[b, free] = alloc
                break
            idx = np.flatnonzero(free)
            free[idx[over]] = False
    return u if arr.ndim > 1 else u[0]


def simulate_case1(cfg: SimulatorConfig) -> tuple[Dataset, Dataset, GroundTruthOracle]:
    """Daily prices -> responsive consumption; split at ``cfg.boundary`` days."""
    cfg.consumer.validate()
    rng = np.random.default_rng([cfg.seed, 11])
    prices = _case1_prices(rng, cfg.days, cfg.spike_prob)
    response = softmin_allocation(prices, cfg.consumer)
    feature_names = [f"price_{h:02d}" for h in range(24)]
    target_names = [f"load_{h:02d}" for h in range(24)]

    train = Dataset(prices[: cfg.boundary], response[: cfg.boundary], cfg.boundary,
                    feature_names, target_names)
    test = Dataset(prices[cfg.boundary :], response[cfg.boundary :], cfg.days - cfg.boundary,
                   feature_names, target_names)

    ref_rng = np.random.default_rng([cfg.seed, 999])
    ref_prices = _case1_prices(ref_rng, cfg.oracle_size, cfg.spike_prob)
    ref = Dataset(ref_prices, softmin_allocation(ref_prices, cfg.consumer), cfg.oracle_size,
                  feature_names, target_names)
    oracle = GroundTruthOracle(
        query=lambda x, _c=cfg.consumer: softmin_allocation(np.atleast_2d(x), _c)[0],
        reference=ref,
    )
    return train, test, oracle


# ---------------------------------------------------------------------------
# case 2: probabilistic price forecasting
# ---------------------------------------------------------------------------

_FEATURES = ("price", "load", "temperature", "wind", "solar", "gas")


def _case2_series(rng, hours: int, market: MarketParams, spike_prob: float) -> np.ndarray:
    """Hourly fundamentals and the price; columns follow ``_FEATURES``."""
    h = np.arange(hours)
    hod = h % 24
    doy = (h // 24) % 365

    temp = (
        12.0
        + 8.0 * np.sin(2.0 * np.pi * (doy - 170.0) / 365.0)
        + 5.0 * np.sin(2.0 * np.pi * (hod - 15.0) / 24.0)
        + _ar1(rng, hours, rho=0.95, sigma=0.9)
    )
    weekday = ((h // 24) % 7) < 5
    load = (
        27.0
        + 4.5 * np.sin(2.0 * np.pi * (hod - 18.0) / 24.0)
        + 1.8 * np.sin(4.0 * np.pi * (hod - 9.0) / 24.0)
        + 0.045 * (temp - 16.0) ** 2
        + 1.5 * weekday
        + _ar1(rng, hours, rho=0.9, sigma=0.8)
    )
    wind = 6.0 + _ar1(rng, hours, rho=0.97, sigma=0.7)
    wind = np.clip(wind, 0.0, 14.0)
    daylight = np.maximum(np.sin(np.pi * (hod - 6.0) / 12.0), 0.0)
    season = 0.75 + 0.25 * np.sin(2.0 * np.pi * (doy - 172.0) / 365.0)
    cloud = np.clip(0.75 + _ar1(rng, hours, rho=0.9, sigma=0.12), 0.25, 1.0)
    solar = 9.0 * daylight * season * cloud
    gas = 3.2 + 0.5 * np.sin(2.0 * np.pi * doy / 365.0 + 1.0) + _ar1(rng, hours, rho=0.995, sigma=0.02)

    net = load - wind - solar
    scarcity = np.maximum(net - market.congestion_knee, 0.0)
    sigma = market.noise_base + market.noise_scarcity * scarcity
    price = (
        market.base_price
        + market.load_coeff * net
        + market.congestion_coeff * scarcity**2
        + market.gas_coeff * gas
        + rng.normal(0.0, 1.0, hours) * sigma
    )
    spikes = rng.random(hours) < spike_prob
    price = price + spikes * rng.uniform(25.0, 110.0, hours)
    price = np.maximum(price, 0.5)
    return np.column_stack([price, load, temp, wind, solar, gas])


def _window_samples(series: np.ndarray, lags: int = 3):
    """Lagged windows (flattened, lag-major) -> next-hour price."""
    H = series.shape[0]
    n = H - lags
    feats = np.concatenate([series[k : k + n] for k in range(lags)], axis=1)
    targets = series[lags:, 0:1]
    return feats, targets


def case2_feature_names(lags: int = 3) -> list[str]:
    return [f"{name}_lag{lags - k}" for k in range(lags) for name in _FEATURES]


def _case2_price_mean(market: MarketParams, load, wind, solar, gas):
    net = load - wind - solar
    scarcity = max(net - market.congestion_knee, 0.0)
    return market.base_price + market.load_coeff * net + market.congestion_coeff * scarcity**2 + market.gas_coeff * gas


def simulate_case2(cfg: SimulatorConfig) -> tuple[Dataset, Dataset, GroundTruthOracle]:
    """Hourly market series -> lagged windows; 4320 train + 2160 test samples."""
    rng = np.random.default_rng([cfg.seed, 22])
    series = _case2_series(rng, cfg.hours, cfg.market, min(cfg.spike_prob, 0.015))
    feats, targets = _window_samples(series)
    names = case2_feature_names()
    n_train = cfg.train_samples
    train = Dataset(feats[:n_train], targets[:n_train], n_train, names, ["price_next"])
    test = Dataset(feats[n_train:], targets[n_train:], feats.shape[0] - n_train, names, ["price_next"])

    def query(x, _m=cfg.market):
        # noise-free one-step price under persistence of the last lag's state
        x = np.asarray(x, float).reshape(3, len(_FEATURES))
        _, load, _, wind, solar, gas = x[-1]
        return np.array([_case2_price_mean(_m, load, wind, solar, gas)])

    ref_rng = np.random.default_rng([cfg.seed, 998])
    ref_series = _case2_series(ref_rng, cfg.oracle_size + 3, cfg.market, min(cfg.spike_prob, 0.015))
    ref_feats, ref_targets = _window_samples(ref_series)
    ref = Dataset(ref_feats, ref_targets, ref_feats.shape[0], names, ["price_next"])
    oracle = GroundTruthOracle(query=query, reference=ref)
    return train, test, oracle
