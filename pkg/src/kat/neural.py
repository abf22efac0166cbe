"""Minimal neural-network engine on numpy.

Supports dense and simple recurrent (Elman) layers with dropout, MSE and
pinball losses, exact backpropagation, and bias-corrected Adam updates.
Parameters live in one flat float64 vector with per-layer views, so the whole
network state can be checkpointed, diffed, and finite-difference checked.

Conventions:
  * dense inputs are (d,) or (batch, d); recurrent inputs are windows
    (unroll, d), (batch, unroll, d), or the flattened equivalents
  * recurrent layers come first (optionally interleaved with dropout); the
    first dense layer afterwards consumes the final hidden state
  * losses average over every (sample, output component) pair
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyInput, ParamsFormatError


class Activation(Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def _act(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _act_grad(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind is Activation.RELU:
        return (z > 0.0).astype(float)
    if kind is Activation.TANH:
        return 1.0 - a * a
    if kind is Activation.SIGMOID:
        return a * (1.0 - a)
    return np.ones_like(z)


# ---------------------------------------------------------------------------
# layer and loss descriptors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dense:
    in_dim: int
    out_dim: int
    activation: Activation = Activation.IDENTITY


@dataclass(frozen=True)
class Recurrent:
    units: int
    activation: Activation = Activation.TANH
    unroll: int = 1


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class MSE:
    pass


@dataclass(frozen=True)
class Pinball:
    q: float

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise DimensionMismatch(f"pinball quantile must be in (0,1), got {self.q}")


Loss = MSE | Pinball
Layer = Dense | Recurrent | Dropout


@dataclass(frozen=True)
class NetworkSpec:
    """Layer architecture plus the training loss.

    ``input_dim`` is the per-step feature width for recurrent networks and the
    full feature width for dense networks.
    """

    input_dim: int
    layers: tuple
    loss: Loss = MSE()

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_dim < 1:
            raise DimensionMismatch("input_dim must be >= 1")
        width = self.input_dim
        seen_dense = False
        unroll = None
        for layer in self.layers:
            if isinstance(layer, Recurrent):
                if seen_dense:
                    raise DimensionMismatch("recurrent layers must precede dense layers")
                if layer.unroll < 1:
                    raise DimensionMismatch("recurrent unroll must be >= 1")
                if unroll is not None and layer.unroll != unroll:
                    raise DimensionMismatch("all recurrent layers must share one unroll")
                unroll = layer.unroll
                width = layer.units
            elif isinstance(layer, Dense):
                seen_dense = True
                if layer.in_dim != width:
                    raise DimensionMismatch(
                        f"dense in_dim {layer.in_dim} incompatible with incoming width {width}"
                    )
                width = layer.out_dim
            elif isinstance(layer, Dropout):
                if not (0.0 <= layer.rate < 1.0):
                    raise DimensionMismatch("dropout rate must be in [0, 1)")
            else:
                raise DimensionMismatch(f"unknown layer descriptor {layer!r}")

    @property
    def unroll(self) -> int | None:
        for layer in self.layers:
            if isinstance(layer, Recurrent):
                return layer.unroll
        return None

    @property
    def is_recurrent(self) -> bool:
        return self.unroll is not None

    @property
    def flat_input_dim(self) -> int:
        return self.input_dim * (self.unroll or 1)

    @property
    def output_dim(self) -> int:
        width = self.input_dim
        for layer in self.layers:
            if isinstance(layer, Recurrent):
                width = layer.units
            elif isinstance(layer, Dense):
                width = layer.out_dim
        return width

    @property
    def has_dropout(self) -> bool:
        return any(isinstance(l, Dropout) for l in self.layers)

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s in param_shapes(self))


def param_shapes(spec: NetworkSpec) -> list[tuple[str, tuple]]:
    """Flat parameter layout: (name, shape) per array, in layer order."""
    shapes = []
    width = spec.input_dim
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Recurrent):
            shapes.append((f"l{i}.wx", (width, layer.units)))
            shapes.append((f"l{i}.wh", (layer.units, layer.units)))
            shapes.append((f"l{i}.b", (layer.units,)))
            width = layer.units
        elif isinstance(layer, Dense):
            shapes.append((f"l{i}.w", (layer.in_dim, layer.out_dim)))
            shapes.append((f"l{i}.b", (layer.out_dim,)))
            width = layer.out_dim
    return shapes


def spec_hash(spec: NetworkSpec) -> int:
    """Stable 64-bit fingerprint of the architecture and loss."""
    parts = [f"in={spec.input_dim}"]
    for layer in spec.layers:
        if isinstance(layer, Dense):
            parts.append(f"dense:{layer.in_dim}:{layer.out_dim}:{layer.activation.value}")
        elif isinstance(layer, Recurrent):
            parts.append(f"recurrent:{layer.units}:{layer.activation.value}:{layer.unroll}")
        else:
            parts.append(f"dropout:{layer.rate!r}")
    if isinstance(spec.loss, Pinball):
        parts.append(f"pinball:{spec.loss.q!r}")
    else:
        parts.append("mse")
    digest = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return struct.unpack("<Q", digest[:8])[0]


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkParams:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.ascontiguousarray(self.theta, dtype=float)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if not np.isfinite(theta).all():
            raise DimensionMismatch("parameter vector contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


def param_views(spec: NetworkSpec, theta: np.ndarray) -> dict[str, np.ndarray]:
    views = {}
    offset = 0
    for name, shape in param_shapes(spec):
        size = int(np.prod(shape))
        views[name] = theta[offset : offset + size].reshape(shape)
        offset += size
    if offset != theta.shape[0]:
        raise DimensionMismatch(f"theta length {theta.shape[0]} != spec parameter count {offset}")
    return views


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    chunks = []
    for name, shape in param_shapes(spec):
        if name.endswith(".b"):
            chunks.append(np.zeros(shape))
        else:
            fan_in, fan_out = shape
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-bound, bound, size=shape).ravel())
    theta = np.concatenate([c.ravel() for c in chunks]) if chunks else np.zeros(0)
    return NetworkParams(theta)


# ---------------------------------------------------------------------------
# evaluation modes
# ---------------------------------------------------------------------------

@dataclass
class Train:
    """Training mode, carrying the random source used for dropout masks."""

    rng: np.random.Generator


class Eval:
    """Deterministic evaluation mode (dropout disabled)."""


EVAL = Eval()


def _shape_input(spec: NetworkSpec, x) -> tuple[np.ndarray, bool]:
    """Normalize input to (batch, d) or (batch, unroll, d); report if batched."""
    x = np.asarray(x, dtype=float)
    if not spec.is_recurrent:
        if x.ndim == 1:
            x = x[None, :]
            batched = False
        elif x.ndim == 2:
            batched = True
        else:
            raise DimensionMismatch(f"dense network input must be 1-D or 2-D, got {x.ndim}-D")
        if x.shape[1] != spec.input_dim:
            raise DimensionMismatch(f"input width {x.shape[1]} != spec input_dim {spec.input_dim}")
        return x, batched
    T, d = spec.unroll, spec.input_dim
    if x.ndim == 1:
        if x.shape[0] != T * d:
            raise DimensionMismatch(f"window length {x.shape[0]} != unroll*input_dim {T * d}")
        return x.reshape(1, T, d), False
    if x.ndim == 2:
        if x.shape == (T, d):
            return x[None, :, :], False
        if x.shape[1] == T * d:
            return x.reshape(-1, T, d), True
        raise DimensionMismatch(f"cannot interpret window shape {x.shape}")
    if x.ndim == 3:
        if x.shape[1:] != (T, d):
            raise DimensionMismatch(f"window shape {x.shape[1:]} != ({T}, {d})")
        return x, True
    raise DimensionMismatch(f"recurrent input must be 1-D..3-D, got {x.ndim}-D")


def _forward_pass(spec: NetworkSpec, theta: np.ndarray, X: np.ndarray, rng) -> tuple[np.ndarray, list]:
    """Run the network on (B, ...) input; return output (B, out) and caches."""
    views = param_views(spec, theta)
    caches = []
    a = X  # (B, d) or (B, T, d)
    sequence = spec.is_recurrent
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Recurrent):
            wx, wh, b = views[f"l{i}.wx"], views[f"l{i}.wh"], views[f"l{i}.b"]
            B, T, _ = a.shape
            zs = np.empty((B, T, layer.units))
            hs = np.empty((B, T, layer.units))
            h = np.zeros((B, layer.units))
            for t in range(T):
                z = a[:, t, :] @ wx + h @ wh + b
                h = _act(layer.activation, z)
                zs[:, t, :] = z
                hs[:, t, :] = h
            caches.append(("recurrent", i, a, zs, hs))
            a = hs
        elif isinstance(layer, Dense):
            if sequence:
                a = a[:, -1, :]  # dense head consumes the final hidden state
                sequence = False
                caches.append(("collapse", i, None))
            w, b = views[f"l{i}.w"], views[f"l{i}.b"]
            z = a @ w + b
            out = _act(layer.activation, z)
            caches.append(("dense", i, a, z, out))
            a = out
        else:  # Dropout
            if rng is None:
                caches.append(("dropout_eval", i, None))
            else:
                keep = 1.0 - layer.rate
                mask = (rng.random(a.shape) < keep).astype(float) / keep
                a = a * mask
                caches.append(("dropout", i, mask))
    if sequence:
        a = a[:, -1, :]
        caches.append(("collapse", len(spec.layers), None))
    return a, caches


def forward(spec: NetworkSpec, params: NetworkParams, x, mode=EVAL) -> np.ndarray:
    """Evaluate the network. Eval mode is pure; Train mode applies inverted dropout."""
    X, batched = _shape_input(spec, x)
    rng = mode.rng if isinstance(mode, Train) else None
    out, _ = _forward_pass(spec, params.theta, X, rng)
    return out if batched else out[0]


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss(kind: Loss, preds, ys) -> float:
    """Mean loss over every (sample, component) pair."""
    preds = np.atleast_2d(np.asarray(preds, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    if preds.shape != ys.shape:
        raise DimensionMismatch(f"prediction shape {preds.shape} != target shape {ys.shape}")
    if preds.size == 0:
        raise EmptyInput("loss of zero samples is undefined")
    if isinstance(kind, Pinball):
        r = ys - preds
        return float(np.mean(kind.q * np.maximum(r, 0.0) + (1.0 - kind.q) * np.maximum(-r, 0.0)))
    return float(np.mean((preds - ys) ** 2))


def _loss_grad(kind: Loss, preds: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if isinstance(kind, Pinball):
        r = ys - preds
        # subgradient convention: residual exactly 0 uses the -q branch
        g = np.where(r >= 0.0, -kind.q, 1.0 - kind.q)
        return g / preds.size
    return 2.0 * (preds - ys) / preds.size


# ---------------------------------------------------------------------------
# backpropagation
# ---------------------------------------------------------------------------

def _backward_pass(spec: NetworkSpec, theta: np.ndarray, caches: list, d_out: np.ndarray) -> np.ndarray:
    views = param_views(spec, theta)
    grads = {name: np.zeros(shape) for name, shape in param_shapes(spec)}
    d = d_out
    for entry in reversed(caches):
        tag = entry[0]
        if tag == "dense":
            _, i, a_in, z, out = entry
            layer = spec.layers[i]
            dz = d * _act_grad(layer.activation, z, out)
            grads[f"l{i}.w"] += a_in.T @ dz
            grads[f"l{i}.b"] += dz.sum(axis=0)
            d = dz @ views[f"l{i}.w"].T
        elif tag == "dropout":
            _, i, mask = entry
            d = d * mask
        elif tag == "dropout_eval":
            pass
        elif tag == "collapse":
            # expand the vector gradient back to the sequence's last step
            B, O = d.shape
            T = spec.unroll
            d_seq = np.zeros((B, T, O))
            d_seq[:, -1, :] = d
            d = d_seq
        elif tag == "recurrent":
            _, i, a_in, zs, hs = entry
            layer = spec.layers[i]
            wx, wh = views[f"l{i}.wx"], views[f"l{i}.wh"]
            B, T, _ = a_in.shape
            d_in = np.zeros_like(a_in)
            dh_next = np.zeros((B, layer.units))
            g_wx = grads[f"l{i}.wx"]
            g_wh = grads[f"l{i}.wh"]
            g_b = grads[f"l{i}.b"]
            for t in range(T - 1, -1, -1):
                dh = d[:, t, :] + dh_next
                dz = dh * _act_grad(layer.activation, zs[:, t, :], hs[:, t, :])
                g_wx += a_in[:, t, :].T @ dz
                g_b += dz.sum(axis=0)
                if t > 0:
                    g_wh += hs[:, t - 1, :].T @ dz
                d_in[:, t, :] = dz @ wx.T
                dh_next = dz @ wh.T
            d = d_in
    flat = [grads[name].ravel() for name, _ in param_shapes(spec)]
    return np.concatenate(flat) if flat else np.zeros(0)


def loss_and_grad(spec: NetworkSpec, params: NetworkParams, X, Y, kind: Loss | None = None, mode=EVAL):
    """Batch-mean loss and its gradient with respect to theta."""
    kind = kind or spec.loss
    Xb, _ = _shape_input(spec, X)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        if Y.size % Xb.shape[0]:
            raise DimensionMismatch(f"target length {Y.size} incompatible with batch {Xb.shape[0]}")
        Y = Y.reshape(Xb.shape[0], -1)
    if Y.shape[0] != Xb.shape[0]:
        raise DimensionMismatch(f"batch size mismatch: {Xb.shape[0]} inputs vs {Y.shape[0]} targets")
    if Xb.shape[0] == 0:
        raise EmptyInput("cannot take gradient on an empty batch")
    rng = mode.rng if isinstance(mode, Train) else None
    out, caches = _forward_pass(spec, params.theta, Xb, rng)
    if out.shape != Y.shape:
        raise DimensionMismatch(f"output shape {out.shape} != target shape {Y.shape}")
    value = loss(kind, out, Y)
    d_out = _loss_grad(kind, out, Y)
    grad = _backward_pass(spec, params.theta, caches, d_out)
    return value, grad


def backward(spec: NetworkSpec, params: NetworkParams, batch, kind: Loss | None = None, mode=EVAL) -> np.ndarray:
    """Gradient of the batch-mean loss; ``batch`` is a MiniBatch or (X, Y) pair."""
    if hasattr(batch, "features") and hasattr(batch, "targets"):
        X, Y = batch.features, batch.targets
    else:
        X, Y = batch
    _, grad = loss_and_grad(spec, params, X, Y, kind, mode)
    return grad


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, dim: int, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        return cls(np.zeros(dim), np.zeros(dim), 0, beta1, beta2, epsilon)


def adam_step(params: NetworkParams, grad: np.ndarray, state: AdamState, s: float):
    """One bias-corrected Adam update with step size ``s``."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.theta.shape:
        raise DimensionMismatch(f"gradient dim {grad.shape} != theta dim {params.theta.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = params.theta - s * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return NetworkParams(theta), AdamState(m, v, t, state.beta1, state.beta2, state.epsilon)


# ---------------------------------------------------------------------------
# persistence: magic "KATP", u32 version, u64 spec hash, float64 theta (LE)
# ---------------------------------------------------------------------------

_MAGIC = b"KATP"
_VERSION = 1


def save_params(path, spec: NetworkSpec, params: NetworkParams) -> None:
    with Path(path).open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", spec_hash(spec)))
        fh.write(params.theta.astype("<f8").tobytes())


def load_params(path, spec: NetworkSpec) -> NetworkParams:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != _MAGIC:
        raise ParamsFormatError(f"{path}: not a KATP parameter file")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != _VERSION:
        raise ParamsFormatError(f"{path}: unsupported format version {version}")
    stored_hash = struct.unpack("<Q", raw[8:16])[0]
    if stored_hash != spec_hash(spec):
        raise ParamsFormatError(f"{path}: parameter file was saved for a different network spec")
    theta = np.frombuffer(raw[16:], dtype="<f8").astype(float)
    if theta.shape[0] != spec.param_count():
        raise ParamsFormatError(
            f"{path}: {theta.shape[0]} parameters stored, spec implies {spec.param_count()}"
        )
    return NetworkParams(theta)
