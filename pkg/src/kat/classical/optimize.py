"""Unconstrained quasi-Newton and particle-swarm minimizers."""
from __future__ import annotations

import numpy as np

from ..errors import NonFiniteObjective


def _check_finite(value, where: str):
    if not np.all(np.isfinite(value)):
        raise NonFiniteObjective(f"non-finite value encountered in {where}")


def bfgs_minimize(f, grad, x0, gtol: float = 1e-8, max_iter: int = 500):
    """BFGS with backtracking Armijo line search.

    Stops when the gradient infinity-norm drops below ``gtol`` or after
    ``max_iter`` iterations. Returns (x, f(x), iterations).
    """
    x = np.asarray(x0, dtype=float).copy()
    n = x.shape[0]
    H = np.eye(n)
    fx = f(x)
    g = np.asarray(grad(x), dtype=float)
    _check_finite(fx, "objective")
    _check_finite(g, "gradient")
    it = 0
    while np.max(np.abs(g)) >= gtol and it < max_iter:
        p = -H @ g
        slope = g @ p
        if slope >= 0.0:  # H lost positive definiteness; restart on steepest descent
            H = np.eye(n)
            p = -g
            slope = g @ p
        alpha = 1.0
        for _ in range(60):
            x_new = x + alpha * p
            f_new = f(x_new)
            if np.isfinite(f_new) and f_new <= fx + 1e-4 * alpha * slope:
                break
            alpha *= 0.5
        else:
            break  # line search failed; accept current point
        g_new = np.asarray(grad(x_new), dtype=float)
        _check_finite(f_new, "objective")
        _check_finite(g_new, "gradient")
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12:
            rho = 1.0 / sy
            I = np.eye(n)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        x, fx, g = x_new, f_new, g_new
        it += 1
    return x, float(fx), it


def pso_minimize(
    f,
    lower,
    upper,
    seed: int,
    swarm_size: int = 40,
    iterations: int = 300,
    inertia: float = 0.729,
    cognitive: float = 1.49445,
    social: float = 1.49445,
    batch_f=None,
    warm_starts=None,
):
    """Global-best PSO with constriction coefficients and box clamping.

    ``batch_f``, when given, evaluates a (swarm, dim) matrix of positions in
    one call and returns a vector of objective values; otherwise ``f`` is
    called per particle. ``warm_starts`` rows replace the leading random
    particles. Fully reproducible under ``seed``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dim = lower.shape[0]
    rng = np.random.default_rng(seed)
    pos = rng.uniform(lower, upper, size=(swarm_size, dim))
    if warm_starts is not None:
        warm = np.clip(np.atleast_2d(np.asarray(warm_starts, dtype=float)), lower, upper)
        pos[: warm.shape[0]] = warm
    vel = np.zeros((swarm_size, dim))

    def evaluate(P):
        if batch_f is not None:
            vals = np.asarray(batch_f(P), dtype=float)
        else:
            vals = np.array([f(p) for p in P], dtype=float)
        _check_finite(vals, "PSO objective")
        return vals

    pbest = pos.copy()
    pbest_val = evaluate(pos)
    g_idx = int(np.argmin(pbest_val))
    gbest = pbest[g_idx].copy()
    gbest_val = float(pbest_val[g_idx])
    for _ in range(iterations):
        r1 = rng.random((swarm_size, dim))
        r2 = rng.random((swarm_size, dim))
        vel = inertia * vel + cognitive * r1 * (pbest - pos) + social * r2 * (gbest - pos)
        pos = np.clip(pos + vel, lower, upper)
        vals = evaluate(pos)
        improved = vals < pbest_val
        pbest[improved] = pos[improved]
        pbest_val[improved] = vals[improved]
        g_idx = int(np.argmin(pbest_val))
        if pbest_val[g_idx] < gbest_val:
            gbest = pbest[g_idx].copy()
            gbest_val = float(pbest_val[g_idx])
    return gbest, gbest_val
