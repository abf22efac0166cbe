"""Inverse-KKT calibration against brute-force active-set enumeration."""
import itertools

import numpy as np
import pytest

from kat.classical import CalibratedModel, DispatchLoad, predict_many
from kat.classical.kkt import (
    ACTIVE,
    MULT_ZERO,
    ComplementaritySystem,
    calibrate_inverse_kkt,
    kkt_branch_and_bound,
)
from kat.dataset import Dataset
from kat.errors import DimensionMismatch, TooManyPeriods


def enumerate_oracle(X, Y):
    """Exhaustive enumeration over all 2^(2*n*T) complementarity patterns.

    Every pattern's equality-constrained least squares is solved; the optimum
    is the smallest objective among patterns whose solution passes the KKT
    screening. Objectives are enumerated for all patterns; certificates are
    resolved in ascending objective order (equivalent and far cheaper).
    """
    system = ComplementaritySystem(X, Y)
    n, T = system.n, system.T
    per_cell = [
        {(0): MULT_ZERO},
    ]
    combos = [(MULT_ZERO, MULT_ZERO), (MULT_ZERO, ACTIVE), (ACTIVE, MULT_ZERO), (ACTIVE, ACTIVE)]
    cells = [(i, t) for i in range(n) for t in range(T)]
    solved = []
    for assignment in itertools.product(combos, repeat=len(cells)):
        pattern = {}
        for (i, t), (lo, up) in zip(cells, assignment):
            pattern[(i, t, 0)] = lo
            pattern[(i, t, 1)] = up
        obj, z = system.solve(pattern)
        solved.append((obj, pattern, z))
    solved.sort(key=lambda item: item[0])
    leaf_objs = [obj for obj, _, _ in solved if np.isfinite(obj)]
    for obj, pattern, z in solved:
        if not np.isfinite(obj):
            break
        if system.leaf_feasible(pattern, z):
            return obj, pattern, leaf_objs
    return np.inf, None, leaf_objs


def model_instance(n, T, seed, interior_rich=True):
    r = np.random.default_rng(seed)
    c = r.uniform(0.8, 1.5)
    w = r.uniform(28, 36, T)
    U = r.uniform(4.0, 5.0)
    E = 0.55 * T * U
    X = r.uniform(26, 34, (n, T))
    X[0, 0] = 8.0  # cheap hour: upper bound binds, identifying U
    if not interior_rich:
        X = r.uniform(10, 50, (n, T))
    kind = DispatchLoad(curvature=c, energy=E, upper=U, ramp=1e3, shape=w)
    Y = predict_many(CalibratedModel(kind, 0.0), X)
    return kind, X, Y


def random_instance(T, seed):
    """Random feasible allocations not generated by any particular model."""
    r = np.random.default_rng(seed)
    X = r.uniform(10, 50, (1, T))
    Y = r.uniform(0.0, 5.0, (1, T))
    return X, Y


def test_bnb_matches_exhaustive_on_random_instances():
    rng = np.random.default_rng(99)
    for trial in range(12):
        T = int(rng.integers(2, 5))
        X, Y = random_instance(T, 1000 + trial)
        fit = kkt_branch_and_bound(X, Y)
        oracle_obj, _, leaf_objs = enumerate_oracle(X, Y)
        assert abs(fit.objective - oracle_obj) < 1e-7
        # the returned optimum is <= every enumerated leaf objective
        assert all(fit.objective <= o + 1e-7 for o in leaf_objs)


def test_bnb_matches_exhaustive_on_model_instances():
    for trial in range(6):
        _, X, Y = model_instance(1, 4, seed=50 + trial)
        fit = kkt_branch_and_bound(X, Y)
        oracle_obj, _, _ = enumerate_oracle(X, Y)
        assert abs(fit.objective - oracle_obj) < 1e-7
        assert fit.objective < 1e-12


def test_self_consistency_recovers_parameters():
    kind, X, Y = model_instance(3, 5, seed=7)
    hd = Dataset(X, Y, n_historical=3)
    model = calibrate_inverse_kkt(DispatchLoad(shape=np.zeros(5), energy=1.0, upper=10.0), hd, periods=5)
    fitted = model.kind
    assert fitted.curvature == pytest.approx(kind.curvature, abs=1e-6)
    assert fitted.energy == pytest.approx(kind.energy, abs=1e-6)
    assert fitted.upper == pytest.approx(kind.upper, abs=1e-6)
    # shape identified up to a shared offset
    dm_fit = fitted.shape - fitted.shape.mean()
    dm_true = kind.shape - kind.shape.mean()
    assert np.abs(dm_fit - dm_true).max() < 1e-6
    assert model.error < 1e-10


def test_no_bound_active_reduces_to_single_leaf():
    r = np.random.default_rng(21)
    T, n = 4, 2
    kind = DispatchLoad(curvature=1.0, energy=8.0, upper=50.0, ramp=1e3, shape=r.uniform(29.5, 30.5, T))
    X = r.uniform(29.5, 30.5, (n, T))
    Y = predict_many(CalibratedModel(kind, 0.0), X)
    assert Y.min() > 1e-6 and Y.max() < 49.0  # interior everywhere
    fit = kkt_branch_and_bound(X, Y)
    all_interior = {(i, t, s): MULT_ZERO for i in range(n) for t in range(T) for s in (0, 1)}
    system = ComplementaritySystem(X, Y)
    obj, _ = system.solve(all_interior)
    assert abs(fit.objective - obj) < 1e-9
    assert fit.pattern == all_interior


def test_prune_log_only_on_bound_exceeding_incumbent():
    _, X, Y = model_instance(2, 4, seed=31)
    fit = kkt_branch_and_bound(X, Y)
    for bound, incumbent in fit.prune_log:
        assert bound >= incumbent - 1e-12


def test_leaf_kkt_conditions_hold_at_optimum():
    kind, X, Y = model_instance(2, 5, seed=13)
    fit = kkt_branch_and_bound(X, Y)
    tol = 1e-7
    u, a, d, b = fit.u, fit.a, fit.d, fit.b
    U = fit.upper if fit.upper is not None else u.max()
    for i in range(X.shape[0]):
        assert abs(u[i].sum() - fit.energy) < tol  # primal equality
        for t in range(X.shape[1]):
            lo, up = fit.pattern[(i, t, 0)], fit.pattern[(i, t, 1)]
            stat = a[t] - d * X[i, t] - b[i]
            if lo == MULT_ZERO and up == MULT_ZERO:
                assert abs(u[i, t] - stat) < tol          # stationarity
                assert -tol <= u[i, t] <= U + tol          # primal bounds
            elif lo == ACTIVE:
                assert abs(u[i, t]) < tol                  # complementary slackness
                assert -stat >= -tol                       # dual nonnegativity
            elif up == ACTIVE:
                assert abs(u[i, t] - U) < tol
                assert stat - U >= -tol


def test_calibrated_error_recompute():
    _, X, Y = model_instance(2, 4, seed=17)
    hd = Dataset(X, Y, n_historical=2)
    model = calibrate_inverse_kkt(DispatchLoad(shape=np.zeros(4), energy=1.0, upper=10.0), hd, periods=4)
    preds = predict_many(model, X)
    assert np.mean((preds - Y) ** 2) == pytest.approx(model.error, abs=1e-15)


def test_period_and_dimension_guards():
    hd = Dataset(np.ones((2, 13)), np.ones((2, 13)), 2)
    with pytest.raises(TooManyPeriods):
        calibrate_inverse_kkt(DispatchLoad(shape=np.zeros(13), energy=1.0, upper=10.0), hd, periods=13)
    hd6 = Dataset(np.ones((2, 6)), np.ones((2, 6)), 2)
    with pytest.raises(DimensionMismatch):
        calibrate_inverse_kkt(DispatchLoad(shape=np.zeros(4), energy=1.0, upper=10.0), hd6, periods=4)
