"""Exact inverse calibration of the dispatch model via complementarity
branch-and-bound.

The inner model allocates consumption u over T periods:

    max sum_t (w_t u_t - c/2 u_t^2 - p_t u_t)   s.t. sum u = E, 0 <= u <= U.

Observing allocations y_i for prices x_i, calibration fits (c, w, E, U) so the
model's optimal decisions match the observations. Embedding the inner KKT
conditions and substituting a = w/c, d = 1/c, b_i = lambda_i/c makes every
condition linear in the unknowns:

    stationarity (interior):  u_{it} = a_t - d x_{it} - b_i
    bounds:                   u_{it} = 0 (lower active) or u_{it} = U (upper)
    energy:                   sum_t u_{it} = E

Each (sample, period) contributes two complementarity pairs (lower and upper
bound). The solver branches every pair into {multiplier = 0} vs {constraint
active}; a fully decided pattern is an equality-constrained least-squares
problem (with the concavity constraint d >= 0 enforced exactly by a boundary
re-solve) whose solution is screened for primal feasibility, dual
nonnegativity, and complementary slackness within tolerance 1e-7. Dual
nonnegativity is an existence question over the underdetermined potentials
(a, b, d): a small linear feasibility program decides it exactly. Nodes are
pruned only when the node relaxation (the same system with just the decided
rows) already meets or exceeds the incumbent objective.

The shape coefficients w are identified only up to a shared offset (adding a
constant to every w_t shifts every lambda_i equally); the gauge is fixed by
b_0 = 0, and gauge-invariant quantities (c, E, U, demeaned w) are exact.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linprog

from ..dataset import Dataset
from ..errors import (
    DimensionMismatch,
    EmptyDataset,
    InfeasibleAtAllLeaves,
    NumericalError,
    TooManyPeriods,
)
from .models import CalibratedModel, DispatchLoad, training_mse

MULT_ZERO = 0
ACTIVE = 1

_FEAS_TOL = 1e-7


@dataclass
class ComplementaritySystem:
    """Stacked KKT system for all samples, sharing (a, d, U, E) and gauge b_0=0.

    Unknown vector layout: [u (n*T) | a (T) | d | b (n) | U | E].
    """

    X: np.ndarray  # prices, (n, T)
    Y: np.ndarray  # observed allocations, (n, T)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape != self.Y.shape:
            raise DimensionMismatch(f"price shape {self.X.shape} != allocation shape {self.Y.shape}")
        self.n, self.T = self.X.shape
        self.nz = self.n * self.T + self.T + 1 + self.n + 2
        self.pairs = [(i, t, side) for i in range(self.n) for t in range(self.T) for side in (0, 1)]

    # index helpers ---------------------------------------------------------
    def iu(self, i, t):
        return i * self.T + t

    @property
    def ia(self):
        return self.n * self.T

    @property
    def id_(self):
        return self.n * self.T + self.T

    @property
    def ib(self):
        return self.n * self.T + self.T + 1

    @property
    def iU(self):
        return self.ib + self.n

    @property
    def iE(self):
        return self.iU + 1

    # system assembly -------------------------------------------------------
    def _rows(self, pattern: dict, pin_d_zero: bool = False):
        rows, rhs = [], []

        def row():
            rows.append(np.zeros(self.nz))
            rhs.append(0.0)
            return rows[-1]

        for i in range(self.n):
            for t in range(self.T):
                lo = pattern.get((i, t, 0))
                up = pattern.get((i, t, 1))
                if lo == ACTIVE:
                    row()[self.iu(i, t)] = 1.0
                if up == ACTIVE:
                    r = row()
                    r[self.iu(i, t)] = 1.0
                    r[self.iU] = -1.0
                if lo == MULT_ZERO and up == MULT_ZERO:
                    r = row()
                    r[self.iu(i, t)] = 1.0
                    r[self.ia + t] = -1.0
                    r[self.id_] = self.X[i, t]
                    r[self.ib + i] = 1.0
            r = row()
            r[self.iu(i, 0) : self.iu(i, 0) + self.T] = 1.0
            r[self.iE] = -1.0
        r = row()
        r[self.ib] = 1.0  # gauge: b_0 = 0
        if pin_d_zero:
            row()[self.id_] = 1.0
        return np.asarray(rows), np.asarray(rhs)

    def _solve_rows(self, C: np.ndarray, g: np.ndarray):
        m = C.shape[0]
        M = np.zeros((self.nz + m, self.nz + m))
        nuT = self.n * self.T
        M[:nuT, :nuT] = 2.0 * np.eye(nuT)
        M[: self.nz, self.nz :] = C.T
        M[self.nz :, : self.nz] = C
        rhs = np.concatenate([2.0 * self.Y.ravel(), np.zeros(self.nz - nuT), g])
        sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        z = sol[: self.nz]
        scale = max(1.0, float(np.abs(self.Y).max()))
        if np.abs(C @ z - g).max(initial=0.0) > 1e-8 * scale:
            return np.inf, None
        u = z[:nuT]
        obj = float(((u - self.Y.ravel()) ** 2).sum())
        return obj, z

    def solve(self, pattern: dict):
        """Least squares min ||u - y||^2 subject to the decided rows and d >= 0.

        A negative minimum-norm curvature is resolved exactly by re-solving on
        the boundary d = 0 (single linear inequality on a convex problem).
        Returns (objective, z); (inf, None) marks an inconsistent system.
        """
        obj, z = self._solve_rows(*self._rows(pattern))
        if z is not None and z[self.id_] < 0.0:
            obj, z = self._solve_rows(*self._rows(pattern, pin_d_zero=True))
        return obj, z

    def parts(self, z: np.ndarray):
        nuT = self.n * self.T
        return {
            "u": z[:nuT].reshape(self.n, self.T),
            "a": z[self.ia : self.ia + self.T],
            "d": float(z[self.id_]),
            "b": z[self.ib : self.ib + self.n],
            "U": float(z[self.iU]),
            "E": float(z[self.iE]),
        }

    def leaf_feasible(self, pattern: dict, z: np.ndarray, tol: float = _FEAS_TOL) -> bool:
        """Primal feasibility, dual nonnegativity, complementary slackness.

        Primal bounds are checked on the (unique) allocation directly. Dual
        nonnegativity must hold for SOME potentials (a, b) and curvature
        d >= 0 consistent with the interior stationarity rows; that existence
        question is a small linear program in (a, b, d), decided exactly.
        """
        p = self.parts(z)
        u, U = p["u"], p["U"]
        upper_pinned = any(
            pattern.get((i, t, 1)) == ACTIVE for i in range(self.n) for t in range(self.T)
        )
        U_eff = U if upper_pinned else max(float(u.max(initial=0.0)), 0.0)
        if upper_pinned and U < -tol:
            return False
        # LP variables: [a (T) | b (n) | d]; rows: s_{it} = a_t - d x_{it} - b_i
        nv = self.T + self.n + 1
        rows_ub, rhs_ub = [], []

        def s_row(i, t, sign):
            r = np.zeros(nv)
            r[t] = sign
            r[self.T + i] = -sign
            r[-1] = -sign * self.X[i, t]
            return r

        for i in range(self.n):
            for t in range(self.T):
                lo, up = pattern[(i, t, 0)], pattern[(i, t, 1)]
                if lo == ACTIVE and up == ACTIVE:
                    # u pinned to both 0 and U; consistent only when U ~ 0,
                    # and the multiplier difference is then unconstrained
                    if abs(u[i, t]) > tol or abs(u[i, t] - U) > tol:
                        return False
                elif lo == ACTIVE:
                    if abs(u[i, t]) > tol:
                        return False
                    rows_ub.append(s_row(i, t, +1.0))  # s <= 0: mu/c = -s >= 0
                    rhs_ub.append(tol)
                elif up == ACTIVE:
                    if abs(u[i, t] - U) > tol:
                        return False
                    rows_ub.append(s_row(i, t, -1.0))  # s >= U: nu/c = s - U >= 0
                    rhs_ub.append(-(U_eff - tol))
                else:
                    if u[i, t] < -tol or u[i, t] > U_eff + tol:
                        return False
                    rows_ub.append(s_row(i, t, +1.0))  # s = u within +-tol
                    rhs_ub.append(u[i, t] + tol)
                    rows_ub.append(s_row(i, t, -1.0))
                    rhs_ub.append(-(u[i, t] - tol))
        if not rows_ub:
            return True
        res = linprog(
            c=np.zeros(nv),
            A_ub=np.asarray(rows_ub),
            b_ub=np.asarray(rhs_ub),
            bounds=[(None, None)] * (self.T + self.n) + [(0.0, None)],
            method="highs",
        )
        return res.status == 0


@dataclass(frozen=True)
class KKTFitResult:
    objective: float          # sum of squared residuals at the best leaf
    mse: float                # objective / (n*T)
    pattern: dict
    u: np.ndarray
    a: np.ndarray
    d: float
    b: np.ndarray
    upper: float | None       # None when no upper bound was active
    energy: float
    nodes_explored: int
    leaves_checked: int
    prune_log: tuple          # (node_bound, incumbent_at_prune) pairs


def kkt_branch_and_bound(X, Y, max_nodes: int = 1_000_000) -> KKTFitResult:
    """Globally optimal calibration fit over the complementarity tree."""
    system = ComplementaritySystem(X, Y)
    pairs = system.pairs
    y_abs_max = float(np.abs(system.Y).max())
    hint_tol = 1e-6 * max(1.0, y_abs_max)

    best = {"obj": np.inf, "z": None, "pattern": None, "actives": np.inf}
    stats = {"nodes": 0, "leaves": 0, "prunes": []}
    tie_tol = 1e-12

    def child_order(idx: int):
        i, t, side = pairs[idx]
        y = system.Y[i, t]
        if side == 0:
            likely_active = abs(y) <= hint_tol
        else:
            likely_active = y >= y_abs_max - hint_tol
        return (ACTIVE, MULT_ZERO) if likely_active else (MULT_ZERO, ACTIVE)

    def visit(pattern: dict, idx: int, bound: float, need_solve: bool):
        if stats["nodes"] >= max_nodes:
            raise NumericalError(f"KKT branch-and-bound exceeded {max_nodes} nodes")
        stats["nodes"] += 1
        z = None
        at_leaf = idx == len(pairs)
        if need_solve or at_leaf:
            obj, z = system.solve(pattern)
            bound = max(bound, obj)
        # ties stay open so that equal-objective leaves with fewer active
        # constraints (the less-degenerate model) can replace the incumbent
        if bound > best["obj"] + tie_tol:
            stats["prunes"].append((bound, best["obj"]))
            return
        if at_leaf:
            stats["leaves"] += 1
            actives = sum(1 for v in pattern.values() if v == ACTIVE)
            better = bound < best["obj"] - tie_tol or (
                bound <= best["obj"] + tie_tol and actives < best["actives"]
            )
            if better and z is not None and system.leaf_feasible(pattern, z):
                best["obj"] = min(bound, best["obj"])
                best["z"] = z
                best["pattern"] = dict(pattern)
                best["actives"] = actives
            return
        for decision in child_order(idx):
            pattern[pairs[idx]] = decision
            # a MULT_ZERO branch adds rows only once its partner is also
            # decided MULT_ZERO; skip the re-solve when nothing changed
            i, t, side = pairs[idx]
            partner = pattern.get((i, t, 1 - side))
            adds_rows = decision == ACTIVE or partner == MULT_ZERO
            visit(pattern, idx + 1, bound, adds_rows)
            del pattern[pairs[idx]]

    visit({}, 0, 0.0, True)
    if best["z"] is None:
        raise InfeasibleAtAllLeaves("no complementarity pattern yields a feasible KKT solution")
    parts = system.parts(best["z"])
    upper_pinned = any(v == ACTIVE for (i, t, s), v in best["pattern"].items() if s == 1)
    return KKTFitResult(
        objective=best["obj"],
        mse=best["obj"] / (system.n * system.T),
        pattern=best["pattern"],
        u=parts["u"],
        a=parts["a"],
        d=max(parts["d"], 0.0),
        b=parts["b"],
        upper=parts["U"] if upper_pinned else None,
        energy=parts["E"],
        nodes_explored=stats["nodes"],
        leaves_checked=stats["leaves"],
        prune_log=tuple(stats["prunes"]),
    )


def leaf_least_squares(X, Y, pattern: dict):
    """Solve one fully decided pattern; exposed for oracles and diagnostics."""
    system = ComplementaritySystem(X, Y)
    obj, z = system.solve(pattern)
    feasible = z is not None and system.leaf_feasible(pattern, z)
    return obj, (None if z is None else system.parts(z)), feasible


def calibrate_inverse_kkt(kind: DispatchLoad, hd: Dataset, periods: int) -> CalibratedModel:
    """Exact inverse-optimization calibration of a DispatchLoad model.

    ``hd`` features are per-period price vectors and targets the observed
    allocations, both of width ``periods`` (at most 12; the exact tree search
    is exponential in sample count times periods).
    """
    if len(hd) == 0:
        raise EmptyDataset("cannot calibrate on an empty dataset")
    if periods > 12:
        raise TooManyPeriods(f"exact solver bound is 12 periods, got {periods}")
    if hd.feature_dim != periods or hd.target_dim != periods:
        raise DimensionMismatch(
            f"expected {periods}-period price/allocation vectors, "
            f"got ({hd.feature_dim}, {hd.target_dim})"
        )
    fit = kkt_branch_and_bound(hd.features, hd.targets)
    if fit.d > 1e-9:
        curvature = 1.0 / fit.d
        shape = fit.a * curvature
    else:  # curvature not identified (no interior stationarity rows)
        curvature = kind.curvature
        if kind.shape is not None and len(kind.shape) == periods:
            shape = np.asarray(kind.shape)
        else:
            shape = np.zeros(periods)
    upper = fit.upper if fit.upper is not None else max(kind.upper, float(fit.u.max()))
    fitted = replace(
        kind,
        curvature=float(curvature),
        energy=float(fit.energy),
        upper=float(upper),
        shape=shape,
    )
    model = CalibratedModel(fitted, 0.0)
    return CalibratedModel(fitted, training_mse(model, hd))
