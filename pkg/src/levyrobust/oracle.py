"""Exhaustive one-period scenario markets: a brute-force check of the duality theory.

Everything here is a max/min over explicit grids; no optimizer is involved.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .utility import UtilitySpec

MAX_OUTCOMES = 6


def simplex_points(m: int, r: int) -> np.ndarray:
    """All probability vectors in dimension ``m`` with coordinates in ``{0, 1/r, ..., 1}``."""
    if m < 1 or r < 1:
        raise ValueError("need m >= 1 and r >= 1")
    # stars and bars: choose m-1 bar positions among r+m-1 slots
    rows = []
    for bars in itertools.combinations(range(r + m - 1), m - 1):
        edges = (-1,) + bars + (r + m - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(m)])
    return np.array(rows, dtype=float) / r


@dataclass(frozen=True, eq=False)
class SimplexGrid:
    m: int
    resolution: int
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "points", simplex_points(self.m, self.resolution))

    def __len__(self) -> int:
        return self.points.shape[0]


def _penalty_values(table: Callable, points: np.ndarray) -> np.ndarray:
    return np.array([float(table(q)) for q in points])


@dataclass(frozen=True, eq=False)
class FiniteMarket:
    p_ref: np.ndarray
    s0: float
    s_T: np.ndarray
    penalty_table: Callable
    outcomes: tuple = ()
    check_resolution: int = 20

    def __post_init__(self):
        p = np.asarray(self.p_ref, dtype=float)
        s = np.asarray(self.s_T, dtype=float)
        if p.ndim != 1 or not 1 <= p.size <= MAX_OUTCOMES:
            raise ValueError(f"need between 1 and {MAX_OUTCOMES} outcomes")
        if s.shape != p.shape:
            raise ValueError("s_T needs one value per outcome")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("p_ref must be strictly positive and sum to 1")
        if not self.s0 > 0 or np.any(s <= 0):
            raise ValueError("prices must be positive")
        object.__setattr__(self, "p_ref", p)
        object.__setattr__(self, "s_T", s)
        if not self.outcomes:
            object.__setattr__(self, "outcomes", tuple(f"w{i}" for i in range(p.size)))

    @property
    def m(self) -> int:
        return self.p_ref.size

    @property
    def returns(self) -> np.ndarray:
        return self.s_T / self.s0 - 1.0

    def penalty(self, points: np.ndarray) -> np.ndarray:
        return _penalty_values(self.penalty_table, np.atleast_2d(points))

    def validation(self) -> dict:
        """Penalty vanishes at ``p_ref`` and passes a midpoint convexity spot-check."""
        at_ref = float(self.penalty_table(self.p_ref))
        pts = simplex_points(self.m, self.check_resolution)
        vals = self.penalty(pts)
        i, j = np.triu_indices(len(pts), 1)
        mid = self.penalty(0.5 * (pts[i] + pts[j]))
        with np.errstate(invalid="ignore"):
            chord = 0.5 * (vals[i] + vals[j])
            convex = bool(np.all(~(mid > chord + 1e-12 * np.maximum(1.0, np.abs(chord)))))
        return {"penalty_at_p_ref": at_ref, "normalized": abs(at_ref) <= 1e-12, "convex": convex}

    def elmm_extreme_points(self) -> np.ndarray:
        """Vertices of ``{q >= 0, sum q = 1, E_q[R] = 0}``."""
        R = self.returns
        out = [np.eye(self.m)[k] for k in range(self.m) if R[k] == 0.0]
        for i in range(self.m):
            for j in range(self.m):
                if R[i] > 0 > R[j]:
                    q = np.zeros(self.m)
                    q[i] = -R[j] / (R[i] - R[j])
                    q[j] = R[i] / (R[i] - R[j])
                    out.append(q)
        if not out:
            raise ValueError("market admits no martingale measure (arbitrage)")
        return np.array(out)

    def elmm_grid(self, resolution: int = 10) -> np.ndarray:
        """Convex combinations of the ELMM vertices on a simplex grid of weights."""
        ext = self.elmm_extreme_points()
        if ext.shape[0] == 1:
            return ext
        w = simplex_points(ext.shape[0], resolution)
        return np.unique(np.round(w @ ext, 15), axis=0)

    def admissible_interval(self) -> tuple[float, float]:
        R = self.returns
        hi = 1.0 / -R.min() if R.min() < 0 else np.inf
        lo = -1.0 / R.max() if R.max() > 0 else -np.inf
        return lo, hi


def strategy_grid(market: FiniteMarket, n: int = 10_001, cap: float = 50.0) -> np.ndarray:
    """``n`` interior points of the admissible proportion interval (ends excluded)."""
    lo, hi = market.admissible_interval()
    lo, hi = max(lo, -cap), min(hi, cap)
    return np.linspace(lo, hi, n + 2)[1:-1]


def _safe_q_log_term(q: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """``q * vals`` with the convention ``0 * (+-inf) = 0``."""
    with np.errstate(invalid="ignore"):
        out = q * vals
    return np.where(q == 0.0, 0.0, out)


def payoff_table(market: FiniteMarket, utility: UtilitySpec, x: float, strategies: np.ndarray) -> np.ndarray:
    """``U(x (1 + pi R_i))`` with shape ``(n_outcomes, n_strategies)``."""
    wealth = x * (1.0 + np.outer(market.returns, strategies))
    with np.errstate(all="ignore"):
        return np.asarray(utility.u(wealth), dtype=float)


def primal_matrix(market, utility, x, strategies, simplex: SimplexGrid):
    """``A[q, pi] = E_q[U(X_T^pi)] + penalty(q)``."""
    U = payoff_table(market, utility, x, strategies)
    Q = simplex.points
    pen = market.penalty(Q)
    with np.errstate(invalid="ignore"):
        exp_u = np.einsum("qi,ij->qj", Q, np.where(np.isfinite(U), U, 0.0))
        # a strategy with -inf utility on an outcome charged by q is worth -inf under q
        charged = (Q[:, :, None] > 0) & ~np.isfinite(U)[None, :, :]
        exp_u = np.where(charged.any(axis=1), -np.inf, exp_u)
    return exp_u + pen[:, None]


def exact_primal(market: FiniteMarket, utility: UtilitySpec, x: float, strategies=None,
                 simplex: SimplexGrid | int = 40) -> dict:
    """``max_pi min_q {E_q[U(X_T^pi)] + penalty(q)}`` by exhaustive enumeration."""
    strategies = strategy_grid(market) if strategies is None else np.asarray(strategies, dtype=float)
    if strategies.size == 0:
        raise ValueError("empty strategy grid")
    simplex = simplex if isinstance(simplex, SimplexGrid) else SimplexGrid(market.m, int(simplex))
    A = primal_matrix(market, utility, x, strategies, simplex)
    inner = A.min(axis=0)
    j = int(np.argmax(inner))
    if not np.isfinite(inner[j]):
        raise ValueError("no admissible strategy on the grid")
    i = int(np.argmin(A[:, j]))
    return {"u": float(inner[j]), "pi_star": float(strategies[j]), "q_worst": simplex.points[i].tolist(),
            "matrix": A, "strategies": strategies, "simplex": simplex}


def dual_value(market: FiniteMarket, utility: UtilitySpec, y, simplex: SimplexGrid,
               elmm: np.ndarray | None = None) -> dict:
    """``v(y) = min_q {penalty(q) + min_qt sum_i q_i V(y qt_i / q_i)}`` on grids.

    Returns values and the minimizing ``(q, qt)`` for each ``y``.
    """
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    elmm = market.elmm_grid() if elmm is None else elmm
    Q = simplex.points
    pen = market.penalty(Q)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = elmm[None, :, :] / Q[:, None, :]                      # (nq, ne, m)
    vals = np.empty((ys.size, Q.shape[0], elmm.shape[0]))
    for k, yv in enumerate(ys):
        with np.errstate(all="ignore"):
            V = np.asarray(utility.v(yv * ratio), dtype=float)
        terms = _safe_q_log_term(Q[:, None, :], V)
        vals[k] = terms.sum(axis=2)
    vals = np.where(np.isnan(vals), np.inf, vals)
    inner_idx = vals.argmin(axis=2)
    inner = np.take_along_axis(vals, inner_idx[:, :, None], axis=2)[:, :, 0] + pen[None, :]
    q_idx = inner.argmin(axis=1)
    v = inner[np.arange(ys.size), q_idx]
    return {"y": ys, "v": v, "q_idx": q_idx, "q": Q[q_idx],
            "qt": elmm[inner_idx[np.arange(ys.size), q_idx]]}


def default_y_grid(n: int = 4001, lo: float = 1e-2, hi: float = 1e2) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def exact_dual_and_minimax(market: FiniteMarket, utility: UtilitySpec, x: float, y_grid=None,
                           simplex: SimplexGrid | int = 40, strategies=None) -> dict:
    """Both orders of the sup-inf, the dual curve, conjugacy and the saddle relation."""
    simplex = simplex if isinstance(simplex, SimplexGrid) else SimplexGrid(market.m, int(simplex))
    prim = exact_primal(market, utility, x, strategies, simplex)
    A = prim["matrix"]
    maxmin = prim["u"]
    col_max = A.max(axis=1)
    qi = int(np.argmin(col_max))
    minmax = float(col_max[qi])
    ys = default_y_grid() if y_grid is None else np.asarray(y_grid, dtype=float)
    dual = dual_value(market, utility, ys, simplex)
    f = dual["v"] + x * ys
    k = int(np.argmin(f))
    y_star = float(ys[k])
    q_star, qt_star = dual["q"][k], dual["qt"][k]
    with np.errstate(divide="ignore", invalid="ignore"):
        x_dual = np.asarray(-utility.v_prime(y_star * qt_star / q_star), dtype=float)
    x_primal = x * (1.0 + prim["pi_star"] * market.returns)
    resolution = 1.0 / simplex.resolution
    return {
        "x": x, "u": maxmin, "maxmin": maxmin, "minmax": minmax, "minimax_gap": abs(minmax - maxmin),
        "conjugate_u": float(f[k]), "conjugacy_gap": abs(maxmin - float(f[k])),
        "y_star": y_star, "q_star": q_star.tolist(), "q_tilde_star": qt_star.tolist(),
        "q_minmax": simplex.points[qi].tolist(), "pi_star": prim["pi_star"],
        "x_star_dual": x_dual.tolist(), "x_star_primal": x_primal.tolist(),
        "saddle_gap": float(np.max(np.abs(x_dual - x_primal))),
        "grid_resolution": resolution, "boundary_y": k in (0, ys.size - 1),
    }


# ---------------------------------------------------------------------------
# convex risk measures on a finite space


def payoff_grid(m: int, resolution: int, bound: float) -> np.ndarray:
    axis = np.linspace(-bound, bound, resolution + 1)
    return np.array(list(itertools.product(axis, repeat=m)))


def risk_measure(X: np.ndarray, simplex_pts: np.ndarray, pen: np.ndarray) -> np.ndarray:
    """``rho(X) = max_q {E_q[-X] - penalty(q)}`` for each row of ``X``."""
    X = np.atleast_2d(X)
    fin = np.isfinite(pen)
    return np.max((-X) @ simplex_pts[fin].T - pen[fin][None, :], axis=1)


def exact_risk_measure(market: FiniteMarket, payoffs: np.ndarray, simplex: SimplexGrid | int = 40,
                       penalty: np.ndarray | None = None) -> dict:
    """``rho`` on the given payoffs and the recovered minimal penalty on the simplex grid."""
    simplex = simplex if isinstance(simplex, SimplexGrid) else SimplexGrid(market.m, int(simplex))
    pts = simplex.points
    pen = market.penalty(pts) if penalty is None else penalty
    payoffs = np.atleast_2d(payoffs)
    rho = risk_measure(payoffs, pts, pen)
    psi = np.max((-payoffs) @ pts.T - rho[:, None], axis=0)
    fin = np.isfinite(pen)
    gap = float(np.max(pen[fin] - psi[fin]))
    return {"rho": rho, "psi_star": psi, "penalty": pen, "points": pts, "biduality_gap": gap,
            "psi_le_penalty": bool(np.all(psi[fin] <= pen[fin] + 1e-12))}


def convex_envelope(points: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Largest convex function below ``values`` at every grid point (one LP per point)."""
    fin = np.isfinite(values)
    P, f = points[fin], values[fin]
    A_eq = np.vstack([P.T, np.ones(P.shape[0])])
    out = np.full(points.shape[0], np.inf)
    for k, q in enumerate(points):
        res = linprog(f, A_eq=A_eq, b_eq=np.append(q, 1.0), bounds=(0, None), method="highs")
        if res.status == 0:
            out[k] = res.fun
    return out


def biduality_gap(market: FiniteMarket, resolutions=(10, 20, 40), payoff_bound: float = 10.0,
                  penalty_table: Callable | None = None) -> dict:
    """Gap ``max_q (penalty - psi*)`` along refining simplex and payoff grids.

    ``penalty_table`` overrides the market's penalty (it need not vanish at
    ``p_ref``).  The distance to the convex envelope on the finest grid is
    reported, and a non-convex table is flagged.
    """
    table = penalty_table or market.penalty_table
    gaps = []
    for r in resolutions:
        simplex = SimplexGrid(market.m, r)
        pen = _penalty_values(table, simplex.points)
        X = payoff_grid(market.m, r, payoff_bound)
        rep = exact_risk_measure(market, X, simplex, pen)
        gaps.append(rep["biduality_gap"])
    fine = SimplexGrid(market.m, resolutions[-1])
    pen = _penalty_values(table, fine.points)
    env = convex_envelope(fine.points, pen)
    fin = np.isfinite(pen)
    dist = float(np.max(pen[fin] - env[fin]))
    return {"resolutions": list(resolutions), "gaps": gaps,
            "strictly_decreasing": all(b < a for a, b in zip(gaps, gaps[1:])),
            "convexification_distance": dist, "non_convex": dist > 1e-9}


# ---------------------------------------------------------------------------
# fixtures


def two_state_market(penalty_table: Callable | None = None, up: float = 1.2, down: float = 0.9) -> FiniteMarket:
    """``S: 1 -> {up, down}`` with ``p_ref = (1/2, 1/2)``; default penalty ``5 (q_1 - 1/2)^2``."""
    table = penalty_table or quadratic_penalty(5.0, np.array([0.5, 0.5]))
    return FiniteMarket(np.array([0.5, 0.5]), 1.0, np.array([up, down]), table, ("up", "down"))


def quadratic_penalty(scale: float, center) -> Callable:
    """``scale |q - center|^2 / 2``; on two outcomes this is ``scale (q_1 - c_1)^2``."""
    center = np.asarray(center, dtype=float)
    return lambda q: 0.5 * scale * float(np.sum((np.asarray(q) - center) ** 2))


def entropy_penalty(p_ref: np.ndarray) -> Callable:
    p_ref = np.asarray(p_ref, dtype=float)

    def table(q):
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(q > 0, q * np.log(q / p_ref), 0.0)
        return float(t.sum())

    return table


def affine_penalty(slopes) -> Callable:
    slopes = np.asarray(slopes, dtype=float)
    return lambda q: float(np.dot(q, slopes))


def capped_quadratic_penalty(center, scale: float = 20.0, cap: float = 1.0) -> Callable:
    """``min(cap, quadratic)``: non-convex, vanishes at ``center``."""
    quad = quadratic_penalty(scale, center)
    return lambda q: min(cap, quad(q))


def bridge_point(theta1: float, nu_mass: float, T: float) -> np.ndarray:
    """Law of ``{no jump, at least one jump}`` over ``[0, T]`` under intensity ``(1 + theta1) nu``.

    Maps a one-period single-atom control to a point of the 2-simplex.
    """
    p0 = float(np.exp(-(1.0 + theta1) * nu_mass * T))
    return np.array([p0, 1.0 - p0])
