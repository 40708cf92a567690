"""Robust dual and primal values over piecewise-constant control families.

The dual objective for a measure ``Q`` (controls ``theta``) and an ELMM
density ``E(Z^xi)`` is ``E_Q[V(y E(Z^xi)_T / D^Q_T)] + theta(Q)``.  ``xi0``
is eliminated through the ELMM constraint, so only ``xi1`` is searched.

Expectations under ``Q`` use one common reference sample: Brownian
increments are shifted by ``theta0 dt`` and jump paths carry the likelihood
ratio ``prod (1 + theta1) exp(-int theta1 dnu)``.  This keeps the estimate a
smooth, deterministic function of the controls for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import rng as _rng
from .levy import LevyModel, PathBundle, TimeGrid, simulate_paths
from .market import MarketSpec, price_paths, wealth_paths
from .measure import (DELTA_FLOOR, ControlPair, complete_to_elmm, density_paths, elmm_residual,
                      tilt_sample)
from .penalty import PenaltySpec, check_dominates_threshold, evaluate_penalty, make_log_penalty, \
    make_power_penalty
from .steps import StepFunction
from .utility import UtilitySpec, golden_minimize, inverse_marginal_of_log, v_of_log

LADDER_CAP = 2.0 ** 60


@dataclass(frozen=True)
class ControlFamily:
    """``k_t`` equal time pieces; ``theta0 in [-b0, b0]``, ``theta1, xi1 in [-1 + delta, b1]``."""

    k_t: int = 4
    b0: float = 3.0
    b1: float = 3.0
    delta_floor: float = DELTA_FLOOR
    n_starts: int = 8
    max_sweeps: int = 300
    rel_tol: float = 1e-6
    step_tol: float = 1e-5
    init_step: float = 0.25

    def __post_init__(self):
        if self.k_t < 1 or self.n_starts < 1:
            raise ValueError("k_t and n_starts must be positive")
        if not (self.b0 > 0 and self.b1 > -1 + self.delta_floor):
            raise ValueError("control boxes must be non-empty")

    def knots(self, horizon: float) -> tuple:
        return tuple(horizon * k / self.k_t for k in range(1, self.k_t))

    def to_dict(self) -> dict:
        return {"k_t": self.k_t, "b0": self.b0, "b1": self.b1, "delta_floor": self.delta_floor,
                "n_starts": self.n_starts, "max_sweeps": self.max_sweeps, "rel_tol": self.rel_tol,
                "step_tol": self.step_tol, "init_step": self.init_step}


@dataclass(frozen=True)
class MonteCarloConfig:
    n_paths: int = 100_000
    seed: int = 0
    workers: int | None = None

    def to_dict(self) -> dict:
        return {"n_paths": self.n_paths, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class DualProblem:
    market: MarketSpec
    model: LevyModel
    utility: UtilitySpec
    penalty: PenaltySpec
    grid: TimeGrid


class ObjectiveValue(NamedTuple):
    value: float
    se: float
    expectation: float
    penalty: float

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.value))


def _weighted_stats(vals: np.ndarray, w: np.ndarray | None) -> tuple[float, float]:
    """Mean and s.e. of ``w * vals`` with the truncation ladder on the positive part.

    On a finite sample the ladder ends at the plain mean unless some value
    exceeds ``2^60`` (or is infinite), which is reported as ``+inf``.
    """
    if np.any(np.isnan(vals)):
        return np.inf, np.nan
    top = float(np.max(vals)) if vals.size else 0.0
    if not top <= LADDER_CAP:
        return np.inf, np.nan
    prod = vals if w is None else vals * w
    return _rng.mean_and_se(prod)


def _weighted_mean(vals: np.ndarray, w: np.ndarray | None) -> float:
    if np.any(np.isnan(vals)) or not float(np.max(vals)) <= LADDER_CAP:
        return np.inf
    return float(np.mean(vals if w is None else vals * w))


def check_certificate(problem: DualProblem) -> dict:
    """Does the penalty dominate the threshold that makes the dual problem solvable?"""
    ut, pen, mk = problem.utility, problem.penalty, problem.market
    T = problem.grid.horizon_T
    if ut.kind == "log":
        ref = make_log_penalty(T)
    elif ut.kind == "power" and ut.params["q"] < 0:
        return {"kind": "power q<0", "passed": True, "note": "V <= 0, no penalty condition needed"}
    elif ut.kind == "power":
        ref = make_power_penalty(ut.params["q"], T, mk.beta_floor_c, mk.gamma)
    else:
        qs = [t["q"] for t in ut.params.get("terms", []) if t.get("kind") == "power" and t["q"] > 0]
        if qs:
            ref = make_power_penalty(max(qs), T, mk.beta_floor_c, mk.gamma)
        elif any(t.get("kind") == "log" for t in ut.params.get("terms", [])):
            ref = make_log_penalty(T)
        else:
            return {"kind": "custom", "passed": True, "note": "all terms have V <= 0"}
    rep = check_dominates_threshold(pen, ref, (-0.99, 2.0))
    return {"kind": ref.label, "passed": rep.passed, "details": rep.results}


class CellEvaluator:
    """Fast dual objective for controls in a :class:`ControlFamily`.

    Grid steps are grouped into cells on which control pieces and market
    coefficients are all constant.  The reference sample is then summarized
    per path by cell sums of Brownian increments and per-atom jump counts,
    and the log of ``E(Z^xi)_T / D^Q_T`` is a linear form in those features.
    """

    def __init__(self, problem: DualProblem, family: ControlFamily, mc: MonteCarloConfig,
                 paths: PathBundle | None = None):
        self.problem, self.family, self.mc = problem, family, mc
        grid, model, mk = problem.grid, problem.model, problem.market
        self.paths = paths or simulate_paths(model, grid, mc.n_paths, mc.seed, workers=mc.workers)
        T = grid.horizon_T
        self.knots = family.knots(T)
        self.K, self.m = family.k_t, model.n_atoms
        left = grid.nodes[:-1]
        piece = np.searchsorted(np.asarray(self.knots), left, side="right")
        keys = np.stack([piece, mk.alpha.piece_index(left), mk.beta.piece_index(left),
                         mk.gamma.piece_index(left)], axis=1)
        uniq, cell_of_step = np.unique(keys, axis=0, return_inverse=True)
        cell_of_step = cell_of_step.ravel()
        self.C = uniq.shape[0]
        first = np.array([np.flatnonzero(cell_of_step == c)[0] for c in range(self.C)])
        self.cell_piece = uniq[:, 0]
        self.cell_len = np.bincount(cell_of_step, minlength=self.C) * grid.dt
        t_first = left[first]
        self.alpha = mk.alpha.at(t_first)
        self.beta = mk.beta.at(t_first)
        self.gamma = mk.gamma.on_nodes_atoms(t_first, self.m) if self.m else np.zeros((self.C, 0))
        self.nu = model.nu_masses
        onehot = np.zeros((grid.n_steps, self.C))
        onehot[np.arange(grid.n_steps), cell_of_step] = 1.0
        zsum = self.paths.brownian_increments @ onehot
        P = self.paths.n_paths
        if self.m:
            flat = (self.paths.jump_path * self.C + cell_of_step[self.paths.jump_step]) * self.m + self.paths.jump_atom
            counts = np.bincount(flat, minlength=P * self.C * self.m).reshape(P, self.C * self.m).astype(float)
        else:
            counts = np.zeros((P, 0))
        self.features = np.ascontiguousarray(np.hstack([zsum, counts]))
        self.counts = counts
        self.n_theta = self.K + self.K * self.m
        self.size = self.n_theta + self.K * self.m
        lo1, hi1 = -1.0 + family.delta_floor, family.b1
        self.lower = np.concatenate([np.full(self.K, -family.b0), np.full(2 * self.K * self.m, lo1)])
        self.upper = np.concatenate([np.full(self.K, family.b0), np.full(2 * self.K * self.m, hi1)])
        self._theta_cache = {}
        self.n_evals = 0

    # -- parameter layout: [theta0 (K) | theta1 (K, m) | xi1 (K, m)]
    def split(self, z: np.ndarray):
        K, m = self.K, self.m
        return z[:K], z[K:K + K * m].reshape(K, m), z[K + K * m:].reshape(K, m)

    def pack(self, theta0, theta1, xi1) -> np.ndarray:
        return np.concatenate([np.ravel(theta0), np.ravel(theta1), np.ravel(xi1)]).astype(float)

    def controls(self, z: np.ndarray) -> tuple[ControlPair, ControlPair]:
        th0, th1, xi1 = self.split(z)
        fam = self.family
        q = ControlPair(StepFunction(self.knots, th0), StepFunction(self.knots, th1 if self.m else np.zeros((self.K, 0))),
                        fam.delta_floor)
        xi_partial = ControlPair(StepFunction.constant(0.0),
                                 StepFunction(self.knots, xi1 if self.m else np.zeros((self.K, 0))), fam.delta_floor)
        xi = complete_to_elmm(self.problem.market, xi_partial, self.problem.model, self.problem.grid.horizon_T)
        return q, xi

    def xi0_cells(self, xi1: np.ndarray) -> np.ndarray:
        jump = np.zeros(self.C)
        if self.m:
            x1 = xi1[self.cell_piece]
            for j in range(self.m):
                jump = jump + self.gamma[:, j] * x1[:, j] * self.nu[j]
        return -((self.alpha + jump) / self.beta)

    def _theta_state(self, z: np.ndarray):
        key = z[:self.n_theta].tobytes()
        hit = self._theta_cache.get(key)
        if hit is not None:
            return hit
        th0, th1, _ = self.split(z)
        q = ControlPair(StepFunction(self.knots, th0), StepFunction(self.knots, th1 if self.m else np.zeros((self.K, 0))),
                        self.family.delta_floor)
        pen = evaluate_penalty(self.problem.penalty, q, self.problem.model, self.problem.grid.horizon_T).value
        if self.m:
            l1 = np.log1p(th1[self.cell_piece])
            comp = float(np.sum(th1[self.cell_piece] * self.nu[None, :] * self.cell_len[:, None]))
            log_w = self.counts @ l1.ravel() - comp
            w = np.exp(log_w)
        else:
            l1, w = np.zeros((self.C, 0)), None
        # Q-means of the features and of the weight, for the affine (log) case
        P = self.features.shape[0]
        if w is None:
            f_mean, w_mean = self.features.sum(axis=0) / P, 1.0
        else:
            f_mean, w_mean = (w @ self.features) / P, float(w.sum()) / P
        state = (pen, l1, w, f_mean, w_mean)
        if len(self._theta_cache) > 64:
            self._theta_cache.clear()
        self._theta_cache[key] = state
        return state

    def _linear_form(self, z: np.ndarray):
        """``(coef, const)`` with ``log(E(Z^xi)_T / D^Q_T) = features @ coef + const``."""
        th0, th1, xi1 = self.split(z)
        l1 = self._theta_state(z)[1]
        t0 = th0[self.cell_piece]
        x0 = self.xi0_cells(xi1)
        a = x0 - t0
        const = float(np.sum(a * t0 * self.cell_len) - 0.5 * np.sum((x0 * x0 - t0 * t0) * self.cell_len))
        coef = [a]
        if self.m:
            x1 = xi1[self.cell_piece]
            b = np.log1p(x1) - l1
            const -= float(np.sum((x1 - th1[self.cell_piece]) * self.nu[None, :] * self.cell_len[:, None]))
            coef.append(b.ravel())
        return np.concatenate(coef), const

    def log_ratio(self, z: np.ndarray) -> np.ndarray:
        """``log(E(Z^xi)_T / D^Q_T)`` on every path, with ``W`` shifted under ``Q``."""
        coef, const = self._linear_form(z)
        return self.features @ coef + const

    def evaluate(self, y: float, z: np.ndarray, with_se: bool = True) -> ObjectiveValue:
        """Objective at ``y``.  Without ``with_se`` the log-utility case uses the
        exact affine shortcut ``E_Q[V] = -log y - 1 - E_Q[log ratio]``."""
        self.n_evals += 1
        pen, _, w, f_mean, w_mean = self._theta_state(z)
        if not np.isfinite(pen):
            return ObjectiveValue(np.inf, np.nan, np.nan, np.inf)
        if not with_se and self.problem.utility.kind == "log":
            coef, const = self._linear_form(z)
            mean = (-math.log(y) - 1.0) * w_mean - (float(f_mean @ coef) + const * w_mean)
            return ObjectiveValue(mean + pen, np.nan, mean, pen)
        vals = v_of_log(self.problem.utility, math.log(y) + self.log_ratio(z))
        if with_se:
            mean, se = _weighted_stats(vals, w)
        else:
            mean, se = _weighted_mean(vals, w), np.nan
        return ObjectiveValue(mean + pen, se, mean, pen)

    def weights(self, z: np.ndarray):
        return self._theta_state(z)[2]


class TraceEntry(NamedTuple):
    start: int
    iteration: int
    value: float
    max_step: float


@dataclass(frozen=True, eq=False)
class DualSolution:
    y: float
    v_value: float
    se: float
    expectation: float
    penalty: float
    q_star: ControlPair
    xi_star: ControlPair
    params: np.ndarray
    converged: bool
    iterations: int
    n_evals: int
    trace: tuple = ()
    diagnostic: str | None = None
    certificate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "y": self.y, "v_value": self.v_value, "se": self.se, "expectation": self.expectation,
            "penalty": self.penalty, "q_star": self.q_star.to_dict(), "xi_star": self.xi_star.to_dict(),
            "iterations": self.iterations, "n_evals": self.n_evals, "converged": self.converged,
            "diagnostic": self.diagnostic, "certificate_passed": self.certificate.get("passed"),
        }


def _sweep(f, z, fz, coords, steps, lo, hi):
    """One pass of compass search over ``coords``; steps double on success, halve otherwise."""
    for n, i in enumerate(coords):
        moved = False
        for sign in (1.0, -1.0):
            cand_i = min(max(z[i] + sign * steps[n], lo[i]), hi[i])
            if cand_i == z[i]:
                continue
            cand = z.copy()
            cand[i] = cand_i
            fc = f(cand)
            if fc < fz:
                z, fz, moved = cand, fc, True
                break
        steps[n] = min(steps[n] * 2.0, hi[i] - lo[i]) if moved else steps[n] * 0.5
    return z, fz


def _rel_change(before: float, after: float) -> float:
    if before == after:
        return 0.0
    if not np.isfinite(before):
        return np.inf
    return abs(before - after) / max(abs(after), 1.0)


def _descend(ev: CellEvaluator, y: float, z0: np.ndarray, start: int, family: ControlFamily):
    """Block coordinate descent: ``xi1`` to convergence, then one sweep over ``theta``."""
    f = lambda z: ev.evaluate(y, z, with_se=False).value
    lo, hi = ev.lower, ev.upper
    theta_idx = np.arange(ev.n_theta)
    xi_idx = np.arange(ev.n_theta, ev.size)
    st_theta = np.full(theta_idx.size, family.init_step)
    st_xi = np.full(xi_idx.size, family.init_step)
    z = np.clip(z0, lo, hi)
    fz = f(z)
    trace = []
    converged = False
    it = 0
    for it in range(1, family.max_sweeps + 1):
        f_before = fz
        inner_ok = True
        if xi_idx.size:
            st_xi = np.maximum(st_xi, 16 * family.step_tol)
            inner_ok = False
            for _ in range(family.max_sweeps):
                f_in = fz
                z, fz = _sweep(f, z, fz, xi_idx, st_xi, lo, hi)
                if _rel_change(f_in, fz) < family.rel_tol and st_xi.max() < family.step_tol:
                    inner_ok = True
                    break
        z, fz = _sweep(f, z, fz, theta_idx, st_theta, lo, hi)
        max_step = float(max(st_theta.max(), st_xi.max() if st_xi.size else 0.0))
        trace.append(TraceEntry(start, it, float(fz), max_step))
        if inner_ok and _rel_change(f_before, fz) < family.rel_tol and st_theta.max() < family.step_tol:
            converged = True
            break
    return z, fz, converged, it, trace


def _start_points(ev: CellEvaluator, family: ControlFamily, seed: int, initial) -> list[np.ndarray]:
    starts = [np.asarray(s, dtype=float) for s in (initial or [])]
    starts.append(np.zeros(ev.size))
    gen = _rng.generator(seed, _rng.TAG_STARTS)
    n_random = max(0, family.n_starts - len(starts))
    for _ in range(n_random):
        starts.append(gen.uniform(ev.lower, ev.upper))
    return starts


def solve_dual(y: float, problem: DualProblem, family: ControlFamily | None = None,
               mc: MonteCarloConfig | None = None, *, evaluator: CellEvaluator | None = None,
               initial=None, n_starts: int | None = None) -> DualSolution:
    """Minimize the dual objective at ``y`` over the control family.

    Starts are the optional ``initial`` parameter vectors, the zero control
    and seeded random points in the box, ``family.n_starts`` in total (or
    ``n_starts``).  The returned value is an upper-bound estimate of
    ``v(y)`` since the family is restricted.
    """
    if not y > 0:
        raise ValueError("y must be positive")
    family = family or ControlFamily()
    mc = mc or MonteCarloConfig()
    ev = evaluator or CellEvaluator(problem, family, mc)
    fam = family if n_starts is None else _with_starts(family, n_starts)
    starts = _start_points(ev, fam, mc.seed, initial)
    runs = _rng.parallel_map(lambda a: _descend(ev, y, a[1], a[0], fam), list(enumerate(starts)), mc.workers)
    values = [r[1] for r in runs]
    best = int(np.argmin(values))
    z, fz, conv, iters, _ = runs[best]
    trace = tuple(t for r in runs for t in r[4])
    cert = check_certificate(problem)
    diag = None
    if not np.isfinite(fz):
        diag = "dual infeasible within family: every start diverged to +inf"
    elif not cert["passed"]:
        diag = "penalty does not dominate the solvability threshold"
    obj = ev.evaluate(y, z)
    q, xi = ev.controls(z)
    return DualSolution(float(y), obj.value, obj.se, obj.expectation, obj.penalty, q, xi, z, bool(conv),
                        int(iters), ev.n_evals, trace, diag, cert)


def _with_starts(family: ControlFamily, n: int) -> ControlFamily:
    return replace(family, n_starts=n)


def dual_objective(y: float, q_ctrl: ControlPair, xi_ctrl: ControlPair, problem: DualProblem,
                   mc: MonteCarloConfig, method: str = "reweight") -> ObjectiveValue:
    """``E_Q[V(y E(Z^xi)_T / D^Q_T)] + theta(Q)`` for arbitrary step controls.

    ``method="reweight"`` uses the common reference sample (shifted
    Brownian increments, jump likelihood weights); ``method="tilt"``
    simulates under ``Q`` directly with thinned jumps.
    """
    grid, model = problem.grid, problem.model
    res = elmm_residual(problem.market, xi_ctrl, grid, model)
    if res.sup_abs > 1e-10:
        raise ValueError(f"xi is not an ELMM control (residual {res.sup_abs:.3g})")
    pen = evaluate_penalty(problem.penalty, q_ctrl, model, grid.horizon_T).value
    if not np.isfinite(pen):
        return ObjectiveValue(np.inf, np.nan, np.nan, np.inf)
    if method == "tilt":
        paths = tilt_sample(q_ctrl, model, grid, mc.n_paths, mc.seed, workers=mc.workers)
        w = None
    elif method == "reweight":
        ref = simulate_paths(model, grid, mc.n_paths, mc.seed, workers=mc.workers)
        w = jump_weights(q_ctrl, ref)
        paths = ref.with_brownian_drift(q_ctrl.theta0_on_grid(grid), q_ctrl)
    else:
        raise ValueError(f"unknown method {method!r}")
    log_ratio = density_paths(xi_ctrl, paths).terminal_log_d - density_paths(q_ctrl, paths).terminal_log_d
    vals = v_of_log(problem.utility, math.log(y) + log_ratio)
    mean, se = _weighted_stats(vals, w)
    return ObjectiveValue(mean + pen, se, mean, pen)


def jump_weights(q_ctrl: ControlPair, paths: PathBundle) -> np.ndarray | None:
    """Likelihood ratio of the jump part of ``Q`` against the reference measure."""
    if not paths.model.n_atoms:
        return None
    jump_only = ControlPair(StepFunction.constant(0.0), q_ctrl.theta1, q_ctrl.delta_floor, q_ctrl.equivalent)
    return np.exp(density_paths(jump_only, paths).terminal_log_d)


# ---------------------------------------------------------------------------
# primal side


@dataclass(frozen=True, eq=False)
class PrimalSolution:
    x: float
    u_value: float
    se: float
    y_star: float
    dual: DualSolution
    terminal_wealth: np.ndarray
    weights: np.ndarray | None
    cross_check: float
    cross_check_se: float
    budget: float
    budget_se: float
    y_grid: np.ndarray
    v_grid: np.ndarray
    se_grid: np.ndarray
    diagnostic: str | None = None

    @property
    def q_star(self) -> ControlPair:
        return self.dual.q_star

    def to_dict(self) -> dict:
        return {
            "x": self.x, "u_value": self.u_value, "se": self.se, "y_star": self.y_star,
            "cross_check": self.cross_check, "cross_check_se": self.cross_check_se,
            "budget": self.budget, "budget_se": self.budget_se,
            "terminal_wealth_min": float(np.min(self.terminal_wealth)),
            "terminal_wealth_mean": float(np.mean(self.terminal_wealth)),
            "dual": self.dual.to_dict(), "diagnostic": self.diagnostic,
            "y_grid": self.y_grid.tolist(), "v_grid": self.v_grid.tolist(),
        }


def default_y_grid(n: int = 33, lo: float = 1e-3, hi: float = 1e3) -> np.ndarray:
    return np.geomspace(lo, hi, n)


class DualCurve:
    """Cache of dual solutions along ``y`` with warm starts from the nearest solved ``y``."""

    def __init__(self, problem: DualProblem, family: ControlFamily, mc: MonteCarloConfig,
                 evaluator: CellEvaluator | None = None):
        self.problem, self.family, self.mc = problem, family, mc
        self.ev = evaluator or CellEvaluator(problem, family, mc)
        self.solutions: dict[float, DualSolution] = {}

    def solve(self, y: float) -> DualSolution:
        y = float(y)
        if y in self.solutions:
            return self.solutions[y]
        if self.solutions:
            near = min(self.solutions, key=lambda s: abs(math.log(s / y)))
            sol = solve_dual(y, self.problem, self.family, self.mc, evaluator=self.ev,
                             initial=[self.solutions[near].params], n_starts=2)
        else:
            sol = solve_dual(y, self.problem, self.family, self.mc, evaluator=self.ev)
        self.solutions[y] = sol
        return sol


def solve_primal(x: float, problem: DualProblem, family: ControlFamily | None = None,
                 mc: MonteCarloConfig | None = None, *, y_grid=None, curve: DualCurve | None = None,
                 refine_iter: int = 24, max_widen: int = 3) -> PrimalSolution:
    """``u(x) = min_y {v(y) + x y}``: log-spaced grid, then golden-section refinement.

    A grid minimum at either end triggers up to ``max_widen`` widenings by
    three decades; if it persists the diagnostic is set.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    family = family or ControlFamily()
    mc = mc or MonteCarloConfig()
    curve = curve or DualCurve(problem, family, mc)
    ys = list(default_y_grid() if y_grid is None else np.asarray(y_grid, dtype=float))
    diagnostic = None
    order = sorted(ys, key=lambda s: abs(math.log(s * x)))  # start near y = 1/x, walk outward
    for yv in order:
        curve.solve(yv)
    for _ in range(max_widen + 1):
        ys = sorted(ys)
        f = np.array([curve.solve(yv).v_value + x * yv for yv in ys])
        k = int(np.argmin(f))
        if 0 < k < len(ys) - 1:
            break
        ratio = ys[1] / ys[0]
        extra = [ys[0] / ratio ** i for i in range(1, 10)] if k == 0 else [ys[-1] * ratio ** i for i in range(1, 10)]
        for yv in extra:
            curve.solve(yv)
        ys = ys + extra
    else:
        diagnostic = "minimum on the boundary of the y-grid; widen the grid"
    ys = sorted(ys)
    f = np.array([curve.solve(yv).v_value + x * yv for yv in ys])
    k = int(np.argmin(f))
    lo_y, hi_y = ys[max(k - 1, 0)], ys[min(k + 1, len(ys) - 1)]

    def obj(s):
        return np.array([curve.solve(float(np.exp(si))).v_value + x * float(np.exp(si)) for si in np.atleast_1d(s)])

    s_best, _ = golden_minimize(obj, np.array([math.log(lo_y)]), np.array([math.log(hi_y)]), n_iter=refine_iter)
    cand = {ys[k]: f[k], float(np.exp(s_best[0])): float(obj(s_best)[0])}
    y_star = min(cand, key=cand.get)
    sol = curve.solve(y_star)
    ev = curve.ev
    log_z = math.log(y_star) + ev.log_ratio(sol.params)
    wealth = inverse_marginal_of_log(problem.utility, log_z)
    w = ev.weights(sol.params)
    with np.errstate(all="ignore"):
        util = np.asarray(problem.utility.u(wealth), dtype=float)
    cc, cc_se = _rng.mean_and_se(util if w is None else util * w)
    budget_vals = np.exp(log_z) * wealth
    bud, bud_se = _rng.mean_and_se(budget_vals if w is None else budget_vals * w)
    u_val = sol.v_value + x * y_star
    v_grid = np.array([curve.solve(yv).v_value for yv in ys])
    se_grid = np.array([curve.solve(yv).se for yv in ys])
    return PrimalSolution(float(x), float(u_val), float(sol.se), float(y_star), sol, wealth, w,
                          float(cc + sol.penalty), float(cc_se), float(bud), float(bud_se),
                          np.array(ys), v_grid, se_grid, diagnostic)


# ---------------------------------------------------------------------------
# weak duality audit


class AuditViolation(NamedTuple):
    pi: float
    y: float
    lhs: float
    rhs: float
    tolerance: float


@dataclass(frozen=True)
class AuditReport:
    x: float
    probes: tuple
    y_grid: tuple
    lhs: tuple
    lhs_se: tuple
    rhs: tuple
    rhs_se: tuple
    violations: tuple
    max_slack_ratio: float

    def to_dict(self) -> dict:
        return {"x": self.x, "probes": list(self.probes), "y_grid": list(self.y_grid),
                "lhs": list(self.lhs), "lhs_se": list(self.lhs_se), "rhs": list(self.rhs),
                "rhs_se": list(self.rhs_se), "n_violations": len(self.violations),
                "violations": [v._asdict() for v in self.violations],
                "max_slack_ratio": self.max_slack_ratio}


def probe_strategies(seed: int, n_random: int = 9, lo: float = -1.0, hi: float = 3.0) -> list[float]:
    gen = _rng.generator(seed, _rng.TAG_PROBES)
    return [0.0] + [float(v) for v in gen.uniform(lo, hi, n_random)]


def penalized_utility(pi, x: float, q_ctrl: ControlPair, problem: DualProblem, paths: PathBundle,
                      penalty_value: float | None = None):
    """``E_Q[U(X_T^{x,pi})] + theta(Q)`` on the reference sample (shift + jump weights)."""
    grid = problem.grid
    shifted = paths.with_brownian_drift(q_ctrl.theta0_on_grid(grid), q_ctrl)
    w = jump_weights(q_ctrl, paths)
    price = price_paths(problem.market, shifted)
    pen = evaluate_penalty(problem.penalty, q_ctrl, problem.model, grid.horizon_T).value \
        if penalty_value is None else penalty_value
    out = []
    for p in np.atleast_1d(pi):
        wealth = wealth_paths(problem.market, price, x, float(p), grid)
        with np.errstate(all="ignore"):
            util = np.asarray(problem.utility.u(wealth.x_values[:, -1]), dtype=float)
        if np.any(~np.isfinite(util)):
            out.append((-np.inf, 0.0))
            continue
        m, se = _rng.mean_and_se(util if w is None else util * w)
        out.append((m + pen, se))
    return out


def weak_duality_audit(x: float, problem: DualProblem, family: ControlFamily | None = None,
                       mc: MonteCarloConfig | None = None, *, y_grid=None, probes=None,
                       curve: DualCurve | None = None, n_se: float = 3.0) -> AuditReport:
    """Check ``inf_Q {E_Q U(X^pi) + theta(Q)} <= v(y) + x y`` for every probe and ``y``.

    The infimum on the left runs over the reference measure and every dual
    minimizer found on the ``y``-grid.
    """
    family = family or ControlFamily()
    mc = mc or MonteCarloConfig()
    curve = curve or DualCurve(problem, family, mc)
    ys = default_y_grid() if y_grid is None else np.asarray(y_grid, dtype=float)
    probes = probe_strategies(mc.seed) if probes is None else list(probes)
    for yv in sorted(ys, key=lambda s: abs(math.log(s * x))):
        curve.solve(float(yv))
    sols = [curve.solve(float(yv)) for yv in ys]
    paths = curve.ev.paths
    candidates = [(ControlPair.zero(), 0.0)] + [(s.q_star, s.penalty) for s in sols]
    best = [(np.inf, 0.0)] * len(probes)
    for q, pen in candidates:
        vals = penalized_utility(probes, x, q, problem, paths, pen)
        best = [b if b[0] <= v[0] else v for b, v in zip(best, vals)]
    lhs = [b[0] for b in best]
    lhs_se = [b[1] for b in best]
    rhs = [s.v_value + x * s.y for s in sols]
    rhs_se = [s.se for s in sols]
    viol = []
    worst = -np.inf
    for i, p in enumerate(probes):
        for j, s in enumerate(sols):
            tol = n_se * math.hypot(lhs_se[i], rhs_se[j] if np.isfinite(rhs_se[j]) else 0.0)
            if lhs[i] > rhs[j] + tol:
                viol.append(AuditViolation(float(p), s.y, lhs[i], rhs[j], tol))
            if tol > 0 and np.isfinite(lhs[i]):
                worst = max(worst, (lhs[i] - rhs[j]) / tol)
    return AuditReport(float(x), tuple(float(p) for p in probes), tuple(float(v) for v in ys), tuple(lhs),
                       tuple(lhs_se), tuple(rhs), tuple(rhs_se), tuple(viol), float(worst))
