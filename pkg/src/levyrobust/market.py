"""Price and wealth processes driven by ``Y = int alpha dt + int beta dW + int gamma d(mu - nu dt)``.

The price is the Doleans-Dade exponential ``S = S_0 E(Y)``, evaluated by its
closed form on the grid.  Coefficients are deterministic step functions;
``gamma`` is indexed by jump atom.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .levy import LevyModel, PathBundle, TimeGrid
from .steps import StepFunction


@dataclass(frozen=True, eq=False)
class MarketSpec:
    alpha: StepFunction
    beta: StepFunction
    gamma: StepFunction
    beta_floor_c: float
    s0: float = 1.0
    horizon_T: float = 1.0
    a3_bound: float = 1e6
    gamma_bound: float = np.inf

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            val = getattr(self, name)
            if not isinstance(val, StepFunction):
                object.__setattr__(self, name, StepFunction.constant(val))
        if not self.beta_floor_c > 0:
            raise ValueError("beta floor c must be positive")
        if not self.s0 > 0:
            raise ValueError("initial price must be positive")
        if not self.horizon_T > 0:
            raise ValueError("horizon must be positive")

    def coefficients_on_grid(self, grid: TimeGrid, model: LevyModel):
        """``(alpha_i, beta_i, gamma_ij)`` on each grid interval."""
        nodes = grid.nodes
        return (self.alpha.on_grid(nodes), self.beta.on_grid(nodes),
                self.gamma.on_grid_atoms(nodes, model.n_atoms))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha.to_dict(), "beta": self.beta.to_dict(), "gamma": self.gamma.to_dict(),
            "beta_floor_c": self.beta_floor_c, "s0": self.s0, "horizon_T": self.horizon_T,
            "a3_bound": self.a3_bound,
        }


@dataclass(frozen=True)
class AssumptionCheck:
    passed: bool
    value: float | None = None
    witness: tuple | None = None


@dataclass(frozen=True)
class AssumptionReport:
    checks: dict[str, AssumptionCheck]

    @property
    def all_pass(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def failed(self) -> list[str]:
        return [k for k, c in self.checks.items() if not c.passed]

    def to_dict(self) -> dict:
        return {k: {"passed": c.passed, "value": c.value,
                    "witness": None if c.witness is None else list(c.witness)}
                for k, c in self.checks.items()}


def validate_assumptions(spec: MarketSpec, model: LevyModel, grid: TimeGrid) -> AssumptionReport:
    """Check (A1)-(A5) at grid-node and atom resolution, with witnesses on failure."""
    nodes = grid.nodes
    alpha = spec.alpha.at(nodes)
    beta = spec.beta.at(nodes)
    alpha_i, beta_i = alpha[:-1], beta[:-1]
    dt = grid.dt
    checks = {}

    a1 = float(np.sum(alpha_i ** 2) * dt)
    bad = np.flatnonzero(~np.isfinite(alpha))
    checks["A1"] = AssumptionCheck(bool(np.isfinite(a1)), a1, None if not bad.size else (float(nodes[bad[0]]),))

    low = np.flatnonzero(~(np.abs(beta) >= spec.beta_floor_c))
    checks["A2"] = AssumptionCheck(bool(not low.size), float(np.min(np.abs(beta))),
                                   None if not low.size else (float(nodes[low[0]]), float(beta[low[0]])))

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio2 = (alpha_i / beta_i) ** 2
    a3 = float(np.sum(ratio2) * dt) if np.all(np.isfinite(ratio2)) else np.inf
    worst = int(np.argmax(np.where(np.isfinite(ratio2), ratio2, np.inf)))
    checks["A3"] = AssumptionCheck(bool(a3 <= spec.a3_bound), a3,
                                   None if a3 <= spec.a3_bound else (float(nodes[worst]),))

    if model.n_atoms:
        gam = spec.gamma.on_nodes_atoms(nodes, model.n_atoms)
        below = np.argwhere(~(gam >= -1.0))
        checks["A4"] = AssumptionCheck(not below.size, float(np.min(gam)),
                                       None if not below.size else
                                       (float(nodes[below[0][0]]), float(model.jump_sizes[below[0][1]]),
                                        float(gam[tuple(below[0])])))
        big = np.argwhere(~(np.abs(gam) <= spec.gamma_bound))
        checks["A5"] = AssumptionCheck(not big.size, float(np.max(np.abs(gam))),
                                       None if not big.size else
                                       (float(nodes[big[0][0]]), float(model.jump_sizes[big[0][1]])))
    else:
        checks["A4"] = AssumptionCheck(True)
        checks["A5"] = AssumptionCheck(True)
    return AssumptionReport(checks)


@dataclass(frozen=True, eq=False)
class StepParts:
    """Per-interval pieces shared by ``Y``, ``S`` and the incremental price check."""

    drift: np.ndarray         # alpha_i dt, (n_steps,)
    diffusion: np.ndarray     # beta_i dW, (n_paths, n_steps)
    quad_var: np.ndarray      # beta_i^2 dt, (n_steps,)
    compensator: np.ndarray   # sum_j gamma_ij nu_j dt, (n_steps,)
    jump_gamma: np.ndarray    # sum of gamma over jumps in the interval, (n_paths, n_steps)
    jump_log: np.ndarray      # sum of log(1 + gamma) over jumps, may be -inf
    absorb_time: np.ndarray   # first jump time with gamma == -1, inf if none


def step_parts(spec: MarketSpec, paths: PathBundle) -> StepParts:
    grid, model = paths.grid, paths.model
    alpha, beta, gamma = spec.coefficients_on_grid(grid, model)
    dt = grid.dt
    comp = gamma @ model.nu_masses * dt if model.n_atoms else np.zeros(grid.n_steps)
    g_jump = gamma[paths.jump_step, paths.jump_atom] if paths.jump_time.size else np.zeros(0)
    with np.errstate(divide="ignore"):
        log_jump = np.log1p(g_jump)
    absorb = np.full(paths.n_paths, np.inf)
    killed = g_jump == -1.0
    if np.any(killed):
        # events are time-sorted within a path, so the first hit wins
        np.minimum.at(absorb, paths.jump_path[killed], paths.jump_time[killed])
    return StepParts(alpha * dt, beta[None, :] * paths.brownian_increments, beta ** 2 * dt, comp,
                     paths.per_step_sum(g_jump), _per_step_log(paths, log_jump), absorb)


def _per_step_log(paths: PathBundle, log_jump: np.ndarray) -> np.ndarray:
    finite = np.where(np.isfinite(log_jump), log_jump, 0.0)
    out = paths.per_step_sum(finite)
    dead = ~np.isfinite(log_jump)
    if np.any(dead):
        out[paths.jump_path[dead], paths.jump_step[dead]] = -np.inf
    return out


def _cum_nodes(steps: np.ndarray) -> np.ndarray:
    steps = np.atleast_2d(steps)
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def build_y_paths(spec: MarketSpec, paths: PathBundle, parts: StepParts | None = None) -> np.ndarray:
    """``Y`` at the grid nodes, shape ``(n_paths, n_steps + 1)``."""
    parts = parts or step_parts(spec, paths)
    det = _cum_nodes(parts.drift - parts.compensator)
    return det + _cum_nodes(parts.diffusion) + _cum_nodes(parts.jump_gamma)


@dataclass(frozen=True, eq=False)
class PricePath:
    y_values: np.ndarray
    s_values: np.ndarray
    absorption_time_tau: np.ndarray
    log_s_values: np.ndarray = field(repr=False, default=None)


def price_paths(spec: MarketSpec, paths: PathBundle, y_paths: np.ndarray | None = None,
                parts: StepParts | None = None) -> PricePath:
    """Closed-form ``S_t = S_0 exp{Y_t - 1/2 int beta^2 + sum (log(1+gamma) - gamma)}``."""
    parts = parts or step_parts(spec, paths)
    y = build_y_paths(spec, paths, parts) if y_paths is None else y_paths
    correction = _cum_nodes(parts.jump_log - parts.jump_gamma)
    with np.errstate(invalid="ignore"):
        log_s = np.log(spec.s0) + (y - 0.5 * _cum_nodes(parts.quad_var)) + correction
    log_s = np.where(np.isnan(log_s), -np.inf, log_s)
    # absorption is permanent: once log S hits -inf it stays there
    log_s = np.where(np.isneginf(np.minimum.accumulate(log_s, axis=1)), -np.inf, log_s)
    return PricePath(y, np.exp(log_s), parts.absorb_time, log_s)


def incremental_price(spec: MarketSpec, paths: PathBundle, parts: StepParts | None = None) -> np.ndarray:
    """``S`` rebuilt as a running product of per-interval factors (cross-check)."""
    parts = parts or step_parts(spec, paths)
    cont = np.exp(parts.drift + parts.diffusion - 0.5 * parts.quad_var - parts.compensator)
    factor = cont * np.exp(parts.jump_log)
    out = np.empty((paths.n_paths, paths.grid.n_steps + 1))
    out[:, 0] = spec.s0
    np.cumprod(factor, axis=1, out=out[:, 1:])
    out[:, 1:] *= spec.s0
    return out


@dataclass(frozen=True, eq=False)
class WealthPath:
    x0: float
    pi: np.ndarray
    x_values: np.ndarray
    admissible: bool
    admissible_paths: np.ndarray


def strategy_on_grid(pi, grid: TimeGrid) -> np.ndarray:
    if isinstance(pi, StepFunction):
        return pi.on_grid(grid.nodes)
    arr = np.asarray(pi, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_steps, float(arr))
    if arr.shape != (grid.n_steps,):
        raise ValueError("strategy must be a scalar, a step function or one value per interval")
    return arr


def wealth_paths(spec: MarketSpec, price: PricePath, x0: float, pi, grid: TimeGrid) -> WealthPath:
    """Self-financing wealth, rebalanced to proportion ``pi`` at each node."""
    if not x0 > 0:
        raise ValueError("initial wealth must be positive")
    pis = strategy_on_grid(pi, grid)
    s = price.s_values
    alive = s[:, :-1] > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ret = np.where(alive, s[:, 1:] / np.where(alive, s[:, :-1], 1.0) - 1.0, 0.0)
    factor = 1.0 + pis[None, :] * ret
    growth = np.empty_like(s)
    growth[:, 0] = 1.0
    np.cumprod(factor, axis=1, out=growth[:, 1:])
    x = x0 * growth
    ok = np.all(x > 0.0, axis=1)
    return WealthPath(float(x0), pis, x, bool(np.all(ok)), ok)


def export_market_csv(price: PricePath, grid: TimeGrid, path, wealth: WealthPath | None = None,
                      path_index_base: int = 0, max_paths: int | None = None) -> None:
    """Write ``path_id, t, S, X`` rows; ``X`` is empty when no wealth is given."""
    s = price.s_values
    n = s.shape[0] if max_paths is None else min(max_paths, s.shape[0])
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["path_id", "t", "S", "X"])
        for p in range(n):
            for i, t in enumerate(grid.nodes):
                x = "" if wealth is None else repr(float(wealth.x_values[p, i]))
                out.writerow([path_index_base + p, repr(float(t)), repr(float(s[p, i])), x])
