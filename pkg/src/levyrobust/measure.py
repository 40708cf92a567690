"""Absolutely continuous measure changes parameterized by ``(theta0, theta1)``.

The density is the stochastic exponential of
``Z = int theta0 dW + int theta1 d(mu - nu dt)``.  With finite activity the
compensated jump integral splits into a sum over realized jumps minus a
time integral against ``nu``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import rng as _rng
from .levy import LevyModel, PathBundle, TimeGrid, sample_paths
from .market import MarketSpec
from .steps import StepFunction, merged_knots

DELTA_FLOOR = 1e-6


class Estimate(NamedTuple):
    value: float
    se: float

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se}


@dataclass(frozen=True, eq=False)
class ControlPair:
    """Deterministic step-function controls on time x jump atoms.

    ``theta1`` values may be scalar per piece (broadcast over atoms) or carry
    one column per atom.  With ``equivalent=True`` (default) ``theta1`` must
    stay above ``-1 + delta_floor``.
    """

    theta0: StepFunction
    theta1: StepFunction
    delta_floor: float = DELTA_FLOOR
    equivalent: bool = True

    def __post_init__(self):
        for name in ("theta0", "theta1"):
            val = getattr(self, name)
            if not isinstance(val, StepFunction):
                object.__setattr__(self, name, StepFunction.constant(val))
        if self.theta0.per_atom:
            raise ValueError("theta0 cannot depend on the jump size")
        if not np.all(np.isfinite(self.theta0.values)):
            raise ValueError("theta0 must be finite (square-integrable on [0, T])")
        t1 = self.theta1.values
        if np.any(np.isnan(t1)) or np.any(t1 < -1.0):
            raise ValueError("theta1 must be >= -1 everywhere")
        if self.equivalent and np.any(t1 < self.theta1_floor):
            raise ValueError(f"theta1 must be >= -1 + delta_floor = {self.theta1_floor} for an equivalent measure")

    @classmethod
    def zero(cls) -> "ControlPair":
        return cls(StepFunction.constant(0.0), StepFunction.constant(0.0))

    @property
    def theta1_floor(self) -> float:
        return -1.0 + self.delta_floor

    def theta0_on_grid(self, grid: TimeGrid) -> np.ndarray:
        return self.theta0.on_grid(grid.nodes)

    def theta1_on_grid(self, grid: TimeGrid, n_atoms: int) -> np.ndarray:
        return self.theta1.on_grid_atoms(grid.nodes, n_atoms)

    def to_dict(self) -> dict:
        return {"theta0": self.theta0.to_dict(), "theta1": self.theta1.to_dict()}

    @classmethod
    def from_config(cls, block: dict, **kw) -> "ControlPair":
        extra = set(block) - {"theta0", "theta1"}
        if extra:
            raise KeyError(f"unknown keys {sorted(extra)}")
        return cls(StepFunction.from_config(block.get("theta0", 0.0)),
                   StepFunction.from_config(block.get("theta1", 0.0)), **kw)


@dataclass(frozen=True, eq=False)
class DensityPath:
    log_d_values: np.ndarray
    hit_zero: np.ndarray

    @property
    def d_values(self) -> np.ndarray:
        return np.exp(self.log_d_values)

    @property
    def terminal_d(self) -> np.ndarray:
        return np.exp(self.log_d_values[:, -1])

    @property
    def terminal_log_d(self) -> np.ndarray:
        return self.log_d_values[:, -1]


def _cum(steps: np.ndarray) -> np.ndarray:
    out = np.zeros(steps.shape[:-1] + (steps.shape[-1] + 1,))
    np.cumsum(steps, axis=-1, out=out[..., 1:])
    return out


def density_paths(ctrl: ControlPair, paths: PathBundle, grid: TimeGrid | None = None,
                  form: str = "compensated") -> DensityPath:
    """``log D`` at the grid nodes.

    ``form="compensated"`` sums ``log(1 + theta1)`` over jumps and subtracts
    ``int theta1 dnu dt``; ``form="explicit"`` writes the same quantity as
    ``Z_t - <Z^c>_t / 2 + sum (log(1 + dZ) - dZ)``.
    """
    grid = grid or paths.grid
    model = paths.model
    th0 = ctrl.theta0_on_grid(grid)
    dt = grid.dt
    gauss = th0[None, :] * paths.brownian_increments
    half_qv = 0.5 * th0 ** 2 * dt
    if model.n_atoms:
        th1 = ctrl.theta1_on_grid(grid, model.n_atoms)
        comp = th1 @ model.nu_masses * dt
        t_jump = th1[paths.jump_step, paths.jump_atom]
    else:
        comp = np.zeros(grid.n_steps)
        t_jump = np.zeros(0)
    dead = t_jump <= -1.0
    log_jump = np.log1p(np.where(dead, 0.0, t_jump))
    if form == "compensated":
        steps = (gauss - half_qv[None, :]) + paths.per_step_sum(log_jump) - comp[None, :]
    elif form == "explicit":
        z = gauss + (paths.per_step_sum(t_jump) - comp[None, :])
        steps = (z - half_qv[None, :]) + paths.per_step_sum(log_jump - t_jump)
    else:
        raise ValueError(f"unknown density form {form!r}")
    log_d = _cum(steps)
    hit = np.zeros(paths.n_paths, dtype=bool)
    if np.any(dead):
        hit[paths.jump_path[dead]] = True
        first = np.full(paths.n_paths, grid.n_steps + 1)
        np.minimum.at(first, paths.jump_path[dead], paths.jump_step[dead] + 1)
        cols = np.arange(grid.n_steps + 1)[None, :]
        log_d = np.where(cols >= first[:, None], -np.inf, log_d)
    return DensityPath(log_d, hit)


@dataclass(frozen=True, eq=False)
class ElmmResidual:
    nodes: np.ndarray
    epsilon: np.ndarray

    @property
    def sup_abs(self) -> float:
        return float(np.max(np.abs(self.epsilon)))


def _jump_drift(spec: MarketSpec, theta1: StepFunction, model: LevyModel, t) -> np.ndarray:
    if not model.n_atoms:
        return np.zeros(np.shape(t))
    gam = spec.gamma.on_nodes_atoms(np.atleast_1d(t), model.n_atoms)
    th1 = theta1.on_nodes_atoms(np.atleast_1d(t), model.n_atoms)
    # explicit left-to-right accumulation keeps the value identical whatever the row count
    out = np.zeros(gam.shape[0])
    for j, mass in enumerate(model.nu_masses):
        out = out + gam[:, j] * th1[:, j] * mass
    return out


def elmm_residual(spec: MarketSpec, ctrl: ControlPair, grid: TimeGrid, model: LevyModel) -> ElmmResidual:
    """``eps_t = alpha + beta theta0 + int gamma theta1 dnu`` at every grid node.

    Evaluated as ``beta * (theta0 + (alpha + J) / beta)`` so that controls
    built by :func:`complete_to_elmm` give exactly zero.
    """
    nodes = grid.nodes
    alpha, beta, th0 = spec.alpha.at(nodes), spec.beta.at(nodes), ctrl.theta0.at(nodes)
    drift = alpha + _jump_drift(spec, ctrl.theta1, model, nodes)
    eps = beta * (th0 + drift / beta)
    return ElmmResidual(nodes, eps)


def complete_to_elmm(spec: MarketSpec, ctrl_partial, model: LevyModel,
                     horizon: float | None = None) -> ControlPair:
    """Choose ``theta0 = -(alpha + int gamma theta1 dnu) / beta`` piecewise.

    ``ctrl_partial`` is a :class:`ControlPair` (its ``theta0`` is ignored) or
    a bare ``theta1`` step function.
    """
    if isinstance(ctrl_partial, ControlPair):
        theta1, floor, equiv = ctrl_partial.theta1, ctrl_partial.delta_floor, ctrl_partial.equivalent
    else:
        theta1 = ctrl_partial if isinstance(ctrl_partial, StepFunction) else StepFunction.constant(ctrl_partial)
        floor, equiv = DELTA_FLOOR, True
    horizon = spec.horizon_T if horizon is None else horizon
    knots = merged_knots(horizon, spec.alpha, spec.beta, spec.gamma, theta1)
    left = np.array((0.0,) + knots)
    drift = spec.alpha.at(left) + _jump_drift(spec, theta1, model, left)
    xi0 = -(drift / spec.beta.at(left))
    return ControlPair(StepFunction(knots, xi0), theta1, floor, equiv)


def tilt_sample(ctrl: ControlPair, model: LevyModel, grid: TimeGrid, n_paths: int, seed: int,
                *, path_index_base: int = 0, workers: int | None = None) -> PathBundle:
    """Paths drawn directly under ``Q``: Brownian drift ``theta0``, jump masses ``(1 + theta1) nu``."""
    factor = 1.0 + ctrl.theta1_on_grid(grid, model.n_atoms) if model.n_atoms else None
    return sample_paths(model, grid, n_paths, seed, drift=ctrl.theta0_on_grid(grid),
                        intensity_factor=factor, path_index_base=path_index_base,
                        workers=workers, sampling_control=ctrl)


def expectation(values: np.ndarray, weights: np.ndarray | None = None) -> Estimate:
    """Sample mean with s.e.; ``weights`` multiply the values path by path."""
    vals = np.asarray(values, dtype=float)
    if weights is not None:
        vals = vals * weights
    return Estimate(*_rng.mean_and_se(vals))


def relative_entropy(ctrl: ControlPair, paths: PathBundle, grid: TimeGrid | None = None) -> Estimate:
    """``H(Q|P)``.

    On reference paths this is ``E[D_T log D_T]`` (``0 log 0 := 0``).  On
    paths tilted by ``ctrl`` itself it is ``E_Q[log D_T]``.
    """
    dens = density_paths(ctrl, paths, grid)
    log_d = dens.terminal_log_d
    if paths.sampling_control is ctrl:
        return expectation(log_d)
    d = np.exp(log_d)
    with np.errstate(invalid="ignore"):
        vals = np.where(d > 0.0, d * log_d, 0.0)
    return expectation(vals)
