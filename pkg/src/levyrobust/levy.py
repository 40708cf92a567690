"""Finite-activity Levy processes: model, time grid, path simulation.

The driving process is ``L_t = b t + W_t + (compensated jumps of size
|x| <= 1) + (jumps of size |x| > 1)`` with a finite atomic Levy measure
``nu = lambda * sum_j p_j delta_{x_j}``.  Simulated paths keep every
ingredient (Brownian increments and individual jump events), so all
downstream integrals are computed from the raw events.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import rng as _rng


class LevyModelError(ValueError):
    pass


def _ro(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class LevyModel:
    drift_b: float
    jump_intensity: float
    jump_sizes: np.ndarray
    jump_probs: np.ndarray
    small_jump_truncation_eps: float = 0.0
    has_brownian: bool = True

    def __post_init__(self):
        sizes = _ro(self.jump_sizes)
        probs = _ro(self.jump_probs)
        if sizes.shape != probs.shape or sizes.ndim != 1:
            raise LevyModelError("jump_sizes and jump_probs must be 1-D of equal length")
        if np.any(sizes == 0.0):
            raise LevyModelError("ν must charge ℝ₀ only (zero jump size given)")
        if np.any(probs < 0.0):
            raise LevyModelError("jump probabilities must be nonnegative")
        lam = float(self.jump_intensity)
        if not np.isfinite(lam) or lam < 0.0:
            raise LevyModelError("jump intensity must be finite and nonnegative")
        if sizes.size and abs(probs.sum() - 1.0) > 1e-12:
            raise LevyModelError("jump probabilities must sum to 1")
        if lam > 0.0 and not sizes.size:
            raise LevyModelError("positive jump intensity needs at least one atom")
        if not self.has_brownian:
            raise LevyModelError("the Brownian coefficient is fixed to 1")
        object.__setattr__(self, "jump_sizes", sizes)
        object.__setattr__(self, "jump_probs", probs)
        object.__setattr__(self, "jump_intensity", lam)
        object.__setattr__(self, "drift_b", float(self.drift_b))

    @property
    def n_atoms(self) -> int:
        return int(self.jump_sizes.size)

    @property
    def nu_masses(self) -> np.ndarray:
        """``nu({x_j}) = lambda * p_j``."""
        return self.jump_intensity * self.jump_probs

    @property
    def small_jump_compensator(self) -> float:
        """``int_{0<|x|<=1} x nu(dx)``, the drift removed by compensation."""
        small = np.abs(self.jump_sizes) <= 1.0
        return float(np.sum(self.jump_sizes[small] * self.nu_masses[small]))

    def to_dict(self) -> dict:
        return {
            "drift_b": self.drift_b,
            "intensity": self.jump_intensity,
            "atoms": [[float(x), float(p)] for x, p in zip(self.jump_sizes, self.jump_probs)],
            "small_jump_truncation_eps": self.small_jump_truncation_eps,
        }


def build_levy_model(b: float, lam: float, atoms: Sequence[tuple[float, float]]) -> LevyModel:
    """Normalize ``(size, prob)`` atoms into a :class:`LevyModel`.

    >>> build_levy_model(0.0, 2.0, [(1.0, 0.5), (-1.0, 0.5)]).nu_masses.tolist()
    [1.0, 1.0]
    """
    atoms = [(float(x), float(p)) for x, p in atoms]
    sizes = np.array([a[0] for a in atoms], dtype=float)
    probs = np.array([a[1] for a in atoms], dtype=float)
    if np.any(sizes == 0.0):
        raise LevyModelError("ν must charge ℝ₀ only (zero jump size given)")
    if np.any(probs < 0.0):
        raise LevyModelError("jump probabilities must be nonnegative")
    if atoms:
        total = probs.sum()
        if abs(total - 1.0) > 1e-9:
            raise LevyModelError(f"jump probabilities sum to {total}, expected 1")
        probs = probs / total
    return LevyModel(drift_b=b, jump_intensity=lam, jump_sizes=sizes, jump_probs=probs)


@dataclass(frozen=True)
class TimeGrid:
    horizon_T: float
    n_steps: int

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ValueError("horizon must be positive")
        if int(self.n_steps) < 1:
            raise ValueError("need at least one time step")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "horizon_T", float(self.horizon_T))

    @property
    def dt(self) -> float:
        return self.horizon_T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon_T, self.n_steps + 1)

    def step_of(self, times: np.ndarray) -> np.ndarray:
        """Interval index ``i`` with ``t in (t_i, t_{i+1}]``."""
        idx = np.searchsorted(self.nodes, np.asarray(times, dtype=float), side="left") - 1
        return np.clip(idx, 0, self.n_steps - 1)


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Grid paths of ``W`` and ``L`` plus the raw jump events.

    ``brownian_increments[p, i]`` is ``W_{t_{i+1}} - W_{t_i}``.  Jump ``k``
    hits path ``jump_path[k]`` at ``jump_time[k]`` with size
    ``model.jump_sizes[jump_atom[k]]``; events are sorted by path, then time.
    ``sampling_control`` is the control pair of the measure the paths were
    drawn under (``None`` for the reference measure).
    """

    grid: TimeGrid
    model: LevyModel
    brownian_increments: np.ndarray
    jump_path: np.ndarray
    jump_time: np.ndarray
    jump_atom: np.ndarray
    levy_values: np.ndarray
    seed: int
    path_index_base: int = 0
    sampling_control: object = None
    weights: np.ndarray | None = field(default=None)

    @property
    def n_paths(self) -> int:
        return int(self.brownian_increments.shape[0])

    @property
    def jump_sizes(self) -> np.ndarray:
        return self.model.jump_sizes[self.jump_atom]

    @property
    def jump_step(self) -> np.ndarray:
        return self.grid.step_of(self.jump_time)

    @property
    def brownian_values(self) -> np.ndarray:
        out = np.zeros((self.n_paths, self.grid.n_steps + 1))
        np.cumsum(self.brownian_increments, axis=1, out=out[:, 1:])
        return out

    def per_step_sum(self, per_jump: np.ndarray) -> np.ndarray:
        """Aggregate a per-jump quantity into ``(n_paths, n_steps)`` interval sums."""
        n, m = self.n_paths, self.grid.n_steps
        flat = self.jump_path * m + self.jump_step
        return np.bincount(flat, weights=per_jump, minlength=n * m).reshape(n, m)

    def cumulative_at_nodes(self, per_jump: np.ndarray) -> np.ndarray:
        steps = self.per_step_sum(per_jump)
        out = np.zeros((self.n_paths, self.grid.n_steps + 1))
        np.cumsum(steps, axis=1, out=out[:, 1:])
        return out

    def jump_counts(self) -> np.ndarray:
        """Number of jumps per path and atom, shape ``(n_paths, n_atoms)``."""
        n, m = self.n_paths, self.model.n_atoms
        return np.bincount(self.jump_path * m + self.jump_atom, minlength=n * m).reshape(n, m)

    def jump_events(self, path: int) -> list[tuple[float, float]]:
        sel = self.jump_path == path
        return list(zip(self.jump_time[sel].tolist(), self.jump_sizes[sel].tolist()))

    def levy_components(self) -> dict[str, np.ndarray]:
        nodes = self.grid.nodes
        sizes = self.jump_sizes
        small = np.abs(sizes) <= 1.0
        comp = self.model.small_jump_compensator
        return {
            "drift": np.broadcast_to(self.model.drift_b * nodes, (self.n_paths, nodes.size)),
            "brownian": self.brownian_values,
            "small_compensated": self.cumulative_at_nodes(np.where(small, sizes, 0.0)) - comp * nodes,
            "large": self.cumulative_at_nodes(np.where(small, 0.0, sizes)),
        }

    def with_brownian_drift(self, drift_per_step: np.ndarray, sampling_control=None) -> "PathBundle":
        """Same randomness, Brownian increments shifted by ``drift_per_step * dt``.

        Used for measures whose Brownian part is tilted while jumps are kept
        from the reference measure (the caller carries the jump weights).
        """
        inc = self.brownian_increments + np.asarray(drift_per_step, dtype=float)[None, :] * self.grid.dt
        return _assemble(self.grid, self.model, inc, self.jump_path, self.jump_time, self.jump_atom,
                         self.seed, self.path_index_base, sampling_control)

    def with_weights(self, weights: np.ndarray) -> "PathBundle":
        return PathBundle(self.grid, self.model, self.brownian_increments, self.jump_path,
                          self.jump_time, self.jump_atom, self.levy_values, self.seed,
                          self.path_index_base, self.sampling_control, _ro(weights))


def _levy_sum(components: dict[str, np.ndarray]) -> np.ndarray:
    return ((components["drift"] + components["brownian"]) + components["small_compensated"]) + components["large"]


def _assemble(grid, model, increments, jpath, jtime, jatom, seed, base, control) -> PathBundle:
    bundle = PathBundle(grid, model, _ro(increments), _ro(jpath, np.int64), _ro(jtime),
                        _ro(jatom, np.int64), np.empty((0, 0)), int(seed), int(base), control)
    levy = _ro(_levy_sum(bundle.levy_components()))
    object.__setattr__(bundle, "levy_values", levy)
    return bundle


def _sample_block(model: LevyModel, grid: TimeGrid, seed: int, block: int, lo: int, hi: int,
                  drift: np.ndarray | None, accept: np.ndarray | None, bound: float):
    B, n, m = _rng.BLOCK_SIZE, grid.n_steps, model.n_atoms
    gen = _rng.block_generator(seed, block)
    z = gen.standard_normal((B, n))
    counts = gen.poisson(model.nu_masses * bound * grid.horizon_T, size=(B, m))
    reps = counts.ravel()
    total = int(reps.sum())
    u_time = gen.random(total)
    u_acc = gen.random(total)
    path = np.repeat(np.repeat(np.arange(B), m), reps)
    atom = np.repeat(np.tile(np.arange(m), B), reps)
    time = grid.horizon_T * (1.0 - u_time)
    keep = (path >= lo) & (path < hi)
    if accept is not None:
        keep &= u_acc < accept[grid.step_of(time), atom]
    inc = np.sqrt(grid.dt) * z[lo:hi]
    if drift is not None:
        inc = inc + drift[None, :] * grid.dt
    return inc, path[keep] - lo, time[keep], atom[keep]


def sample_paths(model: LevyModel, grid: TimeGrid, n_paths: int, seed: int, *,
                 drift: np.ndarray | None = None, intensity_factor: np.ndarray | None = None,
                 path_index_base: int = 0, workers: int | None = None,
                 sampling_control=None) -> PathBundle:
    """Exact grid sampler with an optional Brownian drift and jump-intensity factor.

    ``drift`` has shape ``(n_steps,)``; ``intensity_factor`` has shape
    ``(n_steps, n_atoms)`` and multiplies ``nu`` on each interval (exact
    thinning of a dominating Poisson process).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    accept, bound = None, 1.0
    if intensity_factor is not None and model.n_atoms:
        factor = np.asarray(intensity_factor, dtype=float)
        if np.any(factor < 0.0):
            raise ValueError("intensity factors must be nonnegative")
        bound = max(1.0, float(factor.max()))
        accept = factor / bound
    drift = None if drift is None else np.asarray(drift, dtype=float)

    def run(spec):
        block, lo, hi = spec
        return block, _sample_block(model, grid, seed, block, lo, hi, drift, accept, bound)

    parts = _rng.parallel_map(run, _rng.blocks_for(n_paths, path_index_base), workers)
    incs, paths, times, atoms = [], [], [], []
    offset = 0
    for _, (inc, p, t, a) in parts:
        incs.append(inc)
        paths.append(p + offset)
        times.append(t)
        atoms.append(a)
        offset += inc.shape[0]
    jpath = np.concatenate(paths)
    jtime = np.concatenate(times)
    jatom = np.concatenate(atoms)
    order = np.lexsort((jtime, jpath))
    return _assemble(grid, model, np.concatenate(incs), jpath[order], jtime[order], jatom[order],
                     seed, path_index_base, sampling_control)


def simulate_paths(model: LevyModel, grid: TimeGrid, n_paths: int, seed: int, *,
                   path_index_base: int = 0, workers: int | None = None) -> PathBundle:
    """Paths under the reference measure; deterministic in ``(seed, path index)``."""
    return sample_paths(model, grid, n_paths, seed, path_index_base=path_index_base, workers=workers)


def truncate_levy_measure(nu_raw: Callable[[float], float] | LevyModel, eps: float, n_bins: int, *,
                          lower: float = 0.0, upper: float = 1.0, drift_b: float = 0.0) -> LevyModel:
    """Reduce a Levy density on ``[lower, -eps) U (eps, upper]`` to bin-midpoint atoms.

    Each side of the origin is split into ``n_bins`` equal bins whose masses
    are the integrals of ``nu_raw``.  An already atomic model is passed
    through with atoms inside ``[-eps, eps]`` dropped.
    """
    if not eps > 0.0:
        raise LevyModelError("eps must be positive: an infinite-activity measure cannot be simulated exactly")
    if isinstance(nu_raw, LevyModel):
        keep = np.abs(nu_raw.jump_sizes) > eps
        masses = nu_raw.nu_masses[keep]
        lam = float(masses.sum())
        probs = masses / lam if lam > 0 else masses
        return LevyModel(nu_raw.drift_b, lam, nu_raw.jump_sizes[keep], probs, float(eps))
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    sides = []
    if upper > eps:
        sides.append((eps, upper))
    if lower < -eps:
        sides.append((lower, -eps))
    sizes, masses = [], []
    for a, b in sides:
        if not (np.isfinite(a) and np.isfinite(b)):
            raise LevyModelError("truncation support must be bounded")
        _check_integrable(nu_raw, a, b)
        edges = np.linspace(a, b, n_bins + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            mass, _ = integrate.quad(nu_raw, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
            if mass < 0:
                raise LevyModelError("Levy density must be nonnegative")
            if mass > 0:
                sizes.append(0.5 * (lo + hi))
                masses.append(mass)
    masses = np.array(masses)
    lam = float(masses.sum()) if masses.size else 0.0
    probs = masses / lam if lam > 0 else masses
    return LevyModel(drift_b, lam, np.array(sizes), probs, float(eps))


def _check_integrable(nu_raw, a: float, b: float) -> None:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(nu_raw, a, b, limit=200)
        except (integrate.IntegrationWarning, ZeroDivisionError, OverflowError) as exc:
            raise LevyModelError(f"Levy density is not integrable on [{a}, {b}]: {exc}") from None
    if not np.isfinite(val) or err > 1e-6 * max(1.0, abs(val)):
        raise LevyModelError(f"Levy density is not integrable on [{a}, {b}]")


def export_paths_csv(bundle: PathBundle, path, max_paths: int | None = None) -> None:
    """Write ``path_id, t, W, L, n_jumps`` rows (one per path and node)."""
    n = bundle.n_paths if max_paths is None else min(max_paths, bundle.n_paths)
    nodes = bundle.grid.nodes
    w = bundle.brownian_values[:n]
    counts = bundle.cumulative_at_nodes(np.ones(bundle.jump_time.size))[:n]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["path_id", "t", "W", "L", "n_jumps"])
        for p in range(n):
            pid = bundle.path_index_base + p
            for i, t in enumerate(nodes):
                out.writerow([pid, repr(float(t)), repr(float(w[p, i])),
                              repr(float(bundle.levy_values[p, i])), int(counts[p, i])])
