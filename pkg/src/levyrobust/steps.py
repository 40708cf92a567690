"""Piecewise-constant functions of time, optionally indexed by jump atom.

Every time-dependent coefficient and control in the package is a step
function ``f(t) = values[k]`` for ``knots[k-1] <= t < knots[k]``.  Grid
integrals use the value at the left node of each interval, which is also the
value used for jumps that occur inside that interval (predictable version).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function on ``[0, inf)``.

    ``values`` has shape ``(len(knots) + 1,)`` for scalar coefficients or
    ``(len(knots) + 1, n_atoms)`` for coefficients on time x jump atoms.
    A 1-D ``values`` array used where per-atom values are required is
    broadcast across atoms.
    """

    knots: tuple[float, ...]
    values: np.ndarray

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("step function knots must be strictly increasing")
        values = _frozen(self.values)
        if values.ndim not in (1, 2) or values.shape[0] != len(knots) + 1:
            raise ValueError(
                f"expected {len(knots) + 1} pieces, got values of shape {values.shape}"
            )
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, value) -> "StepFunction":
        arr = np.asarray(value, dtype=float)
        return cls((), arr[None, ...])

    @classmethod
    def from_breakpoints(cls, breakpoints: Sequence[float], values) -> "StepFunction":
        """Build from ``[0, b_1, ..., b_{K-1}, T]`` style breakpoints (ends dropped)."""
        bp = list(breakpoints)
        return cls(tuple(bp[1:-1]), values)

    @property
    def n_pieces(self) -> int:
        return self.values.shape[0]

    @property
    def per_atom(self) -> bool:
        return self.values.ndim == 2

    def piece_index(self, t) -> np.ndarray:
        return np.searchsorted(np.asarray(self.knots), np.asarray(t, dtype=float), side="right")

    def at(self, t):
        return self.values[self.piece_index(t)]

    def on_grid(self, nodes: np.ndarray) -> np.ndarray:
        """Values on each grid interval ``(t_i, t_{i+1}]``, taken at ``t_i``."""
        return self.at(np.asarray(nodes)[:-1])

    def on_grid_atoms(self, nodes: np.ndarray, n_atoms: int) -> np.ndarray:
        vals = self.on_grid(nodes)
        if vals.ndim == 1:
            return np.repeat(vals[:, None], n_atoms, axis=1)
        if vals.shape[1] != n_atoms:
            raise ValueError(f"coefficient carries {vals.shape[1]} atoms, model has {n_atoms}")
        return vals

    def on_nodes_atoms(self, nodes: np.ndarray, n_atoms: int) -> np.ndarray:
        vals = self.at(np.asarray(nodes))
        if vals.ndim == 1:
            return np.repeat(vals[:, None], n_atoms, axis=1)
        return vals

    def map(self, fn) -> "StepFunction":
        return StepFunction(self.knots, fn(np.array(self.values)))

    def to_dict(self) -> dict:
        return {"knots": list(self.knots), "values": self.values.tolist()}

    @classmethod
    def from_config(cls, spec) -> "StepFunction":
        """Accept a bare number, a per-atom list, or ``{knots, values}``."""
        if isinstance(spec, dict):
            extra = set(spec) - {"knots", "values"}
            if extra:
                raise KeyError(f"unknown keys {sorted(extra)}")
            return cls(tuple(spec.get("knots", ())), spec["values"])
        if isinstance(spec, (list, tuple)):
            return cls((), np.asarray(spec, dtype=float)[None, :])
        return cls.constant(float(spec))


def merged_knots(horizon: float, *funcs: StepFunction) -> tuple[float, ...]:
    """Union of all interior knots of ``funcs`` that fall inside ``(0, horizon)``."""
    ks = set()
    for f in funcs:
        ks.update(k for k in f.knots if 0.0 < k < horizon)
    return tuple(sorted(ks))
