"""Utility functions, convex conjugates and the truncation-ladder expectation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import rng as _rng

DOMAIN_FLOOR = 1e-12
INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_minimize(fn: Callable[[np.ndarray], np.ndarray], lo, hi, n_iter: int = 120):
    """Vectorized golden-section search: minimize ``fn`` on ``[lo, hi]`` elementwise.

    ``fn`` maps an array of abscissae (one per problem) to objective values.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    a, b = a.copy(), b.copy()
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(n_iter):
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        c_new = b - INV_PHI * (b - a)
        d_new = a + INV_PHI * (b - a)
        # reuse the surviving interior point, evaluate the other
        nc = np.where(left, c_new, d)
        nd = np.where(left, c, d_new)
        fnc = np.where(left, fn(c_new), fd)
        fnd = np.where(left, fc, fn(d_new))
        c, d, fc, fd = nc, nd, fnc, fnd
    x = 0.5 * (a + b)
    return x, fn(x)


@dataclass(frozen=True, eq=False)
class UtilitySpec:
    kind: str
    u: Callable
    u_prime: Callable
    v: Callable
    v_prime: Callable
    domain_floor: float = DOMAIN_FLOOR
    params: dict = field(default_factory=dict)

    def inverse_marginal(self, y):
        """``(U')^{-1}(y) = -V'(y)``."""
        return -self.v_prime(y)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params}


def _guard(x, floor, fn, below):
    x = np.asarray(x, dtype=float)
    ok = x >= floor
    with np.errstate(all="ignore"):
        out = np.where(ok, fn(np.where(ok, x, 1.0)), below)
    return out if out.ndim else float(out)


def make_power_utility(q: float, floor: float = DOMAIN_FLOOR) -> UtilitySpec:
    """``U(x) = x^q / q``, ``V(y) = y^{-p} / p`` with ``p = q / (1 - q)``."""
    q = float(q)
    if not (q < 1.0 and q != 0.0):
        raise ValueError("power utility needs q ∈ (−∞,1)∖{0}")
    p = q / (1.0 - q)

    def u(x):
        if q < 0:
            return _guard(x, floor, lambda z: z ** q / q, -np.inf)
        return _guard_power_pos(x, q)

    return UtilitySpec(
        "power",
        u=u,
        u_prime=lambda x: _guard(x, floor, lambda z: z ** (q - 1.0), np.inf),
        v=lambda y: _guard(y, floor, lambda z: z ** (-p) / p, np.inf if p > 0 else -np.inf),
        v_prime=lambda y: _guard(y, floor, lambda z: -(z ** (-p - 1.0)), -np.inf),
        domain_floor=floor,
        params={"q": q, "p": p},
    )


def _guard_power_pos(x, q):
    x = np.asarray(x, dtype=float)
    with np.errstate(all="ignore"):
        out = np.where(x >= 0.0, np.maximum(x, 0.0) ** q / q, -np.inf)
    return out if out.ndim else float(out)


def make_log_utility(floor: float = DOMAIN_FLOOR) -> UtilitySpec:
    """``U = log``, ``V(y) = -log y - 1``, ``V'(y) = -1 / y``."""
    return UtilitySpec(
        "log",
        u=lambda x: _guard(x, floor, np.log, -np.inf),
        u_prime=lambda x: _guard(x, floor, lambda z: 1.0 / z, np.inf),
        v=lambda y: _guard(y, floor, lambda z: -np.log(z) - 1.0, np.inf),
        v_prime=lambda y: _guard(y, floor, lambda z: -1.0 / z, -np.inf),
        domain_floor=floor,
    )


class NumericConjugate:
    """``V(y) = sup_x {U(x) - x y}`` tabulated on a log grid and interpolated.

    The maximizer ``x*(y)`` is found by golden-section search in ``log x``
    (the objective is unimodal there because ``U'`` decreases) and
    ``log x*`` is interpolated with a monotone cubic in ``log y``.  ``V`` is
    then ``U(x*) - x* y``, which is stationary in ``x*`` so interpolation
    error enters only at second order.  Outside the table the search is run
    directly.
    """

    def __init__(self, u: Callable, y_range=(1e-8, 1e8), n_grid: int = 1024, x_range=(1e-14, 1e14)):
        self.u = u
        self.x_range = x_range
        self.log_y = np.linspace(np.log(y_range[0]), np.log(y_range[1]), n_grid)
        _, xs = self._solve(np.exp(self.log_y))
        self._logx = PchipInterpolator(self.log_y, np.log(xs), extrapolate=False)

    def _solve(self, y):
        y = np.asarray(y, dtype=float)

        def neg(s):
            x = np.exp(s)
            with np.errstate(all="ignore"):
                return -(self.u(x) - x * y)

        s, f = golden_minimize(neg, np.log(self.x_range[0]) * np.ones_like(y), np.log(self.x_range[1]))
        return -f, np.exp(s)

    def _eval(self, y, table, direct):
        y = np.asarray(y, dtype=float)
        out = np.empty(y.shape)
        pos = y > 0
        ly = np.log(np.where(pos, y, 1.0))
        inside = pos & (ly >= self.log_y[0]) & (ly <= self.log_y[-1])
        out[inside] = table(ly[inside])
        rest = pos & ~inside
        if np.any(rest):
            out[rest] = direct(y[rest])
        out[~pos] = np.nan
        return out if out.ndim else float(out)

    def v(self, y):
        def table(ly):
            x = np.exp(self._logx(ly))
            return self.u(x) - x * np.exp(ly)

        return self._eval(y, table, lambda z: self._solve(z)[0])

    def v_prime(self, y):
        return self._eval(y, lambda ly: -np.exp(self._logx(ly)), lambda z: -self._solve(z)[1])


def make_custom_utility(u: Callable, u_prime: Callable, floor: float = DOMAIN_FLOOR,
                        params: dict | None = None) -> UtilitySpec:
    conj = NumericConjugate(u)
    return UtilitySpec("custom", u, u_prime, conj.v, conj.v_prime, floor, dict(params or {}))


def utility_from_terms(terms) -> UtilitySpec:
    """Custom utility ``U = sum_k w_k U_k`` with ``U_k`` log or power terms.

    ``terms`` is a list of ``{"weight": w, "kind": "log"}`` or
    ``{"weight": w, "kind": "power", "q": q}`` (weights positive).
    """
    parts = []
    for i, t in enumerate(terms):
        extra = set(t) - {"weight", "kind", "q"}
        if extra:
            raise KeyError(f"[{i}]: unknown keys {sorted(extra)}")
        w = float(t.get("weight", 1.0))
        if not w > 0:
            raise ValueError(f"[{i}].weight must be positive")
        kind = t.get("kind")
        if kind == "log":
            parts.append((w, make_log_utility()))
        elif kind == "power":
            parts.append((w, make_power_utility(float(t["q"]))))
        else:
            raise ValueError(f"[{i}].kind must be 'log' or 'power'")
    if not parts:
        raise ValueError("custom utility needs at least one term")

    def u(x):
        return sum(w * s.u(x) for w, s in parts)

    def u_prime(x):
        return sum(w * s.u_prime(x) for w, s in parts)

    return make_custom_utility(u, u_prime, params={"terms": [dict(t) for t in terms]})


def bidual(spec: UtilitySpec, x, y_range=(1e-10, 1e10)):
    """``inf_y {V(y) + x y}`` by golden-section search in ``log y``; returns ``(value, y*)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))

    def obj(s):
        y = np.exp(s)
        return spec.v(y) + x * y

    s, f = golden_minimize(obj, np.full(x.shape, np.log(y_range[0])), np.log(y_range[1]), n_iter=160)
    return f, np.exp(s)


class ElasticityResult(NamedTuple):
    applicable: bool
    estimate: float
    at_max: float
    trend: tuple


def asymptotic_elasticity(spec: UtilitySpec, probe_grid=None) -> ElasticityResult:
    """Tail supremum of ``x U'(x) / U(x)`` over the last three decades of the grid.

    The default grid is geometric from 1 to 1e8.  ``trend`` holds the ratio
    at the start of each of the last three decades and at the end.
    """
    x = np.geomspace(1.0, 1e8, 161) if probe_grid is None else np.asarray(probe_grid, dtype=float)
    u = np.asarray(spec.u(x), dtype=float)
    tail = x >= x[-1] / 1e3
    if not np.any(u[tail] > 0):
        return ElasticityResult(False, float("nan"), float("nan"), ())
    with np.errstate(all="ignore"):
        ratio = x * np.asarray(spec.u_prime(x)) / u
    ratio = np.where(u > 0, ratio, -np.inf)
    marks = x[-1] / np.array([1e3, 1e2, 1e1, 1.0])
    idx = [int(np.argmin(np.abs(np.log(x) - np.log(mk)))) for mk in marks]
    return ElasticityResult(True, float(np.max(ratio[tail])), float(ratio[-1]),
                            tuple(float(ratio[i]) for i in idx))


class LadderResult(NamedTuple):
    value: float
    se: float
    converged: bool
    levels: tuple

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "converged": self.converged}


LADDER_MAX_K = 60
LADDER_RTOL = 1e-10


def extended_expectation(payoff, weights=None, *, max_k: int = LADDER_MAX_K, rtol: float = LADDER_RTOL,
                         keep_levels: bool = False) -> LadderResult:
    """``sup_n E[w (X ^ n)]`` along ``n = 2^k``, ``k = 0..max_k``.

    Stops at the first rung whose relative increment is below ``rtol``;
    otherwise returns ``+inf``.  Rungs below the sample minimum move by
    exactly one half and are skipped without changing the outcome.
    """
    x = np.asarray(payoff, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if np.any(np.isnan(x)):
        raise ValueError("payoff contains NaN")

    def rung(n):
        vals = np.minimum(x, n)
        if w is not None:
            vals = vals * w
        return _rng.mean_and_se(vals)

    k0 = 0
    lo = float(np.min(x)) if x.size else 0.0
    if np.isfinite(lo) and lo > 1.0:
        k0 = min(max_k, int(np.floor(np.log2(lo))))
    prev, _ = rung(2.0 ** k0)
    levels = [prev] if keep_levels else []
    for k in range(k0 + 1, max_k + 1):
        cur, se = rung(2.0 ** k)
        if keep_levels:
            levels.append(cur)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300) or cur == prev:
            return LadderResult(cur, se, True, tuple(levels))
        prev = cur
    return LadderResult(np.inf, np.nan, False, tuple(levels))


def utility_from_config(block: dict) -> UtilitySpec:
    kind = block.get("kind")
    if kind == "power":
        extra = set(block) - {"kind", "q"}
        if extra:
            raise KeyError(f"unknown keys {sorted(extra)}")
        if "q" not in block:
            raise KeyError("q")
        return make_power_utility(float(block["q"]))
    if kind == "log":
        extra = set(block) - {"kind"}
        if extra:
            raise KeyError(f"unknown keys {sorted(extra)}")
        return make_log_utility()
    if kind == "custom":
        extra = set(block) - {"kind", "table"}
        if extra:
            raise KeyError(f"unknown keys {sorted(extra)}")
        if "table" not in block:
            raise KeyError("table")
        return utility_from_terms(block["table"])
    raise ValueError(f"utility kind must be power, log or custom, got {kind!r}")


def v_of_log(spec: UtilitySpec, log_z: np.ndarray) -> np.ndarray:
    """``V(exp(log_z))`` evaluated without forming ``exp(log_z)`` where possible."""
    log_z = np.asarray(log_z, dtype=float)
    with np.errstate(over="ignore"):
        if spec.kind == "log":
            return -log_z - 1.0
        if spec.kind == "power":
            p = spec.params["p"]
            return np.exp(-p * log_z) / p
        return np.asarray(spec.v(np.exp(log_z)), dtype=float)


def inverse_marginal_of_log(spec: UtilitySpec, log_z: np.ndarray) -> np.ndarray:
    """``-V'(exp(log_z))``: the terminal wealth attached to a dual variable."""
    log_z = np.asarray(log_z, dtype=float)
    with np.errstate(over="ignore"):
        if spec.kind == "log":
            return np.exp(-log_z)
        if spec.kind == "power":
            return np.exp(-(spec.params["p"] + 1.0) * log_z)
        return -np.asarray(spec.v_prime(np.exp(log_z)), dtype=float)
