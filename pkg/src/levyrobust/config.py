"""Strict run configuration: TOML (or JSON) in, model objects out.

Unknown keys are rejected and missing required keys are reported with their
full dotted path.  Optional keys fall back to documented defaults, and the
resolved values are echoed into every output.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .levy import LevyModel, TimeGrid, build_levy_model
from .market import MarketSpec
from .measure import ControlPair, complete_to_elmm
from .penalty import PenaltySpec, function_from_descriptor, make_log_penalty, make_power_penalty
from .solver import ControlFamily, DualProblem, MonteCarloConfig
from .steps import StepFunction
from .utility import UtilitySpec, utility_from_config

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FORMAT_VERSION = "1.0"

_TOP_KEYS = {"format_version", "output_dir", "market", "levy", "grid", "utility", "penalty", "control",
             "solver", "simulate", "oracle"}


class ConfigError(ValueError):
    """Invalid or incomplete configuration; ``path`` is the dotted key path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class Block:
    """One config table with its dotted path; unknown keys are rejected on construction."""

    def __init__(self, data, path: str, allowed: set):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a table")
        extra = set(data) - allowed
        if extra:
            raise ConfigError(path, f"unknown keys {sorted(extra)}")
        self.data, self.path = data, path

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def req(self, name: str):
        if name not in self.data:
            raise ConfigError(self.key(name), "missing required key")
        return self.data[name]

    def opt(self, name: str, default=None):
        return self.data.get(name, default)

    def num(self, name: str, default=None) -> float:
        val = self.req(name) if default is None else self.data.get(name, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(self.key(name), f"expected a number, got {val!r}")
        return float(val)

    def integer(self, name: str, default=None) -> int:
        val = self.req(name) if default is None else self.data.get(name, default)
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(self.key(name), f"expected an integer, got {val!r}")
        return val

    def steps(self, name: str, default=None) -> StepFunction:
        val = self.req(name) if default is None else self.data.get(name, default)
        try:
            return StepFunction.from_config(val)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(self.key(name), str(exc)) from None

    def sub(self, name: str, allowed: set, required: bool = True):
        if name not in self.data:
            if required:
                raise ConfigError(self.key(name), "missing required table")
            return None
        return Block(self.data[name], self.key(name), allowed)


def load_raw(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text.decode("utf-8"))


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class RunConfig:
    raw: dict
    root: Block = field(repr=False)

    @classmethod
    def from_raw(cls, raw: dict, seed: int | None = None) -> "RunConfig":
        raw = json.loads(json.dumps(raw))
        if seed is not None:
            raw.setdefault("solver", {})["seed"] = int(seed)
        root = Block(raw, "", _TOP_KEYS)
        version = str(root.req("format_version"))
        if version.split(".")[0] != FORMAT_VERSION.split(".")[0]:
            raise ConfigError("format_version", f"unsupported version {version!r}")
        return cls(raw, root)

    @classmethod
    def load(cls, path, seed: int | None = None) -> "RunConfig":
        return cls.from_raw(load_raw(path), seed)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    @property
    def output_dir(self) -> Path:
        return Path(self.root.opt("output_dir", "results"))

    def has(self, name: str) -> bool:
        return name in self.raw

    # -- model blocks ----------------------------------------------------

    def market(self) -> MarketSpec:
        b = self.root.sub("market", {"alpha", "beta", "gamma", "beta_floor_c", "s0", "horizon_T",
                                     "a3_bound", "gamma_bound"})
        return MarketSpec(b.steps("alpha"), b.steps("beta"), b.steps("gamma", 0.0), b.num("beta_floor_c"),
                          b.num("s0", 1.0), b.num("horizon_T", 1.0), b.num("a3_bound", 1e6),
                          b.num("gamma_bound", np.inf))

    def horizon(self) -> float:
        if self.has("market"):
            return Block(self.raw["market"], "market", set(self.raw["market"])).num("horizon_T", 1.0)
        return 1.0

    def levy(self) -> LevyModel:
        b = self.root.sub("levy", {"drift_b", "intensity", "atoms"})
        lam = b.num("intensity", 0.0)
        atoms = b.opt("atoms", [])
        if lam > 0 and not atoms:
            raise ConfigError(b.key("atoms"), "a positive intensity needs at least one atom")
        try:
            parsed = [(float(a[0]), float(a[1])) for a in atoms]
        except (TypeError, IndexError, ValueError):
            raise ConfigError(b.key("atoms"), "atoms are [size, probability] pairs") from None
        return build_levy_model(b.num("drift_b", 0.0), lam, parsed)

    def grid(self) -> TimeGrid:
        b = self.root.sub("grid", {"n_steps"})
        return TimeGrid(self.horizon(), b.integer("n_steps"))

    def utility(self) -> UtilitySpec:
        b = self.root.sub("utility", {"kind", "q", "table"})
        if "kind" not in b.data:
            raise ConfigError(b.key("kind"), "missing required key")
        try:
            return utility_from_config(dict(b.data))
        except KeyError as exc:
            raise ConfigError(b.key(str(exc.args[0])), "missing required key") from None
        except ValueError as exc:
            raise ConfigError(b.path, str(exc)) from None

    def penalty(self) -> PenaltySpec:
        b = self.root.sub("penalty", {"kind", "scale", "q", "c", "gamma", "h", "h0", "h1"})
        kind = b.req("kind")
        T = self.horizon()
        try:
            if kind == "log":
                spec = make_log_penalty(T)
            elif kind == "power":
                spec = make_power_penalty(b.num("q"), T, b.num("c", 1.0), b.steps("gamma", 1.0))
            elif kind == "custom":
                parts = {}
                for name in ("h", "h0", "h1"):
                    try:
                        parts[name] = function_from_descriptor(b.req(name))
                    except KeyError as exc:
                        raise ConfigError(b.key(name), str(exc.args[0])) from None
                spec = PenaltySpec(parts["h"], parts["h0"], parts["h1"], label="custom",
                                   params={k: b.data[k] for k in ("h", "h0", "h1")})
            else:
                raise ConfigError(b.key("kind"), f"must be log, power or custom, got {kind!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(b.path, str(exc)) from None
        scale = b.num("scale", 1.0)
        return spec if scale == 1.0 else spec.scaled(scale)

    def control(self, market: MarketSpec | None = None, model: LevyModel | None = None) -> ControlPair:
        b = self.root.sub("control", {"theta0", "theta1", "complete_to_elmm"})
        theta1 = b.steps("theta1", 0.0)
        if b.opt("complete_to_elmm", False):
            if "theta0" in b.data:
                raise ConfigError(b.key("theta0"), "theta0 is determined when completing to an ELMM")
            return complete_to_elmm(market, theta1, model, self.horizon())
        return ControlPair(b.steps("theta0", 0.0), theta1)

    def solver(self):
        b = self.root.sub("solver", {"n_paths", "seed", "k_t", "b0", "b1", "n_starts", "max_sweeps",
                                     "rel_tol", "step_tol", "init_step", "x", "y", "y_grid", "probes"})
        d = ControlFamily()
        family = ControlFamily(b.integer("k_t", d.k_t), b.num("b0", d.b0), b.num("b1", d.b1),
                               n_starts=b.integer("n_starts", d.n_starts), max_sweeps=b.integer("max_sweeps", d.max_sweeps),
                               rel_tol=b.num("rel_tol", d.rel_tol), step_tol=b.num("step_tol", d.step_tol),
                               init_step=b.num("init_step", d.init_step))
        mc = MonteCarloConfig(b.integer("n_paths"), b.integer("seed", 0))
        return b, family, mc

    def y_grid(self, b: Block):
        g = b.opt("y_grid")
        if g is None:
            return None
        gb = Block(g, b.key("y_grid"), {"n", "lo", "hi"})
        return np.geomspace(gb.num("lo"), gb.num("hi"), gb.integer("n"))

    def problem(self) -> DualProblem:
        market = self.market()
        return DualProblem(market, self.levy(), self.utility(), self.penalty(), self.grid())

