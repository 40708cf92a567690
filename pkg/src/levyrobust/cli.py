"""Batch runner: ``levyrobust <subcommand> config.toml``.

Each run writes ``<output_dir>/<subcommand>.json`` (canonical, byte-stable for
a fixed config and seed) and a ``.meta.json`` sidecar holding the timestamp.
Exit codes: 0 success, 2 invalid configuration or failed model assumptions,
3 numeric divergence or failed diagnostics.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import oracle as orc
from .config import FORMAT_VERSION, ConfigError, RunConfig
from .levy import export_paths_csv, simulate_paths
from .market import export_market_csv, price_paths, validate_assumptions, wealth_paths
from .measure import elmm_residual, expectation, relative_entropy, tilt_sample
from .penalty import evaluate_penalty, integrability_report, make_log_penalty
from .solver import check_certificate, solve_dual, solve_primal, weak_duality_audit

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("simulate", "check-elmm", "penalty", "entropy", "dual", "primal", "audit", "oracle")


class AssumptionFailure(Exception):
    pass


def canonical(obj):
    """JSON-ready copy: numpy scalars/arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(obj) -> str:
    return json.dumps(canonical(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _checked_market(cfg: RunConfig):
    market, model, grid = cfg.market(), cfg.levy(), cfg.grid()
    report = validate_assumptions(market, model, grid)
    if not report.all_pass:
        raise AssumptionFailure(f"market assumptions failed: {report.failed()}")
    return market, model, grid, report


# ---------------------------------------------------------------------------
# subcommands: each returns (payload, exit code)


def cmd_simulate(cfg: RunConfig, out: Path):
    model, grid = cfg.levy(), cfg.grid()
    b, _, mc = cfg.solver()
    sim = cfg.root.sub("simulate", {"pi", "x0", "csv_paths"}, required=False)
    csv_rows = sim.integer("csv_paths", 0) if sim else 0
    paths = simulate_paths(model, grid, mc.n_paths, mc.seed, workers=mc.workers)
    counts = paths.jump_counts().sum(axis=1) if model.n_atoms else np.zeros(paths.n_paths)
    payload = {
        "levy_T": expectation(paths.levy_values[:, -1]).to_dict(),
        "brownian_T": expectation(paths.brownian_values[:, -1]).to_dict(),
        "jump_count": expectation(counts).to_dict(),
        "expected_jump_count": model.jump_intensity * grid.horizon_T,
    }
    if csv_rows:
        export_paths_csv(paths, out / "paths.csv", max_paths=csv_rows)
    if cfg.has("market"):
        market, _, _, report = _checked_market(cfg)
        price = price_paths(market, paths)
        pi = sim.num("pi", 1.0) if sim else 1.0
        x0 = sim.num("x0", 1.0) if sim else 1.0
        wealth = wealth_paths(market, price, x0, pi, grid)
        payload.update({
            "assumptions": report.to_dict(),
            "price_T": expectation(price.s_values[:, -1]).to_dict(),
            "absorbed_fraction": float(np.mean(np.isfinite(price.absorption_time_tau))),
            "wealth_T": expectation(wealth.x_values[:, -1]).to_dict(),
            "strategy": {"pi": pi, "x0": x0, "admissible": wealth.admissible},
        })
        if csv_rows:
            export_market_csv(price, grid, out / "market.csv", wealth, max_paths=csv_rows)
    return payload, EXIT_OK


def cmd_check_elmm(cfg: RunConfig, out: Path):
    market, model, grid, report = _checked_market(cfg)
    ctrl = cfg.control(market, model)
    res = elmm_residual(market, ctrl, grid, model)
    payload = {"control": ctrl.to_dict(), "assumptions": report.to_dict(),
               "residual_sup": res.sup_abs, "residual": res.epsilon, "nodes": res.nodes,
               "is_elmm": res.sup_abs <= 1e-10}
    if cfg.has("solver"):
        _, _, mc = cfg.solver()
        paths = tilt_sample(ctrl, model, grid, mc.n_paths, mc.seed, workers=mc.workers)
        est = expectation(price_paths(market, paths).s_values[:, -1])
        payload["price_T_under_Q"] = est.to_dict()
        payload["martingale_z"] = (est.value - market.s0) / est.se if est.se > 0 else 0.0
    return payload, EXIT_OK


def cmd_penalty(cfg: RunConfig, out: Path):
    model, grid = cfg.levy(), cfg.grid()
    market = cfg.market() if cfg.has("market") else None
    spec = cfg.penalty()
    ctrl = cfg.control(market, model)
    val = evaluate_penalty(spec, ctrl, model, grid.horizon_T)
    payload = {"control": ctrl.to_dict(), "penalty": spec.to_dict(), "value": val.value,
               "diagnostic": val.diagnostic}
    if market is not None and cfg.has("utility"):
        payload["certificate"] = check_certificate(cfg.problem())
    if cfg.has("solver"):
        _, _, mc = cfg.solver()
        paths = tilt_sample(ctrl, model, grid, mc.n_paths, mc.seed, workers=mc.workers)
        payload["integrability"] = integrability_report(ctrl, model, grid, paths).to_dict()
    return payload, EXIT_OK if val.finite else EXIT_NUMERIC


def cmd_entropy(cfg: RunConfig, out: Path):
    model, grid = cfg.levy(), cfg.grid()
    market = cfg.market() if cfg.has("market") else None
    ctrl = cfg.control(market, model)
    _, _, mc = cfg.solver()
    paths = tilt_sample(ctrl, model, grid, mc.n_paths, mc.seed, workers=mc.workers)
    est = relative_entropy(ctrl, paths, grid)
    bound = evaluate_penalty(make_log_penalty(grid.horizon_T), ctrl, model, grid.horizon_T)
    payload = {"control": ctrl.to_dict(), "relative_entropy": est.to_dict(),
               "log_threshold_penalty": bound.value,
               "within_bound": est.value <= bound.value + 3.0 * est.se}
    return payload, EXIT_OK if np.isfinite(est.value) else EXIT_NUMERIC


def _solver_setup(cfg: RunConfig):
    _checked_market(cfg)
    problem = cfg.problem()
    b, family, mc = cfg.solver()
    return problem, b, family, mc


def cmd_dual(cfg: RunConfig, out: Path):
    problem, b, family, mc = _solver_setup(cfg)
    sol = solve_dual(b.num("y", 1.0), problem, family, mc)
    payload = {"solution": sol.to_dict(), "family": family.to_dict()}
    ok = sol.diagnostic is None and np.isfinite(sol.v_value)
    return payload, EXIT_OK if ok else EXIT_NUMERIC


def cmd_primal(cfg: RunConfig, out: Path):
    problem, b, family, mc = _solver_setup(cfg)
    sol = solve_primal(b.num("x", 1.0), problem, family, mc, y_grid=cfg.y_grid(b))
    payload = {"solution": sol.to_dict(), "family": family.to_dict()}
    ok = sol.diagnostic is None and np.isfinite(sol.u_value)
    return payload, EXIT_OK if ok else EXIT_NUMERIC


def cmd_audit(cfg: RunConfig, out: Path):
    problem, b, family, mc = _solver_setup(cfg)
    probes = b.opt("probes")
    rep = weak_duality_audit(b.num("x", 1.0), problem, family, mc, y_grid=cfg.y_grid(b), probes=probes)
    payload = {"audit": rep.to_dict(), "family": family.to_dict()}
    return payload, EXIT_OK if not rep.violations else EXIT_NUMERIC


def _oracle_penalty(b, market_p):
    pb = b.sub("penalty", {"kind", "scale", "slopes", "cap"})
    kind = pb.req("kind")
    if kind == "quadratic":
        return orc.quadratic_penalty(pb.num("scale", 5.0), market_p)
    if kind == "entropic":
        return orc.entropy_penalty(market_p)
    if kind == "zero":
        return lambda q: 0.0
    if kind == "capped":
        return orc.capped_quadratic_penalty(market_p, pb.num("scale", 20.0), pb.num("cap", 1.0))
    if kind == "affine":
        return orc.affine_penalty(pb.req("slopes"))
    raise ConfigError(pb.key("kind"), f"must be quadratic, entropic, zero, capped or affine, got {kind!r}")


def cmd_oracle(cfg: RunConfig, out: Path):
    b = cfg.root.sub("oracle", {"s0", "s_T", "p_ref", "penalty", "x", "resolution", "n_strategies",
                                "resolutions", "payoff_bound"})
    p_ref = np.asarray(b.opt("p_ref", [0.5, 0.5]), dtype=float)
    s_T = np.asarray(b.req("s_T"), dtype=float)
    table = _oracle_penalty(b, p_ref)
    try:
        market = orc.FiniteMarket(p_ref, b.num("s0", 1.0), s_T, table)
    except ValueError as exc:
        raise ConfigError(b.path, str(exc)) from None
    utility = cfg.utility()
    r = b.integer("resolution", 40)
    simplex = orc.SimplexGrid(market.m, r)
    strategies = orc.strategy_grid(market, b.integer("n_strategies", 10_001))
    xs = b.opt("x", [0.5, 1.0, 2.0])
    reports = []
    for x in xs:
        rep = orc.exact_dual_and_minimax(market, utility, float(x), simplex=simplex, strategies=strategies)
        reports.append(rep)
    bid = orc.biduality_gap(market, tuple(b.opt("resolutions", [10, 20, 40])), b.num("payoff_bound", 10.0))
    payload = {"validation": market.validation(), "elmm_vertices": market.elmm_extreme_points(),
               "resolution": r, "n_strategies": int(strategies.size), "duality": reports, "biduality": bid}
    return payload, EXIT_OK


HANDLERS = {"simulate": cmd_simulate, "check-elmm": cmd_check_elmm, "penalty": cmd_penalty,
            "entropy": cmd_entropy, "dual": cmd_dual, "primal": cmd_primal, "audit": cmd_audit,
            "oracle": cmd_oracle}


def run(command: str, config_path, seed: int | None = None, output_dir=None) -> int:
    """Execute one subcommand; returns the process exit code."""
    started = time.time()
    try:
        cfg = RunConfig.load(config_path, seed)
        out = Path(output_dir) if output_dir is not None else cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        payload, code = HANDLERS[command](cfg, out)
    except (ConfigError, AssumptionFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, TypeError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    solver_seed = cfg.raw.get("solver", {}).get("seed", 0)
    doc = {"command": command, "format_version": FORMAT_VERSION, "config_hash": cfg.hash,
           "seed": solver_seed, "exit_code": code, "result": payload}
    target = out / f"{command}.json"
    target.write_text(dumps(doc), encoding="utf-8")
    meta = {"timestamp": datetime.now(timezone.utc).isoformat(), "elapsed_s": time.time() - started,
            "config_path": str(config_path)}
    (out / f"{command}.meta.json").write_text(dumps(meta), encoding="utf-8")
    print(str(target))
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="levyrobust", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", help="TOML or JSON run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override solver.seed")
    ap.add_argument("--out", default=None, help="override output_dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.command, args.config, args.seed, args.out)


if __name__ == "__main__":
    sys.exit(main())
