"""Command-line interface.

Exit codes: 0 success, 1 validation violations, 2 unreadable input or bad
arguments, 3 planner failure, 4 true location required but missing,
5 no verified improvement, 6 oracle size limit, 7 sweep parameter not
applicable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .core import (
    CircularNormal,
    DiscreteDistribution,
    Scenario,
    ScenarioError,
    Uniform1D,
    budget_tolerance,
    validate_scenario,
)
from .improvement import NO_GUARANTEE, ImprovementError, improve
from .oracle import (
    OracleConfig,
    OracleRow,
    OracleSizeError,
    brute_force_best_allocation,
    greedy_incremental_allocation,
    lipschitz_slack,
    monte_carlo_true_detection,
    rows_to_csv,
)
from .planner import PlannerError, SearchPlanner
from .scenario_io import ScenarioFormatError, distribution_to_dict, load_scenario, scenario_hash

log = logging.getLogger("searchplan")

EXIT_OK, EXIT_VIOLATIONS, EXIT_INPUT, EXIT_PLANNER = 0, 1, 2, 3
EXIT_NO_X0, EXIT_NO_IMPROVEMENT, EXIT_ORACLE_SIZE, EXIT_SWEEP_PARAM = 4, 5, 6, 7

CONFIG_ENV = "SEARCHPLAN_CONFIG"
CONFIG_KEYS = {
    "times", "t_min", "t_max", "n_times", "effort_step", "greedy_increment",
    "mc_samples", "seed", "epsilon", "theta", "factor", "method",
}


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return format(float(x), ".9g")


# --------------------------------------------------------------------------
# Config, output and manifest
# --------------------------------------------------------------------------


def load_config() -> dict:
    path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(EXIT_INPUT, f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise CommandError(EXIT_INPUT, f"config {path} must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise CommandError(EXIT_INPUT, f"config {path}: unknown keys {sorted(unknown)}")
    return cfg


def resolve(args, cfg: dict, name: str, default):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def resolve_times(args, cfg) -> np.ndarray:
    times = args.times if args.times is not None else cfg.get("times")
    if times is None:
        times = ev.geometric_grid(
            float(cfg.get("t_min", 1e-3)), float(cfg.get("t_max", 1e3)), int(cfg.get("n_times", 64))
        )
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise CommandError(EXIT_INPUT, "times must be a non-empty list")
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise CommandError(EXIT_INPUT, "times must be non-negative and strictly increasing")
    return times


def write_atomic(path: str | Path, text: str):
    """Write ``text`` to a temp file beside ``path`` then rename over it."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


@dataclass
class RunManifest:
    command: str
    scenario: str | None
    config: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    exit_code: int = 0
    duration_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def emit(args, text: str, manifest: RunManifest):
    if args.out:
        write_atomic(args.out, text)
        manifest.outputs.append(str(args.out))
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def _load(path) -> Scenario:
    try:
        return load_scenario(path)
    except (ScenarioFormatError, ScenarioError) as exc:
        raise CommandError(EXIT_INPUT, str(exc)) from None


def _load_valid(path) -> Scenario:
    s = _load(path)
    bad = validate_scenario(s)
    if bad:
        raise CommandError(EXIT_VIOLATIONS, "\n".join(bad))
    return s


def cmd_validate(args, cfg, manifest) -> int:
    s = _load(args.scenario)
    bad = validate_scenario(s)
    for line in bad:
        print(line)
    return EXIT_VIOLATIONS if bad else EXIT_OK


def cmd_plan(args, cfg, manifest) -> int:
    s = _load_valid(args.scenario)
    times = resolve_times(args, cfg)
    manifest.config["times"] = times
    try:
        plan = SearchPlanner(s).build_plan(times)
    except PlannerError as exc:
        raise CommandError(EXIT_PLANNER, f"planner failed: {exc}") from None
    labels = plan.cells.labels
    area = plan.cells.area
    rows = []
    for i, t in enumerate(plan.times):
        E = plan.budgets[i]
        total = float(np.sum(plan.efforts[i] * area))
        if abs(total - E) > budget_tolerance(E):
            raise CommandError(EXIT_PLANNER, f"budget mismatch at t={t:g}: {total!r} != {E!r}")
        rows.extend((t, E, lab, y) for lab, y in zip(labels, plan.efforts[i]))
    emit(args, csv_text(["t", "E_t", "location", "effort"], rows), manifest)
    return EXIT_OK


def _require_x0(s: Scenario, what: str):
    if s.true_location is None:
        raise CommandError(EXIT_NO_X0, f"{what} needs true_location in the scenario")


def cmd_eval(args, cfg, manifest) -> int:
    s = _load_valid(args.scenario)
    if not args.subjective_only:
        _require_x0(s, "true detection output")
    times = resolve_times(args, cfg)
    manifest.config["times"] = times
    try:
        planner = SearchPlanner(s)
        report = ev.evaluate(s, times, planner, subjective_only=args.subjective_only)
        cum_s = ev.cumulative_mean_time(ev.subjective_curve(planner), times)
        cum_t = None
        if not args.subjective_only:
            cum_t = ev.cumulative_mean_time(ev.true_curve(s, planner), times)
    except PlannerError as exc:
        raise CommandError(EXIT_PLANNER, f"planner failed: {exc}") from None
    rows = []
    for i, (t, E, ps, pt) in enumerate(report.rows()):
        rows.append((t, E, ps, pt, cum_s[i], None if cum_t is None else cum_t[i]))
    rows.append((
        "inf", None, None, None,
        str(report.subjective_mean),
        None if report.true_mean is None else str(report.true_mean),
    ))
    header = ["t", "E_t", "P_subjective", "P_true", "mu_subjective", "mu_true"]
    emit(args, csv_text(header, rows), manifest)
    return EXIT_OK


def cmd_improve(args, cfg, manifest) -> int:
    s = _load_valid(args.scenario)
    _require_x0(s, "improve")
    opts = {
        "epsilon": float(resolve(args, cfg, "epsilon", 0.01)),
        "theta": float(resolve(args, cfg, "theta", 0.5)),
        "factor": float(resolve(args, cfg, "factor", 1.5)),
        "method": resolve(args, cfg, "method", "auto"),
    }
    manifest.config.update(opts)
    try:
        res = improve(s, **opts)
    except ImprovementError as exc:
        print(f"no improvement: {exc}")
        return EXIT_NO_IMPROVEMENT
    except PlannerError as exc:
        raise CommandError(EXIT_PLANNER, f"planner failed: {exc}") from None

    cmp = res.comparison
    report = {
        "outcome": res.outcome,
        "construction": res.construction,
        "diagnostics": res.diagnostics,
        "new_distribution": None if res.scenario is None else distribution_to_dict(res.new_distribution),
    }
    print(f"construction: {res.construction}")
    print(f"outcome: {res.outcome}")
    for k, v in res.diagnostics.items():
        print(f"{k}: {fmt(v) if isinstance(v, float) else v}")
    if cmp is not None:
        report.update(
            verdict=cmp.verdict,
            delta_mu=cmp.delta_mu,
            mu_original=cmp.mu_b,
            mu_new=cmp.mu_a,
            horizon=cmp.horizon,
            horizon_dependent=cmp.horizon_dependent,
            table=[{"t": t, "P_true_original": b, "P_true_new": a}
                   for t, a, b in zip(cmp.times.tolist(), cmp.p_a.tolist(), cmp.p_b.tolist())],
        )
        print(f"verdict: {cmp.verdict}")
        print(f"delta_mu: {fmt(cmp.delta_mu)}" + (" (horizon-dependent)" if cmp.horizon_dependent else ""))
        print(csv_text(["t", "P_true_original", "P_true_new"], zip(cmp.times, cmp.p_b, cmp.p_a)), end="")
    if args.out:
        write_atomic(args.out, json.dumps(report, indent=2, default=_jsonable) + "\n")
        manifest.outputs.append(str(args.out))
    if res.verified:
        return EXIT_OK
    if res.outcome == NO_GUARANTEE and "threshold" in res.diagnostics:
        print(f"effort never exceeds threshold {fmt(res.diagnostics['threshold'])}")
    return EXIT_NO_IMPROVEMENT


def _seed(args, cfg) -> int:
    seed = resolve(args, cfg, "seed", None)
    if seed is None:
        if os.environ.get("CI"):
            raise CommandError(EXIT_INPUT, "--seed is required when CI is set")
        seed = int(np.random.SeedSequence().entropy % 2**32)
        log.warning("no --seed given; using %d", seed)
    return int(seed)


def cmd_verify(args, cfg, manifest) -> int:
    s = _load_valid(args.scenario)
    if not s.discrete:
        raise CommandError(EXIT_ORACLE_SIZE, "oracle checks need a discrete scenario")
    K = float(args.budget)
    if K < 0:
        raise CommandError(EXIT_INPUT, "--budget must be non-negative")
    oc = OracleConfig(
        effort_step=float(resolve(args, cfg, "effort_step", 0.01)),
        greedy_increment=float(resolve(args, cfg, "greedy_increment", 1e-4)),
        mc_samples=int(resolve(args, cfg, "mc_samples", 100_000)),
        rng_seed=_seed(args, cfg) if args.mc else 0,
    )
    manifest.config.update(oc.__dict__)
    try:
        alloc = SearchPlanner(s).allocation_for_budget(K)
        p_star = ev.subjective_probability(s, alloc)
        _, p_bf = brute_force_best_allocation(s, K, oc)
    except OracleSizeError as exc:
        raise CommandError(EXIT_ORACLE_SIZE, str(exc)) from None
    except PlannerError as exc:
        raise CommandError(EXIT_PLANNER, f"planner failed: {exc}") from None
    greedy = greedy_incremental_allocation(s, K, oc)
    h = scenario_hash(s)
    n = len(s.cells)
    rows = [
        OracleRow(h, K, "brute_force", p_star, p_bf, p_bf - p_star, lipschitz_slack(s, oc)),
        OracleRow(h, K, "greedy", p_star, ev.subjective_probability(s, greedy),
                  float(np.max(np.abs(greedy.efforts - alloc.efforts))), oc.greedy_increment * n),
    ]
    if args.mc:
        mc = monte_carlo_true_detection(s, alloc, cfg=oc)
        rows.append(OracleRow(h, K, "monte_carlo", p_star, mc.estimate,
                              abs(mc.estimate - p_star), 3 * mc.stderr))
    emit(args, rows_to_csv(rows), manifest)
    return EXIT_OK if all(r.ok for r in rows) else EXIT_VIOLATIONS


def sweep_scenario(s: Scenario, param: str, value: float) -> Scenario:
    """``s`` with one family parameter replaced."""
    dist = s.distribution
    if param == "p" and isinstance(dist, DiscreteDistribution) and len(dist.cells) == 2:
        a, b = dist.cells
        return s.replace(distribution=DiscreteDistribution({a: value, b: 1 - value}))
    if param == "sigma" and isinstance(dist, CircularNormal):
        return s.replace(distribution=CircularNormal(value, dist.n_radial, dist.n_angular, dist.truncation),
                         area=None)
    if param == "b" and isinstance(dist, Uniform1D):
        return s.replace(distribution=Uniform1D(dist.a, value, dist.n_cells), area=None)
    raise CommandError(EXIT_SWEEP_PARAM, f"parameter {param!r} does not apply to this scenario")


def cmd_sweep(args, cfg, manifest) -> int:
    s = _load_valid(args.scenario)
    _require_x0(s, "sweep")
    times = resolve_times(args, cfg)
    manifest.config["times"] = times
    variants = [(v, sweep_scenario(s, args.param, v)) for v in args.values]
    rows = []
    for v, sv in variants:
        bad = validate_scenario(sv)
        if bad:
            raise CommandError(EXIT_VIOLATIONS, f"{args.param}={v:g}: " + "; ".join(bad))
        try:
            curve = ev.true_curve(sv, SearchPlanner(sv))
        except PlannerError as exc:
            raise CommandError(EXIT_PLANNER, f"planner failed: {exc}") from None
        mu = str(ev.mean_time(curve))
        rows.extend((v, t, p, mu) for t, p in zip(times, curve(times)))
    emit(args, csv_text([args.param, "t", "P_true", "mu_true"], rows), manifest)
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="searchplan", description=__doc__.splitlines()[0])
    p.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, fn, help_, out=True, times=False):
        c = sub.add_parser(name, help=help_)
        c.add_argument("scenario")
        if out:
            c.add_argument("--out", help="output file (default: stdout)")
        if times:
            c.add_argument("--times", type=float, nargs="+")
        c.set_defaults(func=fn)
        return c

    cmd("validate", cmd_validate, "check a scenario file", out=False)
    cmd("plan", cmd_plan, "optimal effort per location over time", times=True)
    c = cmd("eval", cmd_eval, "subjective and true detection curves", times=True)
    c.add_argument("--subjective-only", action="store_true")
    c = cmd("improve", cmd_improve, "build a distribution that finds the target sooner")
    c.add_argument("--epsilon", type=float)
    c.add_argument("--theta", type=float)
    c.add_argument("--factor", type=float)
    c.add_argument("--method", choices=["auto", "bump", "shrink"])
    c = cmd("verify", cmd_verify, "check the planner against brute force and greedy")
    c.add_argument("--budget", type=float, required=True)
    c.add_argument("--step", dest="effort_step", type=float)
    c.add_argument("--increment", dest="greedy_increment", type=float)
    c.add_argument("--seed", type=int)
    c.add_argument("--mc", action="store_true", help="also run the Monte Carlo check")
    c.add_argument("--mc-samples", dest="mc_samples", type=int)
    c = cmd("sweep", cmd_sweep, "true detection across a family parameter", times=True)
    c.add_argument("--param", choices=["p", "sigma", "b"], required=True)
    c.add_argument("--values", type=float, nargs="+", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    manifest = RunManifest(args.command, getattr(args, "scenario", None))
    start = time.perf_counter()
    try:
        cfg = load_config()
        code = args.func(args, cfg, manifest)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = exc.code
    manifest.exit_code = code
    manifest.duration_s = round(time.perf_counter() - start, 6)
    mpath = args.manifest or (f"{args.out}.manifest.json" if getattr(args, "out", None) else None)
    if mpath:
        write_atomic(mpath, manifest.to_json())
    else:
        log.info("manifest: %s", manifest.to_json().strip())
    return code


if __name__ == "__main__":
    raise SystemExit(main())
