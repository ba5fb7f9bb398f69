"""Command line entry point: run, sweep, breakdown, validate."""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import DEFAULT_SWEEP, ConfigError, ScenarioConfig, load_config, resolve
from .energy import COMPONENTS, LedgerError, PHASE_NAMES
from .kernel import SEC, SimulationError
from .network import InvariantError, RunResult, run_scenario

log = logging.getLogger("pushpull")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

RUN_HEADER = ["node_id", "avg_power_mw", "mcu_mw", "radio_idle_mw", "radio_tx_mw",
              "flash_mw", "max_phase", "max_phase_power_mw", "generated", "delivered",
              "yield_pct"]
SWEEP_HEADER = ["t_pull_s", "mode", "seed", "avg_power_mw", "max_power_mw", "yield_pct"]
SWEEP_SUMMARY_HEADER = ["t_pull_s", "mode", "n", "avg_power_mw_mean", "avg_power_mw_stderr",
                        "max_power_mw_mean", "max_power_mw_stderr", "yield_pct_mean",
                        "yield_pct_stderr"]
BREAKDOWN_HEADER = ["phase", "component", "avg_power_mw"]


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def mean_stderr(vals: list[float]) -> tuple[float, float]:
    n = len(vals)
    m = sum(vals) / n
    if n < 2:
        return m, 0.0
    var = sum((v - m) ** 2 for v in vals) / (n - 1)
    return m, math.sqrt(var / n)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_rows(r: RunResult) -> list[list]:
    rows = []
    for n in sorted(r.node_power):
        comps = r.node_components[n]
        phases = r.node_phase[n]
        top = max(phases, key=lambda p: (sum(phases[p].values()), -p))
        gen, dlv = r.per_node_yield.get(n, (0, 0))
        rows.append([n, r.node_power[n], comps["mcu"], comps["radio_idle"],
                     comps["radio_tx"], comps["flash"], PHASE_NAMES[top],
                     sum(phases[top].values()), gen, dlv,
                     100.0 * dlv / gen if gen else 100.0])
    return rows


def write_run(out: Path, r: RunResult) -> None:
    _write_csv(out / f"run_{r.seed}.csv", RUN_HEADER, run_rows(r))
    _write_json(out / f"summary_{r.seed}.json", r.to_dict())


def sweep_rows(results: list[RunResult]) -> list[list]:
    def key(r):
        return (r.mode != "pull", r.t_pull or 0, r.seed)

    return [[r.t_pull / SEC if r.t_pull else None, r.mode, r.seed, r.avg_power,
             r.max_power, r.yield_pct] for r in sorted(results, key=key)]


def sweep_summary_rows(rows: list[list]) -> list[list]:
    groups: dict[tuple, list] = {}
    for t, mode, _seed, avg, mx, y in rows:
        groups.setdefault((mode != "pull", t or 0.0, t, mode), []).append((avg, mx, y))
    out = []
    for (_, _, t, mode), vals in sorted(groups.items(), key=lambda kv: kv[0][:2]):
        a = mean_stderr([v[0] for v in vals])
        m = mean_stderr([v[1] for v in vals])
        y = mean_stderr([v[2] for v in vals])
        out.append([t, mode, len(vals), a[0], a[1], m[0], m[1], y[0], y[1]])
    return out


def breakdown_rows(results: list[RunResult]) -> list[list]:
    """Per phase and component, averaged over non-sink nodes and over runs."""
    rows = []
    per_run = [r.breakdown() for r in results]
    for ph in sorted(PHASE_NAMES):
        for comp in COMPONENTS:
            vals = [bd[ph][comp] for bd in per_run if ph in bd]
            rows.append([PHASE_NAMES[ph], comp, sum(vals) / len(vals) if vals else 0.0])
    return rows


# ------------------------------------------------------------------ helpers
def _base_config(args, default_raw: dict | None = None) -> ScenarioConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = resolve(default_raw or {})
    if args.out:
        cfg.out = args.out
    return cfg


def _seeds(args, cfg: ScenarioConfig) -> list[int]:
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    if getattr(args, "seeds", None) is not None:
        return list(range(1, args.seeds + 1))
    return list(cfg.seeds)


def _job(payload):
    cfg, seed, check = payload
    return run_scenario(cfg, seed, check)


def _execute(jobs: list[tuple], workers: int) -> list[RunResult]:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_job, jobs))
    out = []
    for cfg, seed, check in jobs:
        label = f"pull t_pull={cfg.pull.t_pull / SEC:g}s" if cfg.mode == "pull" else "push"
        log.info("running %s seed %d", label, seed)
        r = run_scenario(cfg, seed, check)
        log.info("  avg %.4g mW, max %.4g mW, yield %.6g %%, %d events, %.1f s wall",
                 r.avg_power, r.max_power, r.yield_pct, r.events, r.wall_time)
        out.append(r)
    return out


def _echo_config(out: Path, cfg: ScenarioConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.resolved.json", cfg.to_dict())


def _with_raw(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    """Re-resolve the scenario with top-level or pull-section overrides."""
    raw = copy.deepcopy(cfg.raw)
    for k, v in changes.items():
        if k == "t_pull":
            pull = raw.setdefault("pull", {})
            pull["t_pull"] = v
        else:
            raw[k] = v
    new = resolve(raw, check_topology=False)
    new.out = cfg.out
    return new


# ------------------------------------------------------------------ commands
def cmd_validate(args) -> int:
    cfg = load_config(args.config) if args.config else resolve({})
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _base_config(args)
    out = Path(cfg.out)
    _echo_config(out, cfg)
    results = _execute([(cfg, s, args.check) for s in _seeds(args, cfg)], args.jobs)
    for r in results:
        write_run(out, r)
        if r.delivered != r.generated or r.app_duplicates:
            log.warning("seed %d: delivered %d of %d records, %d duplicates",
                        r.seed, r.delivered, r.generated, r.app_duplicates)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _base_config(args, {"mode": "pull"})
    if cfg.mode != "pull":
        raise ConfigError(["mode: sweep needs a pull base scenario"])
    values = args.values or list(DEFAULT_SWEEP)
    if not values:
        raise ConfigError(["--values: at least one pull interval is required"])
    seeds = _seeds(args, cfg)
    configs = []
    problems = []
    for v in values:
        try:
            configs.append(_with_raw(cfg, t_pull=f"{v:g}s"))
        except ConfigError as e:
            problems.extend(f"t_pull={v:g}s: {p}" for p in e.problems)
    if problems:
        raise ConfigError(problems)
    push = _with_raw(cfg, mode="push")
    out = Path(cfg.out)
    _echo_config(out, cfg)
    jobs = [(c, s, args.check) for c in configs for s in seeds]
    jobs += [(push, s, args.check) for s in seeds]
    results = _execute(jobs, args.jobs)
    rows = sweep_rows(results)
    _write_csv(out / "sweep.csv", SWEEP_HEADER, rows)
    _write_csv(out / "sweep_summary.csv", SWEEP_SUMMARY_HEADER, sweep_summary_rows(rows))
    if args.runs:
        for r in results:
            sub = out / (f"pull_{r.t_pull // SEC}s" if r.t_pull else "push")
            sub.mkdir(exist_ok=True)
            write_run(sub, r)
    return EXIT_OK


def cmd_breakdown(args) -> int:
    cfg = _base_config(args, {"mode": "pull"})
    if cfg.mode != "pull":
        raise ConfigError(["mode: breakdown needs a pull scenario"])
    seeds = _seeds(args, cfg) if (args.seed is not None or args.seeds is not None) \
        else cfg.seeds[:1]
    out = Path(cfg.out)
    _echo_config(out, cfg)
    results = _execute([(cfg, s, args.check) for s in seeds], args.jobs)
    _write_csv(out / "breakdown.csv", BREAKDOWN_HEADER, breakdown_rows(results))
    return EXIT_OK


def _values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated seconds") from None
    if any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("pull intervals must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pushpull", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True):
        sp.add_argument("--config", help="scenario JSON file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        if seeds:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--seed", type=int, help="run a single seed")
            g.add_argument("--seeds", type=int, help="run seeds 1..N")
            sp.add_argument("--check", action="store_true",
                            help="enable runtime audits (slower)")
            sp.add_argument("--jobs", type=int, default=1,
                            help="independent runs executed in parallel")

    common(sub.add_parser("run", help="simulate one scenario per seed"))
    sp = sub.add_parser("sweep", help="pull at several t_pull values plus a push baseline")
    common(sp)
    sp.add_argument("--values", type=_values,
                    help="comma separated t_pull values in seconds")
    sp.add_argument("--runs", action="store_true",
                    help="also write per-run CSV and JSON files")
    common(sub.add_parser("breakdown", help="pull phase/component power table"))
    sp = sub.add_parser("validate", help="print the resolved configuration")
    sp.add_argument("--config", help="scenario JSON file")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "breakdown": cmd_breakdown,
                "validate": cmd_validate}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        for line in e.problems:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantError, LedgerError, SimulationError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
