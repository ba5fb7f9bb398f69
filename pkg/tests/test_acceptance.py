"""Acceptance criteria 1-11 under the default calibration.

The default sweep (six pull intervals plus push, five seeds each) runs once
per session and feeds every trend criterion.
"""
import json
import sys

import pytest

from pushpull import cli
from pushpull.config import DEFAULT_SWEEP, resolve
from pushpull.kernel import SEC
from pushpull.network import Network, run_scenario
from pushpull.pull import max_pull_interval

from conftest import ACCEPTANCE

SEEDS = (1, 2, 3, 4, 5)
DAY = 86_400 * SEC


def report(n, ok, detail):
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE.append(line)
    print(line, file=sys.stderr)
    assert ok, line


def mean(xs):
    return sum(xs) / len(xs)


@pytest.fixture(scope="session")
def sweep():
    """{('pull', t_pull_s) | ('push', None): [RunResult per seed]}"""
    base = resolve({"mode": "pull"})
    out = {}
    for t in DEFAULT_SWEEP:
        cfg = cli._with_raw(base, t_pull=f"{t}s")
        out[("pull", t)] = [run_scenario(cfg, s) for s in SEEDS]
    push = resolve({"mode": "push"})
    out[("push", None)] = [run_scenario(push, s) for s in SEEDS]
    return out


def avg_of(runs):
    return mean([r.avg_power for r in runs])


def max_of(runs):
    return mean([r.max_power for r in runs])


def test_1_yield_and_runtime(sweep):
    bad, slow = [], []
    for (mode, t), runs in sweep.items():
        for r in runs:
            if r.delivered != r.generated or r.app_duplicates or r.overflow:
                bad.append(f"{mode}/{t}/seed{r.seed}: {r.delivered}/{r.generated} "
                           f"dup={r.app_duplicates} overflow={r.overflow}")
            if r.wall_time >= 30.0:
                slow.append(f"{mode}/{t}/seed{r.seed}: {r.wall_time:.1f} s")
    worst = max(r.wall_time for runs in sweep.values() for r in runs)
    report(1, not bad and not slow,
           f"{sum(len(v) for v in sweep.values())} runs, yield failures {bad or 'none'}, "
           f"slowest {worst:.1f} s wall{', too slow: ' + str(slow) if slow else ''}")


def test_2_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mode": "pull", "pull": {"t_pull": "100s"}}))
    hashes, blobs = [], []
    for d in ("a", "b"):
        out = tmp_path / d
        assert cli.main(["run", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
        blobs.append((out / "run_3.csv").read_bytes())
        hashes.append(json.loads((out / "summary_3.json").read_text())["trace_hash"])
    report(2, blobs[0] == blobs[1] and hashes[0] == hashes[1],
           f"run_3.csv identical={blobs[0] == blobs[1]}, trace hash {hashes[0]} vs {hashes[1]}")


def test_3_idle_listening_analytics():
    topo = {"links": [{"src": 0, "dst": 1, "prr": 1.0}], "symmetric": True}
    cfg = resolve({"mode": "push", "traffic": False, "topology": topo})
    net = Network(cfg, seed=1, check=True)
    span = 1000 * cfg.mac.t_w
    net.window = (0, span)
    net.t_end = span
    r = net.run()
    comps = r.node_components[1]
    radio = comps["radio_idle"] + comps["radio_tx"]
    expect = cfg.power.p_radio_rx * cfg.mac.t_cca / cfg.mac.t_w
    err = abs(radio - expect) / expect
    report(3, err < 0.01, f"radio {radio:.5f} mW vs analytic {expect:.5f} mW "
                          f"({100 * err:.3f} % off)")


def test_4_energy_bookkeeping(sweep):
    part = max(r.energy_check["max_partition_error_us"]
               for runs in sweep.values() for r in runs)
    phase = max(r.energy_check["max_phase_energy_error_uj"]
                for runs in sweep.values() for r in runs)
    report(4, part == 0 and phase < 1.0,
           f"max partition error {part} us, max phase-sum error {phase:.3g} uJ")


def crossover(points, push):
    """First t_pull where pull drops below push, by linear interpolation."""
    prev = None
    for t, p in points:
        if p < push:
            if prev is None:
                return t
            t0, p0 = prev
            return t0 + (p0 - push) * (t - t0) / (p0 - p)
        prev = (t, p)
    return None


def test_5_crossover(sweep):
    push = avg_of(sweep[("push", None)])
    pts = [(t, avg_of(sweep[("pull", t)])) for t in DEFAULT_SWEEP]
    above = pts[0][1] > push
    below = all(p < push for t, p in pts if t >= 600)
    x = crossover(pts, push)
    ok = above and below and x is not None and 120 <= x <= 600
    table = ", ".join(f"{t}s={p:.3f}" for t, p in pts)
    xs = "none" if x is None else f"{x:.0f} s"
    report(5, ok, f"push {push:.3f} mW; pull {table}; crossover {xs}")


def test_6_sixty_minute_savings(sweep):
    push, pull = sweep[("push", None)], sweep[("pull", 3600)]
    ra = avg_of(pull) / avg_of(push)
    rm = max_of(pull) / max_of(push)
    report(6, ra <= 0.65 and rm <= 0.75,
           f"avg ratio {ra:.3f} (<= 0.65), max ratio {rm:.3f} (<= 0.75)")


def test_7_phase_breakdown(sweep):
    rows = cli.breakdown_rows(sweep[("pull", 3600)])
    sleep = sum(v for ph, _, v in rows if ph == "sleep")
    coll = sum(v for ph, _, v in rows if ph == "collection")
    ratio = sleep / coll
    report(7, ratio <= 0.20,
           f"sleep {sleep:.4f} mW, collection {coll:.4f} mW, ratio {ratio:.3f} (<= 0.20)")


def test_8_flash_negligible(sweep):
    worst = 0.0
    for t in DEFAULT_SWEEP:
        for r in sweep[("pull", t)]:
            for comps in r.breakdown().values():
                total = sum(comps.values())
                worst = max(worst, comps["flash"] / total)
    report(8, worst < 0.02, f"largest flash share of a phase {100 * worst:.4f} % (< 2 %)")


def test_9_flash_sizing():
    t = max_pull_interval(1_048_576, 100, 60 * SEC)
    days = t / DAY
    report(9, 7.0 <= days <= 7.5, f"max_pull_interval = {t // SEC} s = {days:.3f} days")


def test_10_back_pressure():
    # funnel: nine leaves reach the sink only through node 1
    links = [{"src": 1, "dst": 0, "prr": 1.0}]
    links += [{"src": n, "dst": 1, "prr": 1.0} for n in range(2, 11)]
    cfg = resolve({"mode": "pull", "topology": {"links": links, "symmetric": True},
                   "routing": {"buffer_capacity": 2}})
    r = run_scenario(cfg, seed=1, check=True)
    ok = (r.nacks >= 1 and r.delivered == r.generated and not r.app_duplicates
          and not r.overflow and r.wall_time < 30.0)
    report(10, ok, f"{r.nacks} DataNacks, yield {r.delivered}/{r.generated}, "
                   f"duplicates {r.app_duplicates}, overflow {r.overflow}")


def test_11_monotone_pull_cost(sweep):
    means = [avg_of(sweep[("pull", t)]) for t in DEFAULT_SWEEP]
    bad = [(a, b) for a, b in zip(DEFAULT_SWEEP, DEFAULT_SWEEP[1:])
           if means[DEFAULT_SWEEP.index(b)] > 1.02 * means[DEFAULT_SWEEP.index(a)]]
    report(11, not bad, "means " + ", ".join(f"{m:.3f}" for m in means)
           + (f"; increases at {bad}" if bad else ""))
