import csv
import json

import pytest

from pushpull import cli
from pushpull.config import ConfigError, parse_duration, resolve
from pushpull.kernel import MINUTE, MS, SEC

SHORT_PUSH = {"mode": "push", "duration": "240s", "drain_margin": "60s"}
SHORT_PULL = {"mode": "pull", "pull": {"t_pull": "100s"}}


def write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


@pytest.mark.parametrize("text,us", [
    (1500, 1500), ("250us", 250), ("10ms", 10 * MS), ("4s", 4 * SEC),
    ("0.5s", 500 * MS), ("15min", 15 * MINUTE),
])
def test_duration_parsing(text, us):
    assert parse_duration(text) == us


@pytest.mark.parametrize("bad", ["10", "4 hours", "1.5us", True, 2.5])
def test_bad_durations(bad):
    with pytest.raises(ValueError):
        parse_duration(bad)


def test_minimal_config_resolves_to_defaults(capsys):
    cfg = resolve({"mode": "push"})
    assert cfg.mac.t_w == 500 * MS and cfg.sampling_interval == 45 * SEC
    assert cfg.routing.buffer_capacity == 10
    assert len(cfg.seeds) == 5


def test_diagnostics_name_each_problem():
    with pytest.raises(ConfigError) as ei:
        resolve({"mode": "pull", "bogus": 1, "pull": {"t_w_sleep": "10ms"}})
    text = "\n".join(ei.value.problems)
    assert "bogus: unknown key" in text
    assert "pull.t_w_sleep" in text


def test_validate_exit_codes(tmp_path, capsys):
    assert cli.main(["validate", "--config", write(tmp_path, {"mode": "push"})]) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert resolved["mac"]["t_w"] == "500ms"
    assert resolved["pull"]["t_pull"] == "600s"
    bad = write(tmp_path, {"mode": "pull", "pull": {"t_w_sleep": "10ms"}, "nope": 0})
    assert cli.main(["validate", "--config", bad]) == 2
    err = capsys.readouterr().err
    assert "nope: unknown key" in err and "pull.t_w_sleep" in err
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["validate", "--config", str(tmp_path / "broken.json")]) == 2


def test_disconnected_topology_rejected_before_running(tmp_path, capsys):
    topo = {"links": [{"src": 0, "dst": 1, "prr": 1.0}, {"src": 2, "dst": 3, "prr": 1.0}],
            "symmetric": True}
    path = write(tmp_path, {"mode": "push", "topology": topo})
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "o")]) == 2
    assert "topology" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_livelock_cap_is_a_runtime_failure(tmp_path, capsys):
    path = write(tmp_path, dict(SHORT_PUSH, livelock_cap=5))
    assert cli.main(["run", "--config", path, "--seed", "1",
                     "--out", str(tmp_path / "o")]) == 3
    assert "runtime error" in capsys.readouterr().err


def test_run_outputs_and_determinism(tmp_path):
    path = write(tmp_path, SHORT_PUSH)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", "--config", path, "--seed", "4", "--out", str(a)]) == 0
    assert cli.main(["run", "--config", path, "--seed", "4", "--out", str(b)]) == 0
    assert (a / "run_4.csv").read_bytes() == (b / "run_4.csv").read_bytes()
    sa = json.loads((a / "summary_4.json").read_text())
    sb = json.loads((b / "summary_4.json").read_text())
    assert sa["trace_hash"] == sb["trace_hash"]
    rows = read_csv(a / "run_4.csv")
    assert rows[0] == cli.RUN_HEADER
    assert len(rows) == 1 + 35
    assert json.loads((a / "config.resolved.json").read_text())["duration"] == "240s"


def test_golden_headers():
    assert cli.RUN_HEADER == [
        "node_id", "avg_power_mw", "mcu_mw", "radio_idle_mw", "radio_tx_mw", "flash_mw",
        "max_phase", "max_phase_power_mw", "generated", "delivered", "yield_pct"]
    assert cli.SWEEP_HEADER == ["t_pull_s", "mode", "seed", "avg_power_mw",
                                "max_power_mw", "yield_pct"]
    assert cli.BREAKDOWN_HEADER == ["phase", "component", "avg_power_mw"]


def test_single_value_sweep_gives_pull_and_push_rows(tmp_path):
    base = dict(SHORT_PULL, duration="240s", drain_margin="60s")
    path = write(tmp_path, base)
    out = tmp_path / "s"
    assert cli.main(["sweep", "--config", path, "--seed", "2", "--values", "100",
                     "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert rows[0] == cli.SWEEP_HEADER
    assert [(r[0], r[1], r[2]) for r in rows[1:]] == [("100", "pull", "2"), ("", "push", "2")]
    summary = read_csv(out / "sweep_summary.csv")
    assert summary[0] == cli.SWEEP_SUMMARY_HEADER and len(summary) == 3
    # a single seed: the mean is the value itself and stderr is zero
    assert summary[1][3] == rows[1][3] and summary[1][4] == "0"


def test_sweep_rejects_push_base(tmp_path, capsys):
    path = write(tmp_path, {"mode": "push"})
    assert cli.main(["sweep", "--config", path, "--out", str(tmp_path / "x")]) == 2


def test_breakdown_has_eight_additive_rows(tmp_path):
    path = write(tmp_path, SHORT_PULL)
    out = tmp_path / "bd"
    assert cli.main(["breakdown", "--config", path, "--seed", "1", "--out", str(out)]) == 0
    rows = read_csv(out / "breakdown.csv")
    assert rows[0] == cli.BREAKDOWN_HEADER
    body = rows[1:]
    assert len(body) == 8
    assert {r[0] for r in body} == {"sleep", "collection"}
    assert [r[1] for r in body[:4]] == ["mcu", "radio_idle", "radio_tx", "flash"]
    summary = json.loads((out / "config.resolved.json").read_text())
    assert summary["mode"] == "pull"


def test_breakdown_components_sum_to_phase_power():
    from pushpull.network import run_scenario
    r = run_scenario(resolve(SHORT_PULL), seed=1)
    rows = cli.breakdown_rows([r])
    bd = r.breakdown()
    for ph, name in ((0, "sleep"), (1, "collection")):
        total = sum(v for p, _, v in rows if p == name)
        assert total == pytest.approx(sum(bd[ph].values()))


def test_mean_stderr():
    assert cli.mean_stderr([2.0, 2.0, 2.0]) == (2.0, 0.0)
    m, se = cli.mean_stderr([1.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1.0)
