import pytest

from pushpull.config import resolve
from pushpull.energy import (EnergyLedger, LedgerError, PowerProfile, aggregate,
                             node_power, phase_breakdown, run_energy, segment_energy)
from pushpull.kernel import MS, SEC
from pushpull.mac import MacConfig
from pushpull.network import Network
from pushpull.topology import SINK

from conftest import MacBench, sym

W = (0, 100 * SEC)


def idle_ledger():
    led = EnergyLedger(1)
    led.record_state("radio", "off", 0, 100 * SEC)
    led.record_state("mcu", "sleep", 0, 100 * SEC)
    led.close(100 * SEC)
    return led


def test_sleeping_node_draws_mcu_floor():
    prof = PowerProfile(p_radio_off=0.0)
    assert node_power(idle_ledger(), W, prof) == pytest.approx(0.0163)


def test_flash_bytes_add_energy_over_window():
    prof = PowerProfile(p_radio_off=0.0, e_flash_write=1.0)
    led = idle_ledger()
    led.flash(written=1000)
    assert node_power(led, W, prof) == pytest.approx(0.0163 + 0.01)


def test_idle_lpl_radio_share():
    cfg = MacConfig()
    bench = MacBench(sym(0, 1), cfg=cfg)
    bench.macs[1].start(first_check=0)
    t = 1000 * cfg.t_w
    bench.sim.run_until(t)
    bench.finish(t)
    prof = PowerProfile()
    bd = phase_breakdown(bench.ledgers[1], (0, t), prof)
    (comps,) = bd.values()
    assert comps["radio_idle"] == pytest.approx(60.0 * 10 / 500, rel=0.01)
    assert comps["radio_tx"] == 0.0


@pytest.mark.parametrize("powers,avg,mx", [
    ({SINK: 60.0, 1: 2.0, 2: 4.0}, 3.0, 4.0),
    ({SINK: 60.0, 1: 2.5}, 2.5, 2.5),
    ({SINK: 1.0, 1: 3.0, 2: 3.0, 3: 3.0}, 3.0, 3.0),
])
def test_aggregate_excludes_sink(powers, avg, mx):
    assert aggregate(powers) == {"avg": pytest.approx(avg), "max": pytest.approx(mx)}


def test_interval_split_at_phase_change():
    led = EnergyLedger(1, phase=0)
    led.begin_segment(4 * MS, phase=1, epoch=1)
    led.record_state("radio", "check", 0, 10 * MS)
    led.close(10 * MS)
    a, b = led.segments
    assert a.dur[("radio", "check")] == 4 * MS
    assert b.dur[("radio", "check")] == 6 * MS
    assert led.totals[("radio", "check")] == 10 * MS


def test_reversed_interval_rejected():
    led = EnergyLedger(1)
    with pytest.raises(LedgerError):
        led.record_state("radio", "off", 5, 3)


def test_check_mode_detects_gap_and_overlap():
    led = EnergyLedger(1, check=True)
    led.record_state("radio", "off", 0, 10)
    with pytest.raises(LedgerError):
        led.record_state("radio", "check", 12, 20)
    led2 = EnergyLedger(1, check=True)
    led2.record_state("radio", "off", 0, 10)
    with pytest.raises(LedgerError):
        led2.record_state("radio", "check", 8, 20)


def test_unaligned_window_rejected():
    with pytest.raises(ValueError):
        node_power(idle_ledger(), (0, 50 * SEC), PowerProfile())


def test_partition_and_additivity_over_a_pull_run():
    cfg = resolve({"mode": "pull", "pull": {"t_pull": "100s"}})
    net = Network(cfg, seed=3, check=True)
    r = net.run()
    assert r.energy_check["max_partition_error_us"] == 0
    assert r.energy_check["max_phase_energy_error_uj"] < 1.0
    prof = cfg.power
    floor = prof.p_mcu_sleep + prof.p_radio_off
    ceil = prof.p_mcu_active + prof.p_radio_rx
    for n, led in net.ledgers.items():
        if n == SINK:
            continue
        e = sum(sum(segment_energy(s, prof).values()) for s in led.segments)
        assert e == pytest.approx(run_energy(led, prof), abs=1.0)
        flash = (led.flash_w * prof.e_flash_write + led.flash_r * prof.e_flash_read)
        assert floor <= r.node_power[n] <= ceil + flash / (r.window[1] - r.window[0]) * 1e3


def test_idle_sleep_phase_matches_duty_cycle():
    topo = {"links": [{"src": 0, "dst": 1, "prr": 1.0}], "symmetric": True}
    cfg = resolve({"mode": "pull", "traffic": False, "topology": topo})
    net = Network(cfg, seed=1)
    net.window = (0, 400 * SEC)
    net.t_end = 400 * SEC
    r = net.run()
    sleep = r.node_phase[1][0]
    p = cfg.pull
    expect = cfg.power.p_radio_rx * cfg.mac.t_cca / p.t_w_sleep
    assert sleep["radio_idle"] == pytest.approx(expect, rel=0.02)
    assert sleep["radio_tx"] == 0.0


def test_late_reported_interval_stays_inside_its_own_segments():
    # an interval closed after a later segment opened must not leak into it
    led = EnergyLedger(1)
    led.begin_segment(10, phase=0)
    led.begin_segment(20, phase=1)
    led.record_state("radio", "check", 5, 15)
    led.close(30)
    a, b, c = led.segments
    assert a.dur[("radio", "check")] == 5
    assert b.dur[("radio", "check")] == 5
    assert ("radio", "check") not in c.dur
