"""Per-node time and energy bookkeeping.

Durations are integer microseconds so the per-component partition of the
run is exact. Power is mW; mW x us = nJ, so energies below are in uJ after
dividing by 1000.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

from .mac import IDLE_LABELS, TX_LABELS

RADIO = "radio"
MCU = "mcu"
COMPONENTS = ("mcu", "radio_idle", "radio_tx", "flash")
PHASE_NAMES = {0: "sleep", 1: "collection"}


class LedgerError(RuntimeError):
    """Instrumentation bug: overlapping or gapped state intervals."""


@dataclass
class PowerProfile:
    p_radio_rx: float = 60.0
    p_radio_tx: float = 52.2
    p_radio_off: float = 0.0006
    p_mcu_active: float = 5.4
    p_mcu_sleep: float = 0.0163
    e_flash_write: float = 0.257  # uJ per byte
    e_flash_read: float = 0.056   # uJ per byte

    def problems(self, path: str = "power_profile") -> list[str]:
        errs = []
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, (int, float)) or v < 0:
                errs.append(f"{path}.{f.name}: must be a non-negative number")
        if not errs:
            if self.p_radio_rx <= self.p_radio_off:
                errs.append(f"{path}.p_radio_rx: must exceed p_radio_off")
            if self.p_mcu_active <= self.p_mcu_sleep:
                errs.append(f"{path}.p_mcu_active: must exceed p_mcu_sleep")
        return errs

    def power(self, component: str, state: str) -> float:
        if component == MCU:
            return self.p_mcu_active if state == "active" else self.p_mcu_sleep
        if state == "off":
            return self.p_radio_off
        return self.p_radio_tx if state in TX_LABELS else self.p_radio_rx


class Segment:
    """Sub-ledger for one stretch of a node's timeline within a single phase."""

    __slots__ = ("start", "end", "phase", "epoch", "dur", "flash_w", "flash_r")

    def __init__(self, start: int, phase: int, epoch: int):
        self.start = start
        self.end = None
        self.phase = phase
        self.epoch = epoch
        self.dur: dict[tuple[str, str], int] = {}
        self.flash_w = 0
        self.flash_r = 0

    def length(self) -> int:
        return self.end - self.start


class EnergyLedger:
    """Accumulates state durations for one node, split into segments.

    A new segment opens at every phase change and at every window mark, so
    any window whose edges were marked can be evaluated exactly.
    """

    def __init__(self, node: int, phase: int = 1, epoch: int = 0,
                 check: bool = False, t0: int = 0):
        self.node = node
        self.check = check
        self.segments = [Segment(t0, phase, epoch)]
        self.totals: dict[tuple[str, str], int] = {}
        self.flash_w = 0
        self.flash_r = 0
        self._last_end: dict[str, int] = {}
        self.t0 = t0

    @property
    def phase(self) -> tuple[int, int]:
        s = self.segments[-1]
        return s.phase, s.epoch

    def begin_segment(self, t: int, phase: int | None = None,
                      epoch: int | None = None) -> None:
        last = self.segments[-1]
        if t < last.start:
            raise LedgerError("segment boundaries must be non-decreasing")
        ph = last.phase if phase is None else phase
        ep = last.epoch if epoch is None else epoch
        if t == last.start:
            last.phase, last.epoch = ph, ep
            return
        self.segments.append(Segment(t, ph, ep))

    def record_state(self, component: str, state: str, t_from: int, t_to: int) -> None:
        if t_from > t_to:
            raise LedgerError(f"node {self.node}: interval ends before it starts")
        if self.check:
            last = self._last_end.get(component, self.t0)
            if t_from != last:
                raise LedgerError(
                    f"node {self.node} {component}: interval starts at {t_from}, "
                    f"previous ended at {last}")
            self._last_end[component] = t_to
        if t_from == t_to:
            return
        key = (component, state)
        d = t_to - t_from
        self.totals[key] = self.totals.get(key, 0) + d
        segs = self.segments
        last = segs[-1]
        if t_from >= last.start:
            last.dur[key] = last.dur.get(key, 0) + d
            return
        i = len(segs) - 1
        hi = t_to
        while True:
            seg = segs[i]
            lo = seg.start if seg.start > t_from else t_from
            if hi > lo:
                seg.dur[key] = seg.dur.get(key, 0) + (hi - lo)
            if seg.start <= t_from or i == 0:
                break
            hi = min(hi, seg.start)
            i -= 1

    def flash(self, written: int = 0, read: int = 0) -> None:
        seg = self.segments[-1]
        seg.flash_w += written
        seg.flash_r += read
        self.flash_w += written
        self.flash_r += read

    def close(self, t_end: int) -> None:
        self.segments[-1].end = t_end
        for a, b in zip(self.segments, self.segments[1:]):
            a.end = b.start

    # ------------------------------------------------------------ evaluation
    def segments_in(self, t0: int, t1: int) -> list[Segment]:
        segs = [s for s in self.segments if s.start >= t0 and s.end <= t1]
        covered = sum(s.length() for s in segs)
        if covered != t1 - t0:
            raise ValueError(
                f"window [{t0}, {t1}) is not aligned to ledger segment boundaries")
        return segs


def component_energy(durs: dict, flash_w: int, flash_r: int,
                     prof: PowerProfile) -> dict[str, float]:
    """Energy in uJ per reporting component."""
    out = dict.fromkeys(COMPONENTS, 0.0)
    for (comp, state), d in durs.items():
        e = prof.power(comp, state) * d / 1000.0
        if comp == MCU:
            out["mcu"] += e
        elif state in IDLE_LABELS:
            out["radio_idle"] += e
        else:
            out["radio_tx"] += e
    out["flash"] = flash_w * prof.e_flash_write + flash_r * prof.e_flash_read
    return out


def run_energy(ledger: EnergyLedger, prof: PowerProfile) -> float:
    """Whole-run energy from the running totals, in uJ."""
    return sum(component_energy(ledger.totals, ledger.flash_w, ledger.flash_r,
                                prof).values())


def segment_energy(seg: Segment, prof: PowerProfile) -> dict[str, float]:
    return component_energy(seg.dur, seg.flash_w, seg.flash_r, prof)


def node_power(ledger: EnergyLedger, window: tuple[int, int],
               prof: PowerProfile) -> float:
    """Average power in mW over a marked window."""
    t0, t1 = window
    e = sum(sum(segment_energy(s, prof).values()) for s in ledger.segments_in(t0, t1))
    return e / (t1 - t0) * 1000.0


def phase_breakdown(ledger: EnergyLedger, window: tuple[int, int],
                    prof: PowerProfile) -> dict[int, dict[str, float]]:
    """Per phase id: average power (mW) of each component over that phase's time."""
    acc: dict[int, list] = {}
    for s in ledger.segments_in(*window):
        e = segment_energy(s, prof)
        slot = acc.setdefault(s.phase, [0, dict.fromkeys(COMPONENTS, 0.0)])
        slot[0] += s.length()
        for c in COMPONENTS:
            slot[1][c] += e[c]
    out = {}
    for ph, (dur, e) in sorted(acc.items()):
        out[ph] = {c: (e[c] / dur * 1000.0 if dur else 0.0) for c in COMPONENTS}
    return out


def aggregate(powers: dict[int, float], sink: int = 0) -> dict[str, float]:
    """Average and maximum over all nodes except the sink."""
    vals = [p for n, p in powers.items() if n != sink]
    if not vals:
        raise ValueError("no non-sink nodes to aggregate")
    return {"avg": sum(vals) / len(vals), "max": max(vals)}


class NodeMeter:
    """Turns radio label changes and CPU work into ledger intervals.

    The MCU is active whenever the radio is on or sample processing is
    running, otherwise asleep.
    """

    __slots__ = ("sim", "ledger", "label", "since", "mcu", "mcu_since",
                 "cpu_until", "_cpu_h")

    def __init__(self, sim, ledger: EnergyLedger):
        self.sim = sim
        self.ledger = ledger
        self.label = "off"
        self.since = sim.now
        self.mcu = "sleep"
        self.mcu_since = sim.now
        self.cpu_until = -1
        self._cpu_h = None

    def set(self, label: str) -> None:
        now = self.sim.now
        if label == self.label:
            return
        self.ledger.record_state(RADIO, self.label, self.since, now)
        self.label = label
        self.since = now
        self._mcu_update(now)

    def split(self, t: int, label: str) -> None:
        """Close the current radio interval at ``t`` and continue as ``label``."""
        self.ledger.record_state(RADIO, self.label, self.since, t)
        self.label = label
        self.since = t

    def _mcu_update(self, now: int) -> None:
        want = "active" if (self.label != "off" or self.cpu_until > now) else "sleep"
        if want != self.mcu:
            self.ledger.record_state(MCU, self.mcu, self.mcu_since, now)
            self.mcu = want
            self.mcu_since = now

    def cpu(self, duration: int) -> None:
        now = self.sim.now
        end = now + duration
        if end > self.cpu_until:
            self.cpu_until = end
            self.sim.cancel(self._cpu_h)
            self._cpu_h = self.sim.schedule(end, self._cpu_done, target=self.ledger.node)
        self._mcu_update(now)

    def _cpu_done(self) -> None:
        self._cpu_h = None
        self._mcu_update(self.sim.now)

    def finish(self, t_end: int) -> None:
        self.ledger.record_state(RADIO, self.label, self.since, t_end)
        self.since = t_end
        self.ledger.record_state(MCU, self.mcu, self.mcu_since, t_end)
        self.mcu_since = t_end
        self.ledger.close(t_end)
