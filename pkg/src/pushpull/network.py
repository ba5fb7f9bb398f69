"""Assemble a scenario into a running network and collect its results."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .channel import Channel
from .config import ScenarioConfig
from .energy import (COMPONENTS, PHASE_NAMES, EnergyLedger, NodeMeter, aggregate,
                     node_power, phase_breakdown, run_energy, segment_energy)
from .kernel import MINUTE, SEC, EventKind, Simulator, substream
from .mac import LplMac
from .pull import NodeAgent, SinkAgent
from .routing import PhaseId, Router
from .topology import SINK, load_topology

log = logging.getLogger(__name__)

NODE_STREAM = 1


class InvariantError(RuntimeError):
    """A runtime audit found the simulation in an impossible state."""


@dataclass
class RunResult:
    seed: int
    mode: str
    t_pull: int | None
    window: tuple[int, int]
    end_time: int
    node_power: dict[int, float]
    node_components: dict[int, dict[str, float]]
    node_phase: dict[int, dict[int, dict[str, float]]]
    avg_power: float
    max_power: float
    generated: int
    delivered: int
    app_duplicates: int
    overflow: int
    per_node_yield: dict[int, tuple[int, int]]
    latency: dict[str, float]
    trace_hash: str
    events: int
    wall_time: float
    frames: dict[str, int]
    nacks: int
    collections: list = field(default_factory=list)
    energy_check: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def yield_pct(self) -> float:
        return 100.0 * self.delivered / self.generated if self.generated else 100.0

    def breakdown(self) -> dict[int, dict[str, float]]:
        """Per-phase component power averaged over non-sink nodes."""
        acc: dict[int, dict[str, list]] = {}
        for n, phases in self.node_phase.items():
            if n == SINK:
                continue
            for ph, comps in phases.items():
                slot = acc.setdefault(ph, {c: [] for c in COMPONENTS})
                for c in COMPONENTS:
                    slot[c].append(comps[c])
        return {ph: {c: sum(v) / len(v) for c, v in comps.items()}
                for ph, comps in sorted(acc.items())}

    def to_dict(self) -> dict:
        bd = self.breakdown()
        return {
            "seed": self.seed,
            "mode": self.mode,
            "t_pull_s": self.t_pull / SEC if self.t_pull else None,
            "window_s": [self.window[0] / SEC, self.window[1] / SEC],
            "end_time_s": self.end_time / SEC,
            "avg_power_mw": self.avg_power,
            "max_power_mw": self.max_power,
            "yield": {
                "generated": self.generated,
                "delivered": self.delivered,
                "yield_pct": self.yield_pct,
                "app_duplicates": self.app_duplicates,
                "overflow_dropped": self.overflow,
            },
            "latency_s": self.latency,
            "nodes": {
                str(n): {
                    "avg_power_mw": self.node_power[n],
                    "components_mw": self.node_components[n],
                    "phases_mw": {PHASE_NAMES[p]: v
                                  for p, v in self.node_phase[n].items()},
                }
                for n in sorted(self.node_power)
            },
            "breakdown_mw": {PHASE_NAMES[p]: v for p, v in bd.items()},
            "frames_sent": dict(sorted(self.frames.items())),
            "data_nacks": self.nacks,
            "collections": [
                {"start_s": a / SEC, "end_s": b / SEC, "ended_by": why}
                for a, b, why in self.collections
            ],
            "energy_check": self.energy_check,
            "trace_hash": self.trace_hash,
            "events": self.events,
        }


def _percentiles(vals: list[float]) -> dict[str, float]:
    if not vals:
        return {"p50": 0.0, "p90": 0.0, "p99": 0.0, "max": 0.0}
    vals = sorted(vals)
    n = len(vals)

    def rank(q):
        return vals[min(n - 1, max(0, -(-q * n // 100) - 1))]

    return {"p50": rank(50), "p90": rank(90), "p99": rank(99), "max": vals[-1]}


class Network:
    """One simulation run: nodes, channel, kernel and instrumentation."""

    def __init__(self, cfg: ScenarioConfig, seed: int, check: bool = False):
        self.cfg = cfg
        self.seed = seed
        self.check = check
        self.sim = Simulator(cfg.livelock_cap, check=check)
        self.topo = load_topology(cfg.topology)
        self.channel = Channel(self.sim, self.topo, seed, cfg.bit_rate)
        self.channel.macs = {}
        self.gen_at: dict[tuple[int, int], int] = {}
        self.dlv_at: dict[tuple[int, int], int] = {}
        self.app_duplicates = 0
        self.overflowed = 0
        self.violations: list[str] = []
        self.ledgers: dict[int, EnergyLedger] = {}
        self.meters: dict[int, NodeMeter] = {}
        self.agents: dict[int, object] = {}
        self.routers: dict[int, Router] = {}
        pull = cfg.mode == "pull"
        p = cfg.pull
        if pull:
            self.window = (p.t_pull, (1 + p.cycles) * p.t_pull)
            self.yield_cutoff = self.window[1]
            self.t_end = self.window[1] + 3 * p.t_pull
        else:
            self.window = (0, cfg.duration)
            self.yield_cutoff = cfg.duration - cfg.drain_margin
            self.t_end = cfg.duration
        for n in self.topo.nodes:
            self._build_node(n, pull)

    def _build_node(self, n: int, pull: bool) -> None:
        cfg = self.cfg
        sim = self.sim
        phase = PhaseId.SLEEP if pull and n != SINK else PhaseId.COLLECTION
        ledger = EnergyLedger(n, int(phase), 0, check=self.check)
        meter = NodeMeter(sim, ledger)
        rng = substream(self.seed, NODE_STREAM, n)
        mac_cfg = cfg.mac
        mac = LplMac(n, sim, self.channel, mac_cfg, rng, meter, always_on=(n == SINK))
        if pull:
            mac.t_w = cfg.pull.t_w_sleep
        router = Router(n, sim, mac, cfg.routing, rng, is_sink=(n == SINK))
        if n == SINK:
            agent = SinkAgent(sim, mac, router, cfg.mode, cfg.pull, cfg.routing, self)
            agent.on_phase = lambda ph, ep: ledger.begin_segment(sim.now, int(ph), ep)
        else:
            agent = NodeAgent(n, sim, mac, router, meter, rng, cfg.mode,
                              cfg.sampling_interval, cfg.pull, cfg.routing, self,
                              record_size=cfg.pull.record_size)
        self.channel.macs[n] = mac
        self.ledgers[n] = ledger
        self.meters[n] = meter
        self.agents[n] = agent
        self.routers[n] = router

    # ------------------------------------------------------------ hooks
    def generated(self, origin: int, seq: int, t: int) -> None:
        self.gen_at[(origin, seq)] = t

    def overflow(self, origin: int, seq: int) -> None:
        self.overflowed += 1

    def delivered(self, p, t: int) -> None:
        for rseq, _ in p.records:
            key = (p.origin, rseq)
            if key in self.dlv_at:
                self.app_duplicates += 1
            else:
                self.dlv_at[key] = t

    def violation(self, msg: str) -> None:
        self.violations.append(msg)
        if self.check:
            raise InvariantError(msg)

    def network_backlog(self) -> int:
        return sum(a.backlog() for n, a in self.agents.items() if n != SINK)

    # ------------------------------------------------------------ running
    def _mark(self, t: int) -> None:
        for led in self.ledgers.values():
            led.begin_segment(t)

    def _drained(self) -> None:
        cut = self.yield_cutoff
        if all(k in self.dlv_at for k, t in self.gen_at.items() if t < cut):
            self.sim.stop()
            return
        self.sim.after(10 * SEC, self._drained)

    def _audit(self) -> None:
        """Every generated record must sit somewhere: source, a buffer or the sink."""
        present = set(self.dlv_at)
        for n, a in self.agents.items():
            if n == SINK:
                continue
            r = self.routers[n]
            if len(r.buffer) > r.buffer.capacity:
                raise InvariantError(f"node {n}: forwarding buffer over capacity")
            for p in r.buffer.queue:
                for rseq, _ in p.records:
                    present.add((p.origin, rseq))
            if a.flash is not None:
                for rseq, _ in a.flash.records:
                    present.add((n, rseq))
            else:
                for p in a.source.q:
                    present.add((p.origin, p.origin_seq))
        missing = set(self.gen_at) - present
        lost = len(missing) - self.overflowed
        if lost > 0:
            raise InvariantError(f"{lost} generated records vanished from the network")
        self.sim.after(MINUTE, self._audit)

    def start(self) -> None:
        """Boot every node and schedule window marks and audits."""
        cfg = self.cfg
        sim = self.sim
        for n in self.topo.nodes:
            self.agents[n].start(cfg.traffic)
        t0, t1 = self.window
        for t in (t0, t1):
            if t > 0:
                sim.schedule(t, self._mark, t, kind=EventKind.TIMER)
        if cfg.mode == "pull" and cfg.traffic:
            sim.schedule(t1, self._drained)
        if self.check:
            sim.schedule(MINUTE, self._audit)

    def run(self) -> RunResult:
        wall = time.perf_counter()
        self.start()
        stats = self.sim.run_until(self.t_end)
        sim = self.sim
        end = sim.now
        for m in self.meters.values():
            m.finish(end)
        return self._collect(end, stats, time.perf_counter() - wall)

    def _collect(self, end: int, stats, wall: float) -> RunResult:
        cfg = self.cfg
        prof = cfg.power
        powers, comps, phases, echeck = {}, {}, {}, {}
        worst_partition = 0
        worst_energy = 0.0
        for n, led in self.ledgers.items():
            powers[n] = node_power(led, self.window, prof)
            ph = phase_breakdown(led, self.window, prof)
            phases[n] = ph
            segs = led.segments_in(*self.window)
            tot = dict.fromkeys(COMPONENTS, 0.0)
            for s in segs:
                for c, e in segment_energy(s, prof).items():
                    tot[c] += e
            span = self.window[1] - self.window[0]
            comps[n] = {c: tot[c] / span * 1000.0 for c in COMPONENTS}
            for comp in ("radio", "mcu"):
                d = sum(v for (c, _), v in led.totals.items() if c == comp)
                worst_partition = max(worst_partition, abs(d - end))
            seg_e = sum(sum(segment_energy(s, prof).values()) for s in led.segments)
            worst_energy = max(worst_energy, abs(seg_e - run_energy(led, prof)))
        echeck = {"max_partition_error_us": worst_partition,
                  "max_phase_energy_error_uj": worst_energy}
        agg = aggregate(powers)
        cut = self.yield_cutoff
        window_keys = [k for k, t in self.gen_at.items() if t < cut]
        delivered = sum(1 for k in window_keys if k in self.dlv_at)
        per_node: dict[int, list[int]] = {}
        for k in window_keys:
            slot = per_node.setdefault(k[0], [0, 0])
            slot[0] += 1
            slot[1] += k in self.dlv_at
        lat = [(self.dlv_at[k] - self.gen_at[k]) / SEC
               for k in window_keys if k in self.dlv_at]
        sink = self.agents[SINK]
        nacks = sum(self.channel.macs[n].counters["nack_sent"] for n in self.topo.nodes)
        return RunResult(
            seed=self.seed, mode=cfg.mode,
            t_pull=cfg.pull.t_pull if cfg.mode == "pull" else None,
            window=self.window, end_time=end,
            node_power=powers, node_components=comps, node_phase=phases,
            avg_power=agg["avg"], max_power=agg["max"],
            generated=len(window_keys), delivered=delivered,
            app_duplicates=self.app_duplicates, overflow=self.overflowed,
            per_node_yield={n: tuple(v) for n, v in per_node.items()},
            latency=_percentiles(lat), trace_hash=stats.trace_hash,
            events=stats.events, wall_time=wall,
            frames=dict(self.channel.frames_sent), nacks=nacks,
            collections=list(getattr(sink, "collections", [])),
            energy_check=echeck, violations=list(self.violations),
        )


def run_scenario(cfg: ScenarioConfig, seed: int, check: bool = False) -> RunResult:
    return Network(cfg, seed, check).run()
