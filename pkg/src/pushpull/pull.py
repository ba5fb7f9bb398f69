"""Push and pull collection on top of the routing layer.

Pull alternates long sleep phases, during which samples are logged to flash
and the radio only does slow channel checks, with sink-initiated collection
phases that rebuild routes and drain the flash backlog. The sink announces
each phase change through the phase id and epoch carried by its beacons.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

from .kernel import MINUTE, MS, SEC, EventKind
from .routing import Beacon, DataPacket, PhaseId

log = logging.getLogger(__name__)

FLOOD_JITTER = 1 * SEC
SINK_REPEAT_GAP = 2 * SEC
SLEEP_REPEATS = 3
SAMPLE_CPU = 2 * MS
SUPPRESS_K = 2  # skip the wake relay after hearing this many announcers


class FlashOverflow(Exception):
    pass


@dataclass(frozen=True)
class Phase:
    id: PhaseId
    epoch: int


@dataclass
class PullConfig:
    t_pull: int = 600 * SEC
    t_w_sleep: int = 4 * SEC
    t_w_collect: int = 500 * MS
    quiescence_timeout: int = 30 * SEC
    min_collection: int = 60 * SEC
    max_collection: int = 900 * SEC
    flash_capacity: int = 1_048_576
    record_size: int = 25
    wake_repeats: int = 3
    cycles: int = 3

    def problems(self, path: str = "pull", t_cca: int = 0) -> list[str]:
        errs = []
        for k in ("t_pull", "t_w_sleep", "t_w_collect", "quiescence_timeout",
                  "min_collection", "max_collection", "flash_capacity", "record_size"):
            if getattr(self, k) <= 0:
                errs.append(f"{path}.{k}: must be positive")
        if errs:
            return errs
        if self.t_pull <= self.max_collection:
            errs.append(f"{path}.max_collection: must be shorter than t_pull")
        if self.t_w_sleep <= self.t_w_collect:
            errs.append(f"{path}.t_w_sleep: must exceed t_w_collect")
        if self.min_collection >= self.max_collection:
            errs.append(f"{path}.min_collection: must be shorter than max_collection")
        if self.t_w_sleep <= t_cca:
            errs.append(f"{path}.t_w_sleep: must exceed mac.t_cca")
        if self.t_w_collect <= t_cca:
            errs.append(f"{path}.t_w_collect: must exceed mac.t_cca")
        if self.record_size > self.flash_capacity:
            errs.append(f"{path}.record_size: larger than flash_capacity")
        if self.cycles < 3:
            errs.append(f"{path}.cycles: at least 3 measured cycles are required")
        if self.wake_repeats < 1:
            errs.append(f"{path}.wake_repeats: must be at least 1")
        return errs


def max_pull_interval(capacity: int, record_size: int, sampling: int) -> int:
    """Longest pull interval before the flash log fills up."""
    if capacity <= 0 or record_size <= 0 or sampling <= 0:
        raise ValueError("capacity, record_size and sampling must be positive")
    if record_size > capacity:
        raise ValueError("record_size exceeds flash capacity")
    return (capacity // record_size) * sampling


class FlashLog:
    """FIFO of sensed records persisted in flash.

    Records handed to the network stay here, marked in flight, until the
    packet that carries them is acknowledged by the parent.
    """

    def __init__(self, capacity: int, record_size: int, meter=None):
        self.capacity = capacity
        self.record_size = record_size
        self.records: deque[tuple[int, int]] = deque()
        self.in_flight = 0
        self.bytes_written = 0
        self.bytes_read = 0
        self.overflow = 0
        self.meter = meter

    @property
    def occupancy(self) -> int:
        return len(self.records) * self.record_size

    def append(self, seq: int, sensed_at: int) -> bool:
        if self.occupancy + self.record_size > self.capacity:
            self.overflow += 1
            return False
        self.records.append((seq, sensed_at))
        self.bytes_written += self.record_size
        if self.meter is not None:
            self.meter.ledger.flash(written=self.record_size)
        return True

    def pending(self, before: int | None = None) -> int:
        """Unsent records, optionally only those sensed before ``before``."""
        if before is None:
            return len(self.records) - self.in_flight
        n = 0
        for i in range(self.in_flight, len(self.records)):
            if self.records[i][1] >= before:
                break
            n += 1
        return n

    def read_bundle(self, n: int, before: int | None = None) -> tuple:
        """Next ``n`` unsent records in FIFO order, marked in flight."""
        start = self.in_flight
        out = []
        for i in range(start, min(start + n, len(self.records))):
            rec = self.records[i]
            if before is not None and rec[1] >= before:
                break
            out.append(rec)
        out = tuple(out)
        self.in_flight += len(out)
        nbytes = len(out) * self.record_size
        self.bytes_read += nbytes
        if self.meter is not None:
            self.meter.ledger.flash(read=nbytes)
        return out

    def erase(self, n: int) -> None:
        """Drop the ``n`` oldest records once their packet is acknowledged."""
        if n > self.in_flight:
            raise ValueError("erasing records that were never sent")
        for _ in range(n):
            self.records.popleft()
        self.in_flight -= n


class OriginQueue:
    """Push-mode source: an unbounded queue of the node's own packets."""

    def __init__(self):
        self.q: deque[DataPacket] = deque()

    def take(self):
        return self.q.popleft() if self.q else None

    def acked(self, p) -> None:
        pass

    def waiting(self) -> bool:
        return bool(self.q)

    def __len__(self):
        return len(self.q)


class FlashSource:
    """Pull-mode source: bundles flash records into packets on demand."""

    def __init__(self, node, flash: FlashLog, per_packet: int):
        self.node = node
        self.flash = flash
        self.per_packet = per_packet
        self.enabled = False
        self.cutoff = None  # only records sensed before this are drained
        self._seq = 0

    def take(self):
        if not self.enabled:
            return None
        recs = self.flash.read_bundle(self.per_packet, self.cutoff)
        if not recs:
            return None
        self._seq += 1
        return DataPacket(self.node.id, self._seq, recs[0][1],
                          len(recs) * self.flash.record_size, len(recs), recs)

    def acked(self, p: DataPacket) -> None:
        self.flash.erase(p.record_count)

    def waiting(self) -> bool:
        return self.enabled and self.flash.pending(self.cutoff) > 0


class NodeAgent:
    """Application and phase machine of one sensor node (push or pull)."""

    def __init__(self, node_id, sim, mac, router, meter, rng, mode: str,
                 sampling: int, pull: PullConfig | None, routing_cfg, hooks,
                 record_size: int = 25):
        self.id = node_id
        self.sim = sim
        self.mac = mac
        self.router = router
        self.meter = meter
        self.rng = rng
        self.mode = mode
        self.sampling = sampling
        self.pull = pull
        self.hooks = hooks
        self.record_size = record_size
        self.sample_seq = 0
        self.epoch = 0
        self.phase = PhaseId.SLEEP if mode == "pull" else PhaseId.COLLECTION
        self.pending_sleep = None
        self.routing_cfg = routing_cfg
        self._fallback_h = None
        self._flood_h = None
        self.phase_log: list[tuple[int, int, int]] = [(sim.now, int(self.phase), 0)]
        self.originated_in_sleep = 0
        self.heard: set[int] = set()
        self.relays_suppressed = 0
        self.flash = None
        if mode == "pull":
            self.flash = FlashLog(pull.flash_capacity, pull.record_size, meter)
            self.source = FlashSource(self, self.flash, routing_cfg.records_per_packet)
        else:
            self.source = OriginQueue()
        router.source = self.source
        mac.upper = self
        mac.tx_guard = self._guard

    # -------------------------------------------------------------- startup
    def start(self, traffic: bool = True) -> None:
        self.mac.start()
        if not traffic:
            return
        self.sim.after(self.rng.randrange(self.sampling), self.sensor_sample,
                       target=self.id, kind=EventKind.SENSOR)
        if self.mode == "push":
            self.router.activate(self.routing_cfg.beacon_period_push, self.mac.t_w)

    def _guard(self, frame) -> None:
        if self.mode == "pull" and self.phase == PhaseId.SLEEP:
            self.originated_in_sleep += 1
            self.hooks.violation(f"node {self.id} sent {frame.kind.name} while asleep")

    # -------------------------------------------------------------- sampling
    def sensor_sample(self) -> None:
        now = self.sim.now
        self.sim.after(self.sampling, self.sensor_sample, target=self.id,
                       kind=EventKind.SENSOR)
        self.meter.cpu(SAMPLE_CPU)
        self.sample_seq += 1
        seq = self.sample_seq
        if self.mode == "push":
            p = DataPacket(self.id, seq, now, self.record_size, 1, ((seq, now),))
            self.hooks.generated(self.id, seq, now)
            self.source.q.append(p)
            self.router.try_send()
        else:
            ok = self.flash.append(seq, now)
            self.hooks.generated(self.id, seq, now)
            if not ok:
                self.hooks.overflow(self.id, seq)

    # --------------------------------------------------------- MAC upcalls
    def on_data(self, p: DataPacket) -> bool:
        return self.router.on_data(p)

    def on_beacon(self, b: Beacon) -> None:
        if (self.mode == "pull" and b.phase_epoch > self.epoch
                and (self.pending_sleep is None or b.phase_epoch > self.pending_sleep)):
            if b.phase_id == PhaseId.COLLECTION:
                self.adopt_collection(b.phase_epoch)
            else:
                self.begin_sleep(b.phase_epoch)
        if b.phase_id == PhaseId.COLLECTION and b.phase_epoch == self.epoch:
            self.heard.add(b.src)
        if self.mode == "push":
            self.router.on_beacon(b)
        elif (self.phase == PhaseId.COLLECTION and self.pending_sleep is None
              and b.phase_id == PhaseId.COLLECTION and b.phase_epoch == self.epoch):
            self.router.on_beacon(b)

    # ---------------------------------------------------------- phase machine
    def _enter(self, phase: PhaseId, epoch: int) -> None:
        self.phase = phase
        self.epoch = epoch
        now = self.sim.now
        self.meter.ledger.begin_segment(now, int(phase), epoch)
        self.phase_log.append((now, int(phase), epoch))

    def adopt_collection(self, epoch: int) -> None:
        cfg = self.pull
        self.pending_sleep = None
        self.sim.cancel(self._flood_h)
        self.sim.cancel(self._fallback_h)
        self._enter(PhaseId.COLLECTION, epoch)
        self.heard = set()
        self.mac.set_wakeup_interval(cfg.t_w_collect)
        r = self.router
        r.suspend()
        r.reset_routes()
        r.phase_id = PhaseId.COLLECTION
        r.epoch = epoch
        self.source.enabled = True
        self.source.cutoff = self.sim.now
        self._flood_h = self.sim.after(self.rng.randrange(FLOOD_JITTER + 1),
                                       self._flood, PhaseId.COLLECTION, epoch,
                                       target=self.id, kind=EventKind.PHASE)
        period = self.routing_cfg.beacon_period_collection
        r.activate(period, cfg.t_w_collect,
                   FLOOD_JITTER + self.rng.randrange(period))
        self._fallback_h = self.sim.after(cfg.max_collection + MINUTE,
                                          self._fallback, epoch, target=self.id,
                                          kind=EventKind.PHASE)

    def _flood(self, phase_id: PhaseId, epoch: int) -> None:
        """Relay a phase announcement once."""
        self._flood_h = None
        r = self.router
        if phase_id == PhaseId.COLLECTION:
            r.emit_beacon(self.pull.t_w_sleep, skip=self._suppressed)
        else:
            b = Beacon(self.id, r.make_beacon().seq, r.own_cost, phase_id, epoch)
            self.mac.broadcast(_beacon_frame(self.id, b), self.pull.t_w_collect,
                               lambda: self._adopt_sleep(epoch))

    def _suppressed(self) -> bool:
        if len(self.heard) >= SUPPRESS_K:
            self.relays_suppressed += 1
            return True
        return False

    def begin_sleep(self, epoch: int) -> None:
        """Sleep announced: stop the data plane, relay once, then sleep."""
        if self.phase == PhaseId.SLEEP:
            self.epoch = epoch
            self.meter.ledger.begin_segment(self.sim.now, int(PhaseId.SLEEP), epoch)
            return
        self.pending_sleep = epoch
        self.router.suspend()
        self.sim.cancel(self._flood_h)
        self.sim.cancel(self._fallback_h)
        self._flood_h = self.sim.after(self.rng.randrange(FLOOD_JITTER + 1),
                                       self._flood, PhaseId.SLEEP, epoch,
                                       target=self.id, kind=EventKind.PHASE)

    def _adopt_sleep(self, epoch: int) -> None:
        if self.pending_sleep != epoch:
            return
        self.pending_sleep = None
        self.router.suspend()
        self.source.enabled = False
        self._enter(PhaseId.SLEEP, epoch)
        self.mac.set_wakeup_interval(self.pull.t_w_sleep)

    def _fallback(self, epoch: int) -> None:
        if self.phase == PhaseId.COLLECTION and self.epoch == epoch and self.pending_sleep is None:
            log.debug("node %d: no sleep announcement, sleeping autonomously", self.id)
            self.router.suspend()
            self.source.enabled = False
            self._enter(PhaseId.SLEEP, epoch)
            self.mac.set_wakeup_interval(self.pull.t_w_sleep)

    def backlog(self) -> int:
        n = len(self.router.buffer)
        if self.flash is not None:
            n += self.flash.pending(self.source.cutoff)
        elif self.mode == "push":
            n += len(self.source)
        return n


def _beacon_frame(src, b):
    from .mac import BROADCAST, Frame, FrameKind
    from .routing import BEACON_LEN
    return Frame(FrameKind.BEACON, src, BROADCAST, BEACON_LEN, b)


class SinkAgent:
    """Sink application: yield bookkeeping and, in pull mode, phase control."""

    def __init__(self, sim, mac, router, mode: str, pull: PullConfig | None,
                 routing_cfg, hooks):
        self.id = 0
        self.sim = sim
        self.mac = mac
        self.router = router
        self.mode = mode
        self.pull = pull
        self.routing_cfg = routing_cfg
        self.hooks = hooks
        self.epoch = 0
        self.phase = PhaseId.SLEEP if mode == "pull" else PhaseId.COLLECTION
        self.last_rx = 0
        self.phase_start = 0
        self.collections: list[tuple[int, int, str]] = []
        self._end_h = None
        self._seen: dict[int, deque] = {}
        self._seen_set: dict[int, set] = {}
        mac.upper = self
        router.deliver = self._deliver
        self.on_phase = None

    def start(self, traffic: bool = True) -> None:
        self.mac.start()
        if not traffic:
            return
        if self.mode == "push":
            self.router.activate(self.routing_cfg.beacon_period_push, self.mac.t_w)
        else:
            self.sim.schedule(self.pull.t_pull, self.start_collection,
                              target=0, kind=EventKind.PHASE)

    def on_beacon(self, b) -> None:
        pass

    def on_data(self, p) -> bool:
        return self.router.on_data(p)

    def _deliver(self, p: DataPacket) -> None:
        self.last_rx = self.sim.now
        win = self._seen.setdefault(p.origin, deque())
        seen = self._seen_set.setdefault(p.origin, set())
        if p.origin_seq in seen:
            return
        seen.add(p.origin_seq)
        win.append(p.origin_seq)
        if len(win) > 64:
            seen.discard(win.popleft())
        self.hooks.delivered(p, self.sim.now)

    # ----------------------------------------------------------- pull control
    def start_collection(self) -> None:
        cfg = self.pull
        now = self.sim.now
        self.sim.schedule(now + cfg.t_pull, self.start_collection, target=0,
                          kind=EventKind.PHASE)
        if self.phase == PhaseId.COLLECTION:
            # previous phase still open at the next pull instant
            self._end_collection("overrun")
        self.epoch += 1
        self.phase = PhaseId.COLLECTION
        self.phase_start = now
        self.last_rx = now
        r = self.router
        r.phase_id = PhaseId.COLLECTION
        r.epoch = self.epoch
        if self.on_phase:
            self.on_phase(PhaseId.COLLECTION, self.epoch)
        self._wake(cfg.wake_repeats, self.epoch)
        self.sim.cancel(self._end_h)
        self._end_h = self.sim.schedule(now + cfg.min_collection, self._maybe_end,
                                        target=0, kind=EventKind.PHASE)

    def _wake(self, left: int, epoch: int) -> None:
        if self.epoch != epoch or self.phase != PhaseId.COLLECTION:
            return
        r = self.router

        def sent():
            if left > 1:
                self.sim.after(SINK_REPEAT_GAP, self._wake, left - 1, epoch, target=0,
                               kind=EventKind.PHASE)
            elif self.epoch == epoch and self.phase == PhaseId.COLLECTION:
                r.activate(self.routing_cfg.beacon_period_collection,
                           self.pull.t_w_collect)

        r.emit_beacon(self.pull.t_w_sleep, sent)

    def _maybe_end(self) -> None:
        cfg = self.pull
        now = self.sim.now
        elapsed = now - self.phase_start
        if elapsed >= cfg.max_collection:
            self._end_collection("max")
            return
        due = max(self.last_rx + cfg.quiescence_timeout,
                  self.phase_start + cfg.min_collection)
        if now >= due:
            self._end_collection("quiescent")
            return
        self._end_h = self.sim.schedule(min(due, self.phase_start + cfg.max_collection),
                                        self._maybe_end, target=0, kind=EventKind.PHASE)

    def _end_collection(self, why: str) -> None:
        self.sim.cancel(self._end_h)
        self._end_h = None
        if why != "quiescent":
            backlog = self.hooks.network_backlog()
            if backlog:
                log.warning("collection phase %d ended (%s) with %d packets/records "
                            "still queued in the network", self.epoch, why, backlog)
        self.collections.append((self.phase_start, self.sim.now, why))
        self.router.suspend()
        self.epoch += 1
        self.phase = PhaseId.SLEEP
        self.router.phase_id = PhaseId.SLEEP
        self.router.epoch = self.epoch
        if self.on_phase:
            self.on_phase(PhaseId.SLEEP, self.epoch)
        self._announce_sleep(SLEEP_REPEATS, self.epoch)

    def _announce_sleep(self, left: int, epoch: int) -> None:
        if self.epoch != epoch:
            return

        def sent():
            if left > 1:
                self.sim.after(SINK_REPEAT_GAP, self._announce_sleep, left - 1, epoch,
                               target=0, kind=EventKind.PHASE)

        self.router.emit_beacon(self.pull.t_w_collect, sent)
