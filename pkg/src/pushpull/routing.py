"""Tree collection with ETX parent selection and ACK-gated forwarding.

A packet leaves a node's forwarding buffer only when the parent acknowledges
it. A parent whose buffer is full answers with an explicit NACK, which makes
the child back off and try again later.
"""
from __future__ import annotations

import logging
import math
from collections import OrderedDict, deque
from dataclasses import dataclass, field, replace
from enum import IntEnum

from .kernel import SEC, EventKind
from .mac import BROADCAST, MAC_HEADER, Frame, FrameKind, MacResult

log = logging.getLogger(__name__)

INF = math.inf
BEACON_LEN = MAC_HEADER + 12
ROUTING_HEADER = 10
MAX_NOACK = 8
TRIGGER_DELAY = 1 * SEC


class PhaseId(IntEnum):
    SLEEP = 0
    COLLECTION = 1


@dataclass(frozen=True)
class Beacon:
    src: int
    seq: int
    path_cost: float
    phase_id: PhaseId = PhaseId.COLLECTION
    phase_epoch: int = 0


@dataclass(frozen=True)
class DataPacket:
    origin: int
    origin_seq: int
    generated_at: int
    payload_size: int
    record_count: int = 1
    records: tuple = ()     # (record_seq, sensed_at) pairs
    thl: int = 0            # hops travelled; part of the in-network dedup key

    @property
    def key(self) -> tuple[int, int, int]:
        return self.origin, self.origin_seq, self.thl


@dataclass
class NeighborEntry:
    id: int
    advertised_cost: float
    link_etx: float
    last_heard: int
    last_seq: int
    quality: float = 1.0
    received: int = 1
    missed: int = 0


@dataclass
class RoutingConfig:
    beacon_period_push: int = 30 * SEC
    beacon_period_collection: int = 30 * SEC
    buffer_capacity: int = 10
    etx_alpha: float = 0.9
    dedup_cache: int = 64
    records_per_packet: int = 4

    def problems(self, path: str = "routing") -> list[str]:
        errs = []
        for k in ("beacon_period_push", "beacon_period_collection"):
            if getattr(self, k) <= 0:
                errs.append(f"{path}.{k}: must be positive")
        if not isinstance(self.buffer_capacity, int) or self.buffer_capacity < 1:
            errs.append(f"{path}.buffer_capacity: must be a positive integer")
        if not 0.0 <= self.etx_alpha < 1.0:
            errs.append(f"{path}.etx_alpha: must be in [0, 1)")
        return errs


class ForwardingBuffer:
    """Bounded FIFO of packets awaiting a parent ACK."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.queue: deque[DataPacket] = deque()
        self.keys: set = set()

    def __len__(self):
        return len(self.queue)

    @property
    def full(self) -> bool:
        return len(self.queue) >= self.capacity

    def push(self, p: DataPacket) -> None:
        if self.full:
            raise OverflowError("forwarding buffer full")
        self.queue.append(p)
        self.keys.add(p.key)

    def head(self) -> DataPacket | None:
        return self.queue[0] if self.queue else None

    def pop(self) -> DataPacket:
        p = self.queue.popleft()
        self.keys.discard(p.key)
        return p


class Router:
    """Routing and forwarding engine of one node.

    ``source`` supplies the node's own packets (push origin queue or flash
    drain); it must offer ``peek_new()``, ``take()`` and ``acked(packet)``.
    """

    def __init__(self, node_id: int, sim, mac, cfg: RoutingConfig, rng,
                 is_sink: bool = False, deliver=None):
        self.id = node_id
        self.sim = sim
        self.mac = mac
        self.cfg = cfg
        self.rng = rng
        self.is_sink = is_sink
        self.deliver = deliver
        self.parent: int | None = None
        self.own_cost = 0.0 if is_sink else INF
        self.beacon_seq = 0
        self.neighbors: dict[int, NeighborEntry] = {}
        self.buffer = ForwardingBuffer(cfg.buffer_capacity)
        self.cache: OrderedDict = OrderedDict()
        self.source = None
        self.active = False
        self.phase_id = PhaseId.COLLECTION
        self.epoch = 0
        self.beacon_period = cfg.beacon_period_push
        self.beacon_cover = mac.t_w
        self._beacon_h = None
        self._backoff_h = None
        self._req = None
        self._beacon_req = None
        self._sending = False
        self._own_in_buffer = 0
        self._backoff_cap = mac.cfg.backoff_base
        self.noack = 0
        self.on_parent = None
        self.stats = {"acked": 0, "nacked": 0, "no_ack": 0, "busy": 0,
                      "parent_resets": 0, "forwarded": 0, "beacons": 0}

    # ---------------------------------------------------------- lifecycle
    def activate(self, beacon_period: int, cover: int, first_delay: int | None = None) -> None:
        self.active = True
        self.beacon_period = beacon_period
        self.beacon_cover = cover
        self.sim.cancel(self._beacon_h)
        if first_delay is None:
            first_delay = self.rng.randrange(beacon_period)
        self._beacon_h = self.sim.after(first_delay, self._beacon_tick, target=self.id)
        self.try_send()

    def suspend(self) -> None:
        """Stop beaconing and data transmission; buffered packets stay put."""
        self.active = False
        self.sim.cancel(self._beacon_h)
        self.sim.cancel(self._backoff_h)
        self._beacon_h = self._backoff_h = None
        self._beacon_req = None
        if self._req is not None and not self._sending_on_air():
            self._req.cancelled = True
            self._req = None
            self._sending = False
        self.mac.cancel_pending()

    def _sending_on_air(self) -> bool:
        ex = self.mac._ex
        return ex is not None and ex.req is self._req and ex.train is not None

    def reset_routes(self) -> None:
        self.parent = None
        self.own_cost = 0.0 if self.is_sink else INF
        self.noack = 0

    # ----------------------------------------------------------- beacons
    def _beacon_tick(self) -> None:
        if not self.active:
            return
        p = self.beacon_period
        jitter = self.rng.randint(-p // 10, p // 10)
        self._beacon_h = self.sim.after(p + jitter, self._beacon_tick, target=self.id)
        self._expire()
        if self._beacon_req is not None and not self._beacon_req.cancelled:
            return  # previous beacon still waiting for the channel
        self._beacon_req = self.emit_beacon(self.beacon_cover, self._beacon_sent)

    def _beacon_sent(self) -> None:
        self._beacon_req = None

    def make_beacon(self) -> Beacon:
        self.beacon_seq += 1
        return Beacon(self.id, self.beacon_seq, self.own_cost, self.phase_id, self.epoch)

    def emit_beacon(self, cover: int, callback=None, beacon: Beacon | None = None,
                    skip=None):
        b = beacon or self.make_beacon()
        self.stats["beacons"] += 1
        return self.mac.broadcast(Frame(FrameKind.BEACON, self.id, BROADCAST,
                                        BEACON_LEN, b), cover, callback, skip)

    def _fresh(self, e: NeighborEntry) -> bool:
        return self.sim.now - e.last_heard <= 3 * self.beacon_period

    def _expire(self) -> None:
        if self.parent is not None and not self._fresh(self.neighbors[self.parent]):
            self._select_parent()

    def on_beacon(self, b: Beacon) -> None:
        if b.src == self.id:
            return
        now = self.sim.now
        e = self.neighbors.get(b.src)
        a = self.cfg.etx_alpha
        if e is None:
            e = NeighborEntry(b.src, b.path_cost, 1.0, now, b.seq)
            self.neighbors[b.src] = e
        else:
            gap = b.seq - e.last_seq
            if gap <= 0:
                return
            q = e.quality
            for _ in range(min(gap - 1, 50)):
                q *= a
            e.quality = a * q + (1.0 - a)
            e.missed += gap - 1
            e.received += 1
            e.last_seq = b.seq
            e.advertised_cost = b.path_cost
            e.last_heard = now
            # bidirectional ETX under a symmetric-link assumption
            e.link_etx = max(1.0, 1.0 / (e.quality * e.quality))
        if not self.is_sink:
            self._select_parent()

    def _select_parent(self) -> None:
        best, best_cost = None, INF
        for e in self.neighbors.values():
            if e.advertised_cost == INF or not self._fresh(e):
                continue
            c = e.advertised_cost + e.link_etx
            if c < best_cost or (c == best_cost and best is not None and e.id < best):
                best, best_cost = e.id, c
        had = self.parent
        self.parent = best
        self.own_cost = best_cost
        if best is not None and had is None:
            self.noack = 0
            if self.active and self._beacon_h is not None:
                # advertise a freshly found route soon instead of a period later
                self.sim.cancel(self._beacon_h)
                self._beacon_h = self.sim.after(self.rng.randrange(TRIGGER_DELAY),
                                                self._beacon_tick, target=self.id)
            if self.on_parent is not None:
                self.on_parent()
            self.try_send()

    # ------------------------------------------------------ data plane
    def _refill(self) -> None:
        src = self.source
        if src is None:
            return
        while self._own_in_buffer < 1 and not self.buffer.full:
            p = src.take()
            if p is None:
                return
            self.buffer.push(p)
            self._own_in_buffer += 1

    def try_send(self) -> None:
        if not self.active or self.is_sink or self._sending or self._backoff_h is not None:
            return
        self._refill()
        if self.parent is None:
            return
        p = self.buffer.head()
        if p is None:
            return
        self._sending = True
        length = MAC_HEADER + ROUTING_HEADER + p.payload_size
        more = len(self.buffer) > 1 or (self.source is not None and self.source.waiting())
        frame = Frame(FrameKind.DATA, self.id, self.parent, length, p, more)
        self._req = self.mac.send_unicast(frame, self._send_done)

    def _send_done(self, result: MacResult) -> None:
        self._sending = False
        self._req = None
        base = self.mac.cfg.backoff_base
        if result is MacResult.ACKED:
            p = self.buffer.pop()
            self.stats["acked"] += 1
            self.noack = 0
            self._backoff_cap = base
            if p.origin == self.id and p.thl == 0:
                self._own_in_buffer -= 1
                if self.source is not None:
                    self.source.acked(p)
            self.try_send()
            return
        if result is MacResult.NACKED:
            self.stats["nacked"] += 1
        elif result is MacResult.CHANNEL_BUSY:
            self.stats["busy"] += 1
        else:
            self.stats["no_ack"] += 1
            self.noack += 1
            if self.noack >= MAX_NOACK and self.parent is not None:
                self.stats["parent_resets"] += 1
                e = self.neighbors.get(self.parent)
                if e is not None:
                    e.quality *= 0.5
                    e.link_etx = max(1.0, 1.0 / (e.quality * e.quality))
                self.parent = None
                self.own_cost = INF
                self.noack = 0
        self._backoff(result)

    def _backoff(self, result: MacResult) -> None:
        cap = self._backoff_cap
        delay = self.rng.randint(self.mac.cfg.backoff_base, cap)
        self._backoff_cap = min(2 * cap, self.mac.cfg.backoff_max)
        if self.active:
            self._backoff_h = self.sim.after(delay, self._backoff_done, target=self.id)

    def _backoff_done(self) -> None:
        self._backoff_h = None
        self.try_send()

    def on_data(self, p: DataPacket) -> bool:
        """MAC upcall for a data frame addressed to us; True means ACK."""
        if self.is_sink:
            if self.deliver is not None:
                self.deliver(p)
            return True
        key = p.key
        if key in self.buffer.keys or key in self.cache:
            return True
        if self.buffer.full:
            return False
        self.cache[key] = None
        if len(self.cache) > self.cfg.dedup_cache:
            self.cache.popitem(last=False)
        self.buffer.push(replace(p, thl=p.thl + 1))
        self.stats["forwarded"] += 1
        self.try_send()
        return True

    def backlog(self) -> int:
        return len(self.buffer)
