"""Shared radio medium.

A transmission is a periodic train of equal frames (a strobe train or a
broadcast announcement) or a single frame. Frames are never scheduled one by
one: listeners ask the channel for the next frame start and get woken at the
frame's end, when loss and collisions are decided.
"""
from __future__ import annotations

from dataclasses import dataclass

from .kernel import Simulator, substream
from .topology import Topology

CHANNEL_STREAM = 2
HORIZON = 50_000  # us of history kept for collision checks


@dataclass(frozen=True)
class AirFrame:
    src: int
    tx_start: int
    tx_end: int

    def __post_init__(self):
        if self.tx_end <= self.tx_start:
            raise ValueError("tx_end must be after tx_start")


def collides(a: AirFrame, b: AirFrame) -> bool:
    """Half-open overlap of two air intervals."""
    return a.tx_start < b.tx_end and b.tx_start < a.tx_end


class Transmission:
    """Frames at ``start + k*period`` lasting ``dur``, for k with start < ``stop``."""

    __slots__ = ("uid", "src", "frame", "start", "period", "dur", "stop",
                 "n_frames", "end")

    def __init__(self, uid, src, frame, start, dur, period=None, stop=None):
        self.uid = uid
        self.src = src
        self.frame = frame
        self.start = start
        self.dur = dur
        self.period = period or dur
        self.set_stop(stop if stop is not None else start + 1)

    def set_stop(self, stop: int) -> None:
        self.stop = stop
        span = stop - self.start
        n = 0 if span <= 0 else -(-span // self.period)
        self.n_frames = n
        self.end = self.start + (n - 1) * self.period + self.dur if n else self.start

    def frame_start(self, k: int) -> int:
        return self.start + k * self.period

    def first_frame_from(self, t: int) -> int | None:
        """Index of the first frame starting at or after ``t``."""
        k = 0 if t <= self.start else -((self.start - t) // self.period)
        return k if k < self.n_frames else None

    def overlaps(self, t0: int, t1: int) -> bool:
        """Whether any frame of this train overlaps ``[t0, t1)``."""
        n = self.n_frames
        if not n or t1 <= self.start or t0 >= self.end:
            return False
        p = self.period
        k_lo = (t0 - self.dur - self.start) // p + 1
        if k_lo < 0:
            k_lo = 0
        k_hi = (t1 - self.start - 1) // p
        if k_hi > n - 1:
            k_hi = n - 1
        return k_lo <= k_hi

    def air(self, k: int) -> AirFrame:
        s = self.frame_start(k)
        return AirFrame(self.src, s, s + self.dur)


class Channel:
    """Delivery, loss and collision decisions for one run."""

    def __init__(self, sim: Simulator, topo: Topology, seed: int,
                 bit_rate: int = 250_000):
        self.sim = sim
        self.topo = topo
        self.seed = seed
        self.bit_rate = bit_rate
        self._uid = 0
        # transmissions that ended less than HORIZON ago, in start order
        self.live: list[Transmission] = []
        self.listeners: dict[int, object] = {}
        self._link_rng = {}
        self._in = {n: frozenset(ln.src for ln in topo.in_links[n]) for n in topo.nodes}
        self._out = {n: [ln.dst for ln in topo.out_links[n]] for n in topo.nodes}
        self.frames_sent: dict[str, int] = {}
        self.hooks = []

    def airtime(self, length: int) -> int:
        return -(-length * 8 * 1_000_000 // self.bit_rate)

    def _rng(self, src: int, dst: int):
        key = (src, dst)
        r = self._link_rng.get(key)
        if r is None:
            r = self._link_rng[key] = substream(self.seed, CHANNEL_STREAM,
                                                (src << 16) | dst)
        return r

    def _prune(self) -> None:
        horizon = self.sim.now - HORIZON
        live = self.live
        if live and (live[0].end < horizon or len(live) > 16):
            self.live = [tx for tx in live if tx.end >= horizon]

    def transmit(self, src: int, frame, dur: int, period: int | None = None,
                 stop: int | None = None) -> Transmission:
        """Put a frame (train) on the air starting now and wake listeners."""
        self._uid += 1
        tx = Transmission(self._uid, src, frame, self.sim.now, dur, period, stop)
        self._prune()
        self.live.append(tx)
        kind = frame.kind.name
        self.frames_sent[kind] = self.frames_sent.get(kind, 0) + 1
        for h in self.hooks:
            h(src, frame, tx)
        listeners = self.listeners
        for d in self._out[src]:
            mac = listeners.get(d)
            if mac is not None:
                mac.on_new_transmission(tx)
        return tx

    def truncate(self, tx: Transmission, t: int) -> None:
        """Stop a train: no frame starts at or after ``t``."""
        if t < tx.stop:
            tx.set_stop(t)
            for d in self._out[tx.src]:
                mac = self.listeners.get(d)
                if mac is not None:
                    mac.on_truncated(tx)

    def audible(self, dst: int):
        """Transmissions by in-neighbours of ``dst`` that are still on the air."""
        now = self.sim.now
        ins = self._in[dst]
        return [tx for tx in self.live if tx.end > now and tx.src in ins]

    def busy(self, node: int, t0: int, t1: int) -> bool:
        """Any audible frame overlapping ``[t0, t1)`` at ``node``."""
        ins = self._in[node]
        for tx in self.live:
            if tx.src in ins and tx.overlaps(t0, t1):
                return True
        return False

    def receive_ok(self, dst: int, tx: Transmission, k: int) -> bool:
        """Decide reception of frame ``k`` of ``tx`` at ``dst``.

        Any other audible frame overlapping it destroys it; otherwise it
        survives with the link's prr (one Bernoulli draw per frame).
        """
        link = self.topo.link(tx.src, dst)
        if link is None:
            return False
        s = tx.frame_start(k)
        e = s + tx.dur
        ins = self._in[dst]
        src = tx.src
        for o in self.live:
            if o.src != src and o.src in ins and o.overlaps(s, e):
                return False
        p = link.prr
        if p >= 1.0:
            return True
        return self._rng(tx.src, dst).random() < p

    def prop_delay(self, src: int, dst: int) -> int:
        ln = self.topo.link(src, dst)
        return ln.prop_delay if ln else 0
