"""Deterministic discrete-event kernel.

Virtual time is an integer count of microseconds. Events fire in
``(fire_at, seq)`` order where ``seq`` is assigned at scheduling time, so
same-instant events run in the order they were scheduled.
"""
from __future__ import annotations

import heapq
import random
import time
from dataclasses import dataclass
from enum import IntEnum

US = 1
MS = 1_000
SEC = 1_000_000
MINUTE = 60 * SEC

_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    """Programming error inside the simulation (scheduling into the past)."""


class LivelockError(SimulationError):
    """Raised when too many events fire within one simulated second."""


class EventKind(IntEnum):
    TIMER = 0
    FRAME = 1
    SENSOR = 2
    PHASE = 3


class EventHandle:
    __slots__ = ("fire_at", "seq", "target", "kind", "fn", "args", "state")

    # state: 0 pending, 1 fired, 2 cancelled
    def __init__(self, fire_at, seq, target, kind, fn, args):
        self.fire_at = fire_at
        self.seq = seq
        self.target = target
        self.kind = kind
        self.fn = fn
        self.args = args
        self.state = 0

    @property
    def pending(self) -> bool:
        return self.state == 0


@dataclass
class RunStats:
    events: int
    wall_time: float
    now: int
    trace_hash: str


def splitmix64(x: int) -> int:
    """One step of the splitmix64 finaliser; used to derive RNG substreams."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def substream_seed(seed: int, stream: int, index: int) -> int:
    """Mix ``(seed, stream, index)`` into a 64-bit seed.

    ``stream`` separates families (1 = per node, 2 = per channel link) so that
    protocol draws never perturb channel loss draws.
    """
    return splitmix64(splitmix64(splitmix64(seed & _MASK64) ^ stream) ^ index)


def substream(seed: int, stream: int, index: int) -> random.Random:
    return random.Random(substream_seed(seed, stream, index))


class Simulator:
    """Single-threaded event loop with cancellable handles and a trace hash."""

    def __init__(self, livelock_cap: int = 2_000_000, check: bool = False):
        self._queue: list[tuple[int, int, EventHandle]] = []
        self._seq = 0
        self.now = 0
        self.events = 0
        self.livelock_cap = livelock_cap
        self.check = check
        self._hash = 0xCBF29CE484222325
        self._stopped = False
        self._last_key = (-1, -1)

    def schedule(self, fire_at: int, fn, *args, target: int = -1,
                 kind: EventKind = EventKind.TIMER) -> EventHandle:
        if fire_at < self.now:
            raise SimulationError(
                f"event scheduled at {fire_at} us before now={self.now} us")
        self._seq += 1
        h = EventHandle(fire_at, self._seq, target, kind, fn, args)
        heapq.heappush(self._queue, (fire_at, self._seq, h))
        return h

    def after(self, delay: int, fn, *args, target: int = -1,
              kind: EventKind = EventKind.TIMER) -> EventHandle:
        return self.schedule(self.now + delay, fn, *args, target=target, kind=kind)

    @staticmethod
    def cancel(h: EventHandle | None) -> bool:
        if h is None or h.state != 0:
            return False
        h.state = 2
        h.fn = None
        h.args = None
        return True

    def stop(self) -> None:
        """Make ``run_until`` return after the current event."""
        self._stopped = True

    @property
    def pending(self) -> int:
        return sum(1 for _, _, h in self._queue if h.state == 0)

    @property
    def trace_hash(self) -> str:
        return f"{self._hash:016x}"

    def run_until(self, t_end: int) -> RunStats:
        if t_end < self.now:
            raise SimulationError("t_end lies in the past")
        start = time.perf_counter()
        q = self._queue
        pop = heapq.heappop
        h_acc = self._hash
        bucket = -1
        in_bucket = 0
        cap = self.livelock_cap
        check = self.check
        self._stopped = False
        while q and q[0][0] <= t_end:
            t, _, ev = pop(q)
            if ev.state:
                continue
            ev.state = 1
            self.now = t
            if check:
                key = (t, ev.seq)
                if key <= self._last_key:
                    raise SimulationError(f"dispatch order violated at {key}")
                self._last_key = key
            sec = t // SEC
            if sec != bucket:
                bucket = sec
                in_bucket = 0
            in_bucket += 1
            if in_bucket > cap:
                self._hash = h_acc
                raise LivelockError(
                    f"more than {cap} events in simulated second {sec}")
            h_acc = ((h_acc ^ t ^ (ev.target << 40) ^ (ev.kind << 56))
                     * 0x100000001B3) & _MASK64
            self.events += 1
            fn = ev.fn
            args = ev.args
            ev.fn = None
            ev.args = None
            fn(*args)
            if self._stopped:
                break
        else:
            self.now = t_end
        self._hash = h_acc
        return RunStats(self.events, time.perf_counter() - start, self.now,
                        self.trace_hash)
