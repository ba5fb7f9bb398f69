"""X-MAC style low-power-listening MAC.

Receivers sample the channel for ``t_cca`` every wake-up interval. Unicast
senders strobe short addressed preambles and stop as soon as the target
answers with a strobe-ack; broadcast senders repeat the payload for a caller
chosen cover time. There is no MAC-level retransmission.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Any, Callable

from .channel import Channel, Transmission
from .kernel import MS, SEC, EventKind, Simulator

BROADCAST = 0xFFFF
MAC_HEADER = 12


class FrameKind(IntEnum):
    STROBE = 0
    STROBE_ACK = 1
    DATA = 2
    DATA_ACK = 3
    DATA_NACK = 4
    BEACON = 5


@dataclass(frozen=True)
class Frame:
    kind: FrameKind
    src: int
    dst: int
    length: int
    payload: Any = None
    more: bool = False      # sender has further data queued for the same hop

    def __post_init__(self):
        if not 8 <= self.length <= 128:
            raise ValueError(f"frame length {self.length} outside [8, 128]")
        if self.kind == FrameKind.BEACON and self.dst != BROADCAST:
            raise ValueError("beacons are always broadcast")


class MacState(Enum):
    RADIO_OFF = "RadioOff"
    CHANNEL_CHECK = "ChannelCheck"
    RX_ACTIVE = "RxActive"
    TX_STROBE = "TxStrobe"
    WAIT_STROBE_ACK = "WaitStrobeAck"
    TX_PAYLOAD = "TxPayload"
    WAIT_PAYLOAD_ACK = "WaitPayloadAck"
    TX_ACK = "TxAck"


class MacResult(Enum):
    ACKED = "acked"
    NACKED = "nacked"
    NO_ACK = "no_ack"
    CHANNEL_BUSY = "channel_busy"


# Radio labels handed to the energy ledger. ``rx_data`` is listening inside an
# addressed exchange; ``check``/``rx_idle`` are idle listening.
TX_LABELS = frozenset({"tx_strobe", "tx_payload", "tx_ack"})
IDLE_LABELS = frozenset({"off", "check", "rx_idle"})
RADIO_LABELS = ("off", "check", "rx_idle", "rx_data", "cca", "tx_strobe",
                "wait_strobe_ack", "tx_payload", "wait_payload_ack", "tx_ack")


@dataclass
class MacConfig:
    t_w: int = 500 * MS
    t_cca: int = 10 * MS
    t_strobe: int = 1 * MS
    t_gap: int = 1 * MS
    t_data_ack: int = 1 * MS
    backoff_base: int = 20 * MS
    backoff_max: int = 1 * SEC
    t_linger: int = 10 * MS

    def problems(self, path: str = "mac") -> list[str]:
        errs = []
        for k in ("t_w", "t_cca", "t_strobe", "t_gap", "t_data_ack",
                  "backoff_base", "backoff_max"):
            if getattr(self, k) <= 0:
                errs.append(f"{path}.{k}: must be positive")
        if self.t_linger < 0:
            errs.append(f"{path}.t_linger: must be non-negative")
        if self.t_cca < self.t_strobe + self.t_gap:
            errs.append(f"{path}.t_cca: must be >= t_strobe + t_gap")
        if self.t_w <= self.t_cca:
            errs.append(f"{path}.t_w: must exceed t_cca")
        if self.backoff_base > self.backoff_max:
            errs.append(f"{path}.backoff_base: must be <= backoff_max")
        return errs


@dataclass
class _TxRequest:
    frame: Frame
    callback: Callable | None
    cover: int = 0
    cancelled: bool = False
    skip: Callable[[], bool] | None = None
    busy_tries: int = 0


@dataclass
class _Exchange:
    """Sender-side bookkeeping for one unicast or broadcast attempt."""
    req: _TxRequest
    started: int
    train: Transmission | None = None
    payload_tx: Transmission | None = None
    timeout: Any = None
    done: bool = False
    stats: dict = field(default_factory=dict)


class LplMac:
    """One node's MAC state machine, driven by kernel events."""

    def __init__(self, node_id: int, sim: Simulator, channel: Channel,
                 cfg: MacConfig, rng, radio_hook,
                 always_on: bool = False):
        self.id = node_id
        self.sim = sim
        self.ch = channel
        self.cfg = cfg
        self.rng = rng
        self.radio = radio_hook
        self.always_on = always_on
        self.t_w = cfg.t_w
        self.t_sack = min(cfg.t_strobe, cfg.t_gap)
        self.state = MacState.RADIO_OFF
        self.last_check = None
        self._next_check = None
        self.checks = 0
        self.queue: deque[_TxRequest] = deque()
        self.upper = None  # object with on_beacon(frame), on_data(frame) -> bool
        self.tx_guard: Callable[[Frame], None] | None = None
        self._ex: _Exchange | None = None
        # listening context
        self._from = 0
        self._deadline = None
        self._cap = None
        self._cand = None        # (start, uid, tx, k)
        self._cand_h = None
        self._ignored: dict[int, Transmission] = {}
        self._peer = None        # sender we acked a strobe from
        self._label = "off"
        self._seen_beacons: dict[int, int] = {}
        self._deferred: dict[int, _TxRequest] = {}
        self.counters = {"nack_sent": 0, "nack_recv": 0, "busy": 0,
                         "strobes": 0, "no_ack": 0}

    # ------------------------------------------------------------ lifecycle
    def start(self, first_check: int | None = None) -> None:
        if self.always_on:
            self._listen(self.sim.now, None, "rx_idle")
            return
        if first_check is None:
            first_check = self.sim.now + self.rng.randrange(self.t_w)
        self._next_check = self.sim.schedule(first_check, self._check, target=self.id)

    def _set(self, state: MacState, label: str) -> None:
        self.state = state
        if label != self._label:
            self._label = label
            self.radio.set(label)

    def _idle(self) -> None:
        """Radio off (or back to listening for an always-on node)."""
        self._peer = None
        if self.queue:
            self._start_next()
            return
        if self.always_on:
            self._listen(self.sim.now, None, "rx_idle")
        else:
            self._set(MacState.RADIO_OFF, "off")

    # ------------------------------------------------------- wake-up timing
    def set_wakeup_interval(self, interval: int) -> None:
        if interval <= self.cfg.t_cca:
            raise ValueError("wake-up interval must exceed t_cca")
        if interval == self.t_w:
            return
        self.t_w = interval
        if self.always_on or self._next_check is None:
            return
        self.sim.cancel(self._next_check)
        base = self.last_check if self.last_check is not None else self.sim.now
        at = max(base + interval, self.sim.now)
        self._next_check = self.sim.schedule(at, self._check, target=self.id)

    def _check(self) -> None:
        now = self.sim.now
        self.last_check = now
        self._next_check = self.sim.schedule(now + self.t_w, self._check,
                                             target=self.id)
        if self.state is not MacState.RADIO_OFF:
            return
        self.checks += 1
        self.channel_check()

    def channel_check(self) -> None:
        now = self.sim.now
        self._cap = now + 2 * self.t_w
        self._ignored.clear()
        self._listen(now, now + self.cfg.t_cca, "check")

    # ------------------------------------------------------------ listening
    def _listen(self, t_from: int, deadline: int | None, label: str) -> None:
        if self._cap is not None and deadline is not None:
            deadline = min(deadline, max(self._cap, t_from + 1))
        self._from = t_from
        self._deadline = deadline
        self._set(MacState.CHANNEL_CHECK if label == "check" else MacState.RX_ACTIVE,
                  label)
        self.ch.listeners[self.id] = self
        self._pick()

    def _stop_listening(self) -> None:
        self.ch.listeners.pop(self.id, None)
        self.sim.cancel(self._cand_h)
        self._cand_h = None
        self._cand = None

    def _consider(self, tx: Transmission):
        if tx.uid in self._ignored:
            return None
        k = tx.first_frame_from(self._from)
        if k is None:
            return None
        s = tx.frame_start(k)
        if self._deadline is not None and s >= self._deadline:
            return None
        return (s, tx.uid, tx, k)

    def _arm(self, cand) -> None:
        self.sim.cancel(self._cand_h)
        self._cand = cand
        if cand is None:
            if self._deadline is None:
                self._cand_h = None
            else:
                self._cand_h = self.sim.schedule(self._deadline, self._listen_timeout,
                                                 target=self.id)
            return
        s, _, tx, k = cand
        at = s + tx.dur + self.ch.prop_delay(tx.src, self.id)
        self._cand_h = self.sim.schedule(at, self._decode, tx, k, target=self.id,
                                         kind=EventKind.FRAME)

    def _pick(self) -> None:
        best = None
        for tx in self.ch.audible(self.id):
            c = self._consider(tx)
            if c is not None and (best is None or c[:2] < best[:2]):
                best = c
        self._arm(best)

    def on_new_transmission(self, tx: Transmission) -> None:
        c = self._consider(tx)
        if c is None:
            return
        if self._cand is None or c[:2] < self._cand[:2]:
            self._arm(c)

    def on_truncated(self, tx: Transmission) -> None:
        if self._cand is not None and self._cand[2] is tx and self._cand[0] >= tx.stop:
            self._pick()

    def _listen_timeout(self) -> None:
        self._stop_listening()
        self._idle()

    def _decode(self, tx: Transmission, k: int) -> None:
        self._cand_h = None
        self._cand = None
        self.ch.listeners.pop(self.id, None)
        now = self.sim.now
        f = tx.frame
        if not self.ch.receive_ok(self.id, tx, k):
            if self.always_on and self._peer is None:
                self._idle()
            elif self._deadline is not None and self._deadline <= now:
                self._listen_timeout()
            else:
                # nothing heard yet: keep listening until the current deadline
                self._listen(now, self._deadline, self._label)
            return
        mine = f.dst == self.id
        if f.kind == FrameKind.STROBE and mine:
            self._send_strobe_ack(tx)
            return
        if f.kind == FrameKind.DATA and mine:
            self._receive_data(tx)
            return
        self._ignore(tx)
        if f.kind == FrameKind.BEACON:
            b = f.payload
            if self._seen_beacons.get(f.src) != b.seq:
                self._seen_beacons[f.src] = b.seq
                if self.upper is not None:
                    self.upper.on_beacon(b)
        # overhearing avoidance: frames for others end the listen
        self._idle()

    def _ignore(self, tx: Transmission) -> None:
        ign = self._ignored
        if len(ign) > 32:
            now = self.sim.now
            for uid in [u for u, t in ign.items() if t.end <= now and t.stop <= now]:
                del ign[uid]
        ign[tx.uid] = tx

    # -------------------------------------------------- receiver side
    def _send_strobe_ack(self, strobe_tx: Transmission) -> None:
        sender = strobe_tx.src
        self._peer = sender
        self._set(MacState.TX_ACK, "tx_ack")
        ack = Frame(FrameKind.STROBE_ACK, self.id, sender, 8)
        atx = self.ch.transmit(self.id, ack, self.t_sack)
        end = self.sim.now + self.t_sack
        self.sim.schedule(end + self.ch.prop_delay(self.id, sender),
                          _deliver_ack, self, sender, atx, target=sender, kind=EventKind.FRAME)
        self.sim.schedule(end, self._await_payload, target=self.id)

    def _await_payload(self) -> None:
        now = self.sim.now
        c = self.cfg
        # payload starts right after our ack; a repeated strobe within one gap
        self._cap = now + c.t_gap + self.ch.airtime(128) + 2 * c.t_strobe
        self._listen(now, now + c.t_gap + c.t_strobe + 1, "rx_data")

    def _receive_data(self, data_tx: Transmission) -> None:
        accepted = True
        if self.upper is not None:
            accepted = self.upper.on_data(data_tx.frame.payload)
        kind = FrameKind.DATA_ACK if accepted else FrameKind.DATA_NACK
        if not accepted:
            self.counters["nack_sent"] += 1
        sender = data_tx.src
        self._set(MacState.TX_ACK, "tx_ack")
        ack = Frame(kind, self.id, sender, 8)
        atx = self.ch.transmit(self.id, ack, self.cfg.t_data_ack)
        end = self.sim.now + self.cfg.t_data_ack
        self.sim.schedule(end + self.ch.prop_delay(self.id, sender),
                          _deliver_ack, self, sender, atx, target=sender, kind=EventKind.FRAME)
        if accepted and data_tx.frame.more and self.cfg.t_linger > 0:
            self.sim.schedule(end, self._linger, target=self.id)
        else:
            self.sim.schedule(end, self._idle, target=self.id)

    def _linger(self) -> None:
        """Stay up briefly so the sender's next packet needs no long strobing."""
        self._peer = None
        if self.queue or self.always_on:
            self._idle()
            return
        now = self.sim.now
        self._cap = now + self.cfg.t_linger
        self._ignored.clear()
        self._listen(now, now + self.cfg.t_linger, "rx_idle")

    # -------------------------------------------------- sender side
    def send_unicast(self, frame: Frame, callback: Callable[[MacResult], None]) -> _TxRequest:
        if frame.kind != FrameKind.DATA:
            raise ValueError("unicast carries data frames only")
        req = _TxRequest(frame, callback)
        self._enqueue(req)
        return req

    def broadcast(self, frame: Frame, cover: int,
                  callback: Callable[[], None] | None = None,
                  skip: Callable[[], bool] | None = None) -> _TxRequest:
        """Repeat ``frame`` for ``cover``; ``skip`` is asked once the channel is clear."""
        if frame.kind != FrameKind.BEACON:
            raise ValueError("broadcast carries beacons only")
        req = _TxRequest(frame, callback, cover, skip=skip)
        self._enqueue(req)
        return req

    def _enqueue(self, req: _TxRequest) -> None:
        self.queue.append(req)
        self._kick()

    def _kick(self) -> None:
        if self.state is MacState.RADIO_OFF and self._ex is None:
            self._start_next()
        elif self.always_on and self.state is MacState.RX_ACTIVE and self._peer is None:
            c = self._cand
            if c is None or c[0] > self.sim.now:
                self._stop_listening()
                self._start_next()

    def _start_next(self) -> None:
        while self.queue and self.queue[0].cancelled:
            self.queue.popleft()
        if not self.queue:
            self._idle()
            return
        req = self.queue.popleft()
        self._ex = _Exchange(req, self.sim.now)
        self._set(MacState.RX_ACTIVE, "cca")
        cca = self.cfg.t_strobe + self.cfg.t_gap
        self.sim.after(cca, self._cca_done, self._ex, target=self.id)

    def _cca_done(self, ex: _Exchange) -> None:
        now = self.sim.now
        c = self.cfg
        req = ex.req
        if req.cancelled:
            self._finish(ex, None)
            return
        if self.ch.busy(self.id, ex.started, now):
            self.counters["busy"] += 1
            if req.frame.kind == FrameKind.DATA:
                self._finish(ex, MacResult.CHANNEL_BUSY)
            else:
                # broadcasts retry internally after a growing random backoff
                self._ex = None
                self.state = MacState.RADIO_OFF
                hi = min(4 * c.backoff_base << req.busy_tries, c.backoff_max)
                req.busy_tries += 1
                delay = self.rng.randint(c.backoff_base, max(hi, c.backoff_base))
                self._deferred[id(req)] = req
                self.sim.after(delay, self._requeue, req, target=self.id)
                self._idle()
            return
        if req.skip is not None and req.skip():
            req.cancelled = True
            self._finish(ex, None)
            return
        if self.tx_guard is not None:
            self.tx_guard(req.frame)
        if req.frame.kind == FrameKind.BEACON:
            dur = self.ch.airtime(req.frame.length)
            period = dur + c.t_gap
            span = req.cover + c.t_cca
            n = -(-span // period)
            self._set(MacState.TX_STROBE, "tx_strobe")
            ex.train = self.ch.transmit(self.id, req.frame, dur, period,
                                        now + (n - 1) * period + 1)
            ex.timeout = self.sim.after(n * period, self._broadcast_done, ex,
                                        target=self.id)
        else:
            period = c.t_strobe + c.t_gap
            n = (self.t_w + c.t_cca) // period
            strobe = Frame(FrameKind.STROBE, self.id, req.frame.dst, 8)
            self._set(MacState.TX_STROBE, "tx_strobe")
            ex.train = self.ch.transmit(self.id, strobe, c.t_strobe, period,
                                        now + (n - 1) * period + 1)
            ex.timeout = self.sim.after(n * period, self._strobe_timeout, ex,
                                        target=self.id)

    def _requeue(self, req: _TxRequest) -> None:
        self._deferred.pop(id(req), None)
        if not req.cancelled:
            self.queue.appendleft(req)
            self._kick()

    def _train_labels(self, ex: _Exchange, tx_label: str, gap_label: str) -> None:
        """Report a finished train as on-air time then gap time."""
        tr = ex.train
        n = tr.n_frames
        on_air = n * tr.dur
        self.counters["strobes"] += n
        # the tx label has been running since the train started
        self.radio.split(tr.start + on_air, gap_label)
        self._label = gap_label

    def _broadcast_done(self, ex: _Exchange) -> None:
        self._train_labels(ex, "tx_strobe", "wait_strobe_ack")
        self._finish(ex, None)

    def _strobe_timeout(self, ex: _Exchange) -> None:
        self._train_labels(ex, "tx_strobe", "wait_strobe_ack")
        self.counters["no_ack"] += 1
        self._finish(ex, MacResult.NO_ACK)

    def _on_strobe_ack(self, ex: _Exchange) -> None:
        now = self.sim.now
        self.sim.cancel(ex.timeout)
        self.ch.truncate(ex.train, now)
        self._train_labels(ex, "tx_strobe", "wait_strobe_ack")
        self._set(MacState.TX_PAYLOAD, "tx_payload")
        dur = self.ch.airtime(ex.req.frame.length)
        ex.payload_tx = self.ch.transmit(self.id, ex.req.frame, dur)
        self.sim.after(dur, self._payload_sent, ex, target=self.id)

    def _payload_sent(self, ex: _Exchange) -> None:
        self._set(MacState.WAIT_PAYLOAD_ACK, "wait_payload_ack")
        ex.timeout = self.sim.after(self.cfg.t_gap + self.cfg.t_data_ack,
                                    self._payload_timeout, ex, target=self.id)

    def _payload_timeout(self, ex: _Exchange) -> None:
        self.counters["no_ack"] += 1
        self._finish(ex, MacResult.NO_ACK)

    def _on_data_ack(self, ex: _Exchange, nack: bool) -> None:
        self.sim.cancel(ex.timeout)
        if nack:
            self.counters["nack_recv"] += 1
        self._finish(ex, MacResult.NACKED if nack else MacResult.ACKED)

    def _finish(self, ex: _Exchange, result: MacResult | None) -> None:
        ex.done = True
        self._ex = None
        if self.always_on:
            self.state = MacState.RADIO_OFF
        else:
            self._set(MacState.RADIO_OFF, "off")
        cb = ex.req.callback
        # callbacks may enqueue the next request before we go idle
        if cb is not None and not ex.req.cancelled:
            if result is None:
                cb()
            else:
                cb(result)
        if self.state is MacState.RADIO_OFF and self._ex is None:
            self._idle()

    def cancel_pending(self) -> None:
        """Drop queued and deferred requests, and any attempt still in CCA."""
        for r in self.queue:
            r.cancelled = True
        self.queue.clear()
        for r in self._deferred.values():
            r.cancelled = True
        self._deferred.clear()
        ex = self._ex
        if ex is not None and ex.train is None:
            ex.req.cancelled = True


def _deliver_ack(receiver: LplMac, sender_id: int, atx: Transmission) -> None:
    """Evaluate an ack frame at the node it is addressed to."""
    mac = receiver.ch.macs[sender_id]
    ex = mac._ex
    if ex is None or ex.done:
        return
    kind = atx.frame.kind
    if kind == FrameKind.STROBE_ACK:
        if ex.train is None or ex.payload_tx is not None or \
                mac.state is not MacState.TX_STROBE or ex.train.frame.dst != atx.src:
            return
        if mac.ch.receive_ok(sender_id, atx, 0):
            mac._on_strobe_ack(ex)
    else:
        if mac.state is not MacState.WAIT_PAYLOAD_ACK or ex.req.frame.dst != atx.src:
            return
        if mac.ch.receive_ok(sender_id, atx, 0):
            mac._on_data_ack(ex, kind == FrameKind.DATA_NACK)
