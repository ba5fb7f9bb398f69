"""Scenario JSON: parsing, defaults and validation."""
from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .energy import PowerProfile
from .kernel import MINUTE, MS, SEC, US
from .mac import MacConfig
from .pull import PullConfig
from .routing import RoutingConfig
from .topology import TopologyError, check_spec, load_topology

_UNITS = {"us": US, "ms": MS, "s": SEC, "min": MINUTE}
_DUR_RE = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*(us|ms|s|min)\s*$")

DEFAULT_TOPOLOGY = {"generator": {"kind": "random_geometric", "nodes": 35, "seed": 7}}
DEFAULT_SWEEP = (100, 300, 600, 1200, 1800, 3600)

_MAC_DUR = ("t_w", "t_cca", "t_strobe", "t_gap", "t_data_ack", "backoff_base",
            "backoff_max", "t_linger")
_ROUTING_DUR = ("beacon_period_push", "beacon_period_collection")
_PULL_DUR = ("t_pull", "t_w_sleep", "t_w_collect", "quiescence_timeout",
             "min_collection", "max_collection")
_TOP_KEYS = {"mode", "topology", "channel", "mac", "routing", "pull",
             "power_profile", "sampling_interval", "duration", "drain_margin",
             "seeds", "out", "traffic", "livelock_cap"}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("\n".join(problems))
        self.problems = problems


def parse_duration(v) -> int:
    """Integer microseconds, or a string with a us/ms/s/min suffix."""
    if isinstance(v, bool):
        raise ValueError(f"not a duration: {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        m = _DUR_RE.match(v)
        if m:
            val = float(m.group(1)) * _UNITS[m.group(2)]
            if val != int(val):
                raise ValueError(f"duration {v!r} is finer than 1 us")
            return int(val)
    raise ValueError(f"not a duration: {v!r}")


def format_duration(us: int) -> str:
    for unit, scale in (("s", SEC), ("ms", MS)):
        if us % scale == 0:
            return f"{us // scale}{unit}"
    return f"{us}us"


@dataclass
class ScenarioConfig:
    mode: str = "push"
    topology: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_TOPOLOGY))
    bit_rate: int = 250_000
    mac: MacConfig = field(default_factory=MacConfig)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    pull: PullConfig = field(default_factory=PullConfig)
    power: PowerProfile = field(default_factory=PowerProfile)
    sampling_interval: int = 45 * SEC
    duration: int = 7200 * SEC
    drain_margin: int = 300 * SEC
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    out: str = "out"
    traffic: bool = True
    livelock_cap: int = 2_000_000
    raw: dict = field(default_factory=dict, repr=False)

    def with_(self, **changes) -> "ScenarioConfig":
        c = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(c, k, v)
        return c

    def to_dict(self) -> dict:
        def durs(obj, keys):
            d = asdict(obj)
            for k in keys:
                d[k] = format_duration(d[k])
            return d

        return {
            "mode": self.mode,
            "topology": copy.deepcopy(self.topology),
            "channel": {"bit_rate": self.bit_rate},
            "mac": durs(self.mac, _MAC_DUR),
            "routing": durs(self.routing, _ROUTING_DUR),
            "pull": durs(self.pull, _PULL_DUR),
            "power_profile": asdict(self.power),
            "sampling_interval": format_duration(self.sampling_interval),
            "duration": format_duration(self.duration),
            "drain_margin": format_duration(self.drain_margin),
            "seeds": list(self.seeds),
            "out": self.out,
            "traffic": self.traffic,
            "livelock_cap": self.livelock_cap,
        }


def _section(raw, name, cls, dur_keys, errs, int_keys=(), extra=None):
    """Fill a config dataclass from a JSON object, collecting diagnostics."""
    obj = cls()
    data = raw.get(name, {})
    if not isinstance(data, dict):
        errs.append(f"{name}: expected an object")
        return obj
    known = {f.name for f in fields(cls)}
    for k, v in data.items():
        path = f"{name}.{k}"
        if k not in known:
            errs.append(f"{path}: unknown key")
            continue
        if k in dur_keys:
            try:
                v = parse_duration(v)
            except ValueError as e:
                errs.append(f"{path}: {e}")
                continue
        elif k in int_keys:
            if not isinstance(v, int) or isinstance(v, bool):
                errs.append(f"{path}: expected an integer")
                continue
        elif isinstance(v, bool) or not isinstance(v, (int, float)):
            errs.append(f"{path}: expected a number")
            continue
        setattr(obj, k, v)
    return obj


def resolve(raw: dict, check_topology: bool = True) -> ScenarioConfig:
    """Apply defaults and validate; raises ConfigError listing every problem."""
    errs: list[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["<root>: expected a JSON object"])
    for k in sorted(set(raw) - _TOP_KEYS):
        errs.append(f"{k}: unknown key")
    cfg = ScenarioConfig(raw=copy.deepcopy(raw))
    mode = raw.get("mode", "push")
    if mode not in ("push", "pull"):
        errs.append("mode: must be 'push' or 'pull'")
    cfg.mode = mode
    if "topology" in raw:
        cfg.topology = copy.deepcopy(raw["topology"])
    errs.extend(check_spec(cfg.topology))
    ch = raw.get("channel", {})
    if isinstance(ch, dict):
        for k in sorted(set(ch) - {"bit_rate"}):
            errs.append(f"channel.{k}: unknown key")
        br = ch.get("bit_rate", cfg.bit_rate)
        if not isinstance(br, int) or br <= 0:
            errs.append("channel.bit_rate: must be a positive integer")
        else:
            cfg.bit_rate = br
    else:
        errs.append("channel: expected an object")

    cfg.mac = _section(raw, "mac", MacConfig, _MAC_DUR, errs)
    cfg.routing = _section(raw, "routing", RoutingConfig, _ROUTING_DUR, errs,
                           int_keys=("buffer_capacity", "dedup_cache",
                                     "records_per_packet"))
    cfg.pull = _section(raw, "pull", PullConfig, _PULL_DUR, errs,
                        int_keys=("flash_capacity", "record_size", "wake_repeats",
                                  "cycles"))
    given = raw.get("pull", {}) if isinstance(raw.get("pull", {}), dict) else {}
    if "max_collection" not in given:
        cfg.pull.max_collection = min(900 * SEC, cfg.pull.t_pull * 9 // 10)
    if "min_collection" not in given:
        cfg.pull.min_collection = min(60 * SEC, cfg.pull.max_collection // 2)
    cfg.power = _section(raw, "power_profile", PowerProfile, (), errs)

    for key in ("sampling_interval", "duration", "drain_margin"):
        if key in raw:
            try:
                setattr(cfg, key, parse_duration(raw[key]))
            except ValueError as e:
                errs.append(f"{key}: {e}")
    if "seeds" in raw:
        s = raw["seeds"]
        if isinstance(s, int) and not isinstance(s, bool) and s > 0:
            cfg.seeds = list(range(1, s + 1))
        elif isinstance(s, list) and s and all(isinstance(x, int) and x >= 0 for x in s):
            cfg.seeds = list(s)
        else:
            errs.append("seeds: expected a positive count or a list of non-negative integers")
    if "out" in raw:
        cfg.out = str(raw["out"])
    if "traffic" in raw:
        if not isinstance(raw["traffic"], bool):
            errs.append("traffic: expected true or false")
        else:
            cfg.traffic = raw["traffic"]
    if "livelock_cap" in raw:
        if not isinstance(raw["livelock_cap"], int) or raw["livelock_cap"] <= 0:
            errs.append("livelock_cap: expected a positive integer")
        else:
            cfg.livelock_cap = raw["livelock_cap"]

    # semantic checks run on whatever parsed; rejected fields kept their defaults
    errs.extend(cfg.mac.problems())
    errs.extend(cfg.routing.problems())
    errs.extend(cfg.power.problems())
    errs.extend(cfg.pull.problems(t_cca=cfg.mac.t_cca))
    if cfg.sampling_interval <= 0:
        errs.append("sampling_interval: must be positive")
    if cfg.duration <= 0:
        errs.append("duration: must be positive")
    if cfg.drain_margin < 0 or cfg.drain_margin >= cfg.duration:
        errs.append("drain_margin: must be non-negative and shorter than duration")
    payload = cfg.routing.records_per_packet * cfg.pull.record_size
    if 12 + 10 + payload > 128:
        errs.append("routing.records_per_packet: bundled payload exceeds a 128-byte frame")
    if not errs and check_topology:
        try:
            load_topology(cfg.topology)
        except (TopologyError, TypeError) as e:
            errs.append(f"topology: {e}")
    if errs:
        raise ConfigError(errs)
    return cfg


def load_config(path: str | Path, check_topology: bool = True) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError([f"<json>: {e}"]) from e
    except OSError as e:
        raise ConfigError([f"<file>: {e}"]) from e
    return resolve(raw, check_topology)
