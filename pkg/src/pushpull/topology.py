"""Static connectivity graphs with per-link packet reception probability."""
from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field

SINK = 0


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    src: int
    dst: int
    prr: float
    prop_delay: int = 0

    def __post_init__(self):
        if not 0.0 <= self.prr <= 1.0:
            raise TopologyError(
                f"link {self.src}->{self.dst}: prr {self.prr} outside [0, 1]")
        if self.prop_delay < 0:
            raise TopologyError(
                f"link {self.src}->{self.dst}: negative prop_delay")


@dataclass
class Topology:
    nodes: list[int]
    links: list[Link]
    positions: dict[int, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        self.out_links: dict[int, list[Link]] = {n: [] for n in self.nodes}
        self.in_links: dict[int, list[Link]] = {n: [] for n in self.nodes}
        self._prr: dict[tuple[int, int], Link] = {}
        for ln in self.links:
            if ln.prr <= 0.0:
                continue
            self.out_links[ln.src].append(ln)
            self.in_links[ln.dst].append(ln)
            self._prr[(ln.src, ln.dst)] = ln

    def link(self, src: int, dst: int) -> Link | None:
        return self._prr.get((src, dst))

    def prr(self, src: int, dst: int) -> float:
        ln = self._prr.get((src, dst))
        return ln.prr if ln else 0.0

    def unreachable(self) -> list[int]:
        """Nodes without a prr>0 directed path to the sink."""
        seen = {SINK}
        todo = deque([SINK])
        while todo:
            v = todo.popleft()
            for ln in self.in_links[v]:
                if ln.src not in seen:
                    seen.add(ln.src)
                    todo.append(ln.src)
        return sorted(n for n in self.nodes if n not in seen)

    def validate(self) -> None:
        if SINK not in self.nodes:
            raise TopologyError("topology lacks the sink (node 0)")
        bad = self.unreachable()
        if bad:
            raise TopologyError(
                "topology is not connected toward the sink; unreachable nodes: "
                + ", ".join(str(b) for b in bad))


def prr_linear(d: float, r_full: float, r_zero: float) -> float:
    """PRR 1 up to ``r_full``, falling linearly to 0 at ``r_zero``."""
    if d <= r_full:
        return 1.0
    if d >= r_zero:
        return 0.0
    return (r_zero - d) / (r_zero - r_full)


def _from_positions(pos: dict[int, tuple[float, float]], prr_of) -> Topology:
    ids = sorted(pos)
    links = []
    for a in ids:
        for b in ids:
            if a == b:
                continue
            p = prr_of(math.dist(pos[a], pos[b]))
            if p > 0:
                links.append(Link(a, b, round(p, 9)))
    return Topology(ids, links, dict(pos))


def random_geometric(nodes: int = 35, seed: int = 7, width: float = 60.0,
                     height: float = 20.0, r_full: float = 10.0,
                     r_zero: float = 20.0, sink_pos=None) -> Topology:
    """Nodes dropped uniformly on a ``width`` x ``height`` floor.

    The sink sits at the floor centre unless ``sink_pos`` is given.
    """
    rng = random.Random(seed)
    pos = {SINK: tuple(sink_pos) if sink_pos else (width / 2, height / 2)}
    for n in range(1, nodes):
        pos[n] = (rng.uniform(0, width), rng.uniform(0, height))
    return _from_positions(pos, lambda d: prr_linear(d, r_full, r_zero))


def grid(nodes: int = 35, cols: int = 6, spacing: float = 10.0,
         radius: float = 10.0) -> Topology:
    """Row-major grid, unit-disk links (prr 1) within ``radius``."""
    pos = {n: ((n % cols) * spacing, (n // cols) * spacing) for n in range(nodes)}
    return _from_positions(pos, lambda d: 1.0 if d <= radius + 1e-9 else 0.0)


_GEN_KEYS = {
    "random_geometric": {"kind", "nodes", "seed", "width", "height",
                         "r_full", "r_zero", "sink_pos"},
    "grid": {"kind", "nodes", "cols", "spacing", "radius"},
}


def check_spec(spec: dict, path: str = "topology") -> list[str]:
    """Structural diagnostics for a topology spec (no graph validation)."""
    errs = []
    if not isinstance(spec, dict):
        return [f"{path}: expected an object"]
    if "links" in spec and "generator" in spec:
        errs.append(f"{path}: give either 'links' or 'generator', not both")
    extra = set(spec) - {"links", "generator", "symmetric"}
    for k in sorted(extra):
        errs.append(f"{path}.{k}: unknown key")
    if "generator" in spec:
        g = spec["generator"]
        if not isinstance(g, dict) or g.get("kind") not in _GEN_KEYS:
            errs.append(f"{path}.generator.kind: must be one of "
                        + ", ".join(sorted(_GEN_KEYS)))
        else:
            for k in sorted(set(g) - _GEN_KEYS[g["kind"]]):
                errs.append(f"{path}.generator.{k}: unknown key")
    elif "links" in spec:
        if not isinstance(spec["links"], list) or not spec["links"]:
            errs.append(f"{path}.links: expected a non-empty list")
        else:
            for i, ln in enumerate(spec["links"]):
                p = f"{path}.links[{i}]"
                if not isinstance(ln, dict):
                    errs.append(f"{p}: expected an object")
                    continue
                for k in sorted(set(ln) - {"src", "dst", "prr", "prop_delay"}):
                    errs.append(f"{p}.{k}: unknown key")
                for k in ("src", "dst"):
                    v = ln.get(k)
                    if not isinstance(v, int) or not 0 <= v < 65536:
                        errs.append(f"{p}.{k}: expected node id in [0, 65535]")
                prr = ln.get("prr")
                if not isinstance(prr, (int, float)) or not 0 <= prr <= 1:
                    errs.append(f"{p}.prr: must be a number in [0, 1]")
    else:
        errs.append(f"{path}: needs 'links' or 'generator'")
    return errs


def load_topology(spec: dict) -> Topology:
    """Build and validate a topology from its scenario-JSON description."""
    errs = check_spec(spec)
    if errs:
        raise TopologyError("; ".join(errs))
    if "generator" in spec:
        g = dict(spec["generator"])
        kind = g.pop("kind")
        topo = random_geometric(**g) if kind == "random_geometric" else grid(**g)
    else:
        links = {}
        nodes = {SINK}
        for ln in spec["links"]:
            link = Link(ln["src"], ln["dst"], float(ln["prr"]),
                        int(ln.get("prop_delay", 0)))
            links[(link.src, link.dst)] = link
            nodes.update((link.src, link.dst))
        if spec.get("symmetric"):
            for (a, b), ln in list(links.items()):
                links.setdefault((b, a), Link(b, a, ln.prr, ln.prop_delay))
        topo = Topology(sorted(nodes), list(links.values()))
    topo.validate()
    return topo
