import random

import pytest

from pushpull.channel import Channel
from pushpull.energy import EnergyLedger, NodeMeter
from pushpull.kernel import Simulator, substream
from pushpull.mac import LplMac, MacConfig
from pushpull.topology import Link, Topology


class MacBench:
    """A handful of bare MACs on a hand-built topology, no routing."""

    def __init__(self, links, nodes=None, cfg=None, seed=1, always_on=(),
                 check=True):
        nodes = nodes or sorted({ln[0] for ln in links} | {ln[1] for ln in links} | {0})
        topo = Topology(nodes, [Link(a, b, p) for a, b, p in links])
        self.sim = Simulator(check=check)
        self.ch = Channel(self.sim, topo, seed)
        self.ch.macs = {}
        self.cfg = cfg or MacConfig()
        self.ledgers = {}
        self.meters = {}
        self.macs = {}
        for n in nodes:
            led = EnergyLedger(n, check=check)
            meter = NodeMeter(self.sim, led)
            mac = LplMac(n, self.sim, self.ch, self.cfg, substream(seed, 1, n), meter,
                         always_on=n in always_on)
            self.ledgers[n] = led
            self.meters[n] = meter
            self.macs[n] = mac
            self.ch.macs[n] = mac

    def finish(self, t):
        for m in self.meters.values():
            m.finish(t)

    def radio_time(self, n, labels=None):
        tot = self.ledgers[n].totals
        return sum(v for (c, s), v in tot.items()
                   if c == "radio" and s != "off" and (labels is None or s in labels))


class Recorder:
    """Upper-layer stub collecting beacons and data."""

    def __init__(self, accept=True):
        self.beacons = []
        self.data = []
        self.accept = accept

    def on_beacon(self, b):
        self.beacons.append(b)

    def on_data(self, p):
        self.data.append(p)
        return self.accept


def sym(a, b, prr=1.0):
    return [(a, b, prr), (b, a, prr)]


@pytest.fixture
def rng():
    return random.Random(1234)


# one PASS/FAIL line per acceptance criterion, shown after the test summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
