"""Line-oriented scenario files.

Each non-blank line is ``key value...``; ``#`` starts a comment. Times
accept an optional unit suffix (``ms``, ``s``, ``m``, ``h``); bare numbers
are milliseconds. See the README for the full grammar.
"""

from __future__ import annotations

import math
import operator
import re
from collections import deque
from dataclasses import dataclass, field

from . import inet
from .gateway import BATCH_SIZE
from .lowpan import DEFAULT_LATENCY_MS, DEFAULT_MAX_RETX
from .mote import SAMPLE_PERIOD_MS

DEFAULT_DURATION_MS = 3_600_000
DEFAULT_DRAIN_MS = 3_600_000

_TIME = re.compile(r"^(\d+(?:\.\d+)?)(ms|s|m|h)?$")
_UNITS = {None: 1, "ms": 1, "s": 1_000, "m": 60_000, "h": 3_600_000}

OPERATORS = {"==": operator.eq, "!=": operator.ne, "<": operator.lt, "<=": operator.le,
             ">": operator.gt, ">=": operator.ge}


class ScenarioError(ValueError):
    def __init__(self, line: int | None, message: str):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    x: float
    y: float
    role: str = "mote"


@dataclass(frozen=True)
class Assertion:
    metric: str
    op: str
    value: float
    line: int

    def holds(self, actual: float) -> bool:
        return OPERATORS[self.op](actual, self.value)

    def __str__(self) -> str:
        return f"{self.metric} {self.op} {self.value:g}"


@dataclass
class ScenarioConfig:
    seed: int = 1
    duration_ms: int = DEFAULT_DURATION_MS
    period_ms: int = SAMPLE_PERIOD_MS
    nodes: dict[int, NodeSpec] = field(default_factory=dict)
    radio_range: float | None = None
    default_loss: float = 0.0
    latency_ms: int = DEFAULT_LATENCY_MS
    max_retx: int = DEFAULT_MAX_RETX
    links: dict[tuple[int, int], tuple[float, float]] = field(default_factory=dict)
    outages: list[tuple[int, int]] = field(default_factory=list)
    gateway_boot_ms: int = 0
    batch_size: int = BATCH_SIZE
    capacity: int | None = None
    drain_ms: int = DEFAULT_DRAIN_MS
    serial_error: float = 0.0
    prefix: int = inet.DEFAULT_PREFIX
    restarts: list[int] = field(default_factory=list)
    severs: list[tuple[int, int, int]] = field(default_factory=list)
    renumbers: list[tuple[int, int]] = field(default_factory=list)
    assertions: list[Assertion] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def border_id(self) -> int:
        return next(n.node_id for n in self.nodes.values() if n.role == "border")

    @property
    def mote_ids(self) -> list[int]:
        return sorted(n.node_id for n in self.nodes.values() if n.role == "mote")

    def radio_links(self) -> dict[tuple[int, int], tuple[float, float]]:
        """Undirected links ``(a, b) -> (loss a->b, loss b->a)`` with ``a < b``."""
        out: dict[tuple[int, int], tuple[float, float]] = {}
        if self.radio_range is not None:
            ids = sorted(self.nodes)
            for i, a in enumerate(ids):
                na = self.nodes[a]
                for b in ids[i + 1:]:
                    nb = self.nodes[b]
                    if math.hypot(na.x - nb.x, na.y - nb.y) <= self.radio_range + 1e-9:
                        out[a, b] = (self.default_loss, self.default_loss)
        for (a, b), losses in self.links.items():
            out[a, b] = losses
        return dict(sorted(out.items()))

    def unreachable(self) -> list[int]:
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for (a, b), (pab, pba) in self.radio_links().items():
            if pab < 1.0 and pba < 1.0:
                adj[a].add(b)
                adj[b].add(a)
        root = self.border_id
        seen = {root}
        todo = deque([root])
        while todo:
            for nxt in adj[todo.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        return sorted(set(self.nodes) - seen)


def parse_time(text: str) -> int:
    m = _TIME.match(text.strip())
    if not m:
        raise ValueError(f"bad time {text!r}")
    value = float(m.group(1)) * _UNITS[m.group(2)]
    if value != int(value):
        raise ValueError(f"time {text!r} is not a whole number of ms")
    return int(value)


def _probability(text: str) -> float:
    p = float(text)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability {text} outside [0, 1]")
    return p


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise ValueError(f"{text} must be non-negative")
    return v


def _pos_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise ValueError(f"{text} must be positive")
    return v


def parse_scenario(text: str) -> ScenarioConfig:
    cfg = ScenarioConfig()
    node_refs: list[tuple[int, int]] = []  # (line, node id) checked once all nodes are known
    seen_keys: dict[str, int] = {}

    def add_node(line: int, spec: NodeSpec) -> None:
        if spec.node_id in cfg.nodes:
            raise ScenarioError(line, f"node {spec.node_id} defined twice")
        if not 0 <= spec.node_id <= 0xFFFE:
            raise ScenarioError(line, f"node id {spec.node_id} outside 0..65534")
        cfg.nodes[spec.node_id] = spec

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *args = line.split()
        try:
            if key in ("seed", "duration", "period", "range", "loss", "latency", "retx",
                       "gateway_boot", "batch", "capacity", "drain", "serial_error", "prefix"):
                if key in seen_keys:
                    raise ScenarioError(lineno, f"{key!r} already set on line {seen_keys[key]}")
                seen_keys[key] = lineno
                if len(args) != 1:
                    raise ScenarioError(lineno, f"{key!r} takes exactly one value")
            arg = args[0] if args else ""
            if key == "seed":
                cfg.seed = _nonneg_int(arg)
            elif key == "duration":
                cfg.duration_ms = parse_time(arg)
                if cfg.duration_ms <= 0:
                    raise ValueError("duration must be positive")
            elif key == "period":
                cfg.period_ms = parse_time(arg)
                if cfg.period_ms <= 0:
                    raise ValueError("period must be positive")
            elif key == "range":
                cfg.radio_range = float(arg)
                if cfg.radio_range <= 0:
                    raise ValueError("range must be positive")
            elif key == "loss":
                cfg.default_loss = _probability(arg)
            elif key == "latency":
                cfg.latency_ms = parse_time(arg)
                if cfg.latency_ms <= 0:
                    raise ValueError("latency must be positive")
            elif key == "retx":
                cfg.max_retx = _nonneg_int(arg)
            elif key == "gateway_boot":
                cfg.gateway_boot_ms = parse_time(arg)
            elif key == "batch":
                cfg.batch_size = _pos_int(arg)
            elif key == "capacity":
                cfg.capacity = _pos_int(arg)
            elif key == "drain":
                cfg.drain_ms = parse_time(arg)
            elif key == "serial_error":
                cfg.serial_error = _probability(arg)
            elif key == "prefix":
                cfg.prefix = inet.parse_prefix(arg)
            elif key == "node":
                if len(args) not in (3, 4):
                    raise ScenarioError(lineno, "usage: node <id> <x> <y> [border|mote]")
                role = args[3] if len(args) == 4 else "mote"
                if role not in ("border", "mote"):
                    raise ScenarioError(lineno, f"unknown role {role!r}")
                add_node(lineno, NodeSpec(int(args[0]), float(args[1]), float(args[2]), role))
            elif key == "grid":
                if len(args) not in (3, 4):
                    raise ScenarioError(lineno, "usage: grid <rows> <cols> <spacing> [<border id>]")
                rows, cols, spacing = _pos_int(args[0]), _pos_int(args[1]), float(args[2])
                border = int(args[3]) if len(args) == 4 else 0
                if not 0 <= border < rows * cols:
                    raise ScenarioError(lineno, f"border id {border} not in the grid")
                for r in range(rows):
                    for c in range(cols):
                        nid = r * cols + c
                        add_node(lineno, NodeSpec(nid, c * spacing, r * spacing,
                                                  "border" if nid == border else "mote"))
            elif key == "link":
                if len(args) not in (3, 4):
                    raise ScenarioError(lineno, "usage: link <a> <b> <loss> [<loss b->a>]")
                a, b = int(args[0]), int(args[1])
                if a == b:
                    raise ScenarioError(lineno, "a link needs two distinct nodes")
                pab = _probability(args[2])
                pba = _probability(args[3]) if len(args) == 4 else pab
                if a > b:
                    a, b, pab, pba = b, a, pba, pab
                cfg.links[a, b] = (pab, pba)
                node_refs += [(lineno, a), (lineno, b)]
            elif key == "outage":
                if len(args) != 2:
                    raise ScenarioError(lineno, "usage: outage <start> <end>")
                start, end = parse_time(args[0]), parse_time(args[1])
                if end <= start:
                    raise ScenarioError(lineno, "outage end must follow its start")
                for s0, e0 in cfg.outages:
                    if start < e0 and s0 < end:
                        raise ScenarioError(lineno, "outage overlaps an earlier window")
                cfg.outages.append((start, end))
            elif key == "restart":
                if len(args) != 1:
                    raise ScenarioError(lineno, "usage: restart <time>")
                cfg.restarts.append(parse_time(arg))
            elif key == "sever":
                if len(args) != 3:
                    raise ScenarioError(lineno, "usage: sever <time> <a> <b>")
                a, b = int(args[1]), int(args[2])
                cfg.severs.append((parse_time(args[0]), a, b))
                node_refs += [(lineno, a), (lineno, b)]
            elif key == "renumber":
                if len(args) != 2:
                    raise ScenarioError(lineno, "usage: renumber <time> <prefix>")
                cfg.renumbers.append((parse_time(args[0]), inet.parse_prefix(args[1])))
            elif key == "assert":
                if len(args) != 3 or args[1] not in OPERATORS:
                    raise ScenarioError(lineno, "usage: assert <metric> <op> <value>")
                cfg.assertions.append(Assertion(args[0], args[1], float(args[2]), lineno))
            else:
                raise ScenarioError(lineno, f"unknown key {key!r}")
        except ScenarioError:
            raise
        except (ValueError, IndexError) as exc:
            raise ScenarioError(lineno, f"{key}: {exc}") from None

    for lineno, nid in node_refs:
        if nid not in cfg.nodes:
            raise ScenarioError(lineno, f"unknown node {nid}")
    borders = [n for n in cfg.nodes.values() if n.role == "border"]
    if len(borders) != 1:
        raise ScenarioError(None, f"exactly one border node required, found {len(borders)}")
    if not cfg.mote_ids:
        raise ScenarioError(None, "at least one mote required")
    missing = [sev for sev in cfg.severs if (min(sev[1:]), max(sev[1:])) not in cfg.radio_links()]
    if missing:
        t, a, b = missing[0]
        raise ScenarioError(None, f"sever at {t} names nodes {a} and {b} with no link")
    cut = cfg.unreachable()
    if cut:
        cfg.warnings.append(f"nodes unreachable from the border router: {cut}")
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as f:
        return parse_scenario(f.read())
