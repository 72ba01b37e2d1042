"""Hop-count RPL: DODAG formation, parent selection, prefix dissemination.

Control messages are structured objects carried in radio frames, not
encoded packets. DIOs follow a simplified trickle timer (1 s doubling to
60 s, reset on inconsistency).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from . import inet
from .kernel import SimEvent, Simulator

MIN_RANK = 256
RANK_STEP = 256
INFINITE_RANK = 0xFFFF

DIO_INTERVAL_MIN_MS = 1_000
DIO_INTERVAL_MAX_MS = 60_000
PARENT_HOLD_MS = 3 * DIO_INTERVAL_MAX_MS
DIS_INTERVAL_MS = 5_000
DETACH_HOLDDOWN_MS = 500


class NoRouteError(LookupError):
    pass


class MessageKind(enum.Enum):
    DIO = "DIO"
    DIS = "DIS"
    DAO = "DAO"


@dataclass(frozen=True, slots=True)
class RplMessage:
    kind: MessageKind
    sender: int
    rank: int = INFINITE_RANK
    version: int = 0
    prefix: int | None = None
    target: int | None = None  # DAO only: the node whose reachability is advertised


@dataclass
class DodagState:
    node: int
    rank: int = INFINITE_RANK
    preferred_parent: int | None = None
    version: int = 0
    prefix: int | None = None

    @property
    def joined(self) -> bool:
        return self.rank < INFINITE_RANK

    @property
    def address(self) -> int | None:
        if self.prefix is None:
            return None
        return inet.node_address(self.prefix, self.node)


@dataclass
class RplStats:
    dio_sent: int = 0
    dis_sent: int = 0
    dao_sent: int = 0
    stale_dio: int = 0
    parent_changes: int = 0
    detaches: int = 0
    joined_at: int | None = None


class RplAgent:
    """RPL state machine for one node.

    ``send(msg, dst)`` is the transmit hook: ``dst=None`` broadcasts.
    """

    def __init__(self, node_id: int, sim: Simulator,
                 send: Callable[[RplMessage, int | None], None], is_root: bool = False,
                 on_change: Callable[[RplAgent], None] | None = None):
        self.sim = sim
        self.state = DodagState(node_id)
        self.is_root = is_root
        self.candidates: dict[int, int] = {}
        self.dao_table: dict[int, int] = {}
        self.stats = RplStats()
        self._send = send
        self._on_change = on_change
        self._rng = sim.rng(("rpl", node_id))
        self._interval = DIO_INTERVAL_MIN_MS
        self._dio_timer: SimEvent | None = None
        self._hold_timer: SimEvent | None = None
        self._dis_timer: SimEvent | None = None
        self._holddown_until = -1
        self._parent_heard = 0

    @property
    def node_id(self) -> int:
        return self.state.node

    def start(self) -> None:
        """Boot: an unjoined node solicits DIOs until it hears one."""
        if not self.is_root:
            self._solicit()

    # -- root side -----------------------------------------------------

    def root_initialize(self, prefix: int) -> DodagState:
        if not self.is_root:
            raise RuntimeError(f"node {self.node_id} is not the DODAG root")
        st = self.state
        if st.prefix == prefix:
            return st
        st.version += 1
        st.prefix = prefix
        st.rank = MIN_RANK
        if self.stats.joined_at is None:
            self.stats.joined_at = self.sim.now
        self._changed()
        self.disseminate_prefix()
        return st

    def disseminate_prefix(self) -> None:
        """Push the current prefix downward by restarting the DIO trickle."""
        if self.state.prefix is None:
            return
        self._reset_trickle()

    def current_dio(self) -> RplMessage:
        st = self.state
        return RplMessage(MessageKind.DIO, st.node, st.rank, st.version, st.prefix)

    # -- message handling ------------------------------------------------

    def handle(self, sender: int, msg: RplMessage) -> None:
        if msg.kind is MessageKind.DIO:
            self.handle_dio(sender, msg)
        elif msg.kind is MessageKind.DIS:
            self.handle_dis(sender, msg)
        else:
            self.handle_dao(sender, msg)

    def handle_dio(self, sender: int, msg: RplMessage) -> None:
        if self.is_root or self.sim.now < self._holddown_until:
            return
        st = self.state
        if msg.version < st.version:
            self.stats.stale_dio += 1
            return
        if msg.version > st.version:
            if msg.rank >= INFINITE_RANK or msg.prefix is None:
                return
            st.version = msg.version
            st.prefix = msg.prefix
            self.candidates = {sender: msg.rank}
            self._attach(sender, msg.rank, migrated=True)
            return
        if msg.rank >= INFINITE_RANK:
            self.candidates.pop(sender, None)
        else:
            self.candidates[sender] = msg.rank
            if sender == st.preferred_parent:
                self._parent_heard = self.sim.now
        if st.prefix is None and msg.prefix is not None:
            st.prefix = msg.prefix
        self._select()

    def handle_dis(self, sender: int, msg: RplMessage) -> None:
        if not self.state.joined:
            return
        self.stats.dio_sent += 1
        self._send(self.current_dio(), sender)

    def handle_dao(self, sender: int, msg: RplMessage) -> None:
        target = msg.target if msg.target is not None else msg.sender
        self.dao_table[target] = sender
        if not self.is_root and self.state.preferred_parent is not None:
            self.stats.dao_sent += 1
            self._send(replace(msg, sender=self.node_id), self.state.preferred_parent)

    # -- routing ---------------------------------------------------------

    def next_hop_up(self) -> int:
        if self.is_root:
            raise NoRouteError("the root hands upward traffic to the serial side")
        st = self.state
        if not st.joined or st.preferred_parent is None:
            raise NoRouteError(f"node {st.node} has no parent")
        return st.preferred_parent

    # -- internals -------------------------------------------------------

    def _select(self) -> None:
        st = self.state
        # only neighbors strictly closer than us: none of them can be our descendant
        usable = {n: r for n, r in self.candidates.items() if r < st.rank}
        if not usable:
            if st.preferred_parent is not None:
                self._detach()
            return
        best = min(usable, key=lambda n: (usable[n], n))
        if best != st.preferred_parent or usable[best] + RANK_STEP != st.rank:
            self._attach(best, usable[best])

    def _attach(self, parent: int, parent_rank: int, migrated: bool = False) -> None:
        st = self.state
        rank = parent_rank + RANK_STEP
        if rank >= INFINITE_RANK:
            self._detach()
            return
        parent_changed = parent != st.preferred_parent
        rank_changed = rank != st.rank
        if parent_changed:
            self.stats.parent_changes += 1
            self._parent_heard = self.sim.now
        st.preferred_parent = parent
        st.rank = rank
        if self.stats.joined_at is None:
            self.stats.joined_at = self.sim.now
        if self._dis_timer is not None:
            self._dis_timer.cancel()
            self._dis_timer = None
        if parent_changed or rank_changed or migrated:
            self._reset_trickle()
            self.stats.dao_sent += 1
            self._send(RplMessage(MessageKind.DAO, self.node_id, rank, st.version, st.prefix,
                                  target=self.node_id), parent)
            self._changed()
        if self._hold_timer is None:
            self._hold_timer = self.sim.schedule(self._parent_heard + PARENT_HOLD_MS,
                                                 self.node_id, self._check_parent)

    def _detach(self) -> None:
        st = self.state
        st.preferred_parent = None
        st.rank = INFINITE_RANK
        self.candidates.clear()
        self.stats.detaches += 1
        if self._dio_timer is not None:
            self._dio_timer.cancel()
            self._dio_timer = None
        self._send(RplMessage(MessageKind.DIO, st.node, INFINITE_RANK, st.version, st.prefix), None)
        self._holddown_until = self.sim.now + DETACH_HOLDDOWN_MS
        self._changed()
        if self._dis_timer is None:
            self._dis_timer = self.sim.schedule(self._holddown_until, st.node, self._solicit)

    def _check_parent(self) -> None:
        self._hold_timer = None
        if self.state.preferred_parent is None:
            return
        deadline = self._parent_heard + PARENT_HOLD_MS
        if self.sim.now >= deadline:
            self._detach()
        else:
            self._hold_timer = self.sim.schedule(deadline, self.node_id, self._check_parent)

    def _solicit(self) -> None:
        self._dis_timer = None
        if self.state.joined:
            return
        self.stats.dis_sent += 1
        self._send(RplMessage(MessageKind.DIS, self.node_id), None)
        self._dis_timer = self.sim.after(DIS_INTERVAL_MS, self.node_id, self._solicit)

    def _reset_trickle(self) -> None:
        self._interval = DIO_INTERVAL_MIN_MS
        self._arm_dio()

    def _arm_dio(self) -> None:
        if self._dio_timer is not None:
            self._dio_timer.cancel()
        half = self._interval // 2
        self._dio_timer = self.sim.after(half + self._rng.randrange(half), self.node_id,
                                         self._fire_dio)

    def _fire_dio(self) -> None:
        self._dio_timer = None
        if not self.state.joined:
            return
        self.stats.dio_sent += 1
        self._send(self.current_dio(), None)
        self._interval = min(self._interval * 2, DIO_INTERVAL_MAX_MS)
        self._arm_dio()

    def _changed(self) -> None:
        if self._on_change is not None:
            self._on_change(self)


def loop_violations(agents: Mapping[int, RplAgent]) -> list[str]:
    """Check every joined node's parent chain: strictly decreasing rank, ending at a root."""
    problems = []
    limit = len(agents)
    for node, agent in agents.items():
        st = agent.state
        if not st.joined or agent.is_root:
            continue
        cur, steps = st, 0
        while True:
            parent_id = cur.preferred_parent
            if parent_id is None or parent_id not in agents:
                problems.append(f"node {node}: chain breaks at {cur.node}")
                break
            parent = agents[parent_id]
            if not parent.state.rank < cur.rank:
                problems.append(f"node {node}: rank {cur.rank} at {cur.node} "
                                f"not above parent {parent_id} rank {parent.state.rank}")
                break
            steps += 1
            if parent.is_root:
                break
            if steps > limit:
                problems.append(f"node {node}: parent chain longer than {limit}")
                break
            cur = parent.state
    return problems
