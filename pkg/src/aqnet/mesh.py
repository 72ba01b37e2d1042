"""Behaviour shared by every radio node: RPL agent, 6LoWPAN interface, upward forwarding."""

from __future__ import annotations

from collections import Counter
from typing import Callable

from . import inet
from .kernel import Simulator
from .lowpan import Frame, LowpanInterface, Radio
from .rpl import NoRouteError, RplAgent, RplMessage


class DropLedger:
    """Datagram losses keyed by (originating node, reason)."""

    def __init__(self) -> None:
        self.counts: Counter[tuple[int, str]] = Counter()

    def drop(self, origin: int, reason: str) -> None:
        self.counts[origin, reason] += 1

    def for_origin(self, origin: int) -> dict[str, int]:
        return {r: n for (o, r), n in sorted(self.counts.items()) if o == origin}

    def total(self, origin: int | None = None) -> int:
        return sum(n for (o, _), n in self.counts.items() if origin is None or o == origin)


class MeshNode:
    is_root = False

    def __init__(self, node_id: int, sim: Simulator, radio: Radio, ledger: DropLedger,
                 on_rpl_change: Callable[[RplAgent], None] | None = None):
        self.node_id = node_id
        self.sim = sim
        self.ledger = ledger
        self.iface = LowpanInterface(node_id, radio, self._on_datagram, self._on_control)
        self.rpl = RplAgent(node_id, sim, self._send_control, is_root=self.is_root,
                            on_change=on_rpl_change)
        self.forwarded = 0

    def boot(self) -> None:
        self.rpl.start()

    def _send_control(self, msg: RplMessage, dst: int | None) -> None:
        self.iface.send_control(msg, dst)

    def _on_control(self, frame: Frame) -> None:
        self.rpl.handle(frame.src, frame.control)

    def _on_datagram(self, prev_hop: int, data: bytes) -> None:
        try:
            dgram = inet.CompactDatagram.decode(data)
        except inet.PacketError:
            self.ledger.drop(-1, "corrupt")
            return
        self.route_up(dgram)

    def route_up(self, dgram: inet.CompactDatagram) -> bool:
        """Hand ``dgram`` to the preferred parent; False (and a ledger entry) if it cannot go."""
        if dgram.src_id != self.node_id:
            if dgram.hop_limit <= 1:
                self.ledger.drop(dgram.src_id, "hop_limit")
                return False
            dgram = dgram.with_hop_limit(dgram.hop_limit - 1)
            self.forwarded += 1
        try:
            nxt = self.rpl.next_hop_up()
        except NoRouteError:
            self.ledger.drop(dgram.src_id, "no_route")
            return False
        origin = dgram.src_id

        def done(ok: bool) -> None:
            if not ok:
                self.ledger.drop(origin, "link")

        self.iface.send(nxt, dgram.encode(), done)
        return True
