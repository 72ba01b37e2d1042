"""6LoWPAN border router and the serial line to the gateway host.

Serial messages are ``[type][body]`` inside SLIP frames: type 0x00 carries
an IPv6 datagram, type 0x01 an 8-byte routing prefix.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from . import inet
from .kernel import Simulator
from .lowpan import Radio
from .mesh import DropLedger, MeshNode
from .slip import SlipDecoder, slip_encode

MSG_DATAGRAM = 0x00
MSG_PREFIX = 0x01

SERIAL_LATENCY_MS = 1
SERIAL_BAUD = 115_200
EGRESS_QUEUE_LIMIT = 64


def prefix_message(prefix: int) -> bytes:
    return bytes([MSG_PREFIX]) + prefix.to_bytes(8, "big")


def datagram_message(packet: bytes) -> bytes:
    return bytes([MSG_DATAGRAM]) + packet


@dataclass
class _Direction:
    receiver: Callable[[bytes], None] | None = None
    queue: deque = field(default_factory=deque)
    busy: bool = False
    sent: int = 0
    rejected: int = 0
    corrupted_bytes: int = 0


class SerialLine:
    """Point-to-point byte pipe; each direction is an ordered, bounded FIFO of writes."""

    def __init__(self, sim: Simulator, ends: tuple[str, str] = ("br", "gw"),
                 latency_ms: int = SERIAL_LATENCY_MS, byte_error: float = 0.0,
                 queue_limit: int = EGRESS_QUEUE_LIMIT, bandwidth: int = SERIAL_BAUD // 10):
        if not 0.0 <= byte_error <= 1.0:
            raise ValueError("byte_error must lie in [0, 1]")
        self.sim = sim
        self.ends = ends
        self.latency_ms = latency_ms
        self.byte_error = byte_error
        self.queue_limit = queue_limit
        self.bandwidth = bandwidth  # bytes/s; informational, service time is latency_ms
        self._dirs = {ends[0]: _Direction(), ends[1]: _Direction()}
        self._rng = sim.rng(("serial",) + ends)

    def attach(self, end: str, receiver: Callable[[bytes], None]) -> None:
        """``receiver`` gets the bytes written by the *other* end."""
        self._dirs[self._other(end)].receiver = receiver

    def _other(self, end: str) -> str:
        a, b = self.ends
        return b if end == a else a

    def direction(self, sender: str) -> _Direction:
        return self._dirs[sender]

    def write(self, sender: str, data: bytes) -> bool:
        d = self._dirs[sender]
        if len(d.queue) >= self.queue_limit:
            d.rejected += 1
            return False
        d.queue.append(data)
        if not d.busy:
            self._start(d)
        return True

    def _start(self, d: _Direction) -> None:
        d.busy = True
        self.sim.after(self.latency_ms, "serial", self._finish, d)

    def _finish(self, d: _Direction) -> None:
        data = d.queue.popleft()
        d.sent += 1
        if self.byte_error:
            data = self._corrupt(data, d)
        if d.queue:
            self._start(d)
        else:
            d.busy = False
        if d.receiver is not None:
            d.receiver(data)

    def _corrupt(self, data: bytes, d: _Direction) -> bytes:
        out = bytearray(data)
        rng = self._rng
        for i in range(len(out)):
            if rng.random() < self.byte_error:
                out[i] ^= rng.randrange(1, 256)
                d.corrupted_bytes += 1
        return bytes(out)


@dataclass
class BorderRouterStats:
    received: int = 0
    forwarded: int = 0
    dropped_overflow: int = 0
    dropped_misroute: int = 0
    prefix_announcements: int = 0
    unknown_serial: int = 0


class BorderRouter(MeshNode):
    is_root = True
    SERIAL_END = "br"

    def __init__(self, node_id: int, sim: Simulator, radio: Radio, ledger: DropLedger,
                 serial: SerialLine, on_rpl_change=None):
        super().__init__(node_id, sim, radio, ledger, on_rpl_change)
        self.serial = serial
        self.decoder = SlipDecoder()
        self.stats = BorderRouterStats()
        serial.attach(self.SERIAL_END, self._serial_rx)

    @property
    def prefix(self) -> int | None:
        return self.rpl.state.prefix

    def accept_prefix(self, prefix: int) -> None:
        self.stats.prefix_announcements += 1
        if prefix == self.prefix:
            return
        self.rpl.root_initialize(prefix)

    def route_up(self, dgram: inet.CompactDatagram) -> bool:
        self.stats.received += 1
        prefix = self.prefix
        packet = inet.UdpPacket(inet.node_address(prefix, dgram.src_id), dgram.destination(prefix),
                                dgram.src_port, dgram.dst_port, dgram.payload, dgram.hop_limit - 1)
        return self.forward_up(packet.encode(), origin=dgram.src_id)

    def forward_up(self, packet: bytes, origin: int = -1) -> bool:
        """SLIP-frame an IPv6 packet onto the serial line if it is addressed to the gateway."""
        dst = int.from_bytes(packet[24:40], "big")
        if self.prefix is None or dst != inet.gateway_address(self.prefix):
            self.stats.dropped_misroute += 1
            self.ledger.drop(origin, "misroute")
            return False
        if not self.serial.write(self.SERIAL_END, slip_encode(datagram_message(packet))):
            self.stats.dropped_overflow += 1
            self.ledger.drop(origin, "serial_overflow")
            return False
        self.stats.forwarded += 1
        return True

    def _serial_rx(self, chunk: bytes) -> None:
        for msg in self.decoder.feed(chunk):
            if msg[0] == MSG_PREFIX and len(msg) == 9:
                self.accept_prefix(int.from_bytes(msg[1:], "big"))
            else:
                self.stats.unknown_serial += 1
