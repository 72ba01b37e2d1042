"""802.15.4-style frames, RFC 4944 fragmentation, and the lossy radio medium."""

from __future__ import annotations

import random
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable

from .kernel import Simulator

FRAME_MAX = 127
MAC_OVERHEAD = 23  # 21-byte MHR with long addresses + 2-byte FCS
LINK_MTU = FRAME_MAX - MAC_OVERHEAD  # 104 bytes of link payload
CONTROL_FRAME_LEN = 48  # nominal size charged for an RPL control frame

FRAG1_DISPATCH = 0b11000
FRAGN_DISPATCH = 0b11100
FRAG1_HEADER_LEN = 4
FRAGN_HEADER_LEN = 5
MAX_DATAGRAM = 2047

DEFAULT_LATENCY_MS = 5
DEFAULT_MAX_RETX = 3
REASSEMBLY_TIMEOUT_MS = 10_000


class FragmentError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class FragmentHeader:
    datagram_size: int
    datagram_tag: int
    datagram_offset: int | None = None  # in 8-byte units; None marks FRAG1

    @property
    def first(self) -> bool:
        return self.datagram_offset is None

    def __len__(self) -> int:
        return FRAG1_HEADER_LEN if self.first else FRAGN_HEADER_LEN

    def pack(self) -> bytes:
        if not 0 <= self.datagram_size <= MAX_DATAGRAM:
            raise FragmentError("datagram_size exceeds 11 bits")
        dispatch = FRAG1_DISPATCH if self.first else FRAGN_DISPATCH
        head = struct.pack(">HH", (dispatch << 11) | self.datagram_size, self.datagram_tag & 0xFFFF)
        if self.first:
            return head
        return head + bytes([self.datagram_offset])

    @classmethod
    def unpack(cls, data: bytes) -> FragmentHeader | None:
        """Parse a fragment header; ``None`` if ``data`` is not a fragment."""
        if len(data) < FRAG1_HEADER_LEN:
            return None
        word, tag = struct.unpack_from(">HH", data)
        dispatch, size = word >> 11, word & 0x7FF
        if dispatch == FRAG1_DISPATCH:
            return cls(size, tag)
        if dispatch == FRAGN_DISPATCH and len(data) >= FRAGN_HEADER_LEN:
            return cls(size, tag, data[4])
        return None


def is_fragment_dispatch(byte: int) -> bool:
    return byte >> 3 in (FRAG1_DISPATCH, FRAGN_DISPATCH)


def fragment(datagram: bytes, mtu_payload: int = LINK_MTU, tag: int = 0) -> list[bytes]:
    """Split ``datagram`` into link payloads of at most ``mtu_payload`` bytes.

    A datagram that fits is returned unchanged as a single payload. Otherwise
    the first fragment carries a FRAG1 header, the rest FRAGN headers, and
    every non-final fragment carries a multiple of 8 data bytes.
    """
    size = len(datagram)
    if size and is_fragment_dispatch(datagram[0]):
        raise FragmentError("datagram starts with a fragmentation dispatch byte")
    if size > MAX_DATAGRAM:
        raise FragmentError(f"datagram of {size} bytes exceeds {MAX_DATAGRAM}")
    if size <= mtu_payload:
        return [bytes(datagram)]
    first = (mtu_payload - FRAG1_HEADER_LEN) // 8 * 8
    rest = (mtu_payload - FRAGN_HEADER_LEN) // 8 * 8
    if first <= 0 or rest <= 0:
        raise FragmentError(f"mtu_payload {mtu_payload} too small to fragment")
    out = [FragmentHeader(size, tag).pack() + datagram[:first]]
    offset = first
    while offset < size:
        remaining = size - offset
        # the final fragment may use the whole budget, not just a multiple of 8
        chunk = remaining if remaining <= mtu_payload - FRAGN_HEADER_LEN else rest
        out.append(FragmentHeader(size, tag, offset // 8).pack() + datagram[offset:offset + chunk])
        offset += chunk
    return out


@dataclass
class _Partial:
    size: int
    started: int
    pieces: dict[int, bytes] = field(default_factory=dict)
    received: int = 0


class Reassembler:
    """Per-node reassembly buffers keyed by (link source, tag)."""

    def __init__(self, timeout_ms: int = REASSEMBLY_TIMEOUT_MS):
        self.timeout_ms = timeout_ms
        self._partial: dict[tuple[Any, int], _Partial] = {}
        self._recent: dict[tuple[Any, int], tuple[int, int]] = {}  # key -> (size, completed at)
        self.completed = 0
        self.timed_out = 0
        self.duplicates = 0

    def __len__(self) -> int:
        return len(self._partial)

    def add(self, src: Any, payload: bytes, now: int) -> bytes | None:
        header = FragmentHeader.unpack(payload)
        if header is None:
            return bytes(payload)
        self.expire(now)
        key = (src, header.datagram_tag)
        if self._recent.get(key, (None,))[0] == header.datagram_size:
            # late copy of a fragment from a datagram we already delivered
            self.duplicates += 1
            return None
        part = self._partial.get(key)
        if part is None or part.size != header.datagram_size:
            part = _Partial(header.datagram_size, now)
            self._partial[key] = part
        start = 0 if header.first else header.datagram_offset * 8
        data = bytes(payload[len(header):])
        end = start + len(data)
        if end > part.size or start in part.pieces or any(
                s < end and start < s + len(d) for s, d in part.pieces.items()):
            self.duplicates += 1
            return None
        part.pieces[start] = data
        part.received += len(data)
        if part.received < part.size:
            return None
        del self._partial[key]
        self._recent[key] = (part.size, now)
        self.completed += 1
        return b"".join(part.pieces[k] for k in sorted(part.pieces))

    def expire(self, now: int) -> int:
        stale = [k for k, p in self._partial.items() if now - p.started >= self.timeout_ms]
        for k in stale:
            del self._partial[k]
        for k in [k for k, (_, t) in self._recent.items() if now - t >= self.timeout_ms]:
            del self._recent[k]
        self.timed_out += len(stale)
        return len(stale)


@dataclass(slots=True)
class Frame:
    src: int
    dst: int | None  # None = broadcast
    payload: bytes = b""
    control: Any = None

    def __len__(self) -> int:
        if self.control is not None:
            return CONTROL_FRAME_LEN
        return MAC_OVERHEAD + len(self.payload)


@dataclass
class LinkModel:
    """One direction of a radio link."""

    src: int
    dst: int
    loss: float = 0.0
    latency: int = DEFAULT_LATENCY_MS
    max_retx: int = DEFAULT_MAX_RETX

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss <= 1.0:
            raise ValueError(f"loss {self.loss} outside [0, 1]")


@dataclass
class LinkStats:
    frames: int = 0
    delivered: int = 0
    dropped: int = 0
    attempts: int = 0
    lost_attempts: int = 0
    broadcasts: int = 0
    broadcasts_lost: int = 0


def transmit(link: LinkModel, rng: random.Random) -> tuple[bool, int]:
    """Run the ARQ loop for one frame; return (delivered, attempts used)."""
    limit = link.max_retx + 1
    for attempt in range(1, limit + 1):
        if link.loss == 0.0 or rng.random() >= link.loss:
            return True, attempt
    return False, limit


class Radio:
    """Shared medium. Unicast frames get per-hop ARQ; broadcasts get one shot."""

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.links: dict[tuple[int, int], LinkModel] = {}
        self.stats: dict[tuple[int, int], LinkStats] = defaultdict(LinkStats)
        self._out: dict[int, list[int]] = defaultdict(list)
        self._receivers: dict[int, Callable[[Frame], None]] = {}

    def add_link(self, a: int, b: int, loss: float = 0.0, latency: int = DEFAULT_LATENCY_MS,
                 max_retx: int = DEFAULT_MAX_RETX, loss_ba: float | None = None) -> None:
        for src, dst, p in ((a, b, loss), (b, a, loss if loss_ba is None else loss_ba)):
            if (src, dst) not in self.links:
                self._out[src].append(dst)
                self._out[src].sort()
            self.links[src, dst] = LinkModel(src, dst, p, latency, max_retx)

    def set_loss(self, a: int, b: int, loss: float) -> None:
        self.links[a, b].loss = loss
        self.links[b, a].loss = loss

    def neighbors(self, node: int) -> list[int]:
        return self._out.get(node, [])

    def attach(self, node: int, receiver: Callable[[Frame], None]) -> None:
        self._receivers[node] = receiver

    def unicast(self, frame: Frame, on_done: Callable[[bool], None] | None = None) -> None:
        if len(frame) > FRAME_MAX:
            raise FragmentError(f"frame of {len(frame)} bytes exceeds {FRAME_MAX}")
        link = self.links.get((frame.src, frame.dst))
        if link is None:
            if on_done is not None:
                on_done(False)
            return
        ok, attempts = transmit(link, self.sim.rng(("link", frame.src, frame.dst)))
        st = self.stats[frame.src, frame.dst]
        st.frames += 1
        st.attempts += attempts
        st.lost_attempts += attempts - ok
        when = self.sim.now + attempts * link.latency
        if ok:
            st.delivered += 1
            self.sim.schedule(when, frame.dst, self._deliver, frame, on_done)
        else:
            st.dropped += 1
            if on_done is not None:
                self.sim.schedule(when, frame.src, on_done, False)

    def broadcast(self, frame: Frame) -> None:
        for dst in self.neighbors(frame.src):
            link = self.links[frame.src, dst]
            st = self.stats[frame.src, dst]
            st.broadcasts += 1
            if link.loss and self.sim.rng(("link", frame.src, dst)).random() < link.loss:
                st.broadcasts_lost += 1
                continue
            self.sim.schedule(self.sim.now + link.latency, dst, self._deliver_to, dst, frame)

    def _deliver(self, frame: Frame, on_done: Callable[[bool], None] | None) -> None:
        if on_done is not None:
            on_done(True)
        self._deliver_to(frame.dst, frame)

    def _deliver_to(self, node: int, frame: Frame) -> None:
        receiver = self._receivers.get(node)
        if receiver is not None:
            receiver(frame)


class LowpanInterface:
    """A node's adaptation layer: fragments outgoing datagrams, reassembles incoming ones."""

    def __init__(self, node_id: int, radio: Radio, on_datagram: Callable[[int, bytes], None],
                 on_control: Callable[[Frame], None], mtu_payload: int = LINK_MTU):
        self.node_id = node_id
        self.radio = radio
        self.mtu_payload = mtu_payload
        self.reassembler = Reassembler()
        self._tag = 0
        self._on_datagram = on_datagram
        self._on_control = on_control
        radio.attach(node_id, self._receive)

    def send(self, next_hop: int, datagram: bytes,
             on_done: Callable[[bool], None] | None = None) -> None:
        """Send a datagram one hop. Fragments go out back to back; the first loss aborts the rest."""
        self._tag = (self._tag + 1) & 0xFFFF
        pieces = fragment(datagram, self.mtu_payload, self._tag)
        radio = self.radio

        def step(i: int, ok: bool) -> None:
            if not ok or i == len(pieces):
                if on_done is not None:
                    on_done(ok)
                return
            radio.unicast(Frame(self.node_id, next_hop, pieces[i]),
                          lambda ok, i=i: step(i + 1, ok))

        step(0, True)

    def send_control(self, msg: Any, dst: int | None = None,
                     on_done: Callable[[bool], None] | None = None) -> None:
        frame = Frame(self.node_id, dst, control=msg)
        if dst is None:
            self.radio.broadcast(frame)
        else:
            self.radio.unicast(frame, on_done)

    def _receive(self, frame: Frame) -> None:
        if frame.control is not None:
            self._on_control(frame)
            return
        now = self.radio.sim.now
        datagram = self.reassembler.add(frame.src, frame.payload, now)
        if datagram is not None:
            self._on_datagram(frame.src, datagram)
        elif len(self.reassembler):
            sim = self.radio.sim
            sim.schedule(now + self.reassembler.timeout_ms, self.node_id,
                         lambda: self.reassembler.expire(sim.now))
