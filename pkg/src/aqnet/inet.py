"""Addressing, the compact mesh datagram, and uncompressed IPv6/UDP packets.

Inside the mesh a datagram travels as a fixed 13-byte compact header plus
the UDP payload (a stand-in for IPHC; it is *not* bit-exact RFC 6282).
The border router expands it into a real IPv6/UDP packet for the serial
line, and the gateway parses that.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass

GATEWAY_IID = 0x1
GATEWAY_PORT = 5000
MOTE_PORT = 8765
DEFAULT_PREFIX = 0xFD00_0000_0000_0000
DEFAULT_HOP_LIMIT = 64

# RFC 6282 short-address interface id: 0000:00ff:fe00:XXXX
_SHORT_IID_BASE = 0x0000_00FF_FE00_0000

COMPACT_DISPATCH = 0x7B
COMPACT_HEADER_LEN = 13
_COMPACT = struct.Struct(">BBHBHHHH")
assert _COMPACT.size == COMPACT_HEADER_LEN

DST_SHORT = 0  # destination iid is the short-address form
DST_LOW16 = 1  # destination iid is ::XXXX (gateway-style)

IPV6_HEADER_LEN = 40
UDP_HEADER_LEN = 8
_IPV6 = struct.Struct(">IHBB16s16s")
_UDP = struct.Struct(">HHHH")


class PacketError(ValueError):
    pass


def node_iid(node_id: int) -> int:
    return _SHORT_IID_BASE | (node_id & 0xFFFF)


def node_address(prefix: int, node_id: int) -> int:
    return (prefix << 64) | node_iid(node_id)


def gateway_address(prefix: int) -> int:
    return (prefix << 64) | GATEWAY_IID


def parse_prefix(text: str) -> int:
    """Accept ``fd00::``, ``fd00::/64`` or 16 hex digits."""
    text = text.strip()
    if ":" in text:
        net = ipaddress.IPv6Network(text if "/" in text else text + "/64", strict=False)
        if net.prefixlen != 64:
            raise ValueError(f"prefix must be /64, got /{net.prefixlen}")
        return int(net.network_address) >> 64
    value = int(text, 16)
    if not 0 <= value < 1 << 64:
        raise ValueError("prefix out of range")
    return value


def format_prefix(prefix: int) -> str:
    return str(ipaddress.IPv6Network((prefix << 64, 64)))


def internet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f">{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


@dataclass(frozen=True, slots=True)
class CompactDatagram:
    src_id: int
    dst_mode: int
    dst_low16: int
    src_port: int
    dst_port: int
    payload: bytes
    hop_limit: int = DEFAULT_HOP_LIMIT

    def encode(self) -> bytes:
        csum = internet_checksum(struct.pack(">HH", self.src_port, self.dst_port) + self.payload)
        return _COMPACT.pack(COMPACT_DISPATCH, self.hop_limit, self.src_id, self.dst_mode,
                             self.dst_low16, self.src_port, self.dst_port, csum) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> CompactDatagram:
        if len(data) < COMPACT_HEADER_LEN or data[0] != COMPACT_DISPATCH:
            raise PacketError("not a compact datagram")
        _, hop, src, mode, low16, sport, dport, csum = _COMPACT.unpack_from(data)
        payload = bytes(data[COMPACT_HEADER_LEN:])
        if internet_checksum(struct.pack(">HHH", sport, dport, csum) + payload) != 0:
            raise PacketError("compact checksum mismatch")
        return cls(src, mode, low16, sport, dport, payload, hop)

    def with_hop_limit(self, hop_limit: int) -> CompactDatagram:
        return CompactDatagram(self.src_id, self.dst_mode, self.dst_low16, self.src_port,
                               self.dst_port, self.payload, hop_limit)

    def destination(self, prefix: int) -> int:
        iid = self.dst_low16 if self.dst_mode == DST_LOW16 else node_iid(self.dst_low16)
        return (prefix << 64) | iid

    def __len__(self) -> int:
        return COMPACT_HEADER_LEN + len(self.payload)


def to_gateway(src_id: int, payload: bytes, hop_limit: int = DEFAULT_HOP_LIMIT) -> CompactDatagram:
    return CompactDatagram(src_id, DST_LOW16, GATEWAY_IID, MOTE_PORT, GATEWAY_PORT, payload, hop_limit)


@dataclass(frozen=True, slots=True)
class UdpPacket:
    """An uncompressed IPv6 + UDP packet as it crosses the serial line."""

    src: int
    dst: int
    src_port: int
    dst_port: int
    payload: bytes
    hop_limit: int = DEFAULT_HOP_LIMIT

    def encode(self) -> bytes:
        src = self.src.to_bytes(16, "big")
        dst = self.dst.to_bytes(16, "big")
        length = UDP_HEADER_LEN + len(self.payload)
        pseudo = src + dst + struct.pack(">IxxxB", length, 17)
        udp = _UDP.pack(self.src_port, self.dst_port, length, 0) + self.payload
        csum = internet_checksum(pseudo + udp) or 0xFFFF
        ip = _IPV6.pack(6 << 28, length, 17, self.hop_limit, src, dst)
        return ip + udp[:6] + csum.to_bytes(2, "big") + udp[8:]

    @classmethod
    def decode(cls, data: bytes) -> UdpPacket:
        if len(data) < IPV6_HEADER_LEN + UDP_HEADER_LEN:
            raise PacketError("truncated packet")
        vtf, plen, nxt, hop, src, dst = _IPV6.unpack_from(data)
        if vtf >> 28 != 6:
            raise PacketError("not IPv6")
        if nxt != 17:
            raise PacketError(f"next header {nxt} is not UDP")
        if plen != len(data) - IPV6_HEADER_LEN:
            raise PacketError("payload length mismatch")
        sport, dport, ulen, _ = _UDP.unpack_from(data, IPV6_HEADER_LEN)
        if ulen != plen:
            raise PacketError("UDP length mismatch")
        pseudo = src + dst + struct.pack(">IxxxB", ulen, 17)
        if internet_checksum(pseudo + data[IPV6_HEADER_LEN:]) != 0:
            raise PacketError("UDP checksum mismatch")
        return cls(int.from_bytes(src, "big"), int.from_bytes(dst, "big"), sport, dport,
                   bytes(data[IPV6_HEADER_LEN + UDP_HEADER_LEN:]), hop)

    @property
    def src_suffix(self) -> int:
        return self.src & 0xFFFF
