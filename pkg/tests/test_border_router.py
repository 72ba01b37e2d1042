from aqnet import inet
from aqnet.border_router import (EGRESS_QUEUE_LIMIT, MSG_DATAGRAM, BorderRouter, SerialLine,
                                 prefix_message)
from aqnet.kernel import Simulator
from aqnet.lowpan import Radio
from aqnet.mesh import DropLedger
from aqnet.slip import SlipDecoder, slip_encode


def _setup():
    sim = Simulator(seed=2)
    serial = SerialLine(sim)
    br = BorderRouter(0, sim, Radio(sim), DropLedger(), serial)
    frames = []
    dec = SlipDecoder()
    serial.attach("gw", lambda chunk: frames.extend(dec.feed(chunk)))
    return sim, serial, br, frames


def test_prefix_message_initializes_root_once():
    sim, serial, br, _ = _setup()
    serial.write("gw", slip_encode(prefix_message(inet.DEFAULT_PREFIX)))
    serial.write("gw", slip_encode(prefix_message(inet.DEFAULT_PREFIX)))
    sim.run_until(100)
    assert br.prefix == inet.DEFAULT_PREFIX
    assert br.rpl.state.version == 1
    assert br.stats.prefix_announcements == 2


def test_forwarding_is_transparent():
    sim, serial, br, frames = _setup()
    br.accept_prefix(inet.DEFAULT_PREFIX)
    payload = bytes(range(20))
    dgram = inet.to_gateway(42, payload)
    assert br.route_up(dgram)
    sim.run_until(100)
    assert len(frames) == 1 and frames[0][0] == MSG_DATAGRAM
    pkt = inet.UdpPacket.decode(frames[0][1:])
    assert pkt.payload == payload
    assert pkt.src == inet.node_address(inet.DEFAULT_PREFIX, 42)
    assert pkt.dst == inet.gateway_address(inet.DEFAULT_PREFIX)
    assert (pkt.src_port, pkt.dst_port) == (inet.MOTE_PORT, inet.GATEWAY_PORT)
    assert pkt.src_suffix == 42


def test_misrouted_packet_dropped():
    sim, serial, br, frames = _setup()
    br.accept_prefix(inet.DEFAULT_PREFIX)
    other = inet.UdpPacket(inet.node_address(inet.DEFAULT_PREFIX, 3),
                           inet.node_address(inet.DEFAULT_PREFIX, 4), 1, 2, b"x")
    assert not br.forward_up(other.encode(), origin=3)
    assert br.stats.dropped_misroute == 1
    assert br.ledger.for_origin(3) == {"misroute": 1}


def test_serial_overflow_drops_and_counts():
    sim, serial, br, frames = _setup()
    br.accept_prefix(inet.DEFAULT_PREFIX)
    results = [br.route_up(inet.to_gateway(1, bytes(20))) for _ in range(EGRESS_QUEUE_LIMIT + 5)]
    assert results.count(False) == 5
    assert br.stats.dropped_overflow == 5
    sim.run_until(10_000)
    assert len(frames) == EGRESS_QUEUE_LIMIT


def test_serial_line_is_ordered_with_latency():
    sim = Simulator()
    line = SerialLine(sim, latency_ms=1)
    got = []
    line.attach("gw", lambda b: got.append((sim.now, b)))
    for i in range(3):
        line.write("br", bytes([i]))
    sim.run_until(10)
    assert got == [(1, b"\x00"), (2, b"\x01"), (3, b"\x02")]


def test_serial_byte_errors_are_detected_downstream():
    sim = Simulator(seed=3)
    serial = SerialLine(sim, byte_error=0.05)
    br = BorderRouter(0, sim, Radio(sim), DropLedger(), serial)
    br.accept_prefix(inet.DEFAULT_PREFIX)
    frames = []
    dec = SlipDecoder()
    serial.attach("gw", lambda chunk: frames.extend(dec.feed(chunk)))
    sent = 0
    for i in range(2000):
        sent += br.route_up(inet.to_gateway(1, bytes(20)))
        sim.run_until(sim.now + 2)
    intact = 0
    for f in frames:
        try:
            inet.UdpPacket.decode(f[1:])
            intact += 1
        except inet.PacketError:
            pass
    assert 0 < intact < sent
