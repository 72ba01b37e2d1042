import random

import pytest
from hypothesis import given, settings, strategies as st

from aqnet import inet
from aqnet.kernel import Simulator
from aqnet.lowpan import (FRAG1_HEADER_LEN, FRAGN_HEADER_LEN, LINK_MTU, FragmentError,
                          FragmentHeader, LinkModel, LowpanInterface, Radio, Reassembler,
                          fragment, transmit)


def _datagram(n, seed=0):
    # first byte must not look like a fragment dispatch
    body = random.Random(seed).randbytes(n)
    return b"\x41" + body[1:] if n else b""


def test_link_mtu():
    assert LINK_MTU == 104


def test_nominal_sample_datagram_is_not_fragmented():
    dgram = inet.to_gateway(7, bytes(20)).encode()
    assert len(dgram) == 33
    assert fragment(dgram) == [dgram]


def test_200_byte_datagram_split():
    dgram = _datagram(200)
    frags = fragment(dgram, tag=9)
    heads = [FragmentHeader.unpack(f) for f in frags]
    assert heads[0].first and heads[0].datagram_size == 200 and heads[0].datagram_tag == 9
    assert len(frags[0]) - FRAG1_HEADER_LEN == 96
    assert heads[1].datagram_offset == 12
    assert sum(len(f) - FRAGN_HEADER_LEN for f in frags[1:]) == 104
    assert all(len(f) <= LINK_MTU for f in frags)


def test_fragment_header_bits():
    assert FragmentHeader(200, 0x1234).pack() == bytes([0xC0, 0xC8, 0x12, 0x34])
    assert FragmentHeader(200, 0x1234, 12).pack() == bytes([0xE0, 0xC8, 0x12, 0x34, 0x0C])
    assert FragmentHeader.unpack(bytes([0x41, 0, 0, 0])) is None


def test_rejects_fragment_dispatch_and_oversize():
    with pytest.raises(FragmentError):
        fragment(b"\xc0" + bytes(10))
    with pytest.raises(FragmentError):
        fragment(_datagram(2048))


def test_brute_force_roundtrip_all_sizes():
    for n in range(1, 2048):
        dgram = _datagram(n, n)
        frags = fragment(dgram, tag=n & 0xFFFF)
        assert all(len(f) <= LINK_MTU for f in frags)
        for f in frags[1:-1]:
            assert (len(f) - FRAGN_HEADER_LEN) % 8 == 0
        r = Reassembler()
        out = [r.add("s", f, 0) for f in frags]
        assert out[-1] == dgram and all(o is None for o in out[:-1])


@settings(max_examples=60)
@given(st.integers(105, 2047), st.randoms(use_true_random=False))
def test_out_of_order_with_duplicates(n, rnd):
    dgram = _datagram(n, n)
    frags = fragment(dgram, tag=3)
    order = frags + rnd.sample(frags, k=min(2, len(frags)))
    rnd.shuffle(order)
    r = Reassembler()
    done = [d for d in (r.add(1, f, 0) for f in order) if d is not None]
    assert done == [dgram]


def test_overlapping_fragment_is_ignored():
    dgram = _datagram(300)
    frags = fragment(dgram)
    r = Reassembler()
    r.add(1, frags[0], 0)
    evil = FragmentHeader(300, 0, 1).pack() + bytes(16)  # overlaps FRAG1 data
    assert r.add(1, evil, 0) is None
    assert r.duplicates == 1
    for f in frags[1:]:
        out = r.add(1, f, 0)
    assert out == dgram


def test_reassembly_timeout_discards_partial():
    frags = fragment(_datagram(300))
    r = Reassembler(timeout_ms=10_000)
    r.add(1, frags[0], 0)
    assert r.expire(9_999) == 0
    assert r.expire(10_000) == 1
    assert [r.add(1, f, 10_001) for f in frags[1:]] == [None] * (len(frags) - 1)


def test_interleaved_sources_do_not_mix():
    a, b = _datagram(250, 1), _datagram(250, 2)
    fa, fb = fragment(a, tag=5), fragment(b, tag=5)
    r = Reassembler()
    got = []
    for x, y in zip(fa, fb):
        got += [d for d in (r.add("A", x, 0), r.add("B", y, 0)) if d]
    assert got == [a, b]


def test_transmit_extremes():
    rng = random.Random(1)
    assert transmit(LinkModel(0, 1, 0.0), rng) == (True, 1)
    assert transmit(LinkModel(0, 1, 1.0, max_retx=3), rng) == (False, 4)
    with pytest.raises(ValueError):
        LinkModel(0, 1, 1.5)


def test_interface_delivers_fragmented_datagram_over_radio():
    sim = Simulator(seed=1)
    radio = Radio(sim)
    radio.add_link(1, 2, loss=0.0)
    got = []
    a = LowpanInterface(1, radio, lambda s, d: None, lambda f: None)
    LowpanInterface(2, radio, lambda s, d: got.append((s, d)), lambda f: None)
    dgram = _datagram(500)
    done = []
    a.send(2, dgram, done.append)
    sim.run_until(1000)
    assert got == [(1, dgram)]
    assert done == [True]


def test_interface_reports_loss():
    sim = Simulator(seed=1)
    radio = Radio(sim)
    radio.add_link(1, 2, loss=1.0)
    a = LowpanInterface(1, radio, lambda s, d: None, lambda f: None)
    LowpanInterface(2, radio, lambda s, d: None, lambda f: None)
    done = []
    a.send(2, _datagram(30), done.append)
    sim.run_until(1000)
    assert done == [False]
    assert radio.stats[1, 2].attempts == 4
