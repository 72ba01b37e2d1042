from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from aqnet.kernel import Simulator
from aqnet.lowpan import Radio
from aqnet.mesh import DropLedger
from aqnet.mote import (ADC_MAX, CHANNEL_MAP, RECORD_SIZE, AdcReading, ConfigurationError,
                        GasSignalModel, Mote, ProcessTable, SampleRecord, adc_convert,
                        adc_quantize, deserialize_sample, serialize_sample)

codes = st.integers(0, ADC_MAX)
records = st.builds(SampleRecord, st.integers(0, 2 ** 32 - 1), codes, codes, codes, codes)


def test_adc_convert_matches_exact_fraction_for_every_code():
    for d in range(ADC_MAX + 1):
        exact = Fraction(d * 3300, 4095)
        assert abs(Fraction(adc_convert(d)) - exact) < Fraction(1, 10 ** 9)
        assert adc_quantize(adc_convert(d)) == d


def test_adc_hand_values():
    assert adc_convert(0) == 0.0
    assert adc_convert(4095) == 3300.0
    assert adc_convert(2048) == pytest.approx(1650.4029304029, abs=1e-9)


def test_adc_quantize_rounds_half_up_and_clamps():
    step = 3300 / 4095
    assert adc_quantize(step / 2) == 1
    assert adc_quantize(step / 2 - 1e-9) == 0
    assert adc_quantize(-5.0) == 0
    assert adc_quantize(5000.0) == ADC_MAX


@pytest.mark.parametrize("bad", [-1, 4096, 1.5])
def test_adc_convert_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        adc_convert(bad)


def test_adc_reading_validates():
    assert AdcReading(4, 4095).millivolts == 3300.0
    with pytest.raises(ValueError):
        AdcReading(8, 0)


def test_channel_map():
    assert CHANNEL_MAP == {"no2_we": 1, "no2_ae": 2, "o3_we": 4, "o3_ae": 5}


def test_serialize_hand_vector():
    rec = SampleRecord(1, 0x0102, 0x0FFF, 0, 0x0ABC)
    data = serialize_sample(rec)
    assert len(data) == RECORD_SIZE == 20
    assert data == bytes.fromhex("00000001" "00000102" "00000fff" "00000000" "00000abc")


@given(records)
def test_serialize_roundtrip(rec):
    assert deserialize_sample(serialize_sample(rec)) == rec


@pytest.mark.parametrize("n", [0, 19, 21])
def test_deserialize_rejects_wrong_length(n):
    with pytest.raises(ValueError):
        deserialize_sample(bytes(n))


def test_sample_record_rejects_bad_fields():
    with pytest.raises(ValueError):
        SampleRecord(2 ** 32, 0, 0, 0, 0)
    with pytest.raises(ValueError):
        SampleRecord(0, 4096, 0, 0, 0)


def test_process_table_delivers_fifo_after_handler_returns():
    sim = Simulator()
    table = ProcessTable(sim, owner=1)
    log = []

    def a(ev):
        log.append(("a", ev.kind))
        table.post("a", "b", "from-a")
        log.append("a-done")

    table.register("a", a)
    table.register("b", lambda ev: log.append(("b", ev.kind)))
    table.post("env", "a", "k1")
    table.post("env", "b", "k2")
    assert log == []
    sim.run_until(0)
    assert log == [("a", "k1"), "a-done", ("b", "k2"), ("b", "from-a")]


def test_process_table_unknown_target():
    table = ProcessTable(Simulator(), owner=9)
    with pytest.raises(ConfigurationError):
        table.post("x", "nope", "k")


def _lone_mote(signal=None):
    sim = Simulator(seed=5)
    return sim, Mote(1, sim, Radio(sim), DropLedger(), signal=signal)


def test_mote_cadence_and_counter_density():
    sim, mote = _lone_mote(GasSignalModel.constant(1000.0))
    mote.rpl.state.rank = 512  # pretend joined; sends drop at the radio
    mote.rpl.state.preferred_parent = 0
    n = mote.start_sampling(3_600_000)
    sim.run_until(4 * 3_600_000)
    assert n == 900 == mote.stats.generated
    assert 4000 <= mote.phase_ms < 5000
    gaps = {b - a for a, b in zip(mote.sample_times, mote.sample_times[1:])}
    assert gaps == {4000}
    assert mote.counter == 900


def test_constant_signal_quantizes_exactly():
    sim, mote = _lone_mote(GasSignalModel.constant(adc_convert(1234)))
    rec = mote.sample_adc()
    assert rec.channels == (1234,) * 4


def test_unjoined_mote_drops_with_no_route():
    sim, mote = _lone_mote()
    mote.start_sampling(40_000)
    sim.run_until(60_000)
    assert mote.stats.generated == 10
    assert mote.ledger.for_origin(1) == {"no_route": 10}


def test_counter_wraps():
    sim, mote = _lone_mote()
    mote.counter = 2 ** 32 - 1
    assert mote.sample_adc().counter == 2 ** 32 - 1
    assert mote.counter == 0 and mote.stats.counter_wrapped
