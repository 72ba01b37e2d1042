"""Sensor mote: 12-bit ADC model, 20-byte sample records, Contiki-style process events."""

from __future__ import annotations

import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from . import inet
from .kernel import Simulator
from .lowpan import Radio
from .mesh import DropLedger, MeshNode

ADC_BITS = 12
ADC_MAX = (1 << ADC_BITS) - 1  # 4095
ADC_VREF_MV = 3300
ADC_CHANNELS = 8

SAMPLE_PERIOD_MS = 4000
FIRST_SAMPLE_MS = 4000
PHASE_JITTER_MS = 1000
COUNTER_MODULUS = 1 << 32

CHANNELS = ("no2_we", "no2_ae", "o3_we", "o3_ae")
CHANNEL_MAP = {"no2_we": 1, "no2_ae": 2, "o3_we": 4, "o3_ae": 5}

_RECORD = struct.Struct(">5I")
RECORD_SIZE = _RECORD.size  # 20


class ConfigurationError(RuntimeError):
    pass


def adc_convert(digital: int) -> float:
    """Raw 12-bit code to millivolts."""
    if not isinstance(digital, int) or not 0 <= digital <= ADC_MAX:
        raise ValueError(f"ADC code {digital!r} outside 0..{ADC_MAX}")
    return digital * ADC_VREF_MV / ADC_MAX


def adc_quantize(analog_mv: float) -> int:
    """Millivolts to the nearest 12-bit code (half rounds up); input is clamped to the rail."""
    mv = min(max(analog_mv, 0.0), float(ADC_VREF_MV))
    return min(ADC_MAX, math.floor(mv * ADC_MAX / ADC_VREF_MV + 0.5))


@dataclass(frozen=True, slots=True)
class AdcReading:
    channel: int
    digital: int

    def __post_init__(self) -> None:
        if not 0 <= self.channel < ADC_CHANNELS:
            raise ValueError(f"channel {self.channel} outside 0..{ADC_CHANNELS - 1}")
        if not 0 <= self.digital <= ADC_MAX:
            raise ValueError(f"ADC code {self.digital} outside 0..{ADC_MAX}")

    @property
    def millivolts(self) -> float:
        return adc_convert(self.digital)


@dataclass(frozen=True, slots=True)
class SampleRecord:
    counter: int
    no2_we: int
    no2_ae: int
    o3_we: int
    o3_ae: int

    def __post_init__(self) -> None:
        if not 0 <= self.counter < COUNTER_MODULUS:
            raise ValueError(f"counter {self.counter} does not fit 32 bits")
        for name in CHANNELS:
            v = getattr(self, name)
            if not 0 <= v <= ADC_MAX:
                raise ValueError(f"{name}={v} outside 0..{ADC_MAX}")

    @property
    def channels(self) -> tuple[int, int, int, int]:
        return (self.no2_we, self.no2_ae, self.o3_we, self.o3_ae)


def serialize_sample(record: SampleRecord) -> bytes:
    return _RECORD.pack(record.counter, *record.channels)


def deserialize_sample(data: bytes) -> SampleRecord:
    if len(data) != RECORD_SIZE:
        raise ValueError(f"sample record must be {RECORD_SIZE} bytes, got {len(data)}")
    return SampleRecord(*_RECORD.unpack(data))


@dataclass
class ChannelSignal:
    baseline_mv: float = 225.0
    amplitude_mv: float = 50.0
    noise_mv: float = 2.0
    drift_mv_per_h: float = 0.0
    period_ms: int = 3_600_000

    def millivolts(self, t_ms: int, rng) -> float:
        v = self.baseline_mv + self.drift_mv_per_h * t_ms / 3_600_000
        if self.amplitude_mv:
            v += self.amplitude_mv * math.sin(2 * math.pi * t_ms / self.period_ms)
        if self.noise_mv:
            v += rng.gauss(0.0, self.noise_mv)
        return min(max(v, 0.0), float(ADC_VREF_MV))


@dataclass
class GasSignalModel:
    """Synthetic electrode voltages, one signal per mapped channel."""

    signals: dict[str, ChannelSignal] = field(
        default_factory=lambda: {name: ChannelSignal() for name in CHANNELS})

    @classmethod
    def constant(cls, mv: float) -> GasSignalModel:
        flat = ChannelSignal(baseline_mv=mv, amplitude_mv=0.0, noise_mv=0.0)
        return cls({name: flat for name in CHANNELS})

    def read(self, t_ms: int, rng) -> tuple[int, ...]:
        return tuple(adc_quantize(self.signals[name].millivolts(t_ms, rng)) for name in CHANNELS)


@dataclass(frozen=True, slots=True)
class ProcessEvent:
    source: str
    target: str
    kind: str
    data: Any = None


class ProcessTable:
    """Per-mote event queue in the style of Contiki's ``process_post``.

    Posted events are queued and dispatched FIFO in a later event at the same
    virtual time, after the posting handler has returned.
    """

    def __init__(self, sim: Simulator, owner: Any):
        self.sim = sim
        self.owner = owner
        self._handlers: dict[str, Callable[[ProcessEvent], None]] = {}
        self._queue: deque[ProcessEvent] = deque()
        self.delivered = 0

    def register(self, pid: str, handler: Callable[[ProcessEvent], None]) -> None:
        self._handlers[pid] = handler

    def post(self, source: str, target: str, kind: str, data: Any = None) -> ProcessEvent:
        if target not in self._handlers:
            raise ConfigurationError(f"mote {self.owner}: no process {target!r}")
        ev = ProcessEvent(source, target, kind, data)
        if not self._queue:
            self.sim.schedule(self.sim.now, ("proc", self.owner), self._run)
        self._queue.append(ev)
        return ev

    def _run(self) -> None:
        queue = self._queue
        while queue:
            ev = queue.popleft()
            self.delivered += 1
            self._handlers[ev.target](ev)


@dataclass
class MoteStats:
    generated: int = 0
    submitted: int = 0
    dropped_no_route: int = 0
    counter_wrapped: bool = False


class Mote(MeshNode):
    ADC_PROCESS = "adc_sensor"
    UDP_PROCESS = "udp_server"

    def __init__(self, node_id: int, sim: Simulator, radio: Radio, ledger: DropLedger,
                 signal: GasSignalModel | None = None, period_ms: int = SAMPLE_PERIOD_MS,
                 on_rpl_change=None):
        super().__init__(node_id, sim, radio, ledger, on_rpl_change)
        self.signal = signal or GasSignalModel()
        self.period_ms = period_ms
        self.phase_ms: int | None = None
        self.counter = 0
        self.stats = MoteStats()
        self.sample_times: list[int] = []
        self._rng = sim.rng(("mote", node_id))
        self.os = ProcessTable(sim, node_id)
        self.os.register(self.ADC_PROCESS, self._adc_process)
        self.os.register(self.UDP_PROCESS, self._udp_process)

    def start_sampling(self, window_ms: int, first_ms: int = FIRST_SAMPLE_MS,
                       jitter_ms: int = PHASE_JITTER_MS) -> int:
        """Sample every period from ``first_ms + jitter`` for ``window_ms``; returns the sample count."""
        self.phase_ms = first_ms + (self._rng.randrange(jitter_ms) if jitter_ms else 0)
        count = -(-window_ms // self.period_ms)
        if count > 0:
            self.sim.schedule(self.phase_ms, self.node_id, self._timer, 0, count)
        return count

    def _timer(self, k: int, count: int) -> None:
        self.os.post("etimer", self.ADC_PROCESS, "timer")
        if k + 1 < count:
            self.sim.schedule(self.phase_ms + (k + 1) * self.period_ms, self.node_id,
                              self._timer, k + 1, count)

    def _adc_process(self, ev: ProcessEvent) -> None:
        self.sample_adc()

    def sample_adc(self) -> SampleRecord:
        now = self.sim.now
        record = SampleRecord(self.counter, *self.signal.read(now, self._rng))
        self.counter = (self.counter + 1) % COUNTER_MODULUS
        if self.counter == 0:
            self.stats.counter_wrapped = True
        self.stats.generated += 1
        self.sample_times.append(now)
        self.os.post(self.ADC_PROCESS, self.UDP_PROCESS, "adc", record)
        return record

    def _udp_process(self, ev: ProcessEvent) -> None:
        self.udp_send_sample(ev.data)

    def udp_send_sample(self, record: SampleRecord) -> bool:
        if not self.rpl.state.joined:
            self.stats.dropped_no_route += 1
            self.ledger.drop(self.node_id, "no_route")
            return False
        dgram = inet.to_gateway(self.node_id, serialize_sample(record))
        if self.route_up(dgram):
            self.stats.submitted += 1
            return True
        self.stats.dropped_no_route += 1
        return False
