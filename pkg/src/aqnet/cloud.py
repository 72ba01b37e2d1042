"""Mock cloud ingest: dedup on (mote_id, counter), mV conversion, verification queries."""

from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, TextIO

from .gateway import UploadBatch
from .kernel import Simulator
from .mote import SAMPLE_PERIOD_MS, adc_convert, deserialize_sample

UPLOAD_RTT_MS = 20

CSV_COLUMNS = ("mote_id", "counter", "receive_time_ms",
               "no2_we_raw", "no2_we_mv", "no2_ae_raw", "no2_ae_mv",
               "o3_we_raw", "o3_we_mv", "o3_ae_raw", "o3_ae_mv")


class CloudUnavailable(ConnectionError):
    pass


@dataclass(frozen=True, slots=True)
class IngestRecord:
    mote_id: int
    counter: int
    receive_time: int
    raw: tuple[int, int, int, int]
    ingest_time: int
    sample_time: int | None = None  # derived from counter and the mote's phase, not transmitted

    @property
    def millivolts(self) -> tuple[float, ...]:
        return tuple(adc_convert(v) for v in self.raw)


class OutageSchedule:
    """Sorted, non-overlapping ``[start, end)`` windows in virtual ms."""

    def __init__(self, windows: Iterable[tuple[int, int]] = ()):
        ws = sorted((int(a), int(b)) for a, b in windows)
        for a, b in ws:
            if b <= a:
                raise ValueError(f"empty outage window [{a}, {b})")
        for (_, b0), (a1, _) in zip(ws, ws[1:]):
            if a1 < b0:
                raise ValueError("outage windows overlap")
        self.windows = ws
        self._starts = [a for a, _ in ws]

    def down(self, t: int) -> bool:
        i = bisect.bisect_right(self._starts, t) - 1
        return i >= 0 and t < self.windows[i][1]

    def __iter__(self):
        return iter(self.windows)


@dataclass(frozen=True)
class Ack:
    records: int
    new: int
    duplicates: int


@dataclass
class CompletenessRow:
    mote_id: int
    expected: int
    received: int
    missing: list[int]
    duplicates_suppressed: int

    @property
    def complete(self) -> bool:
        return not self.missing and self.received == self.expected


class CloudIngest:
    def __init__(self, outages: OutageSchedule | None = None):
        self.outages = outages or OutageSchedule()
        self._store: dict[int, dict[int, IngestRecord]] = {}
        self._dups: dict[int, int] = {}
        self._phase: dict[int, tuple[int, int]] = {}
        self.batches = 0
        self.refused = 0

    def register_mote(self, mote_id: int, phase_ms: int, period_ms: int = SAMPLE_PERIOD_MS) -> None:
        """Device registry entry used to derive sample times from counters."""
        self._phase[mote_id] = (phase_ms, period_ms)

    def available(self, now: int) -> bool:
        return not self.outages.down(now)

    def ingest_batch(self, batch: UploadBatch, now: int) -> Ack:
        if self.outages.down(now):
            self.refused += 1
            raise CloudUnavailable(f"ingest refused at t={now}")
        self.batches += 1
        new = dups = 0
        for rec in batch.records:
            sample = deserialize_sample(rec.record)
            series = self._store.setdefault(rec.mote_id, {})
            if sample.counter in series:
                dups += 1
                self._dups[rec.mote_id] = self._dups.get(rec.mote_id, 0) + 1
                continue
            phase = self._phase.get(rec.mote_id)
            sample_time = None if phase is None else phase[0] + sample.counter * phase[1]
            series[sample.counter] = IngestRecord(rec.mote_id, sample.counter, rec.receive_time,
                                                  sample.channels, now, sample_time)
            new += 1
        return Ack(len(batch.records), new, dups)

    @property
    def duplicates_suppressed(self) -> int:
        return sum(self._dups.values())

    def stored_count(self) -> int:
        return sum(len(s) for s in self._store.values())

    def received_count(self, mote_id: int) -> int:
        return len(self._store.get(mote_id, ()))

    def motes(self) -> list[int]:
        return sorted(self._store)

    def query_series(self, mote_id: int, t0: int | None = None,
                     t1: int | None = None) -> list[IngestRecord]:
        """Records with ``t0 <= receive_time < t1`` ordered by counter; bounds default to open."""
        if t0 is not None and t1 is not None and t0 > t1:
            raise ValueError("t0 must not exceed t1")
        series = self._store.get(mote_id, {})
        return [series[c] for c in sorted(series)
                if (t0 is None or series[c].receive_time >= t0)
                and (t1 is None or series[c].receive_time < t1)]

    def completeness_report(self, expected: Mapping[int, int]) -> dict[int, CompletenessRow]:
        report = {}
        for mote_id in sorted(expected):
            n = expected[mote_id]
            series = self._store.get(mote_id, {})
            missing = [c for c in range(n) if c not in series]
            report[mote_id] = CompletenessRow(mote_id, n, sum(1 for c in series if c < n),
                                              missing, self._dups.get(mote_id, 0))
        return report

    def export_csv(self, out: TextIO, motes: Iterable[int] | None = None) -> int:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        rows = 0
        for mote_id in (sorted(motes) if motes is not None else self.motes()):
            for r in self.query_series(mote_id):
                mv = r.millivolts
                row = [r.mote_id, r.counter, r.receive_time]
                for raw, v in zip(r.raw, mv):
                    row += [raw, f"{v:.6f}"]
                writer.writerow(row)
                rows += 1
        return rows


class CloudChannel:
    """Request/acknowledge transport between gateway and cloud inside the simulator.

    The request reaches the service after half the round trip; the answer
    comes back after the full round trip and is lost if the link is down by then.
    """

    def __init__(self, sim: Simulator, cloud: CloudIngest, rtt_ms: int = UPLOAD_RTT_MS):
        self.sim = sim
        self.cloud = cloud
        self.rtt_ms = rtt_ms
        self.submitted = 0

    def __call__(self, batch: UploadBatch, on_result) -> None:
        self.submitted += 1
        half = self.rtt_ms // 2
        self.sim.after(half, "cloud", self._arrive, batch, on_result)

    def _arrive(self, batch: UploadBatch, on_result) -> None:
        try:
            self.cloud.ingest_batch(batch, self.sim.now)
            ok = True
        except CloudUnavailable:
            ok = False
        self.sim.after(self.rtt_ms - self.rtt_ms // 2, "cloud", self._answer, ok, on_result)

    def _answer(self, ok: bool, on_result) -> None:
        on_result(ok and self.cloud.available(self.sim.now))
