"""Gateway host: UDP control process, durable journal, bounded buffer, cloud uploader.

Every valid record is journaled before it is buffered. The consumer uploads
in journal order; anything that falls out of memory (overflow, failed
batches, restarts) stays unacked in the journal and is replayed from disk.
"""

from __future__ import annotations

import io
import logging
import os
import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import BinaryIO, Callable, Iterator, NamedTuple, TextIO

from . import inet
from .border_router import MSG_DATAGRAM, SerialLine, prefix_message
from .kernel import SimEvent, Simulator
from .mote import RECORD_SIZE, SAMPLE_PERIOD_MS, SampleRecord, deserialize_sample
from .slip import SlipDecoder, slip_encode

log = logging.getLogger(__name__)

BUFFER_HORIZON_MS = 24 * 3600 * 1000
BATCH_SIZE = 100
BACKOFF_MIN_MS = 1_000
BACKOFF_MAX_MS = 60_000

_ENTRY = struct.Struct(">HQ20s")
ENTRY_SIZE = _ENTRY.size  # 30
_OFFSET = struct.Struct(">Q")


def buffer_capacity(mote_count: int, period_ms: int = SAMPLE_PERIOD_MS) -> int:
    """Records produced by ``mote_count`` motes in 24 h."""
    return mote_count * (BUFFER_HORIZON_MS // period_ms)


class JournalError(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class JournalEntry:
    index: int
    mote_id: int
    receive_time: int
    record: bytes
    acked: bool = False

    @property
    def sample(self) -> SampleRecord:
        return deserialize_sample(self.record)


class Journal:
    """Append-only record log plus an append-only log of acknowledged offsets.

    Entry layout: mote_id (2 bytes BE), receive_time_ms (8 bytes BE), the
    20-byte record. The ack log is a sequence of 8-byte BE entry offsets.
    """

    def __init__(self, path: str | os.PathLike | None = None,
                 ack_path: str | os.PathLike | None = None, fsync: bool = False):
        self.path = path
        self.ack_path = ack_path
        self.fsync = fsync
        if path is None:
            self._data: BinaryIO = io.BytesIO()
            self._acks: BinaryIO = io.BytesIO()
        else:
            self._data = open(path, "a+b")
            self._acks = open(ack_path or f"{path}.acks", "a+b")
        self._acked = bytearray()
        self._unacked = 0
        self._first_unacked = 0
        self._load()

    def _load(self) -> None:
        self._data.seek(0, io.SEEK_END)
        size = self._data.tell()
        if size % ENTRY_SIZE:
            raise JournalError(f"journal is {size} bytes, not a multiple of {ENTRY_SIZE}")
        n = size // ENTRY_SIZE
        acked = bytearray(n)
        self._acks.seek(0)
        raw = self._acks.read()
        for (offset,) in _OFFSET.iter_unpack(raw[:len(raw) // 8 * 8]):
            i, rem = divmod(offset, ENTRY_SIZE)
            if rem or i >= n:
                raise JournalError(f"ack log names bad offset {offset}")
            acked[i] = 1
        self._acked = acked
        self._unacked = n - sum(acked)
        self._first_unacked = 0
        self._advance()

    def reload(self) -> None:
        """Rebuild in-memory state from storage, as a restarted process would."""
        self._load()

    def __len__(self) -> int:
        return len(self._acked)

    @property
    def unacked(self) -> int:
        return self._unacked

    @property
    def first_unacked(self) -> int:
        return self._first_unacked

    def is_acked(self, index: int) -> bool:
        return bool(self._acked[index])

    def append(self, mote_id: int, receive_time: int, record: bytes) -> int:
        index = len(self._acked)
        self._data.seek(0, io.SEEK_END)
        self._data.write(_ENTRY.pack(mote_id, receive_time, record))
        self._sync(self._data)
        self._acked.append(0)
        self._unacked += 1
        return index

    def ack(self, indices) -> int:
        fresh = [i for i in indices if not self._acked[i]]
        if not fresh:
            return 0
        self._acks.seek(0, io.SEEK_END)
        self._acks.write(b"".join(_OFFSET.pack(i * ENTRY_SIZE) for i in fresh))
        self._sync(self._acks)
        for i in fresh:
            self._acked[i] = 1
        self._unacked -= len(fresh)
        self._advance()
        return len(fresh)

    def _advance(self) -> None:
        acked, i = self._acked, self._first_unacked
        while i < len(acked) and acked[i]:
            i += 1
        self._first_unacked = i

    def _sync(self, f: BinaryIO) -> None:
        f.flush()
        if self.fsync and self.path is not None:
            os.fsync(f.fileno())

    def read(self, start: int, count: int) -> list[JournalEntry]:
        count = max(0, min(count, len(self) - start))
        try:
            self._data.seek(start * ENTRY_SIZE)
            raw = self._data.read(count * ENTRY_SIZE)
        except (OSError, ValueError) as exc:
            raise JournalError(f"journal read failed at entry {start}: {exc}") from exc
        if len(raw) != count * ENTRY_SIZE:
            raise JournalError(f"short journal read at entry {start}")
        return [JournalEntry(start + k, m, t, rec, bool(self._acked[start + k]))
                for k, (m, t, rec) in enumerate(_ENTRY.iter_unpack(raw))]

    def entries(self) -> Iterator[JournalEntry]:
        for start in range(0, len(self), 4096):
            yield from self.read(start, 4096)

    def close(self) -> None:
        self._data.close()
        self._acks.close()


class BufferedRecord(NamedTuple):
    index: int
    mote_id: int
    receive_time: int
    record: bytes


class GatewayBuffer:
    """Bounded FIFO shared by the producer and consumer.

    One lock guards every operation, so the buffer stays linearizable whether
    the two sides run as simulator events or as real threads.
    """

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.max_depth = 0
        self._items: deque[BufferedRecord] = deque()
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)

    def _push(self, item) -> None:
        self._items.append(item)
        if len(self._items) > self.max_depth:
            self.max_depth = len(self._items)
        self._not_empty.notify()

    def offer(self, item) -> bool:
        with self._lock:
            if len(self._items) >= self.capacity:
                return False
            self._push(item)
            return True

    def put(self, item, timeout: float | None = None) -> bool:
        """Blocking insert for threaded use; False on timeout."""
        with self._not_full:
            if not self._not_full.wait_for(lambda: len(self._items) < self.capacity, timeout):
                return False
            self._push(item)
            return True

    def take(self, n: int = 1, timeout: float | None = None) -> list:
        """Blocking removal of up to ``n`` items; empty list on timeout."""
        with self._not_empty:
            if not self._not_empty.wait_for(lambda: self._items, timeout):
                return []
            out = [self._items.popleft() for _ in range(min(n, len(self._items)))]
            self._not_full.notify_all()
            return out

    def peek(self, n: int) -> list:
        with self._lock:
            return [self._items[i] for i in range(min(n, len(self._items)))]

    def discard_head(self, predicate: Callable[[BufferedRecord], bool]) -> int:
        with self._lock:
            k = 0
            while self._items and predicate(self._items[0]):
                self._items.popleft()
                k += 1
            if k:
                self._not_full.notify_all()
            return k

    def clear(self) -> None:
        with self._lock:
            self._items.clear()
            self._not_full.notify_all()


class UploadRecord(NamedTuple):
    mote_id: int
    receive_time: int
    record: bytes


@dataclass(frozen=True)
class UploadBatch:
    records: tuple[UploadRecord, ...]
    attempt: int = 1
    destination: str = "cloud"
    replay: bool = False


Uplink = Callable[[UploadBatch, Callable[[bool], None]], None]


@dataclass
class GatewayStats:
    received: int = 0
    malformed: int = 0
    corrupt: int = 0
    other_port: int = 0
    journaled: int = 0
    buffered: int = 0
    shed: int = 0
    uploads_ok: int = 0
    uploads_failed: int = 0
    records_uploaded: int = 0
    replays: int = 0
    replay_batches: int = 0
    restarts: int = 0
    upload_log: list[tuple[int, bool, bool, int]] = field(default_factory=list)


class Gateway:
    SERIAL_END = "gw"

    def __init__(self, sim: Simulator, serial: SerialLine, uplink: Uplink, prefix: int,
                 capacity: int, batch_size: int = BATCH_SIZE, journal: Journal | None = None,
                 receipt_log: TextIO | None = None, record_uploads: bool = False):
        self.sim = sim
        self.serial = serial
        self.uplink = uplink
        self.prefix = prefix
        self.batch_size = batch_size
        self.journal = journal if journal is not None else Journal()
        self.buffer = GatewayBuffer(capacity)
        self.receipt_log = receipt_log
        self.stats = GatewayStats()
        self.link_down = False
        self.booted = False
        self._record_uploads = record_uploads
        self.decoder = SlipDecoder()
        self._inflight: list[int] | None = None
        self._inflight_replay_end: int | None = None
        self._retry: SimEvent | None = None
        self._backoff = BACKOFF_MIN_MS
        self._failures = 0
        self._resume_on_fail = False
        self._replay_cursor: int | None = None
        self._replay_end = 0
        self._evicted = 0
        self._epoch = 0
        serial.attach(self.SERIAL_END, self._serial_rx)

    @property
    def address(self) -> int:
        return inet.gateway_address(self.prefix)

    @property
    def replaying(self) -> bool:
        return self._replay_cursor is not None

    @property
    def idle(self) -> bool:
        """Nothing left to upload and nothing in flight."""
        return self._inflight is None and self.journal.unacked == 0

    # -- boot / prefix ---------------------------------------------------

    def boot(self) -> None:
        self.booted = True
        self.push_prefix()

    def push_prefix(self, prefix: int | None = None) -> None:
        if prefix is not None:
            self.prefix = prefix
        self.serial.write(self.SERIAL_END, slip_encode(prefix_message(self.prefix)))

    # -- producer ----------------------------------------------------------

    def _serial_rx(self, chunk: bytes) -> None:
        for msg in self.decoder.feed(chunk):
            if msg[0] == MSG_DATAGRAM:
                self.produce(msg[1:])
            else:
                self.stats.corrupt += 1

    def produce(self, packet: bytes) -> JournalEntry | None:
        try:
            pkt = inet.UdpPacket.decode(packet)
        except inet.PacketError:
            self.stats.corrupt += 1
            return None
        if pkt.dst_port != inet.GATEWAY_PORT or pkt.dst != self.address:
            self.stats.other_port += 1
            return None
        self.stats.received += 1
        if len(pkt.payload) != RECORD_SIZE:
            self.stats.malformed += 1
            return None
        now = self.sim.now
        mote_id = pkt.src_suffix
        index = self.journal.append(mote_id, now, pkt.payload)
        self.stats.journaled += 1
        if self.receipt_log is not None:
            s = deserialize_sample(pkt.payload)
            self.receipt_log.write(f"{now} mote={mote_id} counter={s.counter} no2_we={s.no2_we} "
                                   f"no2_ae={s.no2_ae} o3_we={s.o3_we} o3_ae={s.o3_ae}\n")
        if self.buffer.offer(BufferedRecord(index, mote_id, now, pkt.payload)):
            self.stats.buffered += 1
        else:
            self.stats.shed += 1
            self._evicted += 1
        self.consume()
        return JournalEntry(index, mote_id, now, pkt.payload)

    # -- consumer ----------------------------------------------------------

    def consume(self) -> bool:
        """Submit the next batch if the uploader is free; True if one went out."""
        if self._inflight is not None or self._retry is not None:
            return False
        picked = self._next_batch()
        if picked is None:
            return False
        records, indices, replay_end = picked
        self._inflight = indices
        self._inflight_replay_end = replay_end
        batch = UploadBatch(tuple(records), attempt=self._failures + 1, replay=replay_end is not None)
        epoch = self._epoch
        self.uplink(batch, lambda ok: self._on_result(epoch, batch, ok))
        return True

    def _next_batch(self):
        journal = self.journal
        if self._replay_cursor is not None:
            start, end = self._replay_cursor, self._replay_end
            picked: list[JournalEntry] = []
            while start < end and len(picked) < self.batch_size:
                chunk = journal.read(start, min(end - start, self.batch_size * 2))
                for e in chunk:
                    start = e.index + 1
                    if not e.acked:
                        picked.append(e)
                        if len(picked) == self.batch_size:
                            break
            if picked:
                return ([UploadRecord(e.mote_id, e.receive_time, e.record) for e in picked],
                        [e.index for e in picked], start)
            self._replay_cursor = None
        self.buffer.discard_head(lambda it: journal.is_acked(it.index))
        items = [it for it in self.buffer.peek(self.batch_size) if not journal.is_acked(it.index)]
        if items:
            return ([UploadRecord(it.mote_id, it.receive_time, it.record) for it in items],
                    [it.index for it in items], None)
        if self._evicted:
            self.replay_journal(kick=False)
            if self._replay_cursor is not None:
                return self._next_batch()
        return None

    def _on_result(self, epoch: int, batch: UploadBatch, ok: bool) -> None:
        if epoch != self._epoch:
            return  # response to a request issued before a restart
        indices = self._inflight
        replay_end = self._inflight_replay_end
        self._inflight = None
        self._inflight_replay_end = None
        if self._record_uploads:
            self.stats.upload_log.append((self.sim.now, ok, batch.replay, len(indices)))
        if not ok:
            self.stats.uploads_failed += 1
            self._failures += 1
            self.link_down = True
            delay = 0 if self._resume_on_fail else self._backoff
            self._resume_on_fail = False
            self._backoff = min(self._backoff * 2, BACKOFF_MAX_MS)
            self._retry = self.sim.after(delay, "gateway", self._retry_fire)
            return
        self.stats.uploads_ok += 1
        self.stats.records_uploaded += len(indices)
        self._failures = 0
        self._backoff = BACKOFF_MIN_MS
        self.journal.ack(indices)
        if replay_end is not None:
            self.stats.replay_batches += 1
            if self._replay_cursor is not None:
                self._replay_cursor = max(self._replay_cursor, replay_end)
        journal = self.journal
        self.buffer.discard_head(lambda it: journal.is_acked(it.index))
        if self.link_down:
            self.link_down = False
            if not self.replaying:
                self.replay_journal(kick=False)
        self.consume()

    def _retry_fire(self) -> None:
        self._retry = None
        self.consume()

    def on_link_up(self) -> None:
        """Uplink reported usable again: skip the remaining backoff and replay."""
        if not self.link_down:
            return
        self._backoff = BACKOFF_MIN_MS
        if self._inflight is not None:
            self._resume_on_fail = True
            return
        if self._retry is not None:
            self._retry.cancel()
            self._retry = None
        self.link_down = False
        self.replay_journal()

    def replay_journal(self, kick: bool = True) -> int:
        """Queue every unacked journal entry for upload ahead of the buffer; returns how many."""
        self._evicted = 0
        pending = self.journal.unacked
        if pending:
            self._replay_cursor = self.journal.first_unacked
            self._replay_end = len(self.journal)
            self.stats.replays += 1
        if kick:
            self.consume()
        return pending

    def restart(self) -> None:
        """Simulate a process restart: memory is lost, the journal is reread from storage."""
        self._epoch += 1
        self.stats.restarts += 1
        self.buffer.clear()
        self._inflight = None
        self._inflight_replay_end = None
        if self._retry is not None:
            self._retry.cancel()
            self._retry = None
        self._backoff = BACKOFF_MIN_MS
        self._failures = 0
        self._resume_on_fail = False
        self._replay_cursor = None
        self.link_down = False
        self.decoder = SlipDecoder()
        self.journal.reload()
        self.replay_journal()
