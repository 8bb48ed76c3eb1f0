"""In-process, partition-parallel map/shuffle/reduce executor.

The contract is the interesting part, not the transport: map every input
pair, group emissions by key, call the reducer once per distinct key with an
iterator over that key's values, and return reducer output sorted by
(key, value).  Output is therefore a deterministic function of the input
multiset, independent of worker count, partition count and scheduling.

Shuffle keeps per-task buffers in memory up to a byte budget and spills
sorted runs to temporary files beyond it; runs are merged lazily at reduce
time, so one key's values are streamed to the reducer rather than
materialized.
"""

from __future__ import annotations

import hashlib
import heapq
import os
import shutil
import struct
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import groupby
from operator import itemgetter
from typing import Callable, Iterable, Iterator, Optional, Sequence

KeyValue = tuple[bytes, bytes]
Mapper = Callable[[bytes, bytes], Iterable[KeyValue]]
Reducer = Callable[[bytes, Iterator[bytes]], Iterable[KeyValue]]

DEFAULT_MEMORY_BUDGET = 64 * 1024 * 1024

_U32 = struct.Struct("<I")
# Rough per-record overhead for budget accounting (tuple + two bytes objects).
_RECORD_OVERHEAD = 64


class JobError(RuntimeError):
    def __init__(self, phase: str, record: object, cause: BaseException):
        super().__init__(f"{phase} failed on record {record!r}: {cause}")
        self.phase = phase
        self.record = record
        self.cause = cause


@dataclass
class JobSpec:
    mapper: Mapper
    reducer: Reducer
    partitions: int = 1
    name: str = "job"

    def __post_init__(self):
        if self.partitions < 1:
            raise ValueError("partitions must be >= 1")


def partition_of(key: bytes, partitions: int) -> int:
    """Stable hash partition: all values of one key land in one partition."""
    if partitions == 1:
        return 0
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") % partitions


class _Shuffle:
    """Collects mapper emissions per partition; spills sorted runs to disk."""

    def __init__(self, partitions: int, budget: int, tmp_dir: str):
        self.partitions = partitions
        self.budget = max(budget, 1)
        self.tmp_dir = tmp_dir
        self._lock = threading.Lock()
        self._runs: list[list] = [[] for _ in range(partitions)]
        self._n_spills = 0

    def add_task_buffers(self, buffers: list[list[KeyValue]], spill: bool) -> None:
        for part, buf in enumerate(buffers):
            if not buf:
                continue
            buf.sort()
            if spill:
                path = self._spill(part, buf)
                with self._lock:
                    self._runs[part].append(path)
            else:
                with self._lock:
                    self._runs[part].append(buf)

    def _spill(self, part: int, buf: list[KeyValue]) -> str:
        with self._lock:
            self._n_spills += 1
            n = self._n_spills
        path = os.path.join(self.tmp_dir, f"run-p{part}-{n}")
        with open(path, "wb") as out:
            write = out.write
            for k, v in buf:
                write(_U32.pack(len(k)))
                write(_U32.pack(len(v)))
                write(k)
                write(v)
        return path

    def runs_for(self, part: int) -> list[Iterable[KeyValue]]:
        out: list[Iterable[KeyValue]] = []
        for run in self._runs[part]:
            if isinstance(run, str):
                out.append(_read_run(run))
            else:
                out.append(run)
        return out


def _read_run(path: str) -> Iterator[KeyValue]:
    with open(path, "rb") as f:
        read = f.read
        while True:
            header = read(8)
            if not header:
                return
            klen, vlen = _U32.unpack_from(header, 0)[0], _U32.unpack_from(header, 4)[0]
            yield read(klen), read(vlen)


def _chunks(seq: Sequence, n_chunks: int) -> list[Sequence]:
    n = len(seq)
    if n == 0:
        return []
    size = max(1, -(-n // n_chunks))
    return [seq[i:i + size] for i in range(0, n, size)]


def run_job(spec: JobSpec, pairs: Sequence[KeyValue], *,
            workers: int = 1,
            memory_budget: int = DEFAULT_MEMORY_BUDGET,
            tmp_dir: Optional[str] = None) -> list[KeyValue]:
    """Execute one map/shuffle/reduce job and return its sorted output."""
    if not isinstance(pairs, (list, tuple)):
        pairs = list(pairs)
    job_tmp = tempfile.mkdtemp(prefix=f"pdstar-{spec.name}-", dir=tmp_dir)
    try:
        shuffle = _Shuffle(spec.partitions, memory_budget, job_tmp)
        task_budget = max(memory_budget // max(workers, 1), 1 << 16)

        def map_task(chunk: Sequence[KeyValue]) -> None:
            buffers: list[list[KeyValue]] = [[] for _ in range(spec.partitions)]
            pending = 0
            for k, v in chunk:
                try:
                    emitted = spec.mapper(k, v)
                except Exception as exc:
                    raise JobError("map", (k, v), exc) from exc
                if emitted is None:
                    continue
                for ek, ev in emitted:
                    buffers[partition_of(ek, spec.partitions)].append((ek, ev))
                    pending += len(ek) + len(ev) + _RECORD_OVERHEAD
                if pending >= task_budget:
                    shuffle.add_task_buffers(buffers, spill=True)
                    buffers = [[] for _ in range(spec.partitions)]
                    pending = 0
            shuffle.add_task_buffers(buffers, spill=False)

        chunks = _chunks(pairs, max(workers, 1) * 4)
        _run_tasks(map_task, chunks, workers)

        outputs: list[list[KeyValue]] = [[] for _ in range(spec.partitions)]

        def reduce_task(part: int) -> None:
            merged = heapq.merge(*shuffle.runs_for(part))
            sink = outputs[part]
            for key, group in groupby(merged, key=itemgetter(0)):
                values = map(itemgetter(1), group)
                try:
                    emitted = spec.reducer(key, values)
                except Exception as exc:
                    raise JobError("reduce", key, exc) from exc
                if emitted:
                    sink.extend(emitted)

        _run_tasks(reduce_task, range(spec.partitions), workers)

        result: list[KeyValue] = []
        for part_out in outputs:
            result.extend(part_out)
        result.sort()
        return result
    finally:
        shutil.rmtree(job_tmp, ignore_errors=True)


def _run_tasks(fn: Callable, items: Iterable, workers: int) -> None:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        for item in items:
            fn(item)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, item) for item in items]
        for fut in futures:
            fut.result()


# Fixed-width triple encoding for reasoning jobs.  Big-endian so that byte
# order of keys equals numeric (s, p, o) order.
_TRIPLE = struct.Struct(">QQQ")
_ID = struct.Struct(">Q")


def encode_triple(t: tuple[int, int, int]) -> bytes:
    return _TRIPLE.pack(*t)


def decode_triple(data: bytes) -> tuple[int, int, int]:
    return _TRIPLE.unpack(data)


def encode_id(x: int) -> bytes:
    return _ID.pack(x)


def decode_id(data: bytes) -> int:
    return _ID.unpack(data)[0]
