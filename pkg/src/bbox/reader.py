"""Container reading under three residency strategies.

OS_CACHE maps the file so repeated reads come from the operating system's
page cache (two loaders on one file share those cached bytes for free).
DIRECT issues positional reads per access and is the cold-storage /
network-emulation path: it accepts an injected per-read latency. The
process cache sits in between: because the epoch order is known before the
epoch starts, the page fetch/evict plan can be computed exactly, with
farthest-next-use (optimal) eviction, and executed ahead of the consumer
by a background prefetcher.

The cache never exceeds its page budget: page buffers are pooled and
allocated once, and a planned eviction only runs once every earlier use of
the victim page has actually been consumed.
"""

from __future__ import annotations

import mmap
import os
import threading
import time
from dataclasses import dataclass

import numpy as np

from .codecs import CodecId, ImageBlob, decode_image
from .errors import (
    CapacityTooSmall,
    IndexOutOfRange,
    InvalidFile,
    PageNotResident,
    ShutdownError,
)
from .format import (
    DatasetHeader,
    FieldKind,
    decode_alloc_table,
    decode_row,
)
from .writer import read_header


def spin_wait(duration_s: float) -> None:
    """Busy-wait on the monotonic clock.

    Injected latencies and synthetic compute use this instead of sleep():
    sleep granularity is scheduler-dependent and can overshoot a 1 ms
    request severalfold, which would swamp latency-floor arithmetic.
    """
    end = time.perf_counter() + duration_s
    while time.perf_counter() < end:
        pass


class OsCache:
    """mmap the file; the OS page cache serves repeated reads."""


@dataclass
class Direct:
    """Unbuffered positional reads, one per heap access; optional injected latency."""

    read_latency_s: float = 0.0


@dataclass
class ProcessCacheStrategy:
    capacity_pages: int
    prefetch_window: int = 8
    fetch_latency_s: float = 0.0

    def check(self) -> None:
        if self.capacity_pages < 1:
            raise CapacityTooSmall(f"capacity_pages must be >= 1, got {self.capacity_pages}")
        if self.prefetch_window < 1:
            raise ValueError("prefetch_window must be >= 1")


@dataclass
class CacheStats:
    fetch_count: int = 0
    reload_count: int = 0
    peak_resident: int = 0


class _PlanStep:
    __slots__ = ("fetch", "victim", "victim_guard")

    def __init__(self, fetch: bool, victim=None, victim_guard: int = 0):
        self.fetch = fetch
        self.victim = victim
        self.victim_guard = victim_guard


class PageSchedule:
    """A page access trace plus its derived optimal fetch/evict plan.

    ``trace[t]`` is the page touched by access t. The plan is a classic
    farthest-next-use simulation; each planned eviction carries a guard:
    the number of uses of the victim that must be consumed before the
    eviction may run (so prefetching ahead never steals a page someone
    still needs).
    """

    def __init__(self, trace, capacity_pages: int):
        if capacity_pages < 1:
            raise CapacityTooSmall("capacity_pages must be >= 1")
        self.trace = list(trace)
        self.capacity = capacity_pages
        T = len(self.trace)
        INF = T + 1
        next_use = [INF] * T
        last_seen: dict = {}
        for t in range(T - 1, -1, -1):
            next_use[t] = last_seen.get(self.trace[t], INF)
            last_seen[self.trace[t]] = t

        self.steps: list[_PlanStep] = []
        self.prefix_fetches = [0] * (T + 1)
        self.planned_fetches = 0
        self.planned_reloads = 0
        resident: dict = {}  # page -> next use position
        seen_before: set = set()
        uses_so_far: dict = {}
        for t, page in enumerate(self.trace):
            if page in resident:
                self.steps.append(_PlanStep(False))
            else:
                victim = None
                guard = 0
                if len(resident) >= capacity_pages:
                    victim = max(resident, key=lambda p: (resident[p], _page_key(p)))
                    guard = uses_so_far.get(victim, 0)
                    del resident[victim]
                self.steps.append(_PlanStep(True, victim, guard))
                self.planned_fetches += 1
                if page in seen_before:
                    self.planned_reloads += 1
                seen_before.add(page)
            resident[page] = next_use[t]
            uses_so_far[page] = uses_so_far.get(page, 0) + 1
            self.prefix_fetches[t + 1] = self.planned_fetches

        self.total_uses = uses_so_far


def _page_key(p) -> int:
    return -1 if p is None else p


class ProcessCache:
    """Executes a PageSchedule: pooled page buffers, background prefetch.

    ``fetch_fn(page_id, out_buffer)`` fills a pooled buffer with the page's
    bytes. Consumers call ``wait_resident`` (blocks until the prefetcher
    has loaded the page) and ``mark_consumed`` per trace position once the
    sample bytes have been used; consumption is what unlocks pending
    evictions, so out-of-order consumption within a batch is safe.
    """

    def __init__(self, capacity_pages: int, page_size: int, fetch_fn,
                 prefetch_window: int = 8, fetch_latency_s: float = 0.0):
        if capacity_pages < 1:
            raise CapacityTooSmall(f"capacity_pages must be >= 1, got {capacity_pages}")
        self.capacity = capacity_pages
        self.page_size = page_size
        self.fetch_fn = fetch_fn
        self.window = max(1, prefetch_window)
        self.fetch_latency_s = fetch_latency_s
        self._pool = [np.empty(page_size, dtype=np.uint8) for _ in range(capacity_pages)]
        self.pool_bytes = capacity_pages * page_size
        self._cond = threading.Condition()
        self._resident: dict = {}
        self._free = list(self._pool)
        self._schedule: PageSchedule | None = None
        self._thread: threading.Thread | None = None
        self._shutdown = False
        self._failure: BaseException | None = None
        self._consumed_positions = 0
        self._consumed_uses: dict = {}
        self._fetched_this_epoch: set = set()
        self.stats = CacheStats()

    def install(self, schedule: PageSchedule) -> None:
        if schedule.capacity != self.capacity:
            raise ValueError("schedule planned for a different capacity")
        with self._cond:
            if self._thread is not None:
                raise RuntimeError("previous schedule still running")
            self._schedule = schedule
            self._resident.clear()
            self._free = list(self._pool)
            self._consumed_positions = 0
            self._consumed_uses: dict = {}
            self._fetched_this_epoch: set = set()
            self._failure = None
            self._shutdown = False
            self.stats = CacheStats()

    def start(self) -> None:
        assert self._schedule is not None, "install() a schedule first"
        self._thread = threading.Thread(target=self._prefetch_loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._shutdown = True
            self._cond.notify_all()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def _prefetch_loop(self) -> None:
        sched = self._schedule
        try:
            for t, step in enumerate(sched.steps):
                if not step.fetch:
                    continue
                page = sched.trace[t]
                with self._cond:
                    while (
                        not self._shutdown
                        and self.stats.fetch_count
                        >= sched.prefix_fetches[min(self._consumed_positions, len(sched.trace))]
                        + self.window
                    ):
                        self._cond.wait()
                    if self._shutdown:
                        return
                    if step.victim is not None:
                        while (
                            not self._shutdown
                            and self._consumed_uses.get(step.victim, 0) < step.victim_guard
                        ):
                            self._cond.wait()
                        if self._shutdown:
                            return
                        self._free.append(self._resident.pop(step.victim))
                    buf = self._free.pop()
                if self.fetch_latency_s:
                    spin_wait(self.fetch_latency_s)
                self.fetch_fn(page, buf)
                with self._cond:
                    self._resident[page] = buf
                    self.stats.fetch_count += 1
                    if page in self._fetched_this_epoch:
                        self.stats.reload_count += 1
                    self._fetched_this_epoch.add(page)
                    self.stats.peak_resident = max(self.stats.peak_resident, len(self._resident))
                    self._cond.notify_all()
        except BaseException as e:  # surfaced to waiting consumers
            with self._cond:
                self._failure = e
                self._cond.notify_all()

    def wait_resident(self, page) -> np.ndarray:
        with self._cond:
            while page not in self._resident:
                if self._failure is not None:
                    raise self._failure
                if self._shutdown:
                    raise ShutdownError("cache stopped")
                self._cond.wait()
            return self._resident[page]

    def page_buffer(self, page) -> np.ndarray:
        with self._cond:
            buf = self._resident.get(page)
            if buf is None:
                raise PageNotResident(f"page {page} not resident")
            return buf

    def mark_consumed(self, position: int) -> None:
        sched = self._schedule
        with self._cond:
            page = sched.trace[position]
            self._consumed_uses[page] = self._consumed_uses.get(page, 0) + 1
            self._consumed_positions += 1
            self._cond.notify_all()

    def run(self, consume) -> CacheStats:
        """Drive the whole schedule serially: the reference execution mode.

        ``consume(position, page, buffer)`` is called once per trace
        position, in order. Returns the epoch's cache stats.
        """
        sched = self._schedule
        self.start()
        try:
            for t, page in enumerate(sched.trace):
                buf = self.wait_resident(page)
                consume(t, page, buf)
                self.mark_consumed(t)
        finally:
            self.stop()
        return self.stats


def run_schedule(cache: ProcessCache, consume) -> CacheStats:
    return cache.run(consume)


class _SampleRef:
    """Decoded row cells plus zero-copy heap views for one sample."""

    __slots__ = ("index", "cells", "views")

    def __init__(self, index, cells, views):
        self.index = index
        self.cells = cells
        self.views = views  # field name -> np.uint8 view or None


class Dataset:
    """An open container file.

    Row i is O(1) addressable at ``data_table_offset + i * row_width``.
    Heap access goes through the configured strategy. Datasets are safe to
    share across threads for reads.
    """

    def __init__(self, path, strategy=None):
        self.path = str(path)
        self.strategy = strategy if strategy is not None else OsCache()
        self.header: DatasetHeader = read_header(path)
        self.schema = list(self.header.fields)
        self._row_width = self.header.row_width
        self.num_samples = self.header.num_samples
        self.num_pages = self.header.num_pages
        self.io_read_count = 0
        self.cache: ProcessCache | None = None
        self._mm = None
        self._fd: int | None = None

        if isinstance(self.strategy, OsCache):
            self._fd = os.open(self.path, os.O_RDONLY)
            self._mm = mmap.mmap(self._fd, 0, access=mmap.ACCESS_READ)
            self._view = np.frombuffer(self._mm, dtype=np.uint8)
            self._rows = bytes(
                self._view[
                    self.header.data_table_offset : self.header.data_table_offset
                    + self.num_samples * self._row_width
                ]
            )
        elif isinstance(self.strategy, Direct):
            self._fd = os.open(self.path, os.O_RDONLY)
            self._rows = self._pread(
                self.header.data_table_offset, self.num_samples * self._row_width
            )
        elif isinstance(self.strategy, ProcessCacheStrategy):
            self.strategy.check()
            self._fd = os.open(self.path, os.O_RDONLY)
            self._rows = os.pread(
                self._fd, self.num_samples * self._row_width, self.header.data_table_offset
            )
            self.cache = ProcessCache(
                self.strategy.capacity_pages,
                self.header.page_size,
                self._fetch_page,
                prefetch_window=self.strategy.prefetch_window,
                fetch_latency_s=self.strategy.fetch_latency_s,
            )
        else:
            raise TypeError(f"unknown read strategy {self.strategy!r}")
        self.tracked_bytes = len(self._rows) + (self.cache.pool_bytes if self.cache else 0)

    def _pread(self, offset: int, length: int) -> bytes:
        if isinstance(self.strategy, Direct) and self.strategy.read_latency_s:
            spin_wait(self.strategy.read_latency_s)
        self.io_read_count += 1
        return os.pread(self._fd, length, offset)

    def _fetch_page(self, page: int, out: np.ndarray) -> None:
        offset = self.header.heap_offset + page * self.header.page_size
        length = min(self.header.page_size, self.header.alloc_table_offset - offset)
        self.io_read_count += 1
        data = os.pread(self._fd, length, offset)
        out[: len(data)] = np.frombuffer(data, dtype=np.uint8)

    # -- rows ------------------------------------------------------------

    def row_bytes(self, i: int) -> bytes:
        if not 0 <= i < self.num_samples:
            raise IndexOutOfRange(f"sample {i} out of range [0, {self.num_samples})")
        return self._rows[i * self._row_width : (i + 1) * self._row_width]

    def cells(self, i: int) -> tuple:
        return decode_row(self.schema, self.row_bytes(i))

    def column(self, name: str) -> np.ndarray:
        """All inline values of a scalar field as one array (for predicates)."""
        offset = 0
        for f in self.schema:
            if f.name == name:
                if f.kind not in (FieldKind.INT_SCALAR, FieldKind.FLOAT_SCALAR):
                    raise ValueError(f"column() only reads scalar fields, {name!r} is {f.kind.name}")
                dt = np.dtype("<i8") if f.kind == FieldKind.INT_SCALAR else np.dtype("<f8")
                if self.num_samples == 0:
                    return np.empty(0, dtype=dt)
                table = np.frombuffer(self._rows, dtype=np.uint8).reshape(
                    self.num_samples, self._row_width
                )
                return np.ascontiguousarray(table[:, offset : offset + 8]).view(dt).reshape(-1)
            offset += f.row_cell_width
        raise KeyError(name)

    # -- heap ------------------------------------------------------------

    def page_of(self, offset: int) -> int:
        return (offset - self.header.heap_offset) // self.header.page_size

    def pages_of_region(self, offset: int, length: int) -> range:
        first = self.page_of(offset)
        last = self.page_of(offset + length - 1)
        return range(first, last + 1)

    def sample_pages(self, i: int) -> list[int]:
        """Distinct pages referenced by sample i, ascending."""
        pages: set[int] = set()
        for f, cell in zip(self.schema, self.cells(i)):
            if f.kind == FieldKind.FIXED_ARRAY:
                pages.update(self.pages_of_region(cell, f.array_nbytes))
            elif f.kind == FieldKind.VAR_BYTES and cell.length:
                pages.update(self.pages_of_region(cell.offset, cell.length))
            elif f.kind == FieldKind.IMAGE and cell.length:
                pages.update(self.pages_of_region(cell.offset, cell.length))
        return sorted(pages)

    def primary_page(self, i: int):
        """Page of the sample's first heap reference, or None if all-inline."""
        for f, cell in zip(self.schema, self.cells(i)):
            if f.kind == FieldKind.FIXED_ARRAY:
                return self.page_of(cell)
            if f.kind in (FieldKind.VAR_BYTES, FieldKind.IMAGE) and cell.length:
                return self.page_of(cell.offset)
        return None

    def heap_read(self, offset: int, length: int, blocking: bool = False) -> np.ndarray:
        """u8 view (or copy, for DIRECT / page-spanning reads) of heap bytes."""
        if length == 0:
            return np.empty(0, dtype=np.uint8)
        if self._mm is not None:
            return self._view[offset : offset + length]
        if self.cache is not None:
            page_size = self.header.page_size
            first = self.page_of(offset)
            last = self.page_of(offset + length - 1)
            if first == last:
                buf = (
                    self.cache.wait_resident(first) if blocking else self.cache.page_buffer(first)
                )
                start = offset - self.header.heap_offset - first * page_size
                return buf[start : start + length]
            parts = []
            remaining = length
            pos = offset
            for page in range(first, last + 1):
                buf = self.cache.wait_resident(page) if blocking else self.cache.page_buffer(page)
                start = pos - self.header.heap_offset - page * page_size
                take = min(page_size - start, remaining)
                parts.append(buf[start : start + take])
                pos += take
                remaining -= take
            return np.concatenate(parts)
        return np.frombuffer(self._pread(offset, length), dtype=np.uint8)

    # -- samples ----------------------------------------------------------

    def sample_ref(self, i: int, blocking: bool = False) -> _SampleRef:
        cells = self.cells(i)
        views = {}
        for f, cell in zip(self.schema, cells):
            if f.kind == FieldKind.FIXED_ARRAY:
                views[f.name] = self.heap_read(cell, f.array_nbytes, blocking)
            elif f.kind == FieldKind.VAR_BYTES:
                views[f.name] = self.heap_read(cell.offset, cell.length, blocking)
            elif f.kind == FieldKind.IMAGE:
                views[f.name] = self.heap_read(cell.offset, cell.length, blocking)
        return _SampleRef(i, cells, views)

    def get_sample(self, i: int, out: dict | None = None) -> dict:
        """Decode every field of sample i.

        Images decode into ``out[name]`` when provided (must be a u8 HxWxC
        buffer of the exact decoded shape); otherwise fresh arrays are
        returned. Lossless fields round-trip bit-identically.
        """
        ref = self.sample_ref(i)
        result = {}
        for f, cell in zip(self.schema, ref.cells):
            if f.kind == FieldKind.INT_SCALAR:
                result[f.name] = cell
            elif f.kind == FieldKind.FLOAT_SCALAR:
                result[f.name] = cell
            elif f.kind == FieldKind.FIXED_ARRAY:
                result[f.name] = (
                    np.ascontiguousarray(ref.views[f.name]).view(f.array_dtype).reshape(f.array_dims).copy()
                )
            elif f.kind == FieldKind.VAR_BYTES:
                result[f.name] = ref.views[f.name].tobytes()
            else:
                blob = ImageBlob(
                    cell.height, cell.width, cell.channels, CodecId(cell.codec),
                    ref.views[f.name].tobytes(),
                )
                target = out.get(f.name) if out else None
                if target is None:
                    target = np.empty((cell.height, cell.width, cell.channels), dtype=np.uint8)
                decode_image(blob, target)
                result[f.name] = target
        return result

    def close(self) -> None:
        if self.cache is not None:
            self.cache.stop()
        if self._mm is not None:
            self._view = None
            try:
                self._mm.close()
            except BufferError:
                pass  # zero-copy views still outstanding; the mapping drops with them
            self._mm = None
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_dataset(path, strategy=None) -> Dataset:
    """Open a container file under a read strategy (default: OS cache)."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        return Dataset(path, strategy)
    except (CapacityTooSmall, TypeError):
        raise
    except InvalidFile:
        raise
    except Exception as e:
        raise InvalidFile(f"{path}: {e}") from e
