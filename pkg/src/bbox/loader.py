"""Epoch orchestration: order -> page schedule -> workers -> batch stream.

One consumer thread iterates batches; ``num_workers`` producer threads
cooperate on filling ring slots. Workers do not own batches: each claims
the next unfilled position of any in-flight batch (a shared claim counter
per slot hands out every position exactly once), reads the sample, and
runs the fusible transform prefix directly into the slot's arena region.
Whoever fills the last position runs the batch-level stages and marks the
slot READY.

Because every sample's augmentation randomness derives from
(seed, epoch, sample index, field), the delivered bytes are identical for
any worker count and any scheduling. Buffer memory is planned once: the
arena, the scalar buffers, and the cache's page pool are allocated before
the first batch, and the ledger that tracks them contains no per-worker
term.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from . import pipeline as pl
from .errors import CapacityTooSmall, SchemaMismatch, ShutdownError
from .format import FieldKind
from .reader import Dataset, PageSchedule, open_dataset
from .rng import Rng, stream_seed, TAG_SAMPLE
from .traversal import OrderKind, TraversalOrder

DEFAULT_SLOT_COUNT = 3


@dataclass
class LoaderConfig:
    batch_size: int
    num_workers: int = 1
    slot_count: int = DEFAULT_SLOT_COUNT
    order: OrderKind = OrderKind.RANDOM
    seed: int = 0
    drop_last: bool = False
    pipelines: dict | None = None  # field name -> list[Transform]
    fields: list[str] | None = None  # None = every batchable field

    def check(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.num_workers < 1:
            raise ValueError("num_workers must be >= 1")
        if self.slot_count < 2:
            raise ValueError("slot_count must be >= 2")


@dataclass
class EpochStats:
    batches: int = 0
    samples: int = 0
    page_fetches: int = 0
    page_reloads: int = 0
    producer_blocked_s: float = 0.0
    consumer_blocked_s: float = 0.0


class Batch:
    """One delivered batch: a lease on a ring slot's views.

    Valid until the next batch is requested; copy out anything you keep.
    """

    __slots__ = ("arrays", "indices", "index")

    def __init__(self, arrays: dict, indices, index: int):
        self.arrays = arrays
        self.indices = indices
        self.index = index

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name) -> bool:
        return name in self.arrays

    @property
    def size(self) -> int:
        return len(self.indices)

    def keys(self):
        return self.arrays.keys()


class FillState:
    """Cooperative fill of one slot; claim() hands out each position once."""

    __slots__ = ("slot", "batch_index", "indices", "next_claim", "done", "errors")

    def __init__(self, slot: int, batch_index: int, indices):
        self.slot = slot
        self.batch_index = batch_index
        self.indices = indices
        self.next_claim = 0
        self.done = 0
        self.errors: list = []

    def claim(self) -> int | None:
        """Next unclaimed position, or None when the batch is fully claimed.

        Callers must hold the loader's coordinator lock.
        """
        if self.next_claim >= len(self.indices):
            return None
        pos = self.next_claim
        self.next_claim += 1
        return pos


def claim_positions(fill: FillState) -> int | None:
    return fill.claim()


class MemoryLedger:
    """Exact accounting of every steady-state buffer the loader plans."""

    def __init__(self):
        self.entries: dict[str, int] = {}

    def register(self, name: str, nbytes: int) -> None:
        self.entries[name] = nbytes

    @property
    def total(self) -> int:
        return sum(self.entries.values())


class Loader:
    """Batch loader over an open dataset (or a path, which it then owns)."""

    def __init__(self, dataset, config: LoaderConfig):
        config.check()
        self._owns_dataset = isinstance(dataset, (str, bytes)) or hasattr(dataset, "__fspath__")
        self.dataset: Dataset = open_dataset(dataset) if self._owns_dataset else dataset
        self.config = config
        self.order = TraversalOrder(config.order, config.seed)
        self.ledger = MemoryLedger()
        self.last_stats: EpochStats | None = None
        self._auto_epoch = 0
        self._shutdown = False
        self._epoch_lock = threading.Lock()
        self._active_epoch: _EpochRun | None = None

        schema = self.dataset.schema
        wanted = config.fields
        self.batch_fields: list = []
        for f in schema:
            if wanted is not None and f.name not in wanted:
                continue
            if f.kind == FieldKind.VAR_BYTES:
                if wanted is not None:
                    raise SchemaMismatch(f"field {f.name!r}: VAR_BYTES fields cannot be batched")
                continue
            self.batch_fields.append(f)
        if not self.batch_fields:
            raise SchemaMismatch("no batchable fields selected")

        pipelines = dict(config.pipelines or {})
        self.plans: dict[str, pl.PipelinePlan] = {}
        self.scalar_fields: list = []
        for f in self.batch_fields:
            if f.kind in (FieldKind.INT_SCALAR, FieldKind.FLOAT_SCALAR):
                if f.name in pipelines:
                    raise SchemaMismatch(f"scalar field {f.name!r} cannot take a pipeline")
                self.scalar_fields.append(f)
                continue
            chain = pipelines.pop(f.name, None) or pl.default_chain_for_field(f)
            if not isinstance(chain[0], pl.SourceTransform):
                chain = pl.default_chain_for_field(f)[:1] + list(chain)
            p = pl.PipelinePlan(
                chain, pl.input_spec_for_field(f), config.batch_size, config.slot_count
            )
            self.plans[f.name] = p
            self.ledger.register(f"arena:{f.name}", p.arena_nbytes)
            self.ledger.register(f"rng_states:{f.name}", p.rng_states.nbytes)
        if pipelines:
            raise SchemaMismatch(f"pipelines for unknown fields: {sorted(pipelines)}")

        self._scalar_bufs: dict[str, np.ndarray] = {}
        for f in self.scalar_fields:
            dt = np.dtype("<i8") if f.kind == FieldKind.INT_SCALAR else np.dtype("<f8")
            raw = pl._alloc_buffer(config.slot_count * config.batch_size * dt.itemsize)
            self._scalar_bufs[f.name] = raw.view(dt).reshape(config.slot_count, config.batch_size)
            self.ledger.register(f"scalars:{f.name}", raw.nbytes)

        self.ring = pl.BatchRing(config.slot_count)
        self.ledger.register("dataset_buffers", self.dataset.tracked_bytes)

        self._field_index = {f.name: i for i, f in enumerate(schema)}

    # -- public surface ----------------------------------------------------

    @property
    def tracked_buffer_bytes(self) -> int:
        return self.ledger.total

    def batches_per_epoch(self) -> int:
        n = self.dataset.num_samples
        if self.config.drop_last:
            return n // self.config.batch_size
        return -(-n // self.config.batch_size)

    def iterate_epoch(self, epoch: int = 0):
        """Yield every batch of one epoch; stats land in ``last_stats``."""
        if self._shutdown:
            raise ShutdownError("loader is shut down")
        run = _EpochRun(self, epoch)
        with self._epoch_lock:
            self._active_epoch = run
        try:
            yield from run.batches()
        finally:
            run.stop()
            self.last_stats = run.stats
            with self._epoch_lock:
                self._active_epoch = None

    def __iter__(self):
        epoch = self._auto_epoch
        self._auto_epoch += 1
        return self.iterate_epoch(epoch)

    def shutdown(self) -> None:
        """Stop workers, release the dataset if owned; idempotent."""
        if self._shutdown:
            return
        self._shutdown = True
        with self._epoch_lock:
            run = self._active_epoch
        if run is not None:
            run.stop()
        if self._owns_dataset:
            self.dataset.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


class _EpochRun:
    """All mutable state of one epoch's producer/consumer machinery."""

    def __init__(self, loader: Loader, epoch: int):
        self.loader = loader
        self.dataset = loader.dataset
        self.config = loader.config
        self.epoch = epoch
        self.stats = EpochStats()
        self._cond = threading.Condition()
        self._stopped = False
        self._workers: list[threading.Thread] = []
        self._producer_blocked = 0.0

        cfg = self.config
        page_map = None
        if cfg.order == OrderKind.QUASI_RANDOM:
            page_map = [self.dataset.primary_page(i) for i in range(self.dataset.num_samples)]
        self.batch_lists = loader.order.epoch_batches(
            epoch, self.dataset.num_samples, cfg.batch_size, page_map, cfg.drop_last
        )

        self.cache = self.dataset.cache
        self.positions_by_batch: list[list[tuple[int, ...]]] = []
        if self.cache is not None:
            trace: list[int] = []
            for batch in self.batch_lists:
                batch_positions = []
                batch_pages: set[int] = set()
                for i in batch:
                    pages = self.dataset.sample_pages(i)
                    batch_pages.update(pages)
                    first = len(trace)
                    trace.extend(pages)
                    batch_positions.append(tuple(range(first, first + len(pages))))
                if len(batch_pages) > self.cache.capacity:
                    raise CapacityTooSmall(
                        f"batch touches {len(batch_pages)} pages, cache holds {self.cache.capacity}"
                    )
                self.positions_by_batch.append(batch_positions)
            self.cache.install(PageSchedule(trace, self.cache.capacity))

        self.ring = loader.ring
        self.ring.reset()
        self.slot_meta: list[FillState | None] = [None] * cfg.slot_count
        self._next_batch = 0
        self._active: list[FillState] = []

    # -- worker side ---------------------------------------------------------

    def _next_task(self) -> tuple[FillState, int] | None:
        waited_since = None
        with self._cond:
            while True:
                if self._stopped:
                    raise ShutdownError("epoch stopped")
                for fs in self._active:
                    pos = fs.claim()
                    if pos is not None:
                        if waited_since is not None:
                            self._producer_blocked += time.monotonic() - waited_since
                        return fs, pos
                if self._next_batch < len(self.batch_lists):
                    slot = self.ring.try_begin_produce()
                    if slot is not None:
                        fs = FillState(slot, self._next_batch, self.batch_lists[self._next_batch])
                        self._next_batch += 1
                        self.slot_meta[slot] = fs
                        self._active.append(fs)
                        self._cond.notify_all()
                        continue
                elif not self._active:
                    if waited_since is not None:
                        self._producer_blocked += time.monotonic() - waited_since
                    return None
                if waited_since is None:
                    waited_since = time.monotonic()
                self._cond.wait(0.1)

    def _process_position(self, fs: FillState, pos: int) -> None:
        i = fs.indices[pos]
        ref = self.dataset.sample_ref(i, blocking=self.cache is not None)
        for f in self.loader.scalar_fields:
            cell = ref.cells[self.loader._field_index[f.name]]
            self.loader._scalar_bufs[f.name][fs.slot, pos] = cell
        for name, plan in self.loader.plans.items():
            fidx = self.loader._field_index[name]
            f = self.dataset.schema[fidx]
            rng = Rng(stream_seed(self.config.seed, TAG_SAMPLE, self.epoch, i, fidx))
            if f.kind == FieldKind.IMAGE:
                source_ref = (ref.cells[fidx], ref.views[name])
            else:
                source_ref = ref.views[name]
            plan.execute_sample(source_ref, fs.slot, pos, rng)
        if self.cache is not None:
            for t in self.positions_by_batch[fs.batch_index][pos]:
                self.cache.mark_consumed(t)

    def _worker(self) -> None:
        try:
            while True:
                task = self._next_task()
                if task is None:
                    return
                fs, pos = task
                try:
                    self._process_position(fs, pos)
                except ShutdownError:
                    return
                except BaseException as e:
                    with self._cond:
                        fs.errors.append((fs.indices[pos], e))
                with self._cond:
                    fs.done += 1
                    last = fs.done == len(fs.indices)
                    if last:
                        self._active.remove(fs)
                if last:
                    if not fs.errors:
                        try:
                            for plan in self.loader.plans.values():
                                plan.execute_batch_opaque(fs.slot, len(fs.indices))
                        except BaseException as e:
                            fs.errors.append((None, e))
                    self.ring.end_produce(fs.slot)
                    with self._cond:
                        self._cond.notify_all()
        except ShutdownError:
            return

    # -- consumer side ---------------------------------------------------------

    def batches(self):
        if not self.batches_exist():
            self.stats.batches = 0
            return
        if self.cache is not None:
            self.cache.start()
        for _ in range(self.config.num_workers):
            t = threading.Thread(target=self._worker, daemon=True)
            t.start()
            self._workers.append(t)

        leased: int | None = None
        try:
            for b in range(len(self.batch_lists)):
                slot = self.ring.consume()
                leased = slot
                fs = self.slot_meta[slot]
                if fs.errors:
                    index, err = fs.errors[0]
                    raise type(err)(f"sample {index} failed: {err}") from err
                arrays = {}
                count = len(fs.indices)
                for name, plan in self.loader.plans.items():
                    arrays[name] = plan.output_view(slot, count)
                for name, buf in self.loader._scalar_bufs.items():
                    arrays[name] = buf[slot, :count]
                self.stats.batches += 1
                self.stats.samples += count
                yield Batch(arrays, list(fs.indices), fs.batch_index)
                self.ring.end_consume(slot)
                leased = None
                with self._cond:
                    self.slot_meta[slot] = None
                    self._cond.notify_all()
        finally:
            if leased is not None:
                try:
                    self.ring.end_consume(leased)
                except Exception:
                    pass

    def batches_exist(self) -> bool:
        return len(self.batch_lists) > 0

    def stop(self) -> None:
        with self._cond:
            if self._stopped:
                self._collect_stats()
                return
            self._stopped = True
            self._cond.notify_all()
        self.ring.shutdown()
        if self.cache is not None:
            self.cache.stop()
        for t in self._workers:
            t.join()
        self._workers.clear()
        self._collect_stats()

    def _collect_stats(self) -> None:
        if self.cache is not None:
            self.stats.page_fetches = self.cache.stats.fetch_count
            self.stats.page_reloads = self.cache.stats.reload_count
        self.stats.producer_blocked_s = self._producer_blocked
        self.stats.consumer_blocked_s = self.ring.consume_wait_s


def iterate_epoch(dataset, config: LoaderConfig, epoch: int = 0):
    """One-shot epoch iteration; returns (generator, loader) for stats access."""
    loader = Loader(dataset, config)
    return loader.iterate_epoch(epoch), loader
