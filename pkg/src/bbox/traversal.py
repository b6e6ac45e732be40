"""Epoch order generators: sequential, random, and quasi-random.

Every kind emits an exact permutation of {0..N-1} per epoch, reproducible
from (kind, seed, epoch) alone. The quasi-random kind trades some
randomness for locality: it shuffles *pages*, keeps at most ``batch_size``
pages admitted at once, and draws each next sample uniformly from the
unconsumed samples of the admitted pages. A page is admitted exactly once
per epoch and leaves only when all of its samples are consumed, so the
working set is bounded by the buffer regardless of how many workers later
consume the order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field as dc_field

import numpy as np

from .rng import Rng, stream_seed, TAG_ORDER


class OrderKind(enum.Enum):
    SEQUENTIAL = "sequential"
    RANDOM = "random"
    QUASI_RANDOM = "quasi-random"


@dataclass
class QuasiRandomTrace:
    """Page admissions and buffer occupancy observed while emitting an epoch."""

    page_loads: list = dc_field(default_factory=list)
    max_buffered: int = 0


def _resolve_pages(num_samples: int, page_map) -> list:
    if page_map is None:
        return [None] * num_samples
    if callable(page_map):
        return [page_map(i) for i in range(num_samples)]
    return list(page_map)


def _quasi_epoch(r: Rng, num_samples: int, pages: list, buffer_pages: int,
                 trace: QuasiRandomTrace | None) -> list[int]:
    by_page: dict = {}
    for i, p in enumerate(pages):
        by_page.setdefault(p, []).append(i)
    page_order = sorted(by_page, key=lambda p: (p is None, p))
    r.shuffle(page_order)

    admitted: list[list[int]] = []  # unconsumed sample lists, admission order
    next_page = 0
    out: list[int] = []
    while len(out) < num_samples:
        while len(admitted) < buffer_pages and next_page < len(page_order):
            page = page_order[next_page]
            next_page += 1
            admitted.append(by_page[page])
            if trace is not None:
                trace.page_loads.append(page)
                trace.max_buffered = max(trace.max_buffered, len(admitted))
        total = sum(len(s) for s in admitted)
        k = r.below(total)
        for slot, samples in enumerate(admitted):
            if k < len(samples):
                out.append(samples.pop(k))
                if not samples:
                    admitted.pop(slot)
                break
            k -= len(samples)
    return out


@dataclass
class TraversalOrder:
    kind: OrderKind
    seed: int = 0

    def epoch_rng(self, epoch: int) -> Rng:
        return Rng(stream_seed(self.seed, TAG_ORDER, epoch))

    def epoch_indices(
        self,
        epoch: int,
        num_samples: int,
        page_map=None,
        batch_size: int | None = None,
        trace: QuasiRandomTrace | None = None,
    ) -> list[int]:
        """The epoch's permutation of {0..num_samples-1}."""
        if self.kind == OrderKind.SEQUENTIAL:
            return list(range(num_samples))
        if self.kind == OrderKind.RANDOM:
            out = list(range(num_samples))
            self.epoch_rng(epoch).shuffle(out)
            return out
        if batch_size is None or batch_size < 1:
            raise ValueError("quasi-random order requires batch_size >= 1")
        if num_samples == 0:
            return []
        pages = _resolve_pages(num_samples, page_map)
        return _quasi_epoch(self.epoch_rng(epoch), num_samples, pages, batch_size, trace)

    def epoch_batches(
        self,
        epoch: int,
        num_samples: int,
        batch_size: int,
        page_map=None,
        drop_last: bool = False,
    ) -> list[list[int]]:
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        indices = self.epoch_indices(epoch, num_samples, page_map, batch_size)
        batches = [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]
        if drop_last and batches and len(batches[-1]) < batch_size:
            batches.pop()
        return batches


def next_epoch(order: TraversalOrder, num_samples: int, page_map, batch_size: int,
               epoch: int = 0, drop_last: bool = False) -> list[list[int]]:
    """Batches for one epoch; concatenated they form an exact permutation."""
    return order.epoch_batches(epoch, num_samples, batch_size, page_map, drop_last)


def uniformity_probe(
    kind: OrderKind,
    num_samples: int,
    epochs: int,
    seed: int = 0,
    page_map=None,
    batch_size: int | None = None,
) -> np.ndarray:
    """Mean emission position of each sample over ``epochs`` epochs.

    A diagnostic for shuffle quality, not a production path: a uniform
    shuffle puts every mean near (N-1)/2.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    order = TraversalOrder(kind, seed)
    totals = np.zeros(num_samples, dtype=np.float64)
    positions = np.arange(num_samples, dtype=np.float64)
    for e in range(epochs):
        idx = np.asarray(order.epoch_indices(e, num_samples, page_map, batch_size))
        totals[idx] += positions
    return totals / epochs
