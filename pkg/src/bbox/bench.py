"""Bottleneck decomposition benchmarks with deterministic counters.

Three modes isolate the stages of a training loop: READ_ONLY touches every
byte without decoding, READ_PROCESS adds the transform pipeline, and
FULL_LOOP adds a synthetic compute consumer (a busy-wait of configurable
duration per batch) so overlap between loading and compute is measurable.

Two loaders are compared: CONTAINER (the single-file format) and
FILE_PER_SAMPLE (a directory of one raster file per sample, the layout the
container replaces). Slow storage is emulated hermetically by injecting a
fixed latency per read operation: per page fetch for the container, per
file for the baseline, so wall-clock floors are pure arithmetic over the
counted reads. I/O counters are deterministic given (scenario, seed); only
wall times vary run to run, and reports carry the median over repetitions.
"""

from __future__ import annotations

import enum
import json
import statistics
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .loader import Loader, LoaderConfig
from .reader import Direct, OsCache, ProcessCacheStrategy, open_dataset, spin_wait
from .rng import Rng, stream_seed, TAG_SAMPLE
from .sources import DirectoryImageSource, read_raster
from .traversal import OrderKind, TraversalOrder


class Mode(enum.Enum):
    READ_ONLY = "read-only"
    READ_PROCESS = "read-process"
    FULL_LOOP = "full-loop"


class LoaderKind(enum.Enum):
    CONTAINER = "container"
    FILE_PER_SAMPLE = "file-per-sample"


@dataclass
class BenchScenario:
    mode: Mode
    loader: LoaderKind
    batch_size: int = 64
    num_workers: int = 1
    order: OrderKind = OrderKind.SEQUENTIAL
    seed: int = 0
    pipeline_spec: str = "decode"
    compute_s_per_batch: float = 0.0
    read_latency_s: float = 0.0
    repetitions: int = 3
    cache_pages: int | None = None  # container: process-cache capacity; None = whole heap

    def check(self) -> None:
        if self.repetitions < 3:
            raise ValueError("repetitions must be >= 3 (reports carry the median)")


@dataclass
class BenchReport:
    scenario: dict
    times_s: list[float]
    median_s: float
    samples: int
    samples_per_s: float
    counters: dict = dc_field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "scenario": self.scenario,
                "times_s": self.times_s,
                "median_s": self.median_s,
                "samples": self.samples,
                "samples_per_s": self.samples_per_s,
                "counters": self.counters,
            },
            indent=2,
            sort_keys=True,
        )

    def to_text(self) -> str:
        lines = [
            "scenario: " + " ".join(f"{k}={v}" for k, v in sorted(self.scenario.items())),
            f"median_s: {self.median_s:.6f}",
            f"samples: {self.samples}",
            f"samples_per_s: {self.samples_per_s:.1f}",
        ]
        for k, v in sorted(self.counters.items()):
            lines.append(f"counter {k}: {v}")
        return "\n".join(lines)


def busy_wait(duration_s: float) -> None:
    """Synthetic compute: spin on the monotonic clock."""
    spin_wait(duration_s)


def _spin_consume(scenario: BenchScenario) -> None:
    if scenario.mode == Mode.FULL_LOOP and scenario.compute_s_per_batch > 0:
        busy_wait(scenario.compute_s_per_batch)


def baseline_file_per_sample(
    directory,
    scenario: BenchScenario,
    epoch: int = 0,
    counters: dict | None = None,
):
    """Batch stream over a raster tree, one open+read per sample.

    Batches are semantically identical to the container loader's given the
    same order seed: same traversal permutation, same per-sample transform
    randomness. Yields (arrays dict, indices).
    """
    src = DirectoryImageSource(directory)
    n = len(src)
    order = TraversalOrder(scenario.order, scenario.seed)
    batches = order.epoch_batches(epoch, n, scenario.batch_size)
    height, width, channels = (
        src.schema[0].max_height,
        src.schema[0].max_width,
        src.schema[0].channels,
    )
    transforms = pl.parse_pipeline(scenario.pipeline_spec)
    if not isinstance(transforms[0], pl.SourceTransform):
        transforms = [pl.Decode()] + transforms
    spec = pl.ImageSourceSpec(height, width, channels)
    specs = []
    s = spec
    for t in transforms:
        out = t.output_spec(s)
        t.prepare(s, out)
        specs.append(out)
        s = out
    out_shape, out_dtype = specs[-1]

    labels_all = [label for _, label in src.entries]
    for batch in batches:
        images = np.empty((len(batch), *out_shape), dtype=out_dtype)
        labels = np.empty(len(batch), dtype=np.int64)
        for pos, i in enumerate(batch):
            path = src.entries[i][0]
            if scenario.read_latency_s:
                spin_wait(scenario.read_latency_s)
            if counters is not None:
                counters["file_opens"] = counters.get("file_opens", 0) + 1
            pixels = read_raster(path)
            if scenario.mode == Mode.READ_ONLY:
                labels[pos] = labels_all[i]
                continue
            rng = Rng(stream_seed(scenario.seed, TAG_SAMPLE, epoch, i, 0))
            bufs = [np.empty(shape, dtype=dt) for shape, dt in specs]
            cell = _RasterCell(pixels)
            transforms[0].apply_source((cell, pixels.reshape(-1)), bufs[0], rng)
            for t_idx in range(1, len(transforms)):
                transforms[t_idx].apply(bufs[t_idx - 1], bufs[t_idx], rng)
            images[pos] = bufs[-1]
            labels[pos] = labels_all[i]
        yield {"image": images, "label": labels}, batch


class _RasterCell:
    """Adapts raw pixels to the decode transform's (cell, payload) input."""

    __slots__ = ("height", "width", "channels", "codec")

    def __init__(self, pixels: np.ndarray):
        self.height, self.width, self.channels = pixels.shape
        self.codec = 0  # raw


def _run_container_once(dataset_path, scenario: BenchScenario, epoch: int, counters: dict) -> int:
    counters["file_opens"] = 1  # one data handle serves the whole scan
    if scenario.mode == Mode.READ_ONLY:
        # Touch every heap page and every row, no decoding.
        from .writer import read_header

        capacity = scenario.cache_pages or max(read_header(dataset_path).num_pages, 1)
        ds = open_dataset(
            dataset_path,
            ProcessCacheStrategy(
                capacity_pages=capacity,
                fetch_latency_s=scenario.read_latency_s,
            ),
        )
        try:
            from .reader import PageSchedule

            order = TraversalOrder(scenario.order, scenario.seed)
            indices = order.epoch_indices(epoch, ds.num_samples, batch_size=scenario.batch_size)
            trace = []
            for i in indices:
                trace.extend(ds.sample_pages(i))
            sink = 0
            ds.cache.install(PageSchedule(trace, ds.cache.capacity))
            stats = ds.cache.run(lambda t, page, buf: None)
            for i in range(ds.num_samples):
                sink ^= len(ds.row_bytes(i))
            counters["page_fetches"] = stats.fetch_count
            counters["page_reloads"] = stats.reload_count
            counters["io_reads"] = ds.io_read_count
            return ds.num_samples
        finally:
            ds.close()

    strategy = (
        ProcessCacheStrategy(
            capacity_pages=scenario.cache_pages, fetch_latency_s=scenario.read_latency_s
        )
        if scenario.cache_pages
        else (Direct(scenario.read_latency_s) if scenario.read_latency_s else OsCache())
    )
    ds = open_dataset(dataset_path, strategy)
    try:
        config = LoaderConfig(
            batch_size=scenario.batch_size,
            num_workers=scenario.num_workers,
            order=scenario.order,
            seed=scenario.seed,
            pipelines={"image": pl.parse_pipeline(scenario.pipeline_spec)},
        )
        loader = Loader(ds, config)
        samples = 0
        for batch in loader.iterate_epoch(epoch):
            samples += batch.size
            _spin_consume(scenario)
        stats = loader.last_stats
        counters["page_fetches"] = stats.page_fetches
        counters["page_reloads"] = stats.page_reloads
        counters["io_reads"] = ds.io_read_count
        counters["producer_blocked_s"] = round(stats.producer_blocked_s, 6)
        counters["consumer_blocked_s"] = round(stats.consumer_blocked_s, 6)
        return samples
    finally:
        ds.close()


def run_scenario(scenario: BenchScenario, dataset_path=None, directory=None) -> BenchReport:
    """Run one scenario ``repetitions`` times; report the median wall time."""
    scenario.check()
    times = []
    samples = 0
    counters: dict = {}
    for rep in range(scenario.repetitions):
        counters = {}
        start = time.perf_counter()
        if scenario.loader == LoaderKind.CONTAINER:
            if dataset_path is None:
                raise ValueError("container scenarios need dataset_path")
            samples = _run_container_once(dataset_path, scenario, rep, counters)
        else:
            if directory is None:
                raise ValueError("file-per-sample scenarios need a directory")
            samples = 0
            for arrays, batch in baseline_file_per_sample(
                directory, scenario, epoch=rep, counters=counters
            ):
                samples += len(batch)
                _spin_consume(scenario)
        times.append(time.perf_counter() - start)
    median = statistics.median(times)
    return BenchReport(
        scenario={
            "mode": scenario.mode.value,
            "loader": scenario.loader.value,
            "batch_size": scenario.batch_size,
            "num_workers": scenario.num_workers,
            "order": scenario.order.value,
            "seed": scenario.seed,
            "pipeline": scenario.pipeline_spec,
            "read_latency_s": scenario.read_latency_s,
            "compute_s_per_batch": scenario.compute_s_per_batch,
            "repetitions": scenario.repetitions,
        },
        times_s=[round(t, 6) for t in times],
        median_s=median,
        samples=samples,
        samples_per_s=samples / median if median > 0 else float("inf"),
        counters=counters,
    )


def write_report(report: BenchReport, out_path) -> None:
    Path(out_path).write_text(report.to_json() + "\n")
