"""Command-line surface: create, inspect, validate, dump, bench.

Exit codes: 0 success, 1 validation/data error, 2 usage error. Every
subcommand has a machine-readable output mode so scripts can diff runs.
The ``BBOX_WORKERS`` environment variable overrides the default worker
count where one applies.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import pipeline as pl
from .bench import BenchScenario, LoaderKind, Mode, run_scenario, write_report
from .errors import BboxError
from .format import MIN_PAGE_SIZE, validate_file
from .loader import Loader, LoaderConfig
from .reader import open_dataset
from .sources import DirectoryImageSource, SyntheticImageSource
from .traversal import OrderKind
from .writer import WriterConfig, read_header, report_waste, write_dataset
from .codecs import CodecId

USAGE_ERROR = 2
DATA_ERROR = 1


class UsageError(Exception):
    pass


def _default_workers() -> int:
    value = os.environ.get("BBOX_WORKERS", "")
    try:
        return max(1, int(value)) if value else 1
    except ValueError:
        return 1


def _parse_source(spec: str):
    if spec.startswith("synthetic:"):
        dims = spec[len("synthetic:") :].split("x")
        if len(dims) != 4:
            raise UsageError(f"synthetic source must be COUNTxHxWxC, got {spec!r}")
        try:
            n, h, w, c = (int(d) for d in dims)
        except ValueError:
            raise UsageError(f"synthetic source must be COUNTxHxWxC, got {spec!r}") from None
        return lambda seed: SyntheticImageSource(n, h, w, c, seed=seed)
    if spec.startswith("dir:"):
        path = spec[len("dir:") :]
        return lambda seed: DirectoryImageSource(path)
    if os.path.isdir(spec):
        return lambda seed: DirectoryImageSource(spec)
    raise UsageError(f"unknown source {spec!r} (use synthetic:COUNTxHxWxC or dir:PATH)")


def cmd_create(args) -> int:
    make_source = _parse_source(args.source)
    if args.page_size < MIN_PAGE_SIZE or args.page_size & (args.page_size - 1):
        raise UsageError(f"--page-size must be a power of two >= {MIN_PAGE_SIZE}")
    if not 0.0 <= args.compress_prob <= 1.0:
        raise UsageError("--compress-prob must be in [0, 1]")
    codec = CodecId.RLE if args.compress_codec == "rle" else CodecId.SUBSAMPLE2
    config = WriterConfig(
        page_size=args.page_size,
        num_encode_workers=args.workers,
        compress_probability=args.compress_prob,
        compress_codec=codec,
        seed=args.seed,
    )
    source = make_source(args.seed)
    report = write_dataset(source, args.out, config)
    print(
        f"wrote {report.path}: {report.num_samples} samples, {report.num_pages} pages, "
        f"waste {report.waste_fraction:.4f}, codecs {report.codec_counts}"
    )
    return 0


def cmd_inspect(args) -> int:
    header = read_header(args.path)
    info = {
        "path": args.path,
        "num_samples": header.num_samples,
        "num_fields": header.num_fields,
        "page_size": header.page_size,
        "num_pages": header.num_pages,
        "data_table_offset": header.data_table_offset,
        "heap_offset": header.heap_offset,
        "alloc_table_offset": header.alloc_table_offset,
        "waste_fraction": report_waste(args.path),
        "fields": [
            {"name": f.name, "kind": f.kind.name, "cell_width": f.row_cell_width}
            for f in header.fields
        ],
    }
    if args.sample is not None:
        ds = open_dataset(args.path)
        try:
            if not 0 <= args.sample < header.num_samples:
                print(f"sample {args.sample} out of range", file=sys.stderr)
                return DATA_ERROR
            cells = ds.cells(args.sample)
            info["sample"] = {
                "index": args.sample,
                "cells": [
                    {"field": f.name, "cell": list(c) if isinstance(c, tuple) else c}
                    for f, c in zip(header.fields, cells)
                ],
            }
        finally:
            ds.close()
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        print(f"{args.path}: {info['num_samples']} samples, {info['num_fields']} fields")
        print(f"  page_size {info['page_size']}, {info['num_pages']} pages, "
              f"waste {info['waste_fraction']:.4f}")
        for f in info["fields"]:
            print(f"  field {f['name']}: {f['kind']} ({f['cell_width']} bytes/cell)")
        if "sample" in info:
            for cell in info["sample"]["cells"]:
                print(f"  sample[{args.sample}].{cell['field']} = {cell['cell']}")
    return 0


def cmd_validate(args) -> int:
    report = validate_file(args.path)
    print(report)
    return 0 if report.ok else DATA_ERROR


def cmd_dump(args) -> int:
    ds = open_dataset(args.path)
    try:
        config = LoaderConfig(
            batch_size=args.batch_size,
            num_workers=args.workers,
            order=OrderKind(args.order),
            seed=args.seed,
            drop_last=args.drop_last,
            pipelines={"image": pl.parse_pipeline(args.pipeline)} if args.pipeline else None,
        )
        loader = Loader(ds, config)
        emitted = 0
        for batch in loader.iterate_epoch(args.epoch):
            record = {"batch": batch.index, "indices": list(map(int, batch.indices))}
            for name in sorted(batch.keys()):
                arr = np.ascontiguousarray(batch[name])
                record[name] = arr.tobytes().hex()
                record[f"{name}_dtype"] = str(arr.dtype)
                record[f"{name}_shape"] = list(arr.shape)
            print(json.dumps(record, sort_keys=True))
            emitted += 1
            if args.count and emitted >= args.count:
                break
    finally:
        ds.close()
    return 0


def cmd_bench(args) -> int:
    try:
        mode = Mode(args.mode)
        loader_kind = LoaderKind(args.loader)
    except ValueError as e:
        raise UsageError(str(e)) from None
    if loader_kind == LoaderKind.FILE_PER_SAMPLE and not args.dir:
        raise UsageError("--loader file-per-sample requires --dir")
    if loader_kind == LoaderKind.CONTAINER and not args.data:
        raise UsageError("--loader container requires --data")
    scenario = BenchScenario(
        mode=mode,
        loader=loader_kind,
        batch_size=args.batch_size,
        num_workers=args.workers,
        order=OrderKind(args.order),
        seed=args.seed,
        pipeline_spec=args.pipeline,
        compute_s_per_batch=args.compute_us / 1e6,
        read_latency_s=args.latency_us / 1e6,
        repetitions=args.reps,
        cache_pages=args.cache_pages,
    )
    report = run_scenario(scenario, dataset_path=args.data, directory=args.dir)
    print(report.to_text())
    if args.out:
        write_report(report, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bbox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("create", help="pack a sample source into a container file")
    p.add_argument("--from", dest="source", required=True,
                   help="synthetic:COUNTxHxWxC or dir:PATH")
    p.add_argument("--out", required=True)
    p.add_argument("--page-size", type=int, default=8 * 1024 * 1024)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--compress-prob", type=float, default=0.0)
    p.add_argument("--compress-codec", choices=["rle", "sub2"], default="rle")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_create)

    p = sub.add_parser("inspect", help="print header and optional row details")
    p.add_argument("path")
    p.add_argument("--sample", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("validate", help="check every structural invariant")
    p.add_argument("path")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("dump", help="stream decoded batches as JSON lines")
    p.add_argument("path")
    p.add_argument("--order", choices=[k.value for k in OrderKind], default="sequential")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--count", type=int, default=0, help="stop after N batches (0 = all)")
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--drop-last", action="store_true")
    p.add_argument("--pipeline", default="", help="e.g. decode|crop:24,24|flip:0.5")
    p.set_defaults(fn=cmd_dump)

    p = sub.add_parser("bench", help="run a bottleneck-decomposition scenario")
    p.add_argument("--mode", required=True)
    p.add_argument("--loader", required=True)
    p.add_argument("--data", default=None, help="container file (container loader)")
    p.add_argument("--dir", default=None, help="raster tree (file-per-sample loader)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--order", choices=[k.value for k in OrderKind], default="sequential")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pipeline", default="decode")
    p.add_argument("--latency-us", type=float, default=0.0)
    p.add_argument("--compute-us", type=float, default=0.0)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--cache-pages", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if e.code is not None else USAGE_ERROR
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except BboxError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
