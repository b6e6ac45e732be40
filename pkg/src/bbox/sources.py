"""Sample sources the writer can pack into a container.

Three providers: an in-memory list of field dicts, a ``label/file`` image
directory tree, and a seeded synthetic generator for benchmarks. All three
expose ``schema``, ``len()``, and integer indexing; sample order is part of
the contract (index i always yields the same sample).

Directory trees use a minimal uncompressed raster format: a 12-byte header
of height, width, channels as little-endian u32, followed by row-major u8
pixels. Extension: ``.raw``.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from . import rng
from .errors import SchemaMismatch, SourceError
from .format import FieldDescriptor, image_field, int_field

RASTER_HEADER = struct.Struct("<III")
RASTER_EXT = ".raw"


def write_raster(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3:
        raise SchemaMismatch("raster pixels must be HxWxC")
    h, w, c = pixels.shape
    with open(path, "wb") as fh:
        fh.write(RASTER_HEADER.pack(h, w, c))
        fh.write(np.ascontiguousarray(pixels).tobytes())


def read_raster(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(RASTER_HEADER.size)
        if len(head) < RASTER_HEADER.size:
            raise SourceError(f"{path}: truncated raster header")
        h, w, c = RASTER_HEADER.unpack(head)
        data = fh.read(h * w * c)
    if len(data) != h * w * c:
        raise SourceError(f"{path}: raster payload truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, c).copy()


class InMemorySource:
    """Samples held as a list of {field name: value} dicts."""

    def __init__(self, schema: list[FieldDescriptor], samples):
        self.schema = list(schema)
        self._samples = list(samples)

    def __len__(self) -> int:
        return len(self._samples)

    def __getitem__(self, i: int) -> dict:
        return self._samples[i]


class SyntheticImageSource:
    """Seeded image+label generator with deterministic, RLE-friendly content.

    Sample i is fully determined by (seed, i): the label and a base byte are
    drawn from a derived stream, then pixel (y, x, ch) equals
    ``(base + 11*y + 3*(x >> 2) + 7*ch) & 255``. The 4-pixel horizontal
    plateaus give the RLE codec something to compress.
    """

    def __init__(
        self,
        num_samples: int,
        height: int = 32,
        width: int = 32,
        channels: int = 3,
        seed: int = 0,
        num_classes: int = 10,
    ):
        self.num_samples = num_samples
        self.height, self.width, self.channels = height, width, channels
        self.seed = seed
        self.num_classes = num_classes
        self.schema = [image_field("image", height, width, channels), int_field("label")]
        y = 11 * np.arange(height, dtype=np.int64)[:, None, None]
        x = 3 * (np.arange(width, dtype=np.int64) >> 2)[None, :, None]
        ch = 7 * np.arange(channels, dtype=np.int64)[None, None, :]
        self._pattern = y + x + ch

    def __len__(self) -> int:
        return self.num_samples

    def label_of(self, i: int) -> int:
        r = rng.Rng(rng.stream_seed(self.seed, rng.TAG_SYNTH, i))
        return r.below(self.num_classes)

    def __getitem__(self, i: int) -> dict:
        if not 0 <= i < self.num_samples:
            raise IndexError(i)
        r = rng.Rng(rng.stream_seed(self.seed, rng.TAG_SYNTH, i))
        label = r.below(self.num_classes)
        base = r.below(256)
        image = ((self._pattern + base) & 0xFF).astype(np.uint8)
        return {"image": image, "label": label}


class DirectoryImageSource:
    """``root/<label>/<file>.raw`` trees, one sample per raster file.

    Directories are enumerated in sorted order and mapped to labels
    0..K-1; files sort within their directory. A preliminary scan of the
    12-byte headers fixes the image field's max dims and channel count.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.entries: list[tuple[Path, int]] = []
        labels = sorted(p.name for p in self.root.iterdir() if p.is_dir())
        self.label_names = labels
        max_h = max_w = 0
        channels = None
        for label_idx, name in enumerate(labels):
            for f in sorted((self.root / name).glob(f"*{RASTER_EXT}")):
                with open(f, "rb") as fh:
                    head = fh.read(RASTER_HEADER.size)
                if len(head) < RASTER_HEADER.size:
                    raise SourceError(f"{f}: truncated raster header")
                h, w, c = RASTER_HEADER.unpack(head)
                if channels is None:
                    channels = c
                elif channels != c:
                    raise SourceError(f"{f}: mixed channel counts ({c} vs {channels})")
                max_h, max_w = max(max_h, h), max(max_w, w)
                self.entries.append((f, label_idx))
        if not self.entries:
            raise SourceError(f"{self.root}: no {RASTER_EXT} files found")
        self.schema = [image_field("image", max_h, max_w, channels), int_field("label")]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i: int) -> dict:
        path, label = self.entries[i]
        return {"image": read_raster(path), "label": label}


def materialize_to_directory(source: SyntheticImageSource, root) -> Path:
    """Write a synthetic source out as a raster tree (file-per-sample layout)."""
    root = Path(root)
    digits = max(len(str(max(len(source) - 1, 0))), 1)
    for i in range(len(source)):
        sample = source[i]
        d = root / str(sample["label"])
        os.makedirs(d, exist_ok=True)
        write_raster(d / f"{i:0{digits}d}{RASTER_EXT}", sample["image"])
    return root
