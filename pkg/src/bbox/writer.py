"""Container writer: encode fields, bump-allocate heap pages, backfill rows.

The writer is two-phase. The sample count is known up front, so the header
and Data Table positions are fixed before any heap byte is written; blob
payloads then stream into pages while the fixed-width rows are backfilled
in memory and flushed at the end, together with the allocation table.

Encoding can run on several workers. Each worker owns a private open page
(no shared bump cursor), so blobs from different workers never interleave
within a page; only the page-id counter is shared. Codec choices are drawn
per sample from (seed, sample index), which makes the encoded payloads
independent of worker count and scheduling.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import rng
from .codecs import CodecId, encode_image
from .errors import InvalidFile, SchemaMismatch, SourceError
from .format import (
    DEFAULT_PAGE_SIZE,
    MIN_PAGE_SIZE,
    DatasetHeader,
    FieldKind,
    ImageCell,
    Region,
    VarBytesCell,
    decode_alloc_table,
    decode_header,
    encode_alloc_table,
    encode_header,
    encode_row,
    header_byte_length,
    row_width,
)


@dataclass
class WriterConfig:
    page_size: int = DEFAULT_PAGE_SIZE
    num_encode_workers: int = 1
    compress_probability: float = 0.0
    compress_codec: CodecId = CodecId.RLE
    seed: int = 0

    def check(self) -> None:
        if self.page_size < MIN_PAGE_SIZE or self.page_size & (self.page_size - 1):
            raise ValueError(f"page_size must be a power of two >= {MIN_PAGE_SIZE}")
        if self.num_encode_workers < 1:
            raise ValueError("num_encode_workers must be >= 1")
        if not 0.0 <= self.compress_probability <= 1.0:
            raise ValueError("compress_probability must be in [0, 1]")


@dataclass
class _Lane:
    page: int | None = None
    cursor: int = 0
    regions: list[Region] = dc_field(default_factory=list)


class PageAllocator:
    """Bump allocation of heap blobs into fixed-size pages.

    Each lane (worker) bump-allocates within its own open page; when a blob
    does not fit the residual, the page is closed (the residual is waste)
    and a fresh page id is taken from the shared counter. Blobs larger than
    one page get a dedicated run of contiguous whole pages.
    """

    def __init__(self, heap_offset: int, page_size: int, num_lanes: int):
        self.heap_offset = heap_offset
        self.page_size = page_size
        self._lanes = [_Lane() for _ in range(num_lanes)]
        self._next_page = 0
        self._lock = threading.Lock()

    def _take_pages(self, count: int) -> int:
        with self._lock:
            first = self._next_page
            self._next_page += count
            return first

    def allocate(self, lane: int, length: int) -> int:
        """Reserve ``length`` bytes for ``lane``; returns the file offset."""
        if length < 1:
            raise ValueError("allocation length must be >= 1")
        st = self._lanes[lane]
        if length > self.page_size:
            pages = -(-length // self.page_size)
            offset = self.heap_offset + self._take_pages(pages) * self.page_size
            st.regions.append(Region(offset, length))
            return offset
        if st.page is None or self.page_size - st.cursor < length:
            st.page = self._take_pages(1)
            st.cursor = 0
        offset = self.heap_offset + st.page * self.page_size + st.cursor
        st.cursor += length
        st.regions.append(Region(offset, length))
        return offset

    @property
    def num_pages(self) -> int:
        return self._next_page

    def finish(self) -> list[Region]:
        """All regions from all lanes, sorted by offset."""
        out: list[Region] = []
        for st in self._lanes:
            out.extend(st.regions)
        out.sort()
        return out


@dataclass
class WriteReport:
    path: str
    num_samples: int
    num_pages: int
    bytes_written: int
    codec_counts: dict[str, int]
    waste_fraction: float


def _image_codec(config: WriterConfig, sample_index: int, draw: rng.Rng) -> CodecId:
    if draw.chance(config.compress_probability):
        return config.compress_codec
    return CodecId.RAW


def write_dataset(source, path, config: WriterConfig | None = None, schema=None) -> WriteReport:
    """Pack ``source`` into a container file at ``path``.

    The source must expose ``len()`` up front; the Data Table is reserved at
    its fixed position and backfilled. On any per-sample failure the write
    aborts, the partial file is removed, and the error propagates.
    """
    config = config or WriterConfig()
    config.check()
    schema = list(schema if schema is not None else source.schema)
    num_samples = len(source)
    rw = row_width(schema)
    header_len = header_byte_length(len(schema))
    data_end = header_len + num_samples * rw
    page = config.page_size
    heap_offset = -(-data_end // page) * page
    if heap_offset <= header_len:
        heap_offset += page

    field_index = {f.name: f for f in schema}
    row_table = bytearray(num_samples * rw)
    allocator = PageAllocator(heap_offset, page, config.num_encode_workers)
    codec_counts = {c.name: 0 for c in CodecId}
    counts_lock = threading.Lock()
    lane_ids = threading.local()
    lane_counter = iter(range(config.num_encode_workers))
    lane_lock = threading.Lock()

    fd = os.open(path, os.O_RDWR | os.O_CREAT | os.O_TRUNC, 0o644)
    try:

        def lane_id() -> int:
            lid = getattr(lane_ids, "id", None)
            if lid is None:
                with lane_lock:
                    lid = next(lane_counter)
                lane_ids.id = lid
            return lid

        def encode_sample(i: int) -> None:
            lane = lane_id()
            try:
                values = source[i]
            except Exception as e:
                raise SourceError(f"sample {i}: {e}") from e
            cells = []
            local_counts: list[CodecId] = []
            draw = rng.Rng(rng.stream_seed(config.seed, rng.TAG_CODEC, i))
            for f in schema:
                try:
                    v = values[f.name]
                except KeyError:
                    raise SchemaMismatch(f"sample {i} missing field {f.name!r}") from None
                if f.kind == FieldKind.INT_SCALAR:
                    cells.append(int(v))
                elif f.kind == FieldKind.FLOAT_SCALAR:
                    cells.append(float(v))
                elif f.kind == FieldKind.FIXED_ARRAY:
                    arr = np.ascontiguousarray(v, dtype=f.array_dtype)
                    if arr.shape != f.array_dims:
                        raise SchemaMismatch(
                            f"sample {i} field {f.name!r}: shape {arr.shape} != {f.array_dims}"
                        )
                    data = arr.tobytes()
                    offset = allocator.allocate(lane, len(data))
                    os.pwrite(fd, data, offset)
                    cells.append(offset)
                elif f.kind == FieldKind.VAR_BYTES:
                    data = bytes(v)
                    if data:
                        offset = allocator.allocate(lane, len(data))
                        os.pwrite(fd, data, offset)
                        cells.append(VarBytesCell(offset, len(data)))
                    else:
                        cells.append(VarBytesCell(0, 0))
                else:
                    pixels = np.asarray(v)
                    codec = _image_codec(config, i, draw)
                    blob = encode_image(
                        pixels, codec, max_height=f.max_height, max_width=f.max_width
                    )
                    if blob.channels != f.channels:
                        raise SchemaMismatch(
                            f"sample {i} field {f.name!r}: {blob.channels} channels != {f.channels}"
                        )
                    offset = allocator.allocate(lane, len(blob.payload))
                    os.pwrite(fd, blob.payload, offset)
                    cells.append(
                        ImageCell(offset, len(blob.payload), blob.height, blob.width,
                                  blob.channels, int(codec))
                    )
                    local_counts.append(codec)
            row_table[i * rw : (i + 1) * rw] = encode_row(schema, cells)
            if local_counts:
                with counts_lock:
                    for c in local_counts:
                        codec_counts[c.name] += 1

        if config.num_encode_workers == 1:
            for i in range(num_samples):
                encode_sample(i)
        else:
            with ThreadPoolExecutor(max_workers=config.num_encode_workers) as pool:
                for _ in pool.map(encode_sample, range(num_samples)):
                    pass

        regions = allocator.finish()
        num_pages = allocator.num_pages
        alloc_table_offset = heap_offset + num_pages * page
        os.ftruncate(fd, alloc_table_offset)
        os.pwrite(fd, encode_alloc_table(regions), alloc_table_offset)
        os.pwrite(fd, bytes(row_table), header_len)
        header = DatasetHeader(
            num_samples=num_samples,
            page_size=page,
            data_table_offset=header_len,
            heap_offset=heap_offset,
            alloc_table_offset=alloc_table_offset,
            fields=tuple(schema),
        )
        os.pwrite(fd, encode_header(header), 0)
        bytes_written = alloc_table_offset + 8 + 16 * len(regions)
        allocated = sum(r.length for r in regions)
        heap_bytes = num_pages * page
        waste = (heap_bytes - allocated) / heap_bytes if heap_bytes else 0.0
    except BaseException:
        os.close(fd)
        try:
            os.unlink(path)
        except OSError:
            pass
        raise
    os.close(fd)
    return WriteReport(
        path=str(path),
        num_samples=num_samples,
        num_pages=num_pages,
        bytes_written=bytes_written,
        codec_counts={k: v for k, v in codec_counts.items() if v},
        waste_fraction=waste,
    )


def read_header(path) -> DatasetHeader:
    """Decode just the header of a container file."""
    from .format import HEADER_PREFIX

    with open(path, "rb") as fh:
        prefix = fh.read(HEADER_PREFIX.size)
        if len(prefix) < HEADER_PREFIX.size:
            raise InvalidFile(f"{path}: file shorter than header prefix")
        num_fields = HEADER_PREFIX.unpack(prefix)[3]
        fh.seek(0)
        return decode_header(fh.read(header_byte_length(num_fields)))


def report_waste(path) -> float:
    """Fraction of heap bytes lost to page padding: (heap - allocated) / heap."""
    try:
        header = read_header(path)
    except InvalidFile:
        raise
    except Exception as e:
        raise InvalidFile(f"{path}: {e}") from e
    with open(path, "rb") as fh:
        fh.seek(header.alloc_table_offset)
        regions = decode_alloc_table(fh.read())
    heap_bytes = header.heap_bytes
    if heap_bytes == 0:
        return 0.0
    return (heap_bytes - sum(r.length for r in regions)) / heap_bytes
