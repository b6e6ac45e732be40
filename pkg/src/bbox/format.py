"""Bit-exact layout of the single-file dataset container.

Every integer in the file is little-endian. A file consists of four
sections, in this order:

    Header        fixed 56-byte prefix + one 124-byte descriptor per field
    Data Table    ``num_samples`` fixed-width rows, one cell per field
    Heap Storage  fixed-size pages holding blob payloads
    Alloc Table   u64 count + (offset u64, length u64) per allocated region

Header prefix (56 bytes):

    off  size  field
      0     8  magic, the ASCII bytes "FASTDS01"
      8     4  format_version (== 1)
     12     8  num_samples
     20     2  num_fields
     22     8  page_size (power of two, >= 64 KiB)
     30     8  data_table_offset (== header byte length)
     38     8  heap_offset (page_size aligned)
     46     8  alloc_table_offset
     54     2  pad

Each field descriptor occupies exactly 124 bytes: 64-byte zero-padded
name, 1-byte kind, 48-byte kind parameter union, u32 row cell width,
7 pad bytes.

Row cells are fixed width per kind, so row ``i`` lives at
``data_table_offset + i * row_width`` and is addressable in O(1):

    INT_SCALAR    8   i64 value
    FLOAT_SCALAR  8   f64 value
    FIXED_ARRAY   8   u64 heap offset (length derived from dtype x dims)
    VAR_BYTES    16   u64 heap offset, u64 length (0, 0 encodes empty)
    IMAGE        24   u64 offset, u64 length, u16 height, u16 width,
                      u8 channels, u8 codec, 2 pad

Heap offsets are absolute file offsets; because the heap starts
page-aligned, the page index of an offset is exact integer arithmetic:
``(offset - heap_offset) // page_size``. A region never crosses a page
boundary unless it is larger than one page, in which case it starts
page-aligned and owns every page it touches.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from .errors import BadMagic, InvalidFile, InvalidHeader, SchemaMismatch, UnsupportedVersion

MAGIC = b"FASTDS01"
FORMAT_VERSION = 1
MIN_PAGE_SIZE = 65536
DEFAULT_PAGE_SIZE = 8 * 1024 * 1024
MAX_NAME_BYTES = 63

HEADER_PREFIX = struct.Struct("<8sIQHQQQQ2x")  # 56 bytes
DESCRIPTOR = struct.Struct("<64sB48sI7x")  # 124 bytes
ARRAY_PARAMS = struct.Struct("<BB2x4I")  # within the 48-byte union
IMAGE_PARAMS = struct.Struct("<HHB")

CELL_INT = struct.Struct("<q")
CELL_FLOAT = struct.Struct("<d")
CELL_ARRAY = struct.Struct("<Q")
CELL_VAR_BYTES = struct.Struct("<QQ")
CELL_IMAGE = struct.Struct("<QQHHBB2x")

ALLOC_COUNT = struct.Struct("<Q")
ALLOC_REGION = struct.Struct("<QQ")


class FieldKind(enum.IntEnum):
    INT_SCALAR = 0
    FLOAT_SCALAR = 1
    FIXED_ARRAY = 2
    VAR_BYTES = 3
    IMAGE = 4


ARRAY_DTYPES: dict[int, np.dtype] = {
    0: np.dtype("<u1"),
    1: np.dtype("<i8"),
    2: np.dtype("<f4"),
    3: np.dtype("<f8"),
}
ARRAY_DTYPE_CODES = {dt: code for code, dt in ARRAY_DTYPES.items()}

_CELL_WIDTHS = {
    FieldKind.INT_SCALAR: 8,
    FieldKind.FLOAT_SCALAR: 8,
    FieldKind.FIXED_ARRAY: 8,
    FieldKind.VAR_BYTES: 16,
    FieldKind.IMAGE: 24,
}


class VarBytesCell(NamedTuple):
    offset: int
    length: int


class ImageCell(NamedTuple):
    offset: int
    length: int
    height: int
    width: int
    channels: int
    codec: int


class Region(NamedTuple):
    offset: int
    length: int


@dataclass(frozen=True)
class FieldDescriptor:
    name: str
    kind: FieldKind
    array_dtype_code: int = 0
    array_dims: tuple[int, ...] = ()
    max_height: int = 0
    max_width: int = 0
    channels: int = 0

    @property
    def row_cell_width(self) -> int:
        return _CELL_WIDTHS[self.kind]

    @property
    def array_dtype(self) -> np.dtype:
        return ARRAY_DTYPES[self.array_dtype_code]

    @property
    def array_nbytes(self) -> int:
        n = self.array_dtype.itemsize
        for d in self.array_dims:
            n *= d
        return n

    def check(self) -> None:
        name_bytes = self.name.encode("utf-8")
        if not name_bytes or len(name_bytes) > MAX_NAME_BYTES:
            raise InvalidHeader(f"field name must be 1..{MAX_NAME_BYTES} bytes: {self.name!r}")
        if self.kind == FieldKind.FIXED_ARRAY:
            if self.array_dtype_code not in ARRAY_DTYPES:
                raise InvalidHeader(f"unknown array dtype code {self.array_dtype_code}")
            if not 1 <= len(self.array_dims) <= 4:
                raise InvalidHeader("fixed arrays support 1..4 dims")
            if any(d < 1 or d > 0xFFFFFFFF for d in self.array_dims):
                raise InvalidHeader("array dims must be positive u32 values")
        if self.kind == FieldKind.IMAGE:
            if not (1 <= self.max_height <= 0xFFFF and 1 <= self.max_width <= 0xFFFF):
                raise InvalidHeader("image max dims must be in 1..65535")
            if not 1 <= self.channels <= 255:
                raise InvalidHeader("image channels must be in 1..255")


def int_field(name: str) -> FieldDescriptor:
    return FieldDescriptor(name, FieldKind.INT_SCALAR)


def float_field(name: str) -> FieldDescriptor:
    return FieldDescriptor(name, FieldKind.FLOAT_SCALAR)


def array_field(name: str, dtype, dims: tuple[int, ...]) -> FieldDescriptor:
    code = ARRAY_DTYPE_CODES[np.dtype(dtype).newbyteorder("<")]
    return FieldDescriptor(name, FieldKind.FIXED_ARRAY, array_dtype_code=code, array_dims=tuple(dims))


def bytes_field(name: str) -> FieldDescriptor:
    return FieldDescriptor(name, FieldKind.VAR_BYTES)


def image_field(name: str, max_height: int, max_width: int, channels: int) -> FieldDescriptor:
    return FieldDescriptor(
        name, FieldKind.IMAGE, max_height=max_height, max_width=max_width, channels=channels
    )


@dataclass(frozen=True)
class DatasetHeader:
    num_samples: int
    page_size: int
    data_table_offset: int
    heap_offset: int
    alloc_table_offset: int
    fields: tuple[FieldDescriptor, ...] = dc_field(default=())
    format_version: int = FORMAT_VERSION

    @property
    def num_fields(self) -> int:
        return len(self.fields)

    @property
    def row_width(self) -> int:
        return row_width(self.fields)

    @property
    def byte_length(self) -> int:
        return header_byte_length(len(self.fields))

    @property
    def heap_bytes(self) -> int:
        return self.alloc_table_offset - self.heap_offset

    @property
    def num_pages(self) -> int:
        return self.heap_bytes // self.page_size

    def check(self) -> None:
        if self.format_version != FORMAT_VERSION:
            raise InvalidHeader(f"format_version must be {FORMAT_VERSION}")
        if not self.fields:
            raise InvalidHeader("at least one field is required")
        if len(self.fields) > 0xFFFF:
            raise InvalidHeader("too many fields")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise InvalidHeader("field names must be unique")
        for f in self.fields:
            f.check()
        if self.page_size < MIN_PAGE_SIZE or self.page_size & (self.page_size - 1):
            raise InvalidHeader(f"page_size must be a power of two >= {MIN_PAGE_SIZE}")
        if self.num_samples < 0:
            raise InvalidHeader("negative sample count")
        if self.data_table_offset != self.byte_length:
            raise InvalidHeader("data_table_offset must equal the header byte length")
        if self.heap_offset % self.page_size:
            raise InvalidHeader("heap_offset must be page aligned")
        if not self.data_table_offset < self.heap_offset <= self.alloc_table_offset:
            raise InvalidHeader("sections must be ordered header < heap <= alloc table")


def header_byte_length(num_fields: int) -> int:
    return HEADER_PREFIX.size + DESCRIPTOR.size * num_fields


def row_width(schema) -> int:
    return sum(f.row_cell_width for f in schema)


def _encode_kind_params(f: FieldDescriptor) -> bytes:
    buf = bytearray(48)
    if f.kind == FieldKind.FIXED_ARRAY:
        dims = list(f.array_dims) + [0] * (4 - len(f.array_dims))
        ARRAY_PARAMS.pack_into(buf, 0, f.array_dtype_code, len(f.array_dims), *dims)
    elif f.kind == FieldKind.IMAGE:
        IMAGE_PARAMS.pack_into(buf, 0, f.max_height, f.max_width, f.channels)
    return bytes(buf)


def _decode_kind_params(kind: FieldKind, raw: bytes) -> dict:
    if kind == FieldKind.FIXED_ARRAY:
        code, ndims, d0, d1, d2, d3 = ARRAY_PARAMS.unpack_from(raw, 0)
        if code not in ARRAY_DTYPES:
            raise InvalidHeader(f"unknown array dtype code {code}")
        if not 1 <= ndims <= 4:
            raise InvalidHeader(f"array ndims out of range: {ndims}")
        return {"array_dtype_code": code, "array_dims": tuple((d0, d1, d2, d3)[:ndims])}
    if kind == FieldKind.IMAGE:
        mh, mw, ch = IMAGE_PARAMS.unpack_from(raw, 0)
        return {"max_height": mh, "max_width": mw, "channels": ch}
    return {}


def encode_header(header: DatasetHeader) -> bytes:
    header.check()
    out = bytearray(header.byte_length)
    HEADER_PREFIX.pack_into(
        out,
        0,
        MAGIC,
        header.format_version,
        header.num_samples,
        header.num_fields,
        header.page_size,
        header.data_table_offset,
        header.heap_offset,
        header.alloc_table_offset,
    )
    pos = HEADER_PREFIX.size
    for f in header.fields:
        DESCRIPTOR.pack_into(
            out, pos, f.name.encode("utf-8"), int(f.kind), _encode_kind_params(f), f.row_cell_width
        )
        pos += DESCRIPTOR.size
    return bytes(out)


def decode_header(buf: bytes) -> DatasetHeader:
    if len(buf) < HEADER_PREFIX.size:
        raise InvalidHeader(f"buffer too short for header prefix: {len(buf)} bytes")
    magic, version, num_samples, num_fields, page_size, dto, ho, ato = HEADER_PREFIX.unpack_from(
        buf, 0
    )
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported version {version}")
    total = header_byte_length(num_fields)
    if len(buf) < total:
        raise InvalidHeader(f"buffer too short for {num_fields} descriptors")
    fields = []
    pos = HEADER_PREFIX.size
    for _ in range(num_fields):
        raw_name, kind_byte, params, cell_width = DESCRIPTOR.unpack_from(buf, pos)
        pos += DESCRIPTOR.size
        try:
            kind = FieldKind(kind_byte)
        except ValueError:
            raise InvalidHeader(f"unknown field kind {kind_byte}") from None
        name = raw_name.rstrip(b"\x00").decode("utf-8")
        f = FieldDescriptor(name, kind, **_decode_kind_params(kind, params))
        if cell_width != f.row_cell_width:
            raise InvalidHeader(
                f"field {name!r}: stored cell width {cell_width} != {f.row_cell_width}"
            )
        fields.append(f)
    header = DatasetHeader(
        num_samples=num_samples,
        page_size=page_size,
        data_table_offset=dto,
        heap_offset=ho,
        alloc_table_offset=ato,
        fields=tuple(fields),
        format_version=version,
    )
    header.check()
    return header


def encode_row(schema, values) -> bytes:
    """Pack one row. ``values`` holds one cell per field, in schema order."""
    if len(values) != len(schema):
        raise SchemaMismatch(f"expected {len(schema)} cells, got {len(values)}")
    out = bytearray(row_width(schema))
    pos = 0
    for f, v in zip(schema, values):
        try:
            if f.kind == FieldKind.INT_SCALAR:
                CELL_INT.pack_into(out, pos, int(v))
            elif f.kind == FieldKind.FLOAT_SCALAR:
                CELL_FLOAT.pack_into(out, pos, float(v))
            elif f.kind == FieldKind.FIXED_ARRAY:
                CELL_ARRAY.pack_into(out, pos, int(v))
            elif f.kind == FieldKind.VAR_BYTES:
                CELL_VAR_BYTES.pack_into(out, pos, v.offset, v.length)
            else:
                CELL_IMAGE.pack_into(
                    out, pos, v.offset, v.length, v.height, v.width, v.channels, v.codec
                )
        except (struct.error, TypeError, AttributeError) as e:
            raise SchemaMismatch(f"field {f.name!r}: cell {v!r} does not match {f.kind.name}") from e
        pos += f.row_cell_width
    return bytes(out)


def decode_row(schema, buf) -> tuple:
    if len(buf) < row_width(schema):
        raise SchemaMismatch(f"row buffer too short: {len(buf)} < {row_width(schema)}")
    cells = []
    pos = 0
    for f in schema:
        if f.kind == FieldKind.INT_SCALAR:
            cells.append(CELL_INT.unpack_from(buf, pos)[0])
        elif f.kind == FieldKind.FLOAT_SCALAR:
            cells.append(CELL_FLOAT.unpack_from(buf, pos)[0])
        elif f.kind == FieldKind.FIXED_ARRAY:
            cells.append(CELL_ARRAY.unpack_from(buf, pos)[0])
        elif f.kind == FieldKind.VAR_BYTES:
            cells.append(VarBytesCell(*CELL_VAR_BYTES.unpack_from(buf, pos)))
        else:
            cells.append(ImageCell(*CELL_IMAGE.unpack_from(buf, pos)))
        pos += f.row_cell_width
    return tuple(cells)


def encode_alloc_table(regions) -> bytes:
    out = bytearray(ALLOC_COUNT.size + ALLOC_REGION.size * len(regions))
    ALLOC_COUNT.pack_into(out, 0, len(regions))
    pos = ALLOC_COUNT.size
    for r in regions:
        ALLOC_REGION.pack_into(out, pos, r.offset, r.length)
        pos += ALLOC_REGION.size
    return bytes(out)


def decode_alloc_table(buf) -> list[Region]:
    if len(buf) < ALLOC_COUNT.size:
        raise InvalidFile("allocation table truncated")
    (count,) = ALLOC_COUNT.unpack_from(buf, 0)
    need = ALLOC_COUNT.size + ALLOC_REGION.size * count
    if len(buf) < need:
        raise InvalidFile(f"allocation table truncated: {len(buf)} < {need}")
    regions = []
    pos = ALLOC_COUNT.size
    for _ in range(count):
        regions.append(Region(*ALLOC_REGION.unpack_from(buf, pos)))
        pos += ALLOC_REGION.size
    return regions


@dataclass
class ValidationReport:
    path: str
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return f"{self.path}: valid"
        lines = [f"{self.path}: {len(self.violations)} violation(s)"]
        lines += [f"  - {v}" for v in self.violations]
        return "\n".join(lines)


def check_alloc_regions(regions, header: DatasetHeader) -> list[str]:
    """Structural checks on a decoded allocation table."""
    bad = []
    page = header.page_size
    prev_end = None
    prev = None
    for r in regions:
        if r.length == 0:
            bad.append(f"empty region at offset {r.offset}")
            continue
        if r.offset < header.heap_offset or r.offset + r.length > header.alloc_table_offset:
            bad.append(f"region ({r.offset}, {r.length}) outside heap bounds")
        if prev_end is not None and r.offset < prev_end:
            bad.append(f"overlapping regions: ({prev.offset}, {prev.length}) and ({r.offset}, {r.length})")
        if prev is not None and r.offset < prev.offset:
            bad.append(f"regions not sorted at offset {r.offset}")
        rel = r.offset - header.heap_offset
        if r.length <= page:
            if rel % page + r.length > page:
                bad.append(f"region ({r.offset}, {r.length}) crosses a page boundary")
        elif rel % page:
            bad.append(f"oversized region ({r.offset}, {r.length}) not page aligned")
        prev_end = r.offset + r.length
        prev = r
    # Oversized regions own whole pages: nothing else may start inside their span.
    for i, r in enumerate(regions):
        if r.length > page:
            span_end = r.offset + -(-r.length // page) * page
            if i + 1 < len(regions) and regions[i + 1].offset < span_end:
                bad.append(f"oversized region ({r.offset}, {r.length}) shares a page")
    return bad


def _find_region(regions, offset: int, length: int) -> bool:
    """True when [offset, offset+length) lies inside one allocated region."""
    lo, hi = 0, len(regions)
    while lo < hi:
        mid = (lo + hi) // 2
        if regions[mid].offset <= offset:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return False
    r = regions[lo - 1]
    return offset >= r.offset and offset + length <= r.offset + r.length


def validate_file(path) -> ValidationReport:
    """Check every structural invariant of a container file.

    Returns a report; an empty violation list means the file is valid.
    I/O errors (missing file, short reads) raise OSError.
    """
    violations: list[str] = []
    file_len = os.path.getsize(path)
    with open(path, "rb") as fh:
        prefix = fh.read(HEADER_PREFIX.size)
        if len(prefix) < HEADER_PREFIX.size:
            return ValidationReport(str(path), ["file shorter than header prefix"])
        try:
            magic, version, num_samples, num_fields, *_ = HEADER_PREFIX.unpack(prefix)
            if magic != MAGIC:
                return ValidationReport(str(path), [f"bad magic {magic!r}"])
            if version != FORMAT_VERSION:
                return ValidationReport(str(path), [f"unsupported version {version}"])
            fh.seek(0)
            header = decode_header(fh.read(header_byte_length(num_fields)))
        except InvalidHeader as e:
            return ValidationReport(str(path), [f"invalid header: {e}"])

        rw = header.row_width
        table_end = header.data_table_offset + header.num_samples * rw
        if table_end > header.heap_offset:
            violations.append("data table extends past heap_offset")
        if header.alloc_table_offset > file_len:
            violations.append("alloc_table_offset past end of file")
            return ValidationReport(str(path), violations)
        if (header.alloc_table_offset - header.heap_offset) % header.page_size:
            violations.append("heap length is not a whole number of pages")

        fh.seek(header.alloc_table_offset)
        try:
            regions = decode_alloc_table(fh.read(file_len - header.alloc_table_offset))
        except InvalidFile as e:
            violations.append(str(e))
            return ValidationReport(str(path), violations)
        violations += check_alloc_regions(regions, header)

        if table_end <= header.heap_offset:
            fh.seek(header.data_table_offset)
            table = fh.read(header.num_samples * rw)
            for i in range(header.num_samples):
                cells = decode_row(header.fields, table[i * rw : (i + 1) * rw])
                for f, cell in zip(header.fields, cells):
                    if f.kind == FieldKind.FIXED_ARRAY:
                        if not _find_region(regions, cell, f.array_nbytes):
                            violations.append(
                                f"dangling heap reference (sample {i}, field {f.name!r})"
                            )
                    elif f.kind == FieldKind.VAR_BYTES:
                        if cell.length and not _find_region(regions, cell.offset, cell.length):
                            violations.append(
                                f"dangling heap reference (sample {i}, field {f.name!r})"
                            )
                    elif f.kind == FieldKind.IMAGE:
                        if cell.height > f.max_height or cell.width > f.max_width:
                            violations.append(
                                f"image dims exceed descriptor max (sample {i}, field {f.name!r})"
                            )
                        if cell.channels != f.channels:
                            violations.append(
                                f"image channel mismatch (sample {i}, field {f.name!r})"
                            )
                        if cell.codec > 2:
                            violations.append(f"unknown codec {cell.codec} (sample {i})")
                        if cell.length and not _find_region(regions, cell.offset, cell.length):
                            violations.append(
                                f"dangling heap reference (sample {i}, field {f.name!r})"
                            )
    return ValidationReport(str(path), violations)
