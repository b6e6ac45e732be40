"""Pluggable image blob codecs.

Two lossless codecs (RAW, RLE) and one lossy codec (SUBSAMPLE2) cover the
interesting storage behaviors: fixed-size payloads, input-dependent
payload sizes, and reduced-footprint lossy storage. The codec id is a
single byte carried in the IMAGE row cell.

Decoders write into caller-owned buffers and allocate nothing themselves;
batch engines rely on that to keep steady-state execution allocation-free.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptPayload, DimsExceedMax, SchemaMismatch

RLE_RUN = struct.Struct("<IB")  # (count u32, value u8); runs are never empty


class CodecId(enum.IntEnum):
    RAW = 0
    RLE = 1
    SUBSAMPLE2 = 2


@dataclass(frozen=True)
class ImageBlob:
    height: int
    width: int
    channels: int
    codec: CodecId
    payload: bytes


def _check_pixels(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.dtype != np.uint8 or pixels.ndim != 3:
        raise SchemaMismatch(f"expected a u8 HxWxC array, got {pixels.dtype} ndim={pixels.ndim}")
    if 0 in pixels.shape:
        raise SchemaMismatch("image dims must all be >= 1")
    return np.ascontiguousarray(pixels)


def subsampled_dims(height: int, width: int) -> tuple[int, int]:
    return (height + 1) // 2, (width + 1) // 2


def decoded_nbytes(blob: ImageBlob) -> int:
    return blob.height * blob.width * blob.channels


def encode_rle(flat: np.ndarray) -> bytes:
    """Run-length encode a flat u8 array as (count u32, value u8) pairs."""
    if flat.size == 0:
        return b""
    changes = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate(([0], changes))
    ends = np.concatenate((changes, [flat.size]))
    runs = np.zeros((len(starts), 5), dtype=np.uint8)
    runs[:, :4] = (ends - starts).astype("<u4").view(np.uint8).reshape(-1, 4)
    runs[:, 4] = flat[starts]
    return runs.tobytes()


def encode_image(
    pixels: np.ndarray,
    codec: CodecId,
    *,
    max_height: int | None = None,
    max_width: int | None = None,
) -> ImageBlob:
    pixels = _check_pixels(pixels)
    h, w, c = pixels.shape
    if (max_height is not None and h > max_height) or (max_width is not None and w > max_width):
        raise DimsExceedMax(f"image {h}x{w} exceeds descriptor max {max_height}x{max_width}")
    codec = CodecId(codec)
    if codec == CodecId.RAW:
        payload = pixels.tobytes()
    elif codec == CodecId.RLE:
        payload = encode_rle(pixels.reshape(-1))
    else:
        payload = np.ascontiguousarray(pixels[0::2, 0::2, :]).tobytes()
    return ImageBlob(h, w, c, codec, payload)


def decode_image(blob: ImageBlob, out: np.ndarray) -> None:
    """Decode ``blob`` into a pre-allocated u8 buffer of exactly HxWxC bytes."""
    h, w, c = blob.height, blob.width, blob.channels
    if out.shape != (h, w, c) or out.dtype != np.uint8:
        raise SchemaMismatch(f"output buffer must be u8 ({h}, {w}, {c}), got {out.dtype} {out.shape}")
    n = h * w * c
    if blob.codec == CodecId.RAW:
        if len(blob.payload) != n:
            raise CorruptPayload(f"raw payload is {len(blob.payload)} bytes, expected {n}")
        out[...] = np.frombuffer(blob.payload, dtype=np.uint8).reshape(h, w, c)
    elif blob.codec == CodecId.RLE:
        if len(blob.payload) % RLE_RUN.size:
            raise CorruptPayload("rle payload length is not a multiple of 5")
        # flatiter slices write through even when ``out`` is a strided subview
        flat = out.flat
        pos = 0
        for off in range(0, len(blob.payload), RLE_RUN.size):
            count, value = RLE_RUN.unpack_from(blob.payload, off)
            if count == 0 or pos + count > n:
                raise CorruptPayload(f"rle runs sum past {n} bytes")
            flat[pos : pos + count] = value
            pos += count
        if pos != n:
            raise CorruptPayload(f"rle runs sum to {pos} bytes, expected {n}")
    elif blob.codec == CodecId.SUBSAMPLE2:
        sh, sw = subsampled_dims(h, w)
        if len(blob.payload) != sh * sw * c:
            raise CorruptPayload(
                f"subsampled payload is {len(blob.payload)} bytes, expected {sh * sw * c}"
            )
        sub = np.frombuffer(blob.payload, dtype=np.uint8).reshape(sh, sw, c)
        # Nearest-neighbor re-expansion: each 2x2 block takes its top-left pixel.
        out[0::2, 0::2] = sub
        out[0::2, 1::2] = sub[:, : w // 2]
        out[1::2, 0::2] = sub[: h // 2, :]
        out[1::2, 1::2] = sub[: h // 2, : w // 2]
    else:
        raise CorruptPayload(f"unknown codec {blob.codec}")
