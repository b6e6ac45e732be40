"""Staged per-sample transform engine with one-shot memory planning.

Transforms fall into two categories. FUSIBLE transforms are compiled
kernels: they declare their output spec up front, write only into their
declared output view, allocate nothing, and hold no lock, so a worker can
run a whole stage of them back-to-back on one sample. OPAQUE transforms
are arbitrary callables; they run batch-level, once per sample, in
pipeline order.

Planning groups consecutive same-category transforms into stages and lays
out one arena holding every intermediate buffer for every ring slot, so
after the plan is built the steady state performs no buffer allocation at
all. ``ALLOC_COUNTER`` counts every buffer the engine allocates; tests
pin it flat across an epoch.

The batch ring is the only producer/consumer synchronization point: a
fixed circle of slots through which filled batches travel, each side
pausing when it catches up with the other.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass

import numpy as np

from .codecs import CodecId, ImageBlob, decode_image
from .errors import ShutdownError, SpecMismatch
from .format import FieldDescriptor, FieldKind
from .rng import Rng

ALLOC_COUNTER = 0
ARENA_ALIGN = 64


def _alloc_buffer(nbytes: int) -> np.ndarray:
    """The engine's only buffer-allocation path; counted for the tests."""
    global ALLOC_COUNTER
    ALLOC_COUNTER += 1
    return np.empty(nbytes, dtype=np.uint8)


class Category(enum.Enum):
    FUSIBLE = "fusible"
    OPAQUE = "opaque"


ArraySpec = tuple[tuple[int, ...], np.dtype]


@dataclass(frozen=True)
class ImageSourceSpec:
    """Input spec of a chain that starts from an IMAGE field."""

    max_height: int
    max_width: int
    channels: int


@dataclass(frozen=True)
class ArraySourceSpec:
    shape: tuple[int, ...]
    dtype: np.dtype


class Transform:
    """One pipeline element; subclasses implement spec + apply."""

    name = "transform"
    category = Category.FUSIBLE

    def output_spec(self, input_spec) -> ArraySpec:
        raise NotImplementedError

    def prepare(self, input_spec, output_spec) -> None:
        """Hook for precomputing lookup tables; runs once at plan time."""

    def apply(self, inp: np.ndarray, out: np.ndarray, rng: Rng) -> None:
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class SourceTransform(Transform):
    """First chain element: consumes raw sample bytes instead of an array."""

    def apply_source(self, ref, out: np.ndarray, rng: Rng) -> None:
        raise NotImplementedError


class Decode(SourceTransform):
    """Codec dispatch into the slot buffer; pads short images with zeros."""

    name = "decode"

    def output_spec(self, input_spec) -> ArraySpec:
        if not isinstance(input_spec, ImageSourceSpec):
            raise SpecMismatch(f"decode expects an image field, got {input_spec!r}")
        shape = (input_spec.max_height, input_spec.max_width, input_spec.channels)
        return shape, np.dtype(np.uint8)

    def apply_source(self, ref, out: np.ndarray, rng: Rng) -> None:
        cell = ref[0]
        payload = ref[1]
        h, w, c = cell.height, cell.width, cell.channels
        blob = ImageBlob(h, w, c, CodecId(cell.codec), payload)
        decode_image(blob, out[:h, :w, :])
        if h < out.shape[0]:
            out[h:, :, :] = 0
        if w < out.shape[1]:
            out[:h, w:, :] = 0


class ArrayRead(SourceTransform):
    """Copies a fixed array field's heap bytes into the slot buffer."""

    name = "array-read"

    def output_spec(self, input_spec) -> ArraySpec:
        if not isinstance(input_spec, ArraySourceSpec):
            raise SpecMismatch(f"array-read expects an array field, got {input_spec!r}")
        return input_spec.shape, input_spec.dtype

    def apply_source(self, ref, out: np.ndarray, rng: Rng) -> None:
        out.reshape(-1).view(np.uint8)[:] = ref


class ToFloat(Transform):
    name = "float"

    def output_spec(self, input_spec: ArraySpec) -> ArraySpec:
        shape, _ = _array_spec(input_spec, self.name)
        return shape, np.dtype(np.float32)

    def apply(self, inp, out, rng) -> None:
        np.copyto(out, inp, casting="unsafe")


class Normalize(Transform):
    """(x - mean) / std in strict float32, one subtract and one divide."""

    name = "normalize"

    def __init__(self, mean: float, std: float):
        if std == 0:
            raise SpecMismatch("normalize std must be nonzero")
        self.mean32 = np.float32(mean)
        self.std32 = np.float32(std)

    def output_spec(self, input_spec: ArraySpec) -> ArraySpec:
        shape, _ = _array_spec(input_spec, self.name)
        return shape, np.dtype(np.float32)

    def apply(self, inp, out, rng) -> None:
        np.subtract(inp, self.mean32, out=out, dtype=np.float32, casting="unsafe")
        np.divide(out, self.std32, out=out)


class RandomFlip(Transform):
    """Horizontal flip with probability p (one draw; p of 0 or 1 draws nothing)."""

    name = "flip"

    def __init__(self, p: float = 0.5):
        self.p = p

    def output_spec(self, input_spec: ArraySpec) -> ArraySpec:
        shape, dtype = _array_spec(input_spec, self.name)
        if len(shape) != 3:
            raise SpecMismatch("flip expects HxWxC input")
        return shape, dtype

    def apply(self, inp, out, rng) -> None:
        if rng.chance(self.p):
            out[...] = inp[:, ::-1, :]
        else:
            out[...] = inp


class RandomCrop(Transform):
    """Uniform crop to (h, w); draws top then left."""

    name = "crop"

    def __init__(self, height: int, width: int):
        self.h = height
        self.w = width

    def output_spec(self, input_spec: ArraySpec) -> ArraySpec:
        shape, dtype = _array_spec(input_spec, self.name)
        if len(shape) != 3 or shape[0] < self.h or shape[1] < self.w:
            raise SpecMismatch(f"cannot crop {shape} to {self.h}x{self.w}")
        return (self.h, self.w, shape[2]), dtype

    def apply(self, inp, out, rng) -> None:
        top = rng.below(inp.shape[0] - self.h + 1)
        left = rng.below(inp.shape[1] - self.w + 1)
        out[...] = inp[top : top + self.h, left : left + self.w]


class Resize(Transform):
    """Nearest-neighbor resize; src index = dst * src_extent // dst_extent."""

    name = "resize"

    def __init__(self, height: int, width: int):
        self.h = height
        self.w = width
        self._lut: np.ndarray | None = None

    def output_spec(self, input_spec: ArraySpec) -> ArraySpec:
        shape, dtype = _array_spec(input_spec, self.name)
        if len(shape) != 3:
            raise SpecMismatch("resize expects HxWxC input")
        return (self.h, self.w, shape[2]), dtype

    def prepare(self, input_spec, output_spec) -> None:
        (H, W, C), _ = input_spec
        ys = (np.arange(self.h, dtype=np.int64) * H) // self.h
        xs = (np.arange(self.w, dtype=np.int64) * W) // self.w
        ks = np.arange(C, dtype=np.int64)
        self._lut = (
            (ys[:, None, None] * W + xs[None, :, None]) * C + ks[None, None, :]
        ).reshape(-1)

    def apply(self, inp, out, rng) -> None:
        np.take(inp.reshape(-1), self._lut, out=out.reshape(-1))


class Opaque(Transform):
    """Arbitrary per-sample callable; runs batch-level, outside fused stages."""

    category = Category.OPAQUE

    def __init__(self, fn, name: str = "opaque", spec_fn=None):
        self._fn = fn
        self.name = name
        self._spec_fn = spec_fn

    def output_spec(self, input_spec: ArraySpec) -> ArraySpec:
        if self._spec_fn is not None:
            return self._spec_fn(input_spec)
        return _array_spec(input_spec, self.name)

    def apply(self, inp, out, rng) -> None:
        self._fn(inp, out, rng)


def _array_spec(input_spec, who: str) -> ArraySpec:
    if isinstance(input_spec, (ImageSourceSpec, ArraySourceSpec)):
        raise SpecMismatch(f"{who} cannot be first in a chain; start with a source transform")
    shape, dtype = input_spec
    return tuple(shape), np.dtype(dtype)


# -- CLI pipeline grammar: name:arg,arg|name:arg ---------------------------

REGISTRY = {
    "decode": lambda args: Decode(),
    "float": lambda args: ToFloat(),
    "normalize": lambda args: Normalize(float(args[0]), float(args[1])),
    "flip": lambda args: RandomFlip(float(args[0]) if args else 0.5),
    "crop": lambda args: RandomCrop(int(args[0]), int(args[1])),
    "resize": lambda args: Resize(int(args[0]), int(args[1])),
}


def parse_pipeline(spec: str) -> list[Transform]:
    """Parse ``decode|crop:32,32|flip:0.5|normalize:127.5,64``."""
    transforms = []
    for part in spec.split("|"):
        part = part.strip()
        if not part:
            continue
        name, _, argstr = part.partition(":")
        if name not in REGISTRY:
            raise SpecMismatch(f"unknown transform {name!r}")
        args = [a for a in argstr.split(",") if a] if argstr else []
        try:
            transforms.append(REGISTRY[name](args))
        except (ValueError, IndexError) as e:
            raise SpecMismatch(f"bad arguments for transform {name!r}: {argstr!r}") from e
    if not transforms:
        raise SpecMismatch("empty pipeline spec")
    return transforms


# -- planning ---------------------------------------------------------------


@dataclass
class Stage:
    category: Category
    transforms: list[Transform]
    first_index: int  # index of transforms[0] in the full chain


class PipelinePlan:
    """Stages plus a fully laid-out arena for ``slot_count`` ring slots.

    Buffer (slot, t) holds transform t's output for a whole batch. The
    fusible prefix (stages before the first opaque stage) runs per sample
    in workers; everything after runs batch-level via
    ``execute_batch_opaque``. Per-sample rng states are parked in a
    preallocated array between the two phases.
    """

    def __init__(self, transforms, input_spec, batch_size: int, slot_count: int):
        if not transforms:
            raise SpecMismatch("a pipeline needs at least one transform")
        if batch_size < 1 or slot_count < 1:
            raise SpecMismatch("batch_size and slot_count must be >= 1")
        if not isinstance(transforms[0], SourceTransform):
            raise SpecMismatch("the first transform must read from the sample source")
        if any(isinstance(t, SourceTransform) for t in transforms[1:]):
            raise SpecMismatch("source transforms may only appear first")
        self.transforms = list(transforms)
        self.batch_size = batch_size
        self.slot_count = slot_count

        self.specs: list[ArraySpec] = []
        spec = input_spec
        for t in self.transforms:
            out = t.output_spec(spec)
            t.prepare(spec, out)
            self.specs.append(out)
            spec = out

        self.stages: list[Stage] = []
        for i, t in enumerate(self.transforms):
            if self.stages and self.stages[-1].category == t.category:
                self.stages[-1].transforms.append(t)
            else:
                self.stages.append(Stage(t.category, [t], i))
        self.prefix_stages = 0
        for st in self.stages:
            if st.category == Category.OPAQUE:
                break
            self.prefix_stages += 1

        # Arena layout: slot-major, transform-minor, 64-byte aligned regions.
        offsets = {}
        pos = 0
        for slot in range(slot_count):
            for t_idx, (shape, dtype) in enumerate(self.specs):
                nbytes = batch_size * int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
                offsets[(slot, t_idx)] = (pos, nbytes)
                pos += -(-nbytes // ARENA_ALIGN) * ARENA_ALIGN
        self.arena_nbytes = pos
        self.arena = _alloc_buffer(pos)
        self._buffers = {}
        for (slot, t_idx), (off, nbytes) in offsets.items():
            shape, dtype = self.specs[t_idx]
            self._buffers[(slot, t_idx)] = (
                self.arena[off : off + nbytes].view(dtype).reshape((batch_size, *shape))
            )
        self.rng_states = np.zeros((slot_count, batch_size), dtype=np.uint64)

    def buffer(self, slot: int, t_idx: int) -> np.ndarray:
        return self._buffers[(slot, t_idx)]

    def output_view(self, slot: int, count: int | None = None) -> np.ndarray:
        out = self._buffers[(slot, len(self.transforms) - 1)]
        return out if count is None else out[:count]

    def stage_categories(self) -> list[Category]:
        return [s.category for s in self.stages]

    def execute_sample(self, source_ref, slot: int, position: int, rng: Rng) -> None:
        """Run the fusible prefix for one sample into slot ``position``.

        ``source_ref`` is whatever the chain's source transform consumes.
        The rng state left after the prefix is parked so batch-level stages
        can resume the same stream.
        """
        t_idx = 0
        for stage in self.stages[: self.prefix_stages]:
            for t in stage.transforms:
                out = self._buffers[(slot, t_idx)][position]
                if t_idx == 0:
                    t.apply_source(source_ref, out, rng)
                else:
                    t.apply(self._buffers[(slot, t_idx - 1)][position], out, rng)
                t_idx += 1
        self.rng_states[slot, position] = rng.state

    def execute_batch_opaque(self, slot: int, count: int | None = None) -> None:
        """Run every stage after the fusible prefix, per sample, in order."""
        if self.prefix_stages == len(self.stages):
            return
        count = self.batch_size if count is None else count
        t_idx = self.stages[self.prefix_stages].first_index
        for stage in self.stages[self.prefix_stages :]:
            for t in stage.transforms:
                src = self._buffers[(slot, t_idx - 1)]
                dst = self._buffers[(slot, t_idx)]
                for pos in range(count):
                    rng = Rng(0)
                    rng.state = int(self.rng_states[slot, pos])
                    t.apply(src[pos], dst[pos], rng)
                    self.rng_states[slot, pos] = rng.state
                t_idx += 1


def plan(transforms, input_spec, batch_size: int, slot_count: int) -> PipelinePlan:
    return PipelinePlan(transforms, input_spec, batch_size, slot_count)


def input_spec_for_field(f: FieldDescriptor):
    if f.kind == FieldKind.IMAGE:
        return ImageSourceSpec(f.max_height, f.max_width, f.channels)
    if f.kind == FieldKind.FIXED_ARRAY:
        return ArraySourceSpec(f.array_dims, f.array_dtype)
    raise SpecMismatch(f"field {f.name!r} ({f.kind.name}) cannot feed a transform chain")


def default_chain_for_field(f: FieldDescriptor) -> list[Transform]:
    if f.kind == FieldKind.IMAGE:
        return [Decode()]
    return [ArrayRead()]


# -- batch ring ---------------------------------------------------------------

FREE, FILLING, READY, CONSUMING = range(4)
_STATE_NAMES = ("FREE", "FILLING", "READY", "CONSUMING")


class BatchRing:
    """Circular buffer of batch slots.

    The producer side claims slots clockwise and may only claim FREE ones;
    the consumer follows, only reading READY ones. Both block when the next
    slot is not in the state they need, i.e. when they catch up with each
    other. ``shutdown()`` unblocks everyone with ShutdownError.
    """

    def __init__(self, slot_count: int):
        if slot_count < 1:
            raise ValueError("slot_count must be >= 1")
        self.slot_count = slot_count
        self.states = [FREE] * slot_count
        self.producer_cursor = 0
        self.consumer_cursor = 0
        self._cond = threading.Condition()
        self._shutdown = False
        self.produce_wait_s = 0.0
        self.consume_wait_s = 0.0

    # Nonblocking transitions (also what the model checker drives).

    def try_begin_produce(self) -> int | None:
        with self._cond:
            if self._shutdown:
                raise ShutdownError("ring shut down")
            slot = self.producer_cursor
            if self.states[slot] != FREE:
                return None
            self.states[slot] = FILLING
            self.producer_cursor = (slot + 1) % self.slot_count
            return slot

    def end_produce(self, slot: int) -> None:
        with self._cond:
            assert self.states[slot] == FILLING, _STATE_NAMES[self.states[slot]]
            self.states[slot] = READY
            self._cond.notify_all()

    def try_begin_consume(self) -> int | None:
        with self._cond:
            if self._shutdown:
                raise ShutdownError("ring shut down")
            slot = self.consumer_cursor
            if self.states[slot] != READY:
                return None
            self.states[slot] = CONSUMING
            self.consumer_cursor = (slot + 1) % self.slot_count
            return slot

    def end_consume(self, slot: int) -> None:
        with self._cond:
            assert self.states[slot] == CONSUMING, _STATE_NAMES[self.states[slot]]
            self.states[slot] = FREE
            self._cond.notify_all()

    # Blocking API.

    def produce(self) -> int:
        start = None
        with self._cond:
            while True:
                if self._shutdown:
                    raise ShutdownError("ring shut down")
                slot = self.producer_cursor
                if self.states[slot] == FREE:
                    self.states[slot] = FILLING
                    self.producer_cursor = (slot + 1) % self.slot_count
                    if start is not None:
                        self.produce_wait_s += time.monotonic() - start
                    return slot
                if start is None:
                    start = time.monotonic()
                self._cond.wait()

    def consume(self) -> int:
        start = None
        with self._cond:
            while True:
                if self._shutdown:
                    raise ShutdownError("ring shut down")
                slot = self.consumer_cursor
                if self.states[slot] == READY:
                    self.states[slot] = CONSUMING
                    self.consumer_cursor = (slot + 1) % self.slot_count
                    if start is not None:
                        self.consume_wait_s += time.monotonic() - start
                    return slot
                if start is None:
                    start = time.monotonic()
                self._cond.wait()

    def notify(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def shutdown(self) -> None:
        with self._cond:
            self._shutdown = True
            self._cond.notify_all()

    def reset(self) -> None:
        """Return to the initial state. Both sides must have quiesced."""
        with self._cond:
            self.states = [FREE] * self.slot_count
            self.producer_cursor = 0
            self.consumer_cursor = 0
            self._shutdown = False
            self.produce_wait_s = 0.0
            self.consume_wait_s = 0.0


def ring_produce(ring: BatchRing) -> int:
    return ring.produce()


def ring_consume(ring: BatchRing) -> int:
    return ring.consume()
