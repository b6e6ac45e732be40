/**
 * Batch loader over a container file. Batches are plain arrays copied out
 * for the caller (no leases to invalidate); iterating further never
 * mutates a previously yielded batch. Given the same seed, order, and
 * batch size, the delivered bytes are identical to the primary loader's
 * decode pipeline output.
 */

import { readFileSync } from "node:fs";

import { CodecId, decodeImage } from "./codecs";
import {
  Cell,
  DatasetHeader,
  decodeHeader,
  decodeRow,
  FieldDescriptor,
  FieldKind,
  headerByteLength,
  ImageCell,
  rowWidth,
} from "./format";
import { epochBatches, OrderKind } from "./traversal";

export interface LoaderOptions {
  batchSize: number;
  order?: OrderKind;
  seed?: number | bigint;
  dropLast?: boolean;
}

export type BatchData = Uint8Array | BigInt64Array | Float64Array | Float32Array;

export interface BatchArray {
  data: BatchData;
  shape: number[];
  dtype: "uint8" | "int64" | "float64" | "float32";
}

export interface Batch {
  index: number;
  indices: number[];
  arrays: Record<string, BatchArray>;
}

const ARRAY_DTYPES: Record<number, { ctor: any; dtype: BatchArray["dtype"]; itemsize: number }> = {
  0: { ctor: Uint8Array, dtype: "uint8", itemsize: 1 },
  1: { ctor: BigInt64Array, dtype: "int64", itemsize: 8 },
  2: { ctor: Float32Array, dtype: "float32", itemsize: 4 },
  3: { ctor: Float64Array, dtype: "float64", itemsize: 8 },
};

export class Loader implements Iterable<Batch> {
  readonly header: DatasetHeader;
  readonly numSamples: number;
  private file: Buffer;
  private rowW: number;
  private options: Required<Pick<LoaderOptions, "batchSize">> & LoaderOptions;
  private autoEpoch = 0;

  constructor(path: string, options: LoaderOptions) {
    if (!options || options.batchSize < 1) throw new Error("batchSize must be >= 1");
    this.file = readFileSync(path);
    const prefix = new Uint8Array(this.file.buffer, this.file.byteOffset, this.file.byteLength);
    this.header = decodeHeader(prefix.subarray(0, headerByteLength(numFieldsOf(prefix))));
    this.numSamples = this.header.numSamples;
    this.rowW = rowWidth(this.header.fields);
    this.options = { order: "sequential", seed: 0, dropLast: false, ...options };
  }

  cells(i: number): Cell[] {
    if (i < 0 || i >= this.numSamples) throw new RangeError(`sample ${i} out of range`);
    const start = this.header.dataTableOffset + i * this.rowW;
    const row = new Uint8Array(this.file.buffer, this.file.byteOffset + start, this.rowW);
    return decodeRow(this.header.fields, row);
  }

  /** Page of the sample's first heap reference, or null when all-inline. */
  primaryPage(i: number): number | null {
    const cells = this.cells(i);
    for (let f = 0; f < this.header.fields.length; f++) {
      const field = this.header.fields[f];
      if (field.kind === FieldKind.FixedArray) {
        return this.pageOf(cells[f] as bigint);
      }
      if (field.kind === FieldKind.VarBytes) {
        const cell = cells[f] as { offset: bigint; length: bigint };
        if (cell.length > 0n) return this.pageOf(cell.offset);
      }
      if (field.kind === FieldKind.Image) {
        const cell = cells[f] as ImageCell;
        if (cell.length > 0) return this.pageOf(cell.offset);
      }
    }
    return null;
  }

  private pageOf(offset: bigint): number {
    return Number((offset - this.header.heapOffset) / BigInt(this.header.pageSize));
  }

  private heapBytes(offset: bigint, length: number): Uint8Array {
    const start = Number(offset);
    return new Uint8Array(this.file.buffer, this.file.byteOffset + start, length);
  }

  batchesPerEpoch(): number {
    if (this.options.dropLast) return Math.floor(this.numSamples / this.options.batchSize);
    return Math.ceil(this.numSamples / this.options.batchSize);
  }

  *iterateEpoch(epoch = 0): Generator<Batch> {
    const { batchSize, order, seed, dropLast } = this.options;
    let pageMap: Array<number | null> | undefined;
    if (order === "quasi-random") {
      pageMap = Array.from({ length: this.numSamples }, (_, i) => this.primaryPage(i));
    }
    const batches = epochBatches(
      order!, seed!, epoch, this.numSamples, batchSize, pageMap, dropLast,
    );
    for (let b = 0; b < batches.length; b++) {
      yield this.fillBatch(b, batches[b]);
    }
  }

  [Symbol.iterator](): Iterator<Batch> {
    return this.iterateEpoch(this.autoEpoch++);
  }

  private fillBatch(index: number, indices: number[]): Batch {
    const arrays: Record<string, BatchArray> = {};
    const fields = this.header.fields;
    for (let f = 0; f < fields.length; f++) {
      const field = fields[f];
      if (field.kind === FieldKind.VarBytes) continue; // not batchable
      arrays[field.name] = this.emptyArray(field, indices.length);
    }
    indices.forEach((i, pos) => {
      const cells = this.cells(i);
      for (let f = 0; f < fields.length; f++) {
        const field = fields[f];
        const target = arrays[field.name];
        if (field.kind === FieldKind.IntScalar) {
          (target.data as BigInt64Array)[pos] = cells[f] as bigint;
        } else if (field.kind === FieldKind.FloatScalar) {
          (target.data as Float64Array)[pos] = cells[f] as number;
        } else if (field.kind === FieldKind.FixedArray) {
          const per = target.data.length / indices.length;
          const nbytes = per * ARRAY_DTYPES[field.arrayDtypeCode!].itemsize;
          const raw = this.heapBytes(cells[f] as bigint, nbytes);
          const view = new ARRAY_DTYPES[field.arrayDtypeCode!].ctor(
            raw.buffer.slice(raw.byteOffset, raw.byteOffset + nbytes),
          );
          (target.data as any).set(view, pos * per);
        } else if (field.kind === FieldKind.Image) {
          this.decodeInto(field, cells[f] as ImageCell, target.data as Uint8Array, pos);
        }
      }
    });
    return { index, indices: [...indices], arrays };
  }

  private emptyArray(field: FieldDescriptor, count: number): BatchArray {
    if (field.kind === FieldKind.IntScalar) {
      return { data: new BigInt64Array(count), shape: [count], dtype: "int64" };
    }
    if (field.kind === FieldKind.FloatScalar) {
      return { data: new Float64Array(count), shape: [count], dtype: "float64" };
    }
    if (field.kind === FieldKind.FixedArray) {
      const spec = ARRAY_DTYPES[field.arrayDtypeCode!];
      const per = field.arrayDims!.reduce((a, d) => a * d, 1);
      return {
        data: new spec.ctor(count * per),
        shape: [count, ...field.arrayDims!],
        dtype: spec.dtype,
      };
    }
    const h = field.maxHeight!;
    const w = field.maxWidth!;
    const c = field.channels!;
    return { data: new Uint8Array(count * h * w * c), shape: [count, h, w, c], dtype: "uint8" };
  }

  /** Decode an image into batch position pos, zero-padded to (maxH, maxW). */
  private decodeInto(field: FieldDescriptor, cell: ImageCell, out: Uint8Array, pos: number): void {
    const H = field.maxHeight!;
    const W = field.maxWidth!;
    const C = field.channels!;
    const payload = this.heapBytes(cell.offset, cell.length);
    const base = pos * H * W * C;
    if (cell.height === H && cell.width === W) {
      decodeImage(cell.codec as CodecId, payload, H, W, C, out.subarray(base, base + H * W * C));
      return;
    }
    const scratch = new Uint8Array(cell.height * cell.width * cell.channels);
    decodeImage(cell.codec as CodecId, payload, cell.height, cell.width, cell.channels, scratch);
    for (let y = 0; y < cell.height; y++) {
      out.set(
        scratch.subarray(y * cell.width * C, (y + 1) * cell.width * C),
        base + y * W * C,
      );
    }
  }
}

function numFieldsOf(buf: Uint8Array): number {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  return view.getUint16(20, true);
}

export function* iterate(path: string, options: LoaderOptions, epoch = 0): Generator<Batch> {
  yield* new Loader(path, options).iterateEpoch(epoch);
}
