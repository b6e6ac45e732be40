/**
 * Container creation from in-memory samples. Single encode lane; byte-for-
 * byte the same output as the primary writer produces for the same input,
 * seed, and page size: same header, same bump-allocated heap layout, same
 * per-sample codec draws keyed by (seed, sample index).
 */

import { writeFileSync } from "node:fs";

import { CodecId, encodeImage, Pixels } from "./codecs";
import {
  DatasetHeader,
  DEFAULT_PAGE_SIZE,
  encodeAllocTable,
  encodeHeader,
  FieldDescriptor,
  FieldKind,
  headerByteLength,
  MIN_PAGE_SIZE,
  Region,
  rowWidth,
} from "./format";
import { Rng, streamSeed, TAG_CODEC } from "./rng";

export interface Sample {
  image: Pixels;
  label: number | bigint;
}

export interface CreateOptions {
  pageSize?: number;
  compressProbability?: number;
  compressCodec?: CodecId;
  seed?: number | bigint;
  /** Schema dims for an empty dataset; inferred from samples otherwise. */
  maxHeight?: number;
  maxWidth?: number;
  channels?: number;
}

export interface CreateSummary {
  path: string;
  numSamples: number;
  numPages: number;
  bytesWritten: number;
  codecCounts: Record<string, number>;
  wasteFraction: number;
}

class BumpAllocator {
  private currentPage: number | null = null;
  private cursor = 0;
  private nextPage = 0;
  readonly regions: Region[] = [];

  constructor(
    private heapOffset: bigint,
    private pageSize: number,
  ) {}

  allocate(length: number): bigint {
    if (length < 1) throw new Error("allocation length must be >= 1");
    let offset: bigint;
    if (length > this.pageSize) {
      const pages = Math.ceil(length / this.pageSize);
      offset = this.heapOffset + BigInt(this.nextPage) * BigInt(this.pageSize);
      this.nextPage += pages;
    } else {
      if (this.currentPage === null || this.pageSize - this.cursor < length) {
        this.currentPage = this.nextPage++;
        this.cursor = 0;
      }
      offset =
        this.heapOffset + BigInt(this.currentPage) * BigInt(this.pageSize) + BigInt(this.cursor);
      this.cursor += length;
    }
    this.regions.push({ offset, length: BigInt(length) });
    return offset;
  }

  get numPages(): number {
    return this.nextPage;
  }
}

export function create(samples: Sample[], path: string, options: CreateOptions = {}): CreateSummary {
  const pageSize = options.pageSize ?? DEFAULT_PAGE_SIZE;
  if (pageSize < MIN_PAGE_SIZE || (pageSize & (pageSize - 1)) !== 0) {
    throw new Error(`pageSize must be a power of two >= ${MIN_PAGE_SIZE}`);
  }
  const prob = options.compressProbability ?? 0;
  if (prob < 0 || prob > 1) throw new Error("compressProbability must be in [0, 1]");
  const compressCodec = options.compressCodec ?? CodecId.Rle;
  const seed = options.seed ?? 0;

  let maxH = options.maxHeight ?? 1;
  let maxW = options.maxWidth ?? 1;
  let channels = options.channels ?? 1;
  if (samples.length > 0) {
    const first = samples[0].image;
    for (const s of samples) {
      const img = s.image;
      if (img.data.length !== img.height * img.width * img.channels) {
        throw new Error("image buffer does not match its dims");
      }
      if (
        img.height !== first.height ||
        img.width !== first.width ||
        img.channels !== first.channels
      ) {
        throw new Error("ragged input: all images must share height, width, channels");
      }
    }
    maxH = options.maxHeight ?? first.height;
    maxW = options.maxWidth ?? first.width;
    channels = options.channels ?? first.channels;
  }

  const fields: FieldDescriptor[] = [
    { name: "image", kind: FieldKind.Image, maxHeight: maxH, maxWidth: maxW, channels },
    { name: "label", kind: FieldKind.IntScalar },
  ];
  const headerLen = headerByteLength(fields.length);
  const rw = rowWidth(fields);
  const dataEnd = headerLen + samples.length * rw;
  let heapOffset = BigInt(Math.ceil(dataEnd / pageSize)) * BigInt(pageSize);
  if (heapOffset <= BigInt(headerLen)) heapOffset += BigInt(pageSize);

  const allocator = new BumpAllocator(heapOffset, pageSize);
  const codecCounts: Record<string, number> = {};
  const blobs: Array<{ offset: bigint; data: Uint8Array }> = [];
  const rowTable = new Uint8Array(samples.length * rw);
  const rowView = new DataView(rowTable.buffer);

  samples.forEach((sample, i) => {
    const img = sample.image;
    if (img.height > maxH || img.width > maxW) {
      throw new Error(`sample ${i}: image exceeds schema max dims`);
    }
    const draw = new Rng(streamSeed(seed, TAG_CODEC, i));
    const codec = draw.chance(prob) ? compressCodec : CodecId.Raw;
    const payload = encodeImage(img, codec);
    const offset = allocator.allocate(payload.length);
    blobs.push({ offset, data: payload });
    codecCounts[CodecId[codec]] = (codecCounts[CodecId[codec]] ?? 0) + 1;
    const base = i * rw;
    rowView.setBigUint64(base, offset, true);
    rowView.setBigUint64(base + 8, BigInt(payload.length), true);
    rowView.setUint16(base + 16, img.height, true);
    rowView.setUint16(base + 18, img.width, true);
    rowView.setUint8(base + 20, img.channels);
    rowView.setUint8(base + 21, codec);
    rowView.setBigInt64(base + 24, BigInt(sample.label), true);
  });

  const numPages = allocator.numPages;
  const allocTableOffset = heapOffset + BigInt(numPages) * BigInt(pageSize);
  const regions = [...allocator.regions].sort((a, b) =>
    a.offset < b.offset ? -1 : a.offset > b.offset ? 1 : 0,
  );
  const allocTable = encodeAllocTable(regions);
  const fileLength = Number(allocTableOffset) + allocTable.length;

  const header: DatasetHeader = {
    numSamples: samples.length,
    pageSize,
    dataTableOffset: headerLen,
    heapOffset,
    allocTableOffset,
    fields,
  };
  const file = Buffer.alloc(fileLength);
  file.set(encodeHeader(header), 0);
  file.set(rowTable, headerLen);
  for (const blob of blobs) file.set(blob.data, Number(blob.offset));
  file.set(allocTable, Number(allocTableOffset));
  writeFileSync(path, file);

  let allocated = 0n;
  for (const r of regions) allocated += r.length;
  const heapBytes = numPages * pageSize;
  return {
    path,
    numSamples: samples.length,
    numPages,
    bytesWritten: fileLength,
    codecCounts,
    wasteFraction: heapBytes ? Number(BigInt(heapBytes) - allocated) / heapBytes : 0,
  };
}
