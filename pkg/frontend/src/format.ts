/**
 * Binary layout of the container file. Little-endian throughout; four
 * sections in order: Header, Data Table, Heap Storage, Allocation Table.
 * The 56-byte header prefix is followed by one 124-byte descriptor per
 * field; rows are fixed-width so row i sits at dataTableOffset + i * rowWidth.
 */

export const MAGIC = "FASTDS01";
export const FORMAT_VERSION = 1;
export const MIN_PAGE_SIZE = 65536;
export const DEFAULT_PAGE_SIZE = 8 * 1024 * 1024;
export const HEADER_PREFIX_BYTES = 56;
export const DESCRIPTOR_BYTES = 124;

export enum FieldKind {
  IntScalar = 0,
  FloatScalar = 1,
  FixedArray = 2,
  VarBytes = 3,
  Image = 4,
}

export const CELL_WIDTHS: Record<FieldKind, number> = {
  [FieldKind.IntScalar]: 8,
  [FieldKind.FloatScalar]: 8,
  [FieldKind.FixedArray]: 8,
  [FieldKind.VarBytes]: 16,
  [FieldKind.Image]: 24,
};

export interface FieldDescriptor {
  name: string;
  kind: FieldKind;
  arrayDtypeCode?: number;
  arrayDims?: number[];
  maxHeight?: number;
  maxWidth?: number;
  channels?: number;
}

export interface DatasetHeader {
  numSamples: number;
  pageSize: number;
  dataTableOffset: number;
  heapOffset: bigint;
  allocTableOffset: bigint;
  fields: FieldDescriptor[];
}

export interface ImageCell {
  offset: bigint;
  length: number;
  height: number;
  width: number;
  channels: number;
  codec: number;
}

export interface Region {
  offset: bigint;
  length: bigint;
}

export function cellWidth(f: FieldDescriptor): number {
  return CELL_WIDTHS[f.kind];
}

export function rowWidth(fields: FieldDescriptor[]): number {
  return fields.reduce((acc, f) => acc + cellWidth(f), 0);
}

export function headerByteLength(numFields: number): number {
  return HEADER_PREFIX_BYTES + DESCRIPTOR_BYTES * numFields;
}

const ASCII = new TextEncoder();

export function encodeHeader(h: DatasetHeader): Uint8Array {
  const out = new Uint8Array(headerByteLength(h.fields.length));
  const view = new DataView(out.buffer);
  ASCII.encodeInto(MAGIC, out.subarray(0, 8));
  view.setUint32(8, FORMAT_VERSION, true);
  view.setBigUint64(12, BigInt(h.numSamples), true);
  view.setUint16(20, h.fields.length, true);
  view.setBigUint64(22, BigInt(h.pageSize), true);
  view.setBigUint64(30, BigInt(h.dataTableOffset), true);
  view.setBigUint64(38, h.heapOffset, true);
  view.setBigUint64(46, h.allocTableOffset, true);
  let pos = HEADER_PREFIX_BYTES;
  for (const f of h.fields) {
    const name = ASCII.encode(f.name);
    if (name.length === 0 || name.length > 63) throw new Error(`bad field name ${f.name}`);
    out.set(name, pos);
    view.setUint8(pos + 64, f.kind);
    if (f.kind === FieldKind.FixedArray) {
      const dims = f.arrayDims ?? [];
      view.setUint8(pos + 65, f.arrayDtypeCode ?? 0);
      view.setUint8(pos + 66, dims.length);
      for (let d = 0; d < dims.length; d++) view.setUint32(pos + 69 + 4 * d, dims[d], true);
    } else if (f.kind === FieldKind.Image) {
      view.setUint16(pos + 65, f.maxHeight ?? 0, true);
      view.setUint16(pos + 67, f.maxWidth ?? 0, true);
      view.setUint8(pos + 69, f.channels ?? 0);
    }
    view.setUint32(pos + 113, cellWidth(f), true);
    pos += DESCRIPTOR_BYTES;
  }
  return out;
}

export function decodeHeader(buf: Uint8Array): DatasetHeader {
  if (buf.length < HEADER_PREFIX_BYTES) throw new Error("buffer too short for header prefix");
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const magic = new TextDecoder().decode(buf.subarray(0, 8));
  if (magic !== MAGIC) throw new Error(`bad magic ${JSON.stringify(magic)}`);
  const version = view.getUint32(8, true);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  const numSamples = Number(view.getBigUint64(12, true));
  const numFields = view.getUint16(20, true);
  if (buf.length < headerByteLength(numFields)) throw new Error("buffer too short for descriptors");
  const header: DatasetHeader = {
    numSamples,
    pageSize: Number(view.getBigUint64(22, true)),
    dataTableOffset: Number(view.getBigUint64(30, true)),
    heapOffset: view.getBigUint64(38, true),
    allocTableOffset: view.getBigUint64(46, true),
    fields: [],
  };
  let pos = HEADER_PREFIX_BYTES;
  for (let i = 0; i < numFields; i++) {
    let end = pos;
    while (end < pos + 64 && buf[end] !== 0) end++;
    const name = new TextDecoder().decode(buf.subarray(pos, end));
    const kind = view.getUint8(pos + 64) as FieldKind;
    const f: FieldDescriptor = { name, kind };
    if (kind === FieldKind.FixedArray) {
      f.arrayDtypeCode = view.getUint8(pos + 65);
      const ndims = view.getUint8(pos + 66);
      f.arrayDims = [];
      for (let d = 0; d < ndims; d++) f.arrayDims.push(view.getUint32(pos + 69 + 4 * d, true));
    } else if (kind === FieldKind.Image) {
      f.maxHeight = view.getUint16(pos + 65, true);
      f.maxWidth = view.getUint16(pos + 67, true);
      f.channels = view.getUint8(pos + 69);
    }
    const width = view.getUint32(pos + 113, true);
    if (width !== cellWidth(f)) throw new Error(`field ${name}: cell width ${width}`);
    header.fields.push(f);
    pos += DESCRIPTOR_BYTES;
  }
  return header;
}

export type Cell = bigint | number | { offset: bigint; length: bigint } | ImageCell;

export function decodeRow(fields: FieldDescriptor[], buf: Uint8Array): Cell[] {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const cells: Cell[] = [];
  let pos = 0;
  for (const f of fields) {
    switch (f.kind) {
      case FieldKind.IntScalar:
        cells.push(view.getBigInt64(pos, true));
        break;
      case FieldKind.FloatScalar:
        cells.push(view.getFloat64(pos, true));
        break;
      case FieldKind.FixedArray:
        cells.push(view.getBigUint64(pos, true));
        break;
      case FieldKind.VarBytes:
        cells.push({
          offset: view.getBigUint64(pos, true),
          length: view.getBigUint64(pos + 8, true),
        });
        break;
      case FieldKind.Image:
        cells.push({
          offset: view.getBigUint64(pos, true),
          length: Number(view.getBigUint64(pos + 8, true)),
          height: view.getUint16(pos + 16, true),
          width: view.getUint16(pos + 18, true),
          channels: view.getUint8(pos + 20),
          codec: view.getUint8(pos + 21),
        });
        break;
    }
    pos += cellWidth(f);
  }
  return cells;
}

export function encodeAllocTable(regions: Region[]): Uint8Array {
  const out = new Uint8Array(8 + 16 * regions.length);
  const view = new DataView(out.buffer);
  view.setBigUint64(0, BigInt(regions.length), true);
  regions.forEach((r, i) => {
    view.setBigUint64(8 + 16 * i, r.offset, true);
    view.setBigUint64(16 + 16 * i, r.length, true);
  });
  return out;
}

export function decodeAllocTable(buf: Uint8Array): Region[] {
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const count = Number(view.getBigUint64(0, true));
  const regions: Region[] = [];
  for (let i = 0; i < count; i++) {
    regions.push({
      offset: view.getBigUint64(8 + 16 * i, true),
      length: view.getBigUint64(16 + 16 * i, true),
    });
  }
  return regions;
}
