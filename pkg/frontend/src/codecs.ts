/** Image blob codecs: RAW and RLE are lossless, SUBSAMPLE2 is 2x lossy. */

export enum CodecId {
  Raw = 0,
  Rle = 1,
  Subsample2 = 2,
}

export interface Pixels {
  height: number;
  width: number;
  channels: number;
  /** Row-major HxWxC bytes. */
  data: Uint8Array;
}

export function subsampledDims(height: number, width: number): [number, number] {
  return [Math.ceil(height / 2), Math.ceil(width / 2)];
}

export function encodeRle(flat: Uint8Array): Uint8Array {
  if (flat.length === 0) return new Uint8Array(0);
  const runs: Array<[number, number]> = [];
  let value = flat[0];
  let count = 1;
  for (let i = 1; i < flat.length; i++) {
    if (flat[i] === value) {
      count++;
    } else {
      runs.push([count, value]);
      value = flat[i];
      count = 1;
    }
  }
  runs.push([count, value]);
  const out = new Uint8Array(runs.length * 5);
  const view = new DataView(out.buffer);
  runs.forEach(([c, v], i) => {
    view.setUint32(i * 5, c, true);
    view.setUint8(i * 5 + 4, v);
  });
  return out;
}

export function encodeImage(pixels: Pixels, codec: CodecId): Uint8Array {
  const { height: h, width: w, channels: c, data } = pixels;
  if (data.length !== h * w * c) throw new Error("pixel buffer does not match dims");
  if (codec === CodecId.Raw) return data.slice();
  if (codec === CodecId.Rle) return encodeRle(data);
  const [sh, sw] = subsampledDims(h, w);
  const out = new Uint8Array(sh * sw * c);
  let pos = 0;
  for (let y = 0; y < h; y += 2) {
    for (let x = 0; x < w; x += 2) {
      for (let k = 0; k < c; k++) out[pos++] = data[(y * w + x) * c + k];
    }
  }
  return out;
}

/** Decode into a caller-owned buffer of exactly h*w*c bytes. */
export function decodeImage(
  codec: CodecId,
  payload: Uint8Array,
  h: number,
  w: number,
  c: number,
  out: Uint8Array,
): void {
  const n = h * w * c;
  if (out.length !== n) throw new Error(`output must be ${n} bytes`);
  if (codec === CodecId.Raw) {
    if (payload.length !== n) throw new Error("raw payload length mismatch");
    out.set(payload);
  } else if (codec === CodecId.Rle) {
    if (payload.length % 5 !== 0) throw new Error("rle payload not a multiple of 5");
    const view = new DataView(payload.buffer, payload.byteOffset, payload.byteLength);
    let pos = 0;
    for (let off = 0; off < payload.length; off += 5) {
      const count = view.getUint32(off, true);
      const value = view.getUint8(off + 4);
      if (count === 0 || pos + count > n) throw new Error("rle runs overflow");
      out.fill(value, pos, pos + count);
      pos += count;
    }
    if (pos !== n) throw new Error(`rle runs sum to ${pos}, expected ${n}`);
  } else if (codec === CodecId.Subsample2) {
    const [sh, sw] = subsampledDims(h, w);
    if (payload.length !== sh * sw * c) throw new Error("subsampled payload length mismatch");
    for (let y = 0; y < h; y++) {
      const sy = y >> 1;
      for (let x = 0; x < w; x++) {
        const sx = x >> 1;
        for (let k = 0; k < c; k++) {
          out[(y * w + x) * c + k] = payload[(sy * sw + sx) * c + k];
        }
      }
    }
  } else {
    throw new Error(`unknown codec ${codec}`);
  }
}
