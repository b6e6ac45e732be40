import assert from "node:assert/strict";
import { test } from "node:test";

import {
  decodeAllocTable,
  decodeHeader,
  encodeAllocTable,
  encodeHeader,
  FieldKind,
  headerByteLength,
  rowWidth,
} from "../src/format";
import { CodecId, decodeImage, encodeImage, encodeRle } from "../src/codecs";

test("header round trips and is 304 bytes for two fields", () => {
  const header = {
    numSamples: 10,
    pageSize: 65536,
    dataTableOffset: headerByteLength(2),
    heapOffset: 65536n,
    allocTableOffset: 131072n,
    fields: [
      { name: "image", kind: FieldKind.Image, maxHeight: 8, maxWidth: 8, channels: 1 },
      { name: "label", kind: FieldKind.IntScalar },
    ],
  };
  const buf = encodeHeader(header);
  assert.equal(buf.length, 304);
  const back = decodeHeader(buf);
  assert.equal(back.numSamples, 10);
  assert.equal(back.pageSize, 65536);
  assert.deepEqual(back.fields, header.fields);
});

test("row width matches cell widths", () => {
  assert.equal(
    rowWidth([
      { name: "a", kind: FieldKind.IntScalar },
      { name: "b", kind: FieldKind.VarBytes },
    ]),
    24,
  );
});

test("bad magic rejected", () => {
  const buf = encodeHeader({
    numSamples: 0,
    pageSize: 65536,
    dataTableOffset: headerByteLength(1),
    heapOffset: 65536n,
    allocTableOffset: 65536n,
    fields: [{ name: "a", kind: FieldKind.IntScalar }],
  });
  buf[7] = 0x32; // FASTDS02
  assert.throws(() => decodeHeader(buf), /bad magic/);
});

test("alloc table round trips", () => {
  const regions = [
    { offset: 65536n, length: 100n },
    { offset: 65736n, length: 424n },
  ];
  assert.deepEqual(decodeAllocTable(encodeAllocTable(regions)), regions);
});

test("rle runs match the known example", () => {
  // [[5, 5], [5, 2]] -> runs (3, 5), (1, 2)
  const payload = encodeRle(new Uint8Array([5, 5, 5, 2]));
  assert.deepEqual([...payload], [3, 0, 0, 0, 5, 1, 0, 0, 0, 2]);
});

test("codecs round trip", () => {
  const data = new Uint8Array(48).map((_, i) => (i * 37) & 0xff);
  const img = { height: 4, width: 4, channels: 3, data };
  for (const codec of [CodecId.Raw, CodecId.Rle]) {
    const payload = encodeImage(img, codec);
    const out = new Uint8Array(48);
    decodeImage(codec, payload, 4, 4, 3, out);
    assert.deepEqual([...out], [...data]);
  }
  const payload = encodeImage(img, CodecId.Subsample2);
  const out = new Uint8Array(48);
  decodeImage(CodecId.Subsample2, payload, 4, 4, 3, out);
  for (let y = 0; y < 4; y++) {
    for (let x = 0; x < 4; x++) {
      for (let k = 0; k < 3; k++) {
        assert.equal(out[(y * 4 + x) * 3 + k], data[((y & ~1) * 4 + (x & ~1)) * 3 + k]);
      }
    }
  }
});
