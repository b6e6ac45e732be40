/**
 * Cross-component acceptance: this package's output must be bit-identical
 * to the primary implementation through its public surfaces. Files made by
 * create() must pass the primary validator (and byte-match the primary
 * writer's output for the same synthetic input); batches from Loader must
 * equal the primary CLI's dump stream for the same seed and order.
 */

import assert from "node:assert/strict";
import { test } from "node:test";
import { readFileSync } from "node:fs";
import * as path from "node:path";

import { create } from "../src/writer";
import { Loader } from "../src/loader";
import { syntheticSamples } from "../src/synthetic";
import { runCli, tempDir, toHex } from "./helpers";

const N = 60;
const DIMS = { h: 8, w: 8, c: 1 };

function createBoth(dir: string, seed: number): { ours: string; primary: string } {
  const ours = path.join(dir, `ours_${seed}.bbox`);
  create(syntheticSamples(seed, N, DIMS.h, DIMS.w, DIMS.c), ours, {
    pageSize: 65536,
    compressProbability: 0.5,
    seed,
  });
  const primary = path.join(dir, `primary_${seed}.bbox`);
  const res = runCli([
    "create",
    "--from", `synthetic:${N}x${DIMS.h}x${DIMS.w}x${DIMS.c}`,
    "--out", primary,
    "--page-size", "65536",
    "--compress-prob", "0.5",
    "--seed", String(seed),
    "--workers", "1",
  ]);
  assert.equal(res.status, 0, res.stderr);
  return { ours, primary };
}

test("created files pass the primary validator", () => {
  const dir = tempDir();
  const { ours } = createBoth(dir, 5);
  const res = runCli(["validate", ours]);
  assert.equal(res.status, 0, res.stdout + res.stderr);
  assert.match(res.stdout, /valid/);
});

test("created files are byte-identical to the primary writer's", () => {
  const dir = tempDir();
  for (const seed of [1, 2, 3]) {
    const { ours, primary } = createBoth(dir, seed);
    const a = readFileSync(ours);
    const b = readFileSync(primary);
    assert.equal(a.length, b.length, `seed ${seed}: length mismatch`);
    assert.ok(a.equals(b), `seed ${seed}: file contents differ`);
  }
});

test("loader batches are bit-identical to the primary dump (3 seeds x 2 orders)", () => {
  const dir = tempDir();
  const { ours } = createBoth(dir, 9);
  for (const order of ["sequential", "random"] as const) {
    for (const seed of [1, 2, 3]) {
      const res = runCli([
        "dump", ours,
        "--order", order,
        "--seed", String(seed),
        "--batch-size", "8",
      ]);
      assert.equal(res.status, 0, res.stderr);
      const expected = res.stdout
        .trim()
        .split("\n")
        .map((line) => JSON.parse(line));

      const loader = new Loader(ours, { batchSize: 8, order, seed });
      const got = [...loader.iterateEpoch(0)];
      assert.equal(got.length, expected.length, `${order} seed ${seed}: batch count`);
      got.forEach((batch, b) => {
        const want = expected[b];
        assert.deepEqual(batch.indices, want.indices, `${order} seed ${seed} batch ${b}`);
        assert.equal(toHex(batch.arrays["image"].data), want.image,
                     `${order} seed ${seed} batch ${b}: image bytes`);
        assert.equal(toHex(batch.arrays["label"].data), want.label,
                     `${order} seed ${seed} batch ${b}: label bytes`);
        assert.deepEqual(batch.arrays["image"].shape, want.image_shape);
        assert.equal(batch.arrays["image"].dtype, want.image_dtype);
      });
    }
  }
});

test("quasi-random order also matches the primary dump", () => {
  const dir = tempDir();
  const { ours } = createBoth(dir, 13);
  const res = runCli([
    "dump", ours, "--order", "quasi-random", "--seed", "4", "--batch-size", "8",
  ]);
  assert.equal(res.status, 0, res.stderr);
  const expected = res.stdout.trim().split("\n").map((line) => JSON.parse(line));
  const loader = new Loader(ours, { batchSize: 8, order: "quasi-random", seed: 4 });
  const got = [...loader.iterateEpoch(0)];
  assert.equal(got.length, expected.length);
  got.forEach((batch, b) => {
    assert.deepEqual(batch.indices, expected[b].indices, `batch ${b}`);
    assert.equal(toHex(batch.arrays["image"].data), expected[b].image);
  });
});
