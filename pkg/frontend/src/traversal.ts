/**
 * Epoch order generators, sequence-identical to the primary loader:
 * sequential, seeded random shuffle, and quasi-random page-buffered
 * sampling (pages shuffled, at most batchSize pages admitted, next sample
 * drawn uniformly from the unconsumed samples of admitted pages).
 */

import { Rng, streamSeed, TAG_ORDER } from "./rng";

export type OrderKind = "sequential" | "random" | "quasi-random";

export function epochRng(seed: bigint | number, epoch: number): Rng {
  return new Rng(streamSeed(seed, TAG_ORDER, epoch));
}

/** pageMap[i] is sample i's page id, or null when the sample is all-inline. */
export function epochIndices(
  kind: OrderKind,
  seed: bigint | number,
  epoch: number,
  numSamples: number,
  pageMap?: Array<number | null>,
  batchSize?: number,
): number[] {
  const out = Array.from({ length: numSamples }, (_, i) => i);
  if (kind === "sequential") return out;
  if (kind === "random") {
    epochRng(seed, epoch).shuffle(out);
    return out;
  }
  if (!batchSize || batchSize < 1) throw new Error("quasi-random needs batchSize >= 1");
  if (numSamples === 0) return [];
  const pages = pageMap ?? new Array<number | null>(numSamples).fill(null);
  const byPage = new Map<number | null, number[]>();
  for (let i = 0; i < numSamples; i++) {
    const p = pages[i];
    const list = byPage.get(p);
    if (list) list.push(i);
    else byPage.set(p, [i]);
  }
  // numeric pages ascending, a null page (if any) last: the shuffle base order
  const pageOrder: Array<number | null> = [...byPage.keys()]
    .filter((p): p is number => p !== null)
    .sort((a, b) => a - b);
  if (byPage.has(null)) pageOrder.push(null);

  const r = epochRng(seed, epoch);
  r.shuffle(pageOrder);
  const admitted: number[][] = [];
  let nextPage = 0;
  const emitted: number[] = [];
  while (emitted.length < numSamples) {
    while (admitted.length < batchSize && nextPage < pageOrder.length) {
      admitted.push(byPage.get(pageOrder[nextPage])!);
      nextPage++;
    }
    let total = 0;
    for (const samples of admitted) total += samples.length;
    let k = r.below(total);
    for (let slot = 0; slot < admitted.length; slot++) {
      const samples = admitted[slot];
      if (k < samples.length) {
        emitted.push(samples.splice(k, 1)[0]);
        if (samples.length === 0) admitted.splice(slot, 1);
        break;
      }
      k -= samples.length;
    }
  }
  return emitted;
}

export function epochBatches(
  kind: OrderKind,
  seed: bigint | number,
  epoch: number,
  numSamples: number,
  batchSize: number,
  pageMap?: Array<number | null>,
  dropLast = false,
): number[][] {
  if (batchSize < 1) throw new Error("batchSize must be >= 1");
  const indices = epochIndices(kind, seed, epoch, numSamples, pageMap, batchSize);
  const batches: number[][] = [];
  for (let i = 0; i < indices.length; i += batchSize) {
    batches.push(indices.slice(i, i + batchSize));
  }
  if (dropLast && batches.length > 0 && batches[batches.length - 1].length < batchSize) {
    batches.pop();
  }
  return batches;
}
