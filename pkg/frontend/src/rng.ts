/**
 * Deterministic counter-based randomness, bit-compatible with the primary
 * implementation: a 64-bit counter advanced by the golden-ratio increment
 * and finalized splitmix-style. All arithmetic is BigInt mod 2^64 so the
 * sequences are identical across platforms.
 */

export const MASK64 = (1n << 64n) - 1n;
export const GOLDEN = 0x9e3779b97f4a7c15n;

export const TAG_ORDER = 1n;
export const TAG_SAMPLE = 2n;
export const TAG_CODEC = 3n;
export const TAG_SYNTH = 4n;

export function mix64(x: bigint): bigint {
  x &= MASK64;
  x = ((x ^ (x >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
  x = ((x ^ (x >> 27n)) * 0x94d049bb133111ebn) & MASK64;
  return x ^ (x >> 31n);
}

export function fold(seed: bigint, value: bigint): bigint {
  return mix64((seed + GOLDEN + value) & MASK64);
}

export function streamSeed(seed: bigint | number, ...parts: Array<bigint | number>): bigint {
  let s = BigInt(seed) & MASK64;
  for (const p of parts) {
    s = fold(s, BigInt(p) & MASK64);
  }
  return s;
}

export class Rng {
  state: bigint;

  constructor(seed: bigint | number) {
    this.state = BigInt(seed) & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + GOLDEN) & MASK64;
    return mix64(this.state);
  }

  /** Uniform draw in [0, n). */
  below(n: number): number {
    if (n <= 0) throw new RangeError("below() requires n >= 1");
    return Number(this.nextU64() % BigInt(n));
  }

  /** True with probability p; p <= 0 and p >= 1 consume no draw. */
  chance(p: number): boolean {
    if (p <= 0) return false;
    if (p >= 1) return true;
    return this.nextU64() < BigInt(Math.floor(p * 2 ** 64));
  }

  /** In-place Fisher-Yates from the tail, one draw per step. */
  shuffle<T>(seq: T[]): void {
    for (let i = seq.length - 1; i > 0; i--) {
      const j = this.below(i + 1);
      const tmp = seq[i];
      seq[i] = seq[j];
      seq[j] = tmp;
    }
  }
}
