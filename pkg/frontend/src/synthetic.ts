/**
 * Seeded synthetic image+label source, value-identical to the primary
 * implementation's generator: per sample, a derived stream yields the label
 * then a base byte; pixel (y, x, ch) = (base + 11y + 3(x>>2) + 7ch) & 255.
 */

import { Pixels } from "./codecs";
import { Rng, streamSeed, TAG_SYNTH } from "./rng";
import { Sample } from "./writer";

export function syntheticSample(
  seed: number | bigint,
  index: number,
  height: number,
  width: number,
  channels: number,
  numClasses = 10,
): Sample {
  const r = new Rng(streamSeed(seed, TAG_SYNTH, index));
  const label = r.below(numClasses);
  const base = r.below(256);
  const data = new Uint8Array(height * width * channels);
  let pos = 0;
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      for (let ch = 0; ch < channels; ch++) {
        data[pos++] = (base + 11 * y + 3 * (x >> 2) + 7 * ch) & 0xff;
      }
    }
  }
  const image: Pixels = { height, width, channels, data };
  return { image, label };
}

export function syntheticSamples(
  seed: number | bigint,
  count: number,
  height: number,
  width: number,
  channels: number,
): Sample[] {
  return Array.from({ length: count }, (_, i) =>
    syntheticSample(seed, i, height, width, channels),
  );
}
