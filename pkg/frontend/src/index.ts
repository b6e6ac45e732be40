export { create } from "./writer";
export type { CreateOptions, CreateSummary, Sample } from "./writer";
export { Loader, iterate } from "./loader";
export type { Batch, BatchArray, LoaderOptions } from "./loader";
export { CodecId } from "./codecs";
export type { Pixels } from "./codecs";
export { syntheticSample, syntheticSamples } from "./synthetic";
export { epochBatches, epochIndices } from "./traversal";
export type { OrderKind } from "./traversal";
