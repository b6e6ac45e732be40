import { spawnSync } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import * as path from "node:path";

/** repo root: dist/test/helpers.js -> frontend/dist/test -> repo */
export const REPO_ROOT = path.resolve(__dirname, "..", "..", "..");

export function runCli(args: string[]): { status: number; stdout: string; stderr: string } {
  const result = spawnSync("python3", ["-m", "bbox.cli", ...args], {
    env: { ...process.env, PYTHONPATH: path.join(REPO_ROOT, "src") },
    encoding: "utf-8",
    maxBuffer: 256 * 1024 * 1024,
  });
  if (result.error) throw result.error;
  return { status: result.status ?? -1, stdout: result.stdout, stderr: result.stderr };
}

export function tempDir(prefix = "bboxjs-"): string {
  return mkdtempSync(path.join(tmpdir(), prefix));
}

export function toHex(data: { buffer: ArrayBufferLike; byteOffset: number; byteLength: number }): string {
  return Buffer.from(data.buffer, data.byteOffset, data.byteLength).toString("hex");
}
