/** IDX (big-endian) MNIST reader. */

import { readFileSync } from "node:fs";
import { createRequire } from "node:module";
import { join, dirname } from "node:path";

export interface Dataset {
  images: Float32Array; // [n, 28*28], scaled to [0,1]
  labels: Uint8Array;
  count: number;
  rows: number;
  cols: number;
}

export function parseIdxImages(buf: Buffer): { data: Float32Array; count: number; rows: number; cols: number } {
  if (buf.length < 16) throw new Error("truncated IDX image file");
  if (buf.readUInt32BE(0) !== 0x803) throw new Error(`bad image magic 0x${buf.readUInt32BE(0).toString(16)}`);
  const count = buf.readUInt32BE(4);
  const rows = buf.readUInt32BE(8);
  const cols = buf.readUInt32BE(12);
  const need = 16 + count * rows * cols;
  if (buf.length < need) throw new Error(`truncated IDX image file: ${buf.length} < ${need}`);
  const data = new Float32Array(count * rows * cols);
  for (let i = 0; i < data.length; i++) data[i] = buf[16 + i] / 255;
  return { data, count, rows, cols };
}

export function parseIdxLabels(buf: Buffer): Uint8Array {
  if (buf.length < 8) throw new Error("truncated IDX label file");
  if (buf.readUInt32BE(0) !== 0x801) throw new Error(`bad label magic 0x${buf.readUInt32BE(0).toString(16)}`);
  const count = buf.readUInt32BE(4);
  if (buf.length < 8 + count) throw new Error("truncated IDX label file");
  return new Uint8Array(buf.subarray(8, 8 + count));
}

export function loadDataset(imagesPath: string, labelsPath: string, subset = 0): Dataset {
  const img = parseIdxImages(readFileSync(imagesPath));
  const labels = parseIdxLabels(readFileSync(labelsPath));
  if (labels.length !== img.count) throw new Error(`${img.count} images but ${labels.length} labels`);
  let { data, count } = img;
  if (subset > 0 && subset < count) {
    count = subset;
    data = data.subarray(0, count * img.rows * img.cols);
  }
  return { images: data, labels: labels.subarray(0, count), count, rows: img.rows, cols: img.cols };
}

/** Default MNIST location: the IDX files bundled with the mnist-data package. */
export function bundledMnistDir(): string {
  const require = createRequire(import.meta.url);
  return join(dirname(require.resolve("mnist-data/package.json")), "data");
}
