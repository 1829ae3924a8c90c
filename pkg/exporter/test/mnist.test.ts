import { describe, expect, it } from "vitest";

import { bundledMnistDir, loadDataset, parseIdxImages, parseIdxLabels } from "../src/mnist.js";

function idxImages(count: number, rows: number, cols: number, fill: (i: number) => number): Buffer {
  const buf = Buffer.alloc(16 + count * rows * cols);
  buf.writeUInt32BE(0x803, 0);
  buf.writeUInt32BE(count, 4);
  buf.writeUInt32BE(rows, 8);
  buf.writeUInt32BE(cols, 12);
  for (let i = 0; i < count * rows * cols; i++) buf[16 + i] = fill(i);
  return buf;
}

describe("idx parsing", () => {
  it("scales pixels by 1/255", () => {
    const buf = idxImages(1, 2, 2, (i) => [0, 128, 255, 51][i]);
    const img = parseIdxImages(buf);
    expect(img.count).toBe(1);
    expect(img.data[2]).toBe(1.0);
    expect(img.data[0]).toBe(0.0);
    expect(img.data[3]).toBeCloseTo(0.2, 6);
  });

  it("rejects a bad magic", () => {
    const buf = idxImages(1, 2, 2, () => 0);
    buf.writeUInt32BE(0x804, 0);
    expect(() => parseIdxImages(buf)).toThrow(/magic/);
  });

  it("rejects truncated files", () => {
    const buf = idxImages(2, 3, 3, () => 7);
    expect(() => parseIdxImages(buf.subarray(0, buf.length - 4))).toThrow(/truncated/);
  });

  it("parses labels", () => {
    const buf = Buffer.alloc(8 + 3);
    buf.writeUInt32BE(0x801, 0);
    buf.writeUInt32BE(3, 4);
    buf[8] = 7;
    buf[9] = 0;
    buf[10] = 9;
    expect(Array.from(parseIdxLabels(buf))).toEqual([7, 0, 9]);
  });
});

describe("bundled dataset", () => {
  it("loads the canonical t10k files from the mnist-data package", () => {
    const dir = bundledMnistDir();
    const ds = loadDataset(`${dir}/t10k-images-idx3-ubyte`, `${dir}/t10k-labels-idx1-ubyte`, 100);
    expect(ds.count).toBe(100);
    expect(ds.rows).toBe(28);
    expect(ds.cols).toBe(28);
    expect(Math.max(...ds.labels)).toBeLessThanOrEqual(9);
  });
});
