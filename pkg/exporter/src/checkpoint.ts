/**
 * Checkpoint: manifest.json + weights.bin (float32 little-endian blobs).
 * This is the "source framework" artifact the exporter converts.
 */

import { mkdirSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { ARCH, DIMS, Model, createModel } from "./bnn.js";

export interface TensorEntry {
  name: string;
  shape: number[];
  offset: number;
  length: number; // bytes
}

export interface CheckpointManifest {
  version: 1;
  name: string;
  theta: number;
  arch: typeof ARCH;
  tensors: TensorEntry[];
  training?: Record<string, unknown>;
}

function tensorList(model: Model): Array<[string, number[], Float32Array]> {
  return [
    ["conv_1/weights", [ARCH.conv1Filters, ARCH.kernel, ARCH.kernel, 1], model.conv1.val],
    ["bn_1/gamma", [ARCH.conv1Filters], model.bn1.gamma],
    ["bn_1/beta", [ARCH.conv1Filters], model.bn1.beta],
    ["bn_1/moving_mean", [ARCH.conv1Filters], model.bn1.runningMean],
    ["bn_1/moving_variance", [ARCH.conv1Filters], model.bn1.runningVar],
    ["conv_2/weights", [ARCH.conv2Filters, ARCH.kernel, ARCH.kernel, ARCH.conv1Filters], model.conv2.val],
    ["bn_2/gamma", [ARCH.conv2Filters], model.bn2.gamma],
    ["bn_2/beta", [ARCH.conv2Filters], model.bn2.beta],
    ["bn_2/moving_mean", [ARCH.conv2Filters], model.bn2.runningMean],
    ["bn_2/moving_variance", [ARCH.conv2Filters], model.bn2.runningVar],
    ["dense_0/weights", [ARCH.dense0Units, DIMS.flat], model.dense0.val],
    ["bn_3/gamma", [ARCH.dense0Units], model.bn3.gamma],
    ["bn_3/beta", [ARCH.dense0Units], model.bn3.beta],
    ["bn_3/moving_mean", [ARCH.dense0Units], model.bn3.runningMean],
    ["bn_3/moving_variance", [ARCH.dense0Units], model.bn3.runningVar],
    ["dense_1/weights", [ARCH.classes, ARCH.dense0Units], model.dense1.val],
  ];
}

export function saveCheckpoint(model: Model, dir: string, training?: Record<string, unknown>): void {
  mkdirSync(dir, { recursive: true });
  const tensors: TensorEntry[] = [];
  const blobs: Buffer[] = [];
  let offset = 0;
  for (const [name, shape, data] of tensorList(model)) {
    const buf = Buffer.from(new Float32Array(data).buffer);
    tensors.push({ name, shape, offset, length: buf.length });
    blobs.push(buf);
    offset += buf.length;
  }
  const manifest: CheckpointManifest = { version: 1, name: "tiny_lenet", theta: ARCH.theta, arch: ARCH, tensors, training };
  writeFileSync(join(dir, "manifest.json"), JSON.stringify(manifest, null, 2));
  writeFileSync(join(dir, "weights.bin"), Buffer.concat(blobs));
}

export function loadCheckpoint(dir: string): { model: Model; manifest: CheckpointManifest } {
  const manifest = JSON.parse(readFileSync(join(dir, "manifest.json"), "utf-8")) as CheckpointManifest;
  if (manifest.version !== 1) throw new Error(`unsupported checkpoint version ${manifest.version}`);
  const bin = readFileSync(join(dir, "weights.bin"));
  const model = createModel(0);
  const byName = new Map(manifest.tensors.map((t) => [t.name, t]));
  const read = (name: string, expect: number): Float32Array => {
    const t = byName.get(name);
    if (!t) throw new Error(`checkpoint missing tensor ${name}`);
    if (t.length !== expect * 4) throw new Error(`tensor ${name}: ${t.length} bytes, expected ${expect * 4}`);
    if (t.offset + t.length > bin.length) throw new Error(`tensor ${name} extends past weights.bin`);
    return new Float32Array(bin.buffer.slice(bin.byteOffset + t.offset, bin.byteOffset + t.offset + t.length));
  };
  model.conv1.val.set(read("conv_1/weights", model.conv1.val.length));
  model.conv2.val.set(read("conv_2/weights", model.conv2.val.length));
  model.dense0.val.set(read("dense_0/weights", model.dense0.val.length));
  model.dense1.val.set(read("dense_1/weights", model.dense1.val.length));
  for (const [bnName, bn] of [
    ["bn_1", model.bn1],
    ["bn_2", model.bn2],
    ["bn_3", model.bn3],
  ] as const) {
    bn.gamma.set(read(`${bnName}/gamma`, bn.gamma.length));
    bn.beta.set(read(`${bnName}/beta`, bn.beta.length));
    bn.runningMean.set(read(`${bnName}/moving_mean`, bn.runningMean.length));
    bn.runningVar.set(read(`${bnName}/moving_variance`, bn.runningVar.length));
  }
  return { model, manifest };
}
