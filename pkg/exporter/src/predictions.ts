/**
 * Emit the reference-predictions CSV from the source (checkpoint) model:
 * index,label,prediction,logit_0..logit_9. Deterministic; the simulator's
 * test suite uses it as golden data.
 *
 * Usage: tsx src/predictions.ts --checkpoint <dir> --out <csv>
 *        [--images <idx> --labels <idx>] [--subset 1000]
 */

import { writeFileSync } from "node:fs";

import { ARCH, forwardEval } from "./bnn.js";
import { loadCheckpoint } from "./checkpoint.js";
import { bundledMnistDir, loadDataset } from "./mnist.js";

export function predictionsCsv(
  model: ReturnType<typeof loadCheckpoint>["model"],
  images: Float32Array,
  labels: Uint8Array,
  count: number,
  batch = 200,
): string {
  const pix = ARCH.inputSize * ARCH.inputSize;
  const header = ["index", "label", "prediction", ...Array.from({ length: ARCH.classes }, (_, j) => `logit_${j}`)];
  const lines = [header.join(",")];
  for (let start = 0; start < count; start += batch) {
    const n = Math.min(batch, count - start);
    const res = forwardEval(model, images.subarray(start * pix, (start + n) * pix), n);
    for (let i = 0; i < n; i++) {
      const logits = [];
      for (let j = 0; j < ARCH.classes; j++) logits.push(res.logits[i * ARCH.classes + j].toFixed(0));
      lines.push([start + i, labels[start + i], res.predictions[i], ...logits].join(","));
    }
  }
  return lines.join("\n") + "\n";
}

function parseArgs(argv: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--")) throw new Error(`unexpected argument ${argv[i]}`);
    out.set(argv[i].slice(2), argv[i + 1]);
  }
  return out;
}

async function main(): Promise<void> {
  const args = parseArgs(process.argv.slice(2));
  const outPath = args.get("out");
  if (!outPath) throw new Error("--out <csv path> is required");
  const subset = Number(args.get("subset") ?? "1000");
  const { model } = loadCheckpoint(args.get("checkpoint") ?? "checkpoint");
  const dir = bundledMnistDir();
  const ds = loadDataset(
    args.get("images") ?? `${dir}/t10k-images-idx3-ubyte`,
    args.get("labels") ?? `${dir}/t10k-labels-idx1-ubyte`,
    subset,
  );
  const csv = subset === 0 ? predictionsCsv(model, ds.images, ds.labels, 0) : predictionsCsv(model, ds.images, ds.labels, ds.count);
  writeFileSync(outPath, csv);
  console.log(`wrote ${outPath} (${csv.split("\n").length - 2} rows)`);
}

if (process.argv[1] && process.argv[1].endsWith("predictions.ts")) {
  main().catch((e) => {
    console.error(e);
    process.exit(1);
  });
}
