/**
 * Convert a trained checkpoint into the FLIMMD01 model container: binarize
 * weights by sign, fold each batch norm into per-channel integer thresholds
 * (validated exhaustively over the achievable accumulator range), and report
 * top-1 agreement between the source model and the exported stack.
 *
 * Usage:
 *   tsx src/export.ts --checkpoint <dir> --out <container> \
 *       --val-images <idx> --val-labels <idx> [--subset 1000] [--report <json>]
 */

import { writeFileSync } from "node:fs";

import { ARCH, DIMS, Model, forwardEval } from "./bnn.js";
import { loadCheckpoint } from "./checkpoint.js";
import { ContainerBuilder, binarizeWeights } from "./container.js";
import { FoldedChannel, foldBn } from "./fold.js";
import { ExportedStack, intForward } from "./intinfer.js";
import { bundledMnistDir, loadDataset } from "./mnist.js";

export interface ExportReport {
  name: string;
  layer_map: Record<string, string>;
  binarization: Record<string, { weights: number; plus_one_fraction: number }>;
  folds: Record<string, { k: number; channels: Array<{ threshold: number; direction: number; checked: number }> }>;
  agreement: { samples: number; matches: number; rate: number } | null;
  source_accuracy: number | null;
  exported_accuracy: number | null;
}

function plusFraction(signs: Int8Array): number {
  let plus = 0;
  for (const s of signs) if (s > 0) plus++;
  return plus / signs.length;
}

export function exportModel(model: Model): { container: Buffer; stack: ExportedStack; report: ExportReport } {
  const wb1 = binarizeWeights(model.conv1.val);
  const wb2 = binarizeWeights(model.conv2.val);
  const wb3 = binarizeWeights(model.dense0.val);
  const wb4 = binarizeWeights(model.dense1.val);
  // accumulator ranges: conv/dense reduction lengths (pooling preserves range)
  const bn1 = foldBn(model.bn1, DIMS.k1);
  const bn2 = foldBn(model.bn2, DIMS.k2);
  const bn3 = foldBn(model.bn3, DIMS.flat);

  const b = new ContainerBuilder();
  b.inputBinarize("binarize", ARCH.theta);
  b.conv("conv_1", wb1, [ARCH.conv1Filters, ARCH.kernel, ARCH.kernel, 1], [1, 1], "valid");
  b.maxPool("pool_1", [2, 2], [2, 2]);
  b.threshold("bn_1", bn1.map((f) => f.threshold), bn1.map((f) => f.direction));
  b.conv("conv_2", wb2, [ARCH.conv2Filters, ARCH.kernel, ARCH.kernel, ARCH.conv1Filters], [1, 1], "valid");
  b.maxPool("pool_2", [2, 2], [2, 2]);
  b.threshold("bn_2", bn2.map((f) => f.threshold), bn2.map((f) => f.direction));
  b.flatten("flatten");
  b.dense("dense_0", wb3, [ARCH.dense0Units, DIMS.flat]);
  b.threshold("bn_3", bn3.map((f) => f.threshold), bn3.map((f) => f.direction));
  b.dense("dense_1", wb4, [ARCH.classes, ARCH.dense0Units]);
  const container = b.build("tiny_lenet", [ARCH.inputSize, ARCH.inputSize, 1], ARCH.classes, ARCH.theta);

  const toF32 = (s: Int8Array) => Float32Array.from(s);
  const stack: ExportedStack = {
    conv1: toF32(wb1),
    conv2: toF32(wb2),
    dense0: toF32(wb3),
    dense1: toF32(wb4),
    bn1,
    bn2,
    bn3,
  };
  const foldRec = (folds: FoldedChannel[], k: number) => ({
    k,
    channels: folds.map((f) => ({ threshold: f.threshold, direction: f.direction, checked: f.checked })),
  });
  const report: ExportReport = {
    name: "tiny_lenet",
    layer_map: {
      "conv_1/weights": "conv_1",
      "bn_1/*": "bn_1",
      "conv_2/weights": "conv_2",
      "bn_2/*": "bn_2",
      "dense_0/weights": "dense_0",
      "bn_3/*": "bn_3",
      "dense_1/weights": "dense_1",
    },
    binarization: {
      conv_1: { weights: wb1.length, plus_one_fraction: plusFraction(wb1) },
      conv_2: { weights: wb2.length, plus_one_fraction: plusFraction(wb2) },
      dense_0: { weights: wb3.length, plus_one_fraction: plusFraction(wb3) },
      dense_1: { weights: wb4.length, plus_one_fraction: plusFraction(wb4) },
    },
    folds: { bn_1: foldRec(bn1, DIMS.k1), bn_2: foldRec(bn2, DIMS.k2), bn_3: foldRec(bn3, DIMS.flat) },
    agreement: null,
    source_accuracy: null,
    exported_accuracy: null,
  };
  return { container, stack, report };
}

export function measureAgreement(
  model: Model,
  stack: ExportedStack,
  images: Float32Array,
  labels: Uint8Array,
  count: number,
  batch = 200,
): { samples: number; matches: number; rate: number; sourceAcc: number; exportedAcc: number } {
  if (count < 100) throw new Error(`agreement needs at least 100 samples, got ${count}`);
  const pix = ARCH.inputSize * ARCH.inputSize;
  let matches = 0;
  let srcCorrect = 0;
  let expCorrect = 0;
  for (let start = 0; start < count; start += batch) {
    const n = Math.min(batch, count - start);
    const chunk = images.subarray(start * pix, (start + n) * pix);
    const src = forwardEval(model, chunk, n);
    const exp = intForward(stack, chunk, n);
    for (let i = 0; i < n; i++) {
      if (src.predictions[i] === exp.predictions[i]) matches++;
      if (src.predictions[i] === labels[start + i]) srcCorrect++;
      if (exp.predictions[i] === labels[start + i]) expCorrect++;
    }
  }
  return { samples: count, matches, rate: matches / count, sourceAcc: srcCorrect / count, exportedAcc: expCorrect / count };
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
  const ckptDir = args.get("checkpoint") ?? "checkpoint";
  const outPath = args.get("out");
  if (!outPath) throw new Error("--out <container path> is required");
  const subset = Number(args.get("subset") ?? "1000");
  const { model } = loadCheckpoint(ckptDir);
  const { container, stack, report } = exportModel(model);
  writeFileSync(outPath, container);
  console.log(`wrote ${outPath} (${container.length} bytes)`);

  const dir = bundledMnistDir();
  const imagesPath = args.get("val-images") ?? `${dir}/t10k-images-idx3-ubyte`;
  const labelsPath = args.get("val-labels") ?? `${dir}/t10k-labels-idx1-ubyte`;
  const ds = loadDataset(imagesPath, labelsPath, subset);
  const agr = measureAgreement(model, stack, ds.images, ds.labels, ds.count);
  report.agreement = { samples: agr.samples, matches: agr.matches, rate: agr.rate };
  report.source_accuracy = agr.sourceAcc;
  report.exported_accuracy = agr.exportedAcc;
  console.log(
    `agreement ${agr.matches}/${agr.samples} = ${(agr.rate * 100).toFixed(2)}%; ` +
      `source acc ${(agr.sourceAcc * 100).toFixed(2)}%, exported acc ${(agr.exportedAcc * 100).toFixed(2)}%`,
  );
  const reportPath = args.get("report");
  if (reportPath) {
    writeFileSync(reportPath, JSON.stringify(report, null, 2));
    console.log(`wrote ${reportPath}`);
  }
}

if (process.argv[1] && process.argv[1].endsWith("export.ts")) {
  main().catch((e) => {
    console.error(e);
    process.exit(1);
  });
}
