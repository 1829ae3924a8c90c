/**
 * Train the tiny binary LeNet on MNIST with pinned seeds and save a
 * checkpoint. All randomness (init, shuffling) flows from --seed, so the
 * checkpoint is reproducible bit-for-bit.
 *
 * Usage: tsx src/train.ts [--epochs 6] [--batch 100] [--lr 0.005]
 *        [--seed 42] [--subset 30000] [--out checkpoint]
 *        [--train-images <idx> --train-labels <idx>]
 */

import { ARCH, createModel, evaluate, trainStep } from "./bnn.js";
import { saveCheckpoint } from "./checkpoint.js";
import { bundledMnistDir, loadDataset } from "./mnist.js";
import { SplitMix64 } from "./rng.js";

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
  const epochs = Number(args.get("epochs") ?? "6");
  const batch = Number(args.get("batch") ?? "100");
  const lr = Number(args.get("lr") ?? "0.005");
  const seed = Number(args.get("seed") ?? "42");
  const subset = Number(args.get("subset") ?? "30000");
  const outDir = args.get("out") ?? "checkpoint";

  const dir = bundledMnistDir();
  const train = loadDataset(
    args.get("train-images") ?? `${dir}/train-images-idx3-ubyte`,
    args.get("train-labels") ?? `${dir}/train-labels-idx1-ubyte`,
    subset,
  );
  const val = loadDataset(`${dir}/t10k-images-idx3-ubyte`, `${dir}/t10k-labels-idx1-ubyte`, 1000);
  console.log(`training on ${train.count} images, validating on ${val.count}; seed ${seed}`);

  const model = createModel(seed);
  const rng = new SplitMix64(seed + 1);
  const pix = ARCH.inputSize * ARCH.inputSize;
  const order = new Int32Array(train.count);
  const batchImages = new Float32Array(batch * pix);
  const batchLabels = new Uint8Array(batch);

  for (let epoch = 1; epoch <= epochs; epoch++) {
    for (let i = 0; i < order.length; i++) order[i] = i;
    rng.shuffle(order);
    let lossSum = 0;
    let accSum = 0;
    let steps = 0;
    const t0 = Date.now();
    for (let start = 0; start + batch <= train.count; start += batch) {
      for (let i = 0; i < batch; i++) {
        const src = order[start + i] * pix;
        batchImages.set(train.images.subarray(src, src + pix), i * pix);
        batchLabels[i] = train.labels[order[start + i]];
      }
      const { loss, accuracy } = trainStep(model, batchImages, batchLabels, batch, lr);
      lossSum += loss;
      accSum += accuracy;
      steps++;
      if (steps % 100 === 0) {
        console.log(
          `  epoch ${epoch} step ${steps}: loss ${(lossSum / steps).toFixed(4)} ` +
            `train-acc ${((accSum / steps) * 100).toFixed(1)}%`,
        );
      }
    }
    const valAcc = evaluate(model, val.images, val.labels, val.count);
    console.log(
      `epoch ${epoch}/${epochs}: loss ${(lossSum / steps).toFixed(4)} ` +
        `val-acc ${(valAcc * 100).toFixed(2)}% (${((Date.now() - t0) / 1000).toFixed(0)}s)`,
    );
  }
  const finalAcc = evaluate(model, val.images, val.labels, val.count);
  saveCheckpoint(model, outDir, { seed, epochs, batch, lr, subset, val_accuracy: finalAcc });
  console.log(`saved checkpoint to ${outDir}/ (val accuracy ${(finalAcc * 100).toFixed(2)}%)`);
}

main().catch((e) => {
  console.error(e);
  process.exit(1);
});
