/**
 * Integer-only inference over the exported layer stack (binary weights +
 * folded thresholds). Used to compute the exported-container predictions for
 * the agreement check without leaving this package.
 */

import { ARCH, DIMS, binarizeInput } from "./bnn.js";
import { FoldedChannel } from "./fold.js";
import { convDims, dotT, im2col, maxPool } from "./ops.js";

export interface ExportedStack {
  conv1: Float32Array; // ±1, [16, 9]
  conv2: Float32Array; // ±1, [32, 144]
  dense0: Float32Array; // ±1, [128, 800]
  dense1: Float32Array; // ±1, [10, 128]
  bn1: FoldedChannel[];
  bn2: FoldedChannel[];
  bn3: FoldedChannel[];
}

function applyThreshold(x: Float32Array, rows: number, folded: FoldedChannel[]): Float32Array {
  const c = folded.length;
  const out = new Float32Array(rows * c);
  for (let i = 0; i < rows; i++) {
    const xi = i * c;
    for (let j = 0; j < c; j++) {
      out[xi + j] = folded[j].direction * (x[xi + j] - folded[j].threshold) >= 0 ? 1 : -1;
    }
  }
  return out;
}

export function intForward(stack: ExportedStack, images: Float32Array, batch: number): { logits: Int32Array; predictions: Int32Array } {
  const s = ARCH.inputSize;
  const xb = binarizeInput(images, ARCH.theta);
  const d1 = convDims(batch, s, s, 1, ARCH.kernel, ARCH.kernel);
  const h1 = dotT(im2col(xb, d1), stack.conv1, batch * d1.oh * d1.ow, DIMS.k1, ARCH.conv1Filters);
  const p1 = maxPool(h1, batch, d1.oh, d1.ow, ARCH.conv1Filters, 2, 2);
  const a1 = applyThreshold(p1.out, batch * p1.oh * p1.ow, stack.bn1);

  const d2 = convDims(batch, p1.oh, p1.ow, ARCH.conv1Filters, ARCH.kernel, ARCH.kernel);
  const h2 = dotT(im2col(a1, d2), stack.conv2, batch * d2.oh * d2.ow, DIMS.k2, ARCH.conv2Filters);
  const p2 = maxPool(h2, batch, d2.oh, d2.ow, ARCH.conv2Filters, 2, 2);
  const a2 = applyThreshold(p2.out, batch * p2.oh * p2.ow, stack.bn2);

  const h3 = dotT(a2, stack.dense0, batch, DIMS.flat, ARCH.dense0Units);
  const a3 = applyThreshold(h3, batch, stack.bn3);

  const logitsF = dotT(a3, stack.dense1, batch, ARCH.dense0Units, ARCH.classes);
  const logits = new Int32Array(logitsF.length);
  const predictions = new Int32Array(batch);
  for (let b = 0; b < batch; b++) {
    let best = -Infinity;
    let arg = 0;
    for (let j = 0; j < ARCH.classes; j++) {
      const v = logitsF[b * ARCH.classes + j];
      logits[b * ARCH.classes + j] = v;
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    predictions[b] = arg;
  }
  return { logits, predictions };
}
