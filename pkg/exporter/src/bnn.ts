/**
 * Tiny binary LeNet: sign-binarized conv/dense weights, binarized input,
 * batch-norm + sign activations, integer-valued logits. Forward, manual
 * backprop with straight-through estimators, and Adam.
 *
 * Weight layout matches the export container: conv rows are filters over
 * (ky, kx, in_ch) row-major, dense rows are output units over inputs.
 */

import {
  BnCache,
  BnParams,
  bnBackward,
  bnForwardEval,
  bnForwardTrain,
  bnInit,
  col2im,
  convDims,
  dotT,
  im2col,
  matmul,
  matmulATB,
  maxPool,
  maxUnpool,
  signArray,
  steMask,
} from "./ops.js";
import { SplitMix64 } from "./rng.js";

export const ARCH = {
  inputSize: 28,
  theta: 0.5,
  conv1Filters: 16,
  conv2Filters: 32,
  kernel: 3,
  dense0Units: 128,
  classes: 10,
  lossScale: 0.1,
} as const;

// derived spatial sizes (valid convs, 2x2/2 pools)
export const DIMS = {
  conv1Out: 26,
  pool1Out: 13,
  conv2Out: 11,
  pool2Out: 5,
  flat: 5 * 5 * ARCH.conv2Filters,
  k1: ARCH.kernel * ARCH.kernel * 1,
  k2: ARCH.kernel * ARCH.kernel * ARCH.conv1Filters,
} as const;

export interface Param {
  val: Float32Array;
  m: Float64Array;
  v: Float64Array;
}

function param(size: number): Param {
  return { val: new Float32Array(size), m: new Float64Array(size), v: new Float64Array(size) };
}

export interface Model {
  conv1: Param; // [16, 9]
  conv2: Param; // [32, 144]
  dense0: Param; // [128, 800]
  dense1: Param; // [10, 128]
  bn1: BnParams;
  bn2: BnParams;
  bn3: BnParams;
  bnParams: Param[]; // gamma/beta adam slots, in a fixed order
  step: number;
}

function glorotInit(p: Param, fanIn: number, fanOut: number, rng: SplitMix64): void {
  const limit = Math.sqrt(6 / (fanIn + fanOut));
  for (let i = 0; i < p.val.length; i++) p.val[i] = rng.uniform(limit);
}

export function createModel(seed: number): Model {
  const rng = new SplitMix64(seed);
  const conv1 = param(ARCH.conv1Filters * DIMS.k1);
  const conv2 = param(ARCH.conv2Filters * DIMS.k2);
  const dense0 = param(ARCH.dense0Units * DIMS.flat);
  const dense1 = param(ARCH.classes * ARCH.dense0Units);
  glorotInit(conv1, DIMS.k1, ARCH.conv1Filters, rng);
  glorotInit(conv2, DIMS.k2, ARCH.conv2Filters, rng);
  glorotInit(dense0, DIMS.flat, ARCH.dense0Units, rng);
  glorotInit(dense1, ARCH.dense0Units, ARCH.classes, rng);
  const bn1 = bnInit(ARCH.conv1Filters);
  const bn2 = bnInit(ARCH.conv2Filters);
  const bn3 = bnInit(ARCH.dense0Units);
  const bnParams = [bn1, bn2, bn3].flatMap((bn) => {
    const g = param(bn.gamma.length);
    const b = param(bn.beta.length);
    g.val.set(bn.gamma);
    b.val.set(bn.beta);
    return [g, b];
  });
  // adam slots alias the live arrays
  bn1.gamma = bnParams[0].val;
  bn1.beta = bnParams[1].val;
  bn2.gamma = bnParams[2].val;
  bn2.beta = bnParams[3].val;
  bn3.gamma = bnParams[4].val;
  bn3.beta = bnParams[5].val;
  return { conv1, conv2, dense0, dense1, bn1, bn2, bn3, bnParams, step: 0 };
}

export function binarizeInput(images: Float32Array, theta: number): Float32Array {
  const out = new Float32Array(images.length);
  for (let i = 0; i < images.length; i++) out[i] = images[i] > theta ? 1 : -1;
  return out;
}

export interface EvalResult {
  logits: Float32Array; // [batch, 10]
  predictions: Int32Array;
}

/** Inference-mode forward (running BN stats); the "framework" reference. */
export function forwardEval(model: Model, images: Float32Array, batch: number): EvalResult {
  const s = ARCH.inputSize;
  const xb = binarizeInput(images, ARCH.theta);
  const wb1 = signArray(model.conv1.val);
  const wb2 = signArray(model.conv2.val);
  const wb3 = signArray(model.dense0.val);
  const wb4 = signArray(model.dense1.val);

  const d1 = convDims(batch, s, s, 1, ARCH.kernel, ARCH.kernel);
  const cols1 = im2col(xb, d1);
  const h1 = dotT(cols1, wb1, batch * d1.oh * d1.ow, DIMS.k1, ARCH.conv1Filters);
  const p1 = maxPool(h1, batch, d1.oh, d1.ow, ARCH.conv1Filters, 2, 2);
  const y1 = bnForwardEval(p1.out, batch * p1.oh * p1.ow, ARCH.conv1Filters, model.bn1);
  const a1 = signArray(y1);

  const d2 = convDims(batch, p1.oh, p1.ow, ARCH.conv1Filters, ARCH.kernel, ARCH.kernel);
  const cols2 = im2col(a1, d2);
  const h2 = dotT(cols2, wb2, batch * d2.oh * d2.ow, DIMS.k2, ARCH.conv2Filters);
  const p2 = maxPool(h2, batch, d2.oh, d2.ow, ARCH.conv2Filters, 2, 2);
  const y2 = bnForwardEval(p2.out, batch * p2.oh * p2.ow, ARCH.conv2Filters, model.bn2);
  const a2 = signArray(y2);

  const h3 = dotT(a2, wb3, batch, DIMS.flat, ARCH.dense0Units);
  const y3 = bnForwardEval(h3, batch, ARCH.dense0Units, model.bn3);
  const a3 = signArray(y3);

  const logits = dotT(a3, wb4, batch, ARCH.dense0Units, ARCH.classes);
  const predictions = new Int32Array(batch);
  for (let b = 0; b < batch; b++) {
    let best = -Infinity;
    let arg = 0;
    for (let j = 0; j < ARCH.classes; j++) {
      const v = logits[b * ARCH.classes + j];
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    predictions[b] = arg;
  }
  return { logits, predictions };
}

function adamStep(p: Param, grad: Float32Array, lr: number, t: number, clip: boolean): void {
  const b1 = 0.9;
  const b2 = 0.999;
  const eps = 1e-8;
  const c1 = 1 - Math.pow(b1, t);
  const c2 = 1 - Math.pow(b2, t);
  for (let i = 0; i < p.val.length; i++) {
    const g = grad[i];
    p.m[i] = b1 * p.m[i] + (1 - b1) * g;
    p.v[i] = b2 * p.v[i] + (1 - b2) * g * g;
    let w = p.val[i] - (lr * (p.m[i] / c1)) / (Math.sqrt(p.v[i] / c2) + eps);
    if (clip) w = Math.min(1, Math.max(-1, w));
    p.val[i] = w;
  }
}

/** One training step; returns (mean CE loss, batch accuracy). */
export function trainStep(model: Model, images: Float32Array, labels: Uint8Array, batch: number, lr: number): { loss: number; accuracy: number } {
  const s = ARCH.inputSize;
  const scale = ARCH.lossScale;
  const xb = binarizeInput(images, ARCH.theta);
  const wb1 = signArray(model.conv1.val);
  const wb2 = signArray(model.conv2.val);
  const wb3 = signArray(model.dense0.val);
  const wb4 = signArray(model.dense1.val);

  // forward
  const d1 = convDims(batch, s, s, 1, ARCH.kernel, ARCH.kernel);
  const cols1 = im2col(xb, d1);
  const rows1 = batch * d1.oh * d1.ow;
  const h1 = dotT(cols1, wb1, rows1, DIMS.k1, ARCH.conv1Filters);
  const p1 = maxPool(h1, batch, d1.oh, d1.ow, ARCH.conv1Filters, 2, 2);
  const bnRows1 = batch * p1.oh * p1.ow;
  const bn1 = bnForwardTrain(p1.out, bnRows1, ARCH.conv1Filters, model.bn1);
  const a1 = signArray(bn1.y);

  const d2 = convDims(batch, p1.oh, p1.ow, ARCH.conv1Filters, ARCH.kernel, ARCH.kernel);
  const cols2 = im2col(a1, d2);
  const rows2 = batch * d2.oh * d2.ow;
  const h2 = dotT(cols2, wb2, rows2, DIMS.k2, ARCH.conv2Filters);
  const p2 = maxPool(h2, batch, d2.oh, d2.ow, ARCH.conv2Filters, 2, 2);
  const bnRows2 = batch * p2.oh * p2.ow;
  const bn2 = bnForwardTrain(p2.out, bnRows2, ARCH.conv2Filters, model.bn2);
  const a2 = signArray(bn2.y);

  const h3 = dotT(a2, wb3, batch, DIMS.flat, ARCH.dense0Units);
  const bn3 = bnForwardTrain(h3, batch, ARCH.dense0Units, model.bn3);
  const a3 = signArray(bn3.y);

  const logits = dotT(a3, wb4, batch, ARCH.dense0Units, ARCH.classes);

  // softmax cross-entropy on scaled logits
  const dLogits = new Float32Array(batch * ARCH.classes);
  let loss = 0;
  let correct = 0;
  for (let b = 0; b < batch; b++) {
    const off = b * ARCH.classes;
    let maxv = -Infinity;
    let arg = 0;
    for (let j = 0; j < ARCH.classes; j++) {
      const v = logits[off + j] * scale;
      if (v > maxv) {
        maxv = v;
        arg = j;
      }
    }
    if (arg === labels[b]) correct++;
    let denom = 0;
    for (let j = 0; j < ARCH.classes; j++) denom += Math.exp(logits[off + j] * scale - maxv);
    const logDenom = Math.log(denom);
    loss += logDenom - (logits[off + labels[b]] * scale - maxv);
    for (let j = 0; j < ARCH.classes; j++) {
      const p = Math.exp(logits[off + j] * scale - maxv) / denom;
      dLogits[off + j] = ((p - (j === labels[b] ? 1 : 0)) * scale) / batch;
    }
  }

  // backward
  const dA3 = matmul(dLogits, wb4, batch, ARCH.classes, ARCH.dense0Units);
  const dW4 = matmulATB(dLogits, a3, batch, ARCH.classes, ARCH.dense0Units);
  const dY3 = steMask(bn3.y, dA3);
  const g3 = bnBackward(dY3, batch, ARCH.dense0Units, model.bn3, bn3.cache);
  const dW3 = matmulATB(g3.dx, a2, batch, ARCH.dense0Units, DIMS.flat);
  const dA2 = matmul(g3.dx, wb3, batch, ARCH.dense0Units, DIMS.flat);

  const dY2 = steMask(bn2.y, dA2);
  const g2 = bnBackward(dY2, bnRows2, ARCH.conv2Filters, model.bn2, bn2.cache);
  const dH2 = maxUnpool(g2.dx, p2.argmax, rows2 * ARCH.conv2Filters);
  const dW2 = matmulATB(dH2, cols2, rows2, ARCH.conv2Filters, DIMS.k2);
  const dCols2 = matmul(dH2, wb2, rows2, ARCH.conv2Filters, DIMS.k2);
  const dA1 = col2im(dCols2, d2);

  const dY1 = steMask(bn1.y, dA1);
  const g1 = bnBackward(dY1, bnRows1, ARCH.conv1Filters, model.bn1, bn1.cache);
  const dH1 = maxUnpool(g1.dx, p1.argmax, rows1 * ARCH.conv1Filters);
  const dW1 = matmulATB(dH1, cols1, rows1, ARCH.conv1Filters, DIMS.k1);

  model.step++;
  const t = model.step;
  adamStep(model.conv1, dW1, lr, t, true);
  adamStep(model.conv2, dW2, lr, t, true);
  adamStep(model.dense0, dW3, lr, t, true);
  adamStep(model.dense1, dW4, lr, t, true);
  const bnGrads = [g1.dGamma, g1.dBeta, g2.dGamma, g2.dBeta, g3.dGamma, g3.dBeta];
  for (let i = 0; i < model.bnParams.length; i++) adamStep(model.bnParams[i], bnGrads[i], lr, t, false);

  return { loss: loss / batch, accuracy: correct / batch };
}

export function evaluate(model: Model, images: Float32Array, labels: Uint8Array, count: number, batch = 200): number {
  const pix = ARCH.inputSize * ARCH.inputSize;
  let correct = 0;
  for (let start = 0; start < count; start += batch) {
    const n = Math.min(batch, count - start);
    const res = forwardEval(model, images.subarray(start * pix, (start + n) * pix), n);
    for (let i = 0; i < n; i++) if (res.predictions[i] === labels[start + i]) correct++;
  }
  return correct / count;
}
