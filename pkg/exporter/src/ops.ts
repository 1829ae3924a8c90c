/**
 * Typed-array tensor kernels for the tiny-BNN trainer: dot-form matmul,
 * im2col/col2im, max-pooling with argmax, and batch normalization.
 * Everything is Float32Array + explicit shapes; no framework.
 */

/** C[M,N] = A[M,K] . BT[N,K]^T  (both operands row-contiguous). */
export function dotT(A: Float32Array, BT: Float32Array, M: number, K: number, N: number): Float32Array {
  const C = new Float32Array(M * N);
  const kEnd = K - 3;
  for (let i = 0; i < M; i++) {
    const ai = i * K;
    const ci = i * N;
    for (let j = 0; j < N; j++) {
      const bj = j * K;
      let s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      let k = 0;
      for (; k < kEnd; k += 4) {
        s0 += A[ai + k] * BT[bj + k];
        s1 += A[ai + k + 1] * BT[bj + k + 1];
        s2 += A[ai + k + 2] * BT[bj + k + 2];
        s3 += A[ai + k + 3] * BT[bj + k + 3];
      }
      for (; k < K; k++) s0 += A[ai + k] * BT[bj + k];
      C[ci + j] = s0 + s1 + s2 + s3;
    }
  }
  return C;
}

export function transpose(A: Float32Array, M: number, N: number): Float32Array {
  const T = new Float32Array(N * M);
  for (let i = 0; i < M; i++) {
    const ai = i * N;
    for (let j = 0; j < N; j++) T[j * M + i] = A[ai + j];
  }
  return T;
}

/** C[M,N] = A[M,K] . B[K,N]. */
export function matmul(A: Float32Array, B: Float32Array, M: number, K: number, N: number): Float32Array {
  return dotT(A, transpose(B, K, N), M, K, N);
}

/** C[K1,K2] = A[M,K1]^T . B[M,K2]  (for weight gradients). */
export function matmulATB(A: Float32Array, B: Float32Array, M: number, K1: number, K2: number): Float32Array {
  return dotT(transpose(A, M, K1), transpose(B, M, K2), K1, M, K2);
}

export interface ConvDims {
  batch: number;
  h: number;
  w: number;
  c: number;
  kh: number;
  kw: number;
  oh: number;
  ow: number;
}

export function convDims(batch: number, h: number, w: number, c: number, kh: number, kw: number): ConvDims {
  return { batch, h, w, c, kh, kw, oh: h - kh + 1, ow: w - kw + 1 };
}

/**
 * [B,H,W,C] -> [B*OH*OW, KH*KW*C], valid padding, stride 1.
 * Column order (ky, kx, c) row-major: the container's weight layout.
 */
export function im2col(x: Float32Array, d: ConvDims): Float32Array {
  const K = d.kh * d.kw * d.c;
  const out = new Float32Array(d.batch * d.oh * d.ow * K);
  let r = 0;
  for (let b = 0; b < d.batch; b++) {
    const xb = b * d.h * d.w * d.c;
    for (let oy = 0; oy < d.oh; oy++) {
      for (let ox = 0; ox < d.ow; ox++) {
        let col = r * K;
        for (let ky = 0; ky < d.kh; ky++) {
          const row = xb + ((oy + ky) * d.w + ox) * d.c;
          for (let kx = 0; kx < d.kw; kx++) {
            const px = row + kx * d.c;
            for (let c = 0; c < d.c; c++) out[col++] = x[px + c];
          }
        }
        r++;
      }
    }
  }
  return out;
}

/** Scatter-add inverse of im2col: [B*OH*OW, K] gradients -> [B,H,W,C]. */
export function col2im(cols: Float32Array, d: ConvDims): Float32Array {
  const K = d.kh * d.kw * d.c;
  const out = new Float32Array(d.batch * d.h * d.w * d.c);
  let r = 0;
  for (let b = 0; b < d.batch; b++) {
    const xb = b * d.h * d.w * d.c;
    for (let oy = 0; oy < d.oh; oy++) {
      for (let ox = 0; ox < d.ow; ox++) {
        let col = r * K;
        for (let ky = 0; ky < d.kh; ky++) {
          const row = xb + ((oy + ky) * d.w + ox) * d.c;
          for (let kx = 0; kx < d.kw; kx++) {
            const px = row + kx * d.c;
            for (let c = 0; c < d.c; c++) out[px + c] += cols[col++];
          }
        }
        r++;
      }
    }
  }
  return out;
}

export interface PoolResult {
  out: Float32Array;
  argmax: Int32Array; // flat input index of each pooled maximum
  oh: number;
  ow: number;
}

/** 2x2/stride-2 style max pool over [B,H,W,C] (window w, stride s, valid). */
export function maxPool(
  x: Float32Array,
  batch: number,
  h: number,
  w: number,
  c: number,
  win: number,
  stride: number,
): PoolResult {
  const oh = Math.floor((h - win) / stride) + 1;
  const ow = Math.floor((w - win) / stride) + 1;
  const out = new Float32Array(batch * oh * ow * c);
  const argmax = new Int32Array(batch * oh * ow * c);
  let o = 0;
  for (let b = 0; b < batch; b++) {
    const xb = b * h * w * c;
    for (let oy = 0; oy < oh; oy++) {
      for (let ox = 0; ox < ow; ox++) {
        for (let ch = 0; ch < c; ch++) {
          let best = -Infinity;
          let bestIdx = -1;
          for (let ky = 0; ky < win; ky++) {
            for (let kx = 0; kx < win; kx++) {
              const idx = xb + ((oy * stride + ky) * w + (ox * stride + kx)) * c + ch;
              if (x[idx] > best) {
                best = x[idx];
                bestIdx = idx;
              }
            }
          }
          out[o] = best;
          argmax[o] = bestIdx;
          o++;
        }
      }
    }
  }
  return { out, argmax, oh, ow };
}

export function maxUnpool(dy: Float32Array, argmax: Int32Array, inputSize: number): Float32Array {
  const dx = new Float32Array(inputSize);
  for (let i = 0; i < dy.length; i++) dx[argmax[i]] += dy[i];
  return dx;
}

export interface BnParams {
  gamma: Float32Array;
  beta: Float32Array;
  runningMean: Float32Array;
  runningVar: Float32Array;
}

export interface BnCache {
  xhat: Float32Array;
  invStd: Float32Array;
}

export const BN_EPS = 1e-5;
export const BN_MOMENTUM = 0.9;

export function bnInit(channels: number): BnParams {
  return {
    gamma: new Float32Array(channels).fill(1),
    beta: new Float32Array(channels),
    runningMean: new Float32Array(channels),
    runningVar: new Float32Array(channels).fill(1),
  };
}

/** Training-mode BN over [rows, C]; updates running stats in place. */
export function bnForwardTrain(x: Float32Array, rows: number, c: number, p: BnParams): { y: Float32Array; cache: BnCache } {
  const mean = new Float64Array(c);
  const varr = new Float64Array(c);
  for (let i = 0; i < rows; i++) {
    const xi = i * c;
    for (let j = 0; j < c; j++) mean[j] += x[xi + j];
  }
  for (let j = 0; j < c; j++) mean[j] /= rows;
  for (let i = 0; i < rows; i++) {
    const xi = i * c;
    for (let j = 0; j < c; j++) {
      const d = x[xi + j] - mean[j];
      varr[j] += d * d;
    }
  }
  for (let j = 0; j < c; j++) varr[j] /= rows;
  const invStd = new Float32Array(c);
  for (let j = 0; j < c; j++) {
    invStd[j] = 1 / Math.sqrt(varr[j] + BN_EPS);
    p.runningMean[j] = BN_MOMENTUM * p.runningMean[j] + (1 - BN_MOMENTUM) * mean[j];
    p.runningVar[j] = BN_MOMENTUM * p.runningVar[j] + (1 - BN_MOMENTUM) * varr[j];
  }
  const xhat = new Float32Array(rows * c);
  const y = new Float32Array(rows * c);
  for (let i = 0; i < rows; i++) {
    const xi = i * c;
    for (let j = 0; j < c; j++) {
      const h = (x[xi + j] - mean[j]) * invStd[j];
      xhat[xi + j] = h;
      y[xi + j] = p.gamma[j] * h + p.beta[j];
    }
  }
  return { y, cache: { xhat, invStd } };
}

/** Inference-mode BN using running stats, computed in float64. */
export function bnForwardEval(x: Float32Array, rows: number, c: number, p: BnParams): Float32Array {
  const y = new Float32Array(rows * c);
  for (let j = 0; j < c; j++) {
    const is = 1 / Math.sqrt(p.runningVar[j] + BN_EPS);
    const g = p.gamma[j];
    const b = p.beta[j];
    const m = p.runningMean[j];
    for (let i = 0; i < rows; i++) y[i * c + j] = g * (x[i * c + j] - m) * is + b;
  }
  return y;
}

export function bnBackward(
  dy: Float32Array,
  rows: number,
  c: number,
  p: BnParams,
  cache: BnCache,
): { dx: Float32Array; dGamma: Float32Array; dBeta: Float32Array } {
  const dGamma = new Float32Array(c);
  const dBeta = new Float32Array(c);
  const sumDxhat = new Float64Array(c);
  const sumDxhatXhat = new Float64Array(c);
  for (let i = 0; i < rows; i++) {
    const xi = i * c;
    for (let j = 0; j < c; j++) {
      const g = dy[xi + j];
      dBeta[j] += g;
      dGamma[j] += g * cache.xhat[xi + j];
      const dxh = g * p.gamma[j];
      sumDxhat[j] += dxh;
      sumDxhatXhat[j] += dxh * cache.xhat[xi + j];
    }
  }
  const dx = new Float32Array(rows * c);
  for (let i = 0; i < rows; i++) {
    const xi = i * c;
    for (let j = 0; j < c; j++) {
      const dxh = dy[xi + j] * p.gamma[j];
      dx[xi + j] = (cache.invStd[j] / rows) * (rows * dxh - sumDxhat[j] - cache.xhat[xi + j] * sumDxhatXhat[j]);
    }
  }
  return { dx, dGamma, dBeta };
}

/** sign with the engine's tie rule: zero maps to +1. */
export function signValue(v: number): number {
  return v >= 0 ? 1 : -1;
}

export function signArray(x: Float32Array): Float32Array {
  const y = new Float32Array(x.length);
  for (let i = 0; i < x.length; i++) y[i] = x[i] >= 0 ? 1 : -1;
  return y;
}

/** Straight-through gradient gate for sign activations: pass iff |x| <= 1. */
export function steMask(x: Float32Array, dy: Float32Array): Float32Array {
  const dx = new Float32Array(x.length);
  for (let i = 0; i < x.length; i++) dx[i] = Math.abs(x[i]) <= 1 ? dy[i] : 0;
  return dx;
}
