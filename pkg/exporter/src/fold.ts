/**
 * Fold batch normalization + sign activation into per-channel integer
 * thresholds: sign(gamma*(y-mean)/sqrt(var+eps)+beta) == direction*(y-t) >= 0
 * for every achievable integer accumulator y in [-K, K] (y has K's parity).
 *
 * direction = sign(gamma); t = ceil(cut) for +1, floor(cut) for -1 where
 * cut = mean - beta*sqrt(var+eps)/gamma; a gamma of exactly zero makes the
 * activation constant and folds to an always-true / always-false compare.
 * The candidate is verified (and nudged if float rounding put it one step
 * off) by exhaustive agreement over the achievable values.
 */

import { BN_EPS, BnParams } from "./ops.js";

export interface FoldedChannel {
  threshold: number;
  direction: 1 | -1;
  checked: number; // achievable values verified
}

export function bnSign(y: number, gamma: number, beta: number, mean: number, variance: number): number {
  return gamma * ((y - mean) / Math.sqrt(variance + BN_EPS)) + beta >= 0 ? 1 : -1;
}

function decision(y: number, t: number, d: number): number {
  return d * (y - t) >= 0 ? 1 : -1;
}

function verify(t: number, d: 1 | -1, k: number, gamma: number, beta: number, mean: number, variance: number): number {
  let checked = 0;
  for (let y = -k; y <= k; y += 2) {
    if (decision(y, t, d) !== bnSign(y, gamma, beta, mean, variance)) return -1;
    checked++;
  }
  return checked;
}

export function foldChannel(gamma: number, beta: number, mean: number, variance: number, k: number): FoldedChannel {
  let t: number;
  let d: 1 | -1;
  if (gamma === 0) {
    // constant activation: pick a threshold no achievable y can cross
    d = 1;
    t = beta >= 0 ? -(k + 1) : k + 1;
  } else {
    d = gamma > 0 ? 1 : -1;
    const cut = mean - (beta * Math.sqrt(variance + BN_EPS)) / gamma;
    t = d === 1 ? Math.ceil(cut) : Math.floor(cut);
  }
  for (const cand of [t, t - 1, t + 1, t - 2, t + 2]) {
    const checked = verify(cand, d, k, gamma, beta, mean, variance);
    if (checked >= 0) return { threshold: cand, direction: d, checked };
  }
  throw new Error(
    `fold failed: no integer threshold reproduces sign(bn) for gamma=${gamma} beta=${beta} mean=${mean} var=${variance} K=${k}`,
  );
}

export function foldBn(bn: BnParams, k: number): FoldedChannel[] {
  const out: FoldedChannel[] = [];
  for (let c = 0; c < bn.gamma.length; c++) {
    out.push(foldChannel(bn.gamma[c], bn.beta[c], bn.runningMean[c], bn.runningVar[c], k));
  }
  return out;
}
