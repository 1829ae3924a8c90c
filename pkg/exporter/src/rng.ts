/**
 * SplitMix64 PRNG for reproducible weight init and data shuffling.
 * Same generator family the simulator pins for fault masks, implemented on
 * BigInt so streams are identical across platforms.
 */

const MASK64 = (1n << 64n) - 1n;
const GAMMA = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

export class SplitMix64 {
  private state: bigint;

  constructor(seed: bigint | number) {
    this.state = BigInt(seed) & MASK64;
  }

  nextU64(): bigint {
    this.state = (this.state + GAMMA) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * MIX1) & MASK64;
    z = ((z ^ (z >> 27n)) * MIX2) & MASK64;
    return z ^ (z >> 31n);
  }

  /** Uniform float in [0, 1) with 53 bits of precision. */
  unit(): number {
    return Number(this.nextU64() >> 11n) / 2 ** 53;
  }

  /** Uniform integer in [0, n). */
  below(n: number): number {
    if (n <= 0) throw new Error("bound must be positive");
    const bound = BigInt(n);
    const threshold = ((1n << 64n) % bound + bound) % bound;
    for (;;) {
      const x = this.nextU64();
      if (x >= threshold) return Number(x % bound);
    }
  }

  /** In-place Fisher-Yates shuffle. */
  shuffle(arr: Int32Array | number[]): void {
    for (let i = arr.length - 1; i > 0; i--) {
      const j = this.below(i + 1);
      const t = arr[i];
      arr[i] = arr[j];
      arr[j] = t;
    }
  }

  /** Uniform float in [-limit, limit). */
  uniform(limit: number): number {
    return (this.unit() * 2 - 1) * limit;
  }
}
