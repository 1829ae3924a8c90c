/**
 * FLIMMD01 model container writer: 8-byte magic, u32-LE manifest length,
 * UTF-8 JSON manifest, blob payload. Binary weights are packed +1 -> bit 1 /
 * -1 -> bit 0, row-major, LSB-first; thresholds/directions are i32-LE.
 */

export const MODEL_MAGIC = "FLIMMD01";

export function packSigns(signs: Int8Array | Float32Array): Buffer {
  const bytes = Buffer.alloc(Math.ceil(signs.length / 8));
  for (let i = 0; i < signs.length; i++) {
    if (signs[i] > 0) bytes[i >> 3] |= 1 << (i & 7);
  }
  return bytes;
}

/** sign-binarize float weights (zero maps to +1, the engine's tie rule). */
export function binarizeWeights(w: Float32Array): Int8Array {
  const out = new Int8Array(w.length);
  for (let i = 0; i < w.length; i++) out[i] = w[i] >= 0 ? 1 : -1;
  return out;
}

export interface LayerEntry {
  kind: string;
  name: string;
  params: Record<string, unknown>;
}

export class ContainerBuilder {
  private payload: Buffer[] = [];
  private size = 0;
  private layers: LayerEntry[] = [];

  private push(buf: Buffer): { offset: number; length: number } {
    const offset = this.size;
    this.payload.push(buf);
    this.size += buf.length;
    return { offset, length: buf.length };
  }

  inputBinarize(name: string, theta: number): void {
    this.layers.push({ kind: "InputBinarize", name, params: { theta } });
  }

  conv(name: string, signs: Int8Array, shape: [number, number, number, number], stride: [number, number], padding: string): void {
    const { offset, length } = this.push(packSigns(signs));
    this.layers.push({
      kind: "BinaryConv2D",
      name,
      params: { weight_shape: shape, stride, padding, weights_offset: offset, weights_len: length },
    });
  }

  dense(name: string, signs: Int8Array, shape: [number, number]): void {
    const { offset, length } = this.push(packSigns(signs));
    this.layers.push({
      kind: "BinaryDense",
      name,
      params: { weight_shape: shape, weights_offset: offset, weights_len: length },
    });
  }

  threshold(name: string, thresholds: number[], directions: number[]): void {
    const t = Buffer.alloc(thresholds.length * 4);
    thresholds.forEach((v, i) => t.writeInt32LE(v, i * 4));
    const d = Buffer.alloc(directions.length * 4);
    directions.forEach((v, i) => d.writeInt32LE(v, i * 4));
    const tLoc = this.push(t);
    const dLoc = this.push(d);
    this.layers.push({
      kind: "Threshold",
      name,
      params: {
        channels: thresholds.length,
        thresholds_offset: tLoc.offset,
        thresholds_len: tLoc.length,
        directions_offset: dLoc.offset,
        directions_len: dLoc.length,
      },
    });
  }

  maxPool(name: string, window: [number, number], stride: [number, number]): void {
    this.layers.push({ kind: "MaxPool2D", name, params: { window, stride } });
  }

  flatten(name: string): void {
    this.layers.push({ kind: "Flatten", name, params: {} });
  }

  build(name: string, inputShape: number[], classCount: number, inputThreshold: number | null): Buffer {
    const manifest = {
      version: 1,
      name,
      input_shape: inputShape,
      class_count: classCount,
      input_threshold: inputThreshold,
      layers: this.layers,
    };
    const mbytes = Buffer.from(JSON.stringify(manifest), "utf-8");
    const header = Buffer.alloc(12);
    header.write(MODEL_MAGIC, 0, "ascii");
    header.writeUInt32LE(mbytes.length, 8);
    return Buffer.concat([header, mbytes, ...this.payload]);
  }
}
