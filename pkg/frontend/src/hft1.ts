/**
 * HFT1 tensor files: the binary interchange format consumed by the
 * heatrank retrieval engine.
 *
 * Layout (little-endian): magic "HFT1", version u32=1, W u32, H u32,
 * K u32, reserved u32=0, then W*H*K float32 values, channel-contiguous
 * per location, locations ordered by l = i + (j-1)*W.
 */

import * as fs from 'fs';
import * as path from 'path';

export const HFT1_MAGIC = 'HFT1';
export const HFT1_VERSION = 1;
export const HEADER_SIZE = 24;

export interface FeatureTensor {
  width: number;
  height: number;
  channels: number;
  /** length width*height*channels, non-negative finite values */
  values: Float32Array;
}

export function validateTensor(t: FeatureTensor): void {
  if (t.width < 1 || t.height < 1 || t.channels < 1) {
    throw new Error(`tensor dims must be positive, got ${t.width}x${t.height}x${t.channels}`);
  }
  const expected = t.width * t.height * t.channels;
  if (t.values.length !== expected) {
    throw new Error(`expected ${expected} values, got ${t.values.length}`);
  }
  for (let i = 0; i < t.values.length; i++) {
    const v = t.values[i];
    if (!Number.isFinite(v) || v < 0) {
      throw new Error(`bad value ${v} at index ${i} (byte offset ${HEADER_SIZE + 4 * i})`);
    }
  }
}

export function encodeTensor(t: FeatureTensor): Buffer {
  validateTensor(t);
  const buf = Buffer.alloc(HEADER_SIZE + 4 * t.values.length);
  buf.write(HFT1_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(HFT1_VERSION, 4);
  buf.writeUInt32LE(t.width, 8);
  buf.writeUInt32LE(t.height, 12);
  buf.writeUInt32LE(t.channels, 16);
  buf.writeUInt32LE(0, 20);
  Buffer.from(t.values.buffer, t.values.byteOffset, 4 * t.values.length).copy(buf, HEADER_SIZE);
  return buf;
}

/** Write atomically: temp file in the target directory, then rename. */
export function writeFeatureTensor(t: FeatureTensor, filePath: string): void {
  const tmp = path.join(
    path.dirname(filePath),
    `.${path.basename(filePath)}.${process.pid}.tmp`,
  );
  fs.writeFileSync(tmp, encodeTensor(t));
  fs.renameSync(tmp, filePath);
}

/** Read back an HFT1 file, rejecting any layout or value violation. */
export function readFeatureTensor(filePath: string): FeatureTensor {
  const data = fs.readFileSync(filePath);
  if (data.length < HEADER_SIZE) {
    throw new Error(`${filePath}: truncated header (${data.length} bytes)`);
  }
  if (data.toString('ascii', 0, 4) !== HFT1_MAGIC) {
    throw new Error(`${filePath}: bad magic at byte offset 0`);
  }
  if (data.readUInt32LE(4) !== HFT1_VERSION) {
    throw new Error(`${filePath}: unsupported version at byte offset 4`);
  }
  const width = data.readUInt32LE(8);
  const height = data.readUInt32LE(12);
  const channels = data.readUInt32LE(16);
  if (data.readUInt32LE(20) !== 0) {
    throw new Error(`${filePath}: reserved field must be 0 (byte offset 20)`);
  }
  const count = width * height * channels;
  if (data.length !== HEADER_SIZE + 4 * count) {
    throw new Error(`${filePath}: expected ${HEADER_SIZE + 4 * count} bytes, got ${data.length}`);
  }
  const values = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    values[i] = data.readFloatLE(HEADER_SIZE + 4 * i);
  }
  const t = { width, height, channels, values };
  validateTensor(t);
  return t;
}
