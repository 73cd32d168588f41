/**
 * Image decoding and pixel-space geometry: PNG/JPEG to planar RGB floats,
 * query-box cropping, and the longest-side resize rule.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as jpeg from 'jpeg-js';
import { PNG } from 'pngjs';

export interface RgbImage {
  width: number;
  height: number;
  /** interleaved RGB in [0, 255], length width*height*3 */
  data: Float32Array;
}

export interface CropBox {
  x1: number;
  y1: number;
  x2: number;
  y2: number;
}

function fromRgba(width: number, height: number, rgba: Uint8Array): RgbImage {
  const data = new Float32Array(width * height * 3);
  for (let p = 0; p < width * height; p++) {
    data[3 * p] = rgba[4 * p];
    data[3 * p + 1] = rgba[4 * p + 1];
    data[3 * p + 2] = rgba[4 * p + 2];
  }
  return { width, height, data };
}

export function decodeImage(filePath: string): RgbImage {
  const ext = path.extname(filePath).toLowerCase();
  if (!['.png', '.jpg', '.jpeg'].includes(ext)) {
    throw new Error(`undecodable image (unsupported extension ${ext || '<none>'}): ${filePath}`);
  }
  const raw = fs.readFileSync(filePath);
  if (ext === '.png') {
    const png = PNG.sync.read(raw);
    return fromRgba(png.width, png.height, png.data);
  }
  const img = jpeg.decode(raw, { useTArray: true, formatAsRGBA: true });
  return fromRgba(img.width, img.height, img.data);
}

/** Crop in pixel space; the box is clamped to the image bounds. */
export function crop(img: RgbImage, box: CropBox): RgbImage {
  const x1 = Math.max(0, Math.floor(Math.min(box.x1, box.x2)));
  const y1 = Math.max(0, Math.floor(Math.min(box.y1, box.y2)));
  const x2 = Math.min(img.width, Math.ceil(Math.max(box.x1, box.x2)));
  const y2 = Math.min(img.height, Math.ceil(Math.max(box.y1, box.y2)));
  const w = x2 - x1;
  const h = y2 - y1;
  if (w < 1 || h < 1) {
    throw new Error(`crop box [${box.x1},${box.y1},${box.x2},${box.y2}] is empty`);
  }
  const data = new Float32Array(w * h * 3);
  for (let y = 0; y < h; y++) {
    const src = ((y + y1) * img.width + x1) * 3;
    data.set(img.data.subarray(src, src + w * 3), y * w * 3);
  }
  return { width: w, height: h, data };
}

/**
 * Target size under the longest-side rule: the longer edge becomes
 * `longSide`, the other scales to preserve the aspect ratio (min 1 px).
 */
export function resizeTarget(
  width: number,
  height: number,
  longSide: number,
): { width: number; height: number } {
  if (longSide < 1) throw new Error(`resize target must be positive, got ${longSide}`);
  const scale = longSide / Math.max(width, height);
  return {
    width: Math.max(1, Math.round(width * scale)),
    height: Math.max(1, Math.round(height * scale)),
  };
}

/** Parse a crops file: one "imageid x1 y1 x2 y2" record per line. */
export function parseCropsFile(filePath: string): Map<string, CropBox> {
  const out = new Map<string, CropBox>();
  const text = fs.readFileSync(filePath, 'utf-8');
  text.split('\n').forEach((line, i) => {
    const trimmed = line.trim();
    if (!trimmed || trimmed.startsWith('#')) return;
    const parts = trimmed.split(/\s+/);
    if (parts.length !== 5) {
      throw new Error(`${filePath}:${i + 1}: expected "imageid x1 y1 x2 y2"`);
    }
    const nums = parts.slice(1).map(Number);
    if (nums.some((n) => !Number.isFinite(n))) {
      throw new Error(`${filePath}:${i + 1}: non-numeric crop coordinate`);
    }
    out.set(parts[0], { x1: nums[0], y1: nums[1], x2: nums[2], y2: nums[3] });
  });
  return out;
}
