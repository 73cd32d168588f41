import * as fs from 'fs';
import * as path from 'path';
import { PNG } from 'pngjs';

/** Deterministic patterned RGB PNG for extractor tests. */
export function writeTestPng(filePath: string, width: number, height: number): void {
  const png = new PNG({ width, height });
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const o = (y * width + x) * 4;
      png.data[o] = (x * 7 + y * 3) % 256;
      png.data[o + 1] = (x * 13) % 256;
      png.data[o + 2] = (y * 11) % 256;
      png.data[o + 3] = 255;
    }
  }
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, PNG.sync.write(png));
}

export function tmpDir(name: string): string {
  const dir = fs.mkdtempSync(path.join(require('os').tmpdir(), `${name}-`));
  return dir;
}
