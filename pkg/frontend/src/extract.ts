/**
 * Image to HFT1 feature tensor: decode, optional query-box crop, resize,
 * forward pass through the backbone, write the tensor file.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

import { BACKBONES, BackboneName, buildBackbone, loadBackbone } from './backbone';
import { writeFeatureTensor } from './hft1';
import { CropBox, RgbImage, crop, decodeImage, parseCropsFile, resizeTarget } from './image';

// channel statistics used by the standard pretrained-backbone pipelines
const MEAN = [0.485, 0.456, 0.406];
const STD = [0.229, 0.224, 0.225];

export interface ExtractorConfig {
  backbone: BackboneName;
  outDir: string;
  /** longest-side resize target in pixels */
  resizeLong?: number;
  cropsFile?: string;
  /** tfjs-layers model directory with converted pretrained weights */
  weightsDir?: string;
  seed?: number;
}

export const DEFAULT_RESIZE_LONG = 1024;

export interface Manifest {
  backbone: BackboneName;
  succeeded: string[];
  skipped: string[];
  failed: Array<{ file: string; error: string }>;
}

export async function prepareModel(cfg: ExtractorConfig): Promise<tf.LayersModel> {
  if (cfg.weightsDir) {
    return loadBackbone(cfg.weightsDir);
  }
  return buildBackbone(cfg.backbone, cfg.seed ?? 42);
}

function toInputTensor(img: RgbImage, longSide: number): tf.Tensor4D {
  return tf.tidy(() => {
    let x = tf.tensor3d(img.data, [img.height, img.width, 3]);
    const target = resizeTarget(img.width, img.height, longSide);
    if (target.width !== img.width || target.height !== img.height) {
      x = tf.image.resizeBilinear(x, [target.height, target.width]);
    }
    const scaled = x.div(255.0).sub(MEAN).div(STD);
    return scaled.expandDims(0) as tf.Tensor4D;
  });
}

export async function extract(
  imagePath: string,
  cfg: ExtractorConfig,
  model: tf.LayersModel,
  cropBox?: CropBox,
): Promise<string> {
  let img = decodeImage(imagePath);
  if (cropBox) {
    img = crop(img, cropBox);
  }
  const input = toInputTensor(img, cfg.resizeLong ?? DEFAULT_RESIZE_LONG);
  const out = tf.tidy(() => {
    const y = model.predict(input) as tf.Tensor4D;
    // the contract is post-ReLU activations; clamp defensively for
    // loaded models whose final layer lacks the activation
    return tf.relu(y.squeeze([0]));
  });
  input.dispose();
  const [h, w, k] = out.shape as [number, number, number];
  const values = (await out.data()) as Float32Array;
  out.dispose();
  const expected = BACKBONES[cfg.backbone].channels;
  if (!cfg.weightsDir && k !== expected) {
    throw new Error(`backbone emitted ${k} channels, expected ${expected}`);
  }
  const outPath = path.join(cfg.outDir, `${path.parse(imagePath).name}.hft1`);
  // NHWC layout already stores channels contiguously per location in
  // l = i + (j-1)*W order
  writeFeatureTensor({ width: w, height: h, channels: k, values }, outPath);
  return outPath;
}

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg']);

/**
 * Extract every image in a directory. Existing outputs are skipped, so
 * re-runs only fill gaps; per-file failures are recorded and do not stop
 * the batch. The manifest is written to `<outDir>/manifest.json`.
 */
export async function batchExtract(inDir: string, cfg: ExtractorConfig): Promise<Manifest> {
  const files = fs
    .readdirSync(inDir)
    .filter((f) => IMAGE_EXTENSIONS.has(path.extname(f).toLowerCase()))
    .sort();
  fs.mkdirSync(cfg.outDir, { recursive: true });
  const crops = cfg.cropsFile ? parseCropsFile(cfg.cropsFile) : new Map<string, CropBox>();
  const manifest: Manifest = {
    backbone: cfg.backbone,
    succeeded: [],
    skipped: [],
    failed: [],
  };
  const model = await prepareModel(cfg);
  for (const file of files) {
    const stem = path.parse(file).name;
    if (fs.existsSync(path.join(cfg.outDir, `${stem}.hft1`))) {
      manifest.skipped.push(file);
      continue;
    }
    try {
      await extract(path.join(inDir, file), cfg, model, crops.get(stem));
      manifest.succeeded.push(file);
    } catch (e) {
      manifest.failed.push({ file, error: (e as Error).message });
    }
  }
  fs.writeFileSync(
    path.join(cfg.outDir, 'manifest.json'),
    JSON.stringify(manifest, null, 2) + '\n',
  );
  return manifest;
}
