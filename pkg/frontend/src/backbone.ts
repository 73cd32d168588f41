/**
 * Convolutional feature backbones.
 *
 * Two fully-convolutional geometries are supported, named by the family
 * whose feature contract they match: `vgg-style` emits 512 channels at
 * 1/16 resolution, `resnet-style` emits 2048 channels at 1/32. Weights
 * come from a tfjs-layers model directory when provided (a converted
 * pretrained snapshot); otherwise a compact trunk with deterministic
 * seeded initialization is built, which keeps the geometry and ReLU
 * contract intact on machines with no access to pretrained weights.
 */

import * as fs from 'fs';
import * as path from 'path';
import * as tf from '@tensorflow/tfjs';

export type BackboneName = 'vgg-style' | 'resnet-style';

export interface BackboneGeometry {
  channels: number;
  stride: number;
}

export const BACKBONES: Record<BackboneName, BackboneGeometry> = {
  'vgg-style': { channels: 512, stride: 16 },
  'resnet-style': { channels: 2048, stride: 32 },
};

export async function initBackend(prefer: 'wasm' | 'cpu' = 'wasm'): Promise<string> {
  if (prefer === 'wasm') {
    try {
      require('@tensorflow/tfjs-backend-wasm');
      if (await tf.setBackend('wasm')) {
        await tf.ready();
        return tf.getBackend();
      }
    } catch {
      // fall through to cpu
    }
  }
  await tf.setBackend('cpu');
  await tf.ready();
  return tf.getBackend();
}

function conv(
  filters: number,
  kernel: number,
  stride: number,
  seed: number,
  inputShape?: [number | null, number | null, number],
): tf.layers.Layer {
  return tf.layers.conv2d({
    filters,
    kernelSize: kernel,
    strides: stride,
    padding: 'same',
    activation: 'relu',
    kernelInitializer: tf.initializers.heNormal({ seed }),
    biasInitializer: 'zeros',
    ...(inputShape ? { inputShape } : {}),
  });
}

/** Deterministic compact trunk with the named family's output geometry. */
export function buildBackbone(name: BackboneName, seed = 42): tf.LayersModel {
  const geometry = BACKBONES[name];
  if (!geometry) {
    throw new Error(`backbone unavailable: unknown name ${String(name)}`);
  }
  const input: [null, null, number] = [null, null, 3];
  const model = tf.sequential();
  if (name === 'vgg-style') {
    // four stride-2 stages (1/16) then the 512-channel feature layer
    model.add(conv(24, 3, 2, seed, input));
    model.add(conv(48, 3, 2, seed + 1));
    model.add(conv(96, 3, 2, seed + 2));
    model.add(conv(192, 3, 2, seed + 3));
    model.add(conv(512, 3, 1, seed + 4));
  } else {
    // stem + pool + three stride-2 stages (1/32), 2048-channel head
    model.add(conv(32, 7, 2, seed, input));
    model.add(tf.layers.maxPooling2d({ poolSize: 2, strides: 2, padding: 'same' }));
    model.add(conv(64, 3, 2, seed + 1));
    model.add(conv(128, 3, 2, seed + 2));
    model.add(conv(256, 3, 2, seed + 3));
    model.add(conv(2048, 1, 1, seed + 4));
  }
  return model;
}

interface WeightsManifestEntry {
  paths: string[];
  weights: Array<{ name: string; shape: number[]; dtype: string }>;
}

/**
 * Load a converted pretrained model from a tfjs-layers directory
 * (model.json plus weight shard files).
 */
export async function loadBackbone(dir: string): Promise<tf.LayersModel> {
  const jsonPath = path.join(dir, 'model.json');
  if (!fs.existsSync(jsonPath)) {
    throw new Error(`backbone unavailable: no model.json in ${dir}`);
  }
  let parsed: {
    modelTopology?: unknown;
    weightsManifest?: WeightsManifestEntry[];
  };
  try {
    parsed = JSON.parse(fs.readFileSync(jsonPath, 'utf-8'));
  } catch (e) {
    throw new Error(`backbone unavailable: unreadable model.json: ${(e as Error).message}`);
  }
  if (!parsed.modelTopology || !parsed.weightsManifest) {
    throw new Error('backbone unavailable: model.json lacks topology or weights manifest');
  }
  const specs: Array<{ name: string; shape: number[]; dtype: string }> = [];
  const shards: Buffer[] = [];
  for (const entry of parsed.weightsManifest) {
    specs.push(...entry.weights);
    for (const rel of entry.paths) {
      shards.push(fs.readFileSync(path.join(dir, rel)));
    }
  }
  const weightData = Buffer.concat(shards);
  try {
    return await tf.loadLayersModel(
      tf.io.fromMemory({
        modelTopology: parsed.modelTopology,
        weightSpecs: specs as tf.io.WeightsManifestEntry[],
        weightData: weightData.buffer.slice(
          weightData.byteOffset,
          weightData.byteOffset + weightData.byteLength,
        ),
      }),
    );
  } catch (e) {
    throw new Error(`backbone unavailable: ${(e as Error).message}`);
  }
}
