#!/usr/bin/env node
/** `heatrank-extract extract`: batch images into HFT1 feature tensors. */

import yargs from 'yargs';
import { hideBin } from 'yargs/helpers';

import { initBackend } from './backbone';
import { DEFAULT_RESIZE_LONG, batchExtract } from './extract';

async function run(argv: {
  backbone: string;
  in: string;
  out: string;
  crops?: string;
  resizeLong: number;
  weights?: string;
  seed: number;
  backend: string;
}): Promise<number> {
  const backend = await initBackend(argv.backend as 'wasm' | 'cpu');
  console.log(`backend: ${backend}`);
  const manifest = await batchExtract(argv.in, {
    backbone: argv.backbone as 'vgg-style' | 'resnet-style',
    outDir: argv.out,
    resizeLong: argv.resizeLong,
    cropsFile: argv.crops,
    weightsDir: argv.weights,
    seed: argv.seed,
  });
  console.log(
    `extracted ${manifest.succeeded.length}, skipped ${manifest.skipped.length}, ` +
      `failed ${manifest.failed.length}`,
  );
  for (const f of manifest.failed) {
    console.error(`FAILED ${f.file}: ${f.error}`);
  }
  return manifest.failed.length > 0 ? 1 : 0;
}

yargs(hideBin(process.argv))
  .command(
    'extract',
    'extract HFT1 feature tensors from a directory of images',
    (y) =>
      y
        .option('backbone', {
          choices: ['vgg-style', 'resnet-style'] as const,
          demandOption: true,
          describe: '512-channel (1/16) or 2048-channel (1/32) feature geometry',
        })
        .option('in', { type: 'string', demandOption: true, describe: 'image directory' })
        .option('out', { type: 'string', demandOption: true, describe: 'tensor output directory' })
        .option('crops', { type: 'string', describe: 'crop boxes file: "imageid x1 y1 x2 y2"' })
        .option('resize-long', {
          type: 'number',
          default: DEFAULT_RESIZE_LONG,
          describe: 'longest-side resize target in pixels',
        })
        .option('weights', { type: 'string', describe: 'tfjs-layers model dir (pretrained)' })
        .option('seed', { type: 'number', default: 42, describe: 'weight-init seed' })
        .option('backend', { choices: ['wasm', 'cpu'] as const, default: 'wasm' }),
    async (argv) => {
      process.exitCode = await run(argv as Parameters<typeof run>[0]);
    },
  )
  .demandCommand(1)
  .strict()
  .help()
  .parse();
