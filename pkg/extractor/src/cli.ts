#!/usr/bin/env node
/**
 * extract --dataset mnist --profile desk|paper|micro --out DIR
 *         [--layers 1-20] [--data-dir DIR] [--seed N]
 *         [--epochs N] [--batch-size N] [--lr X]
 *         [--train-limit N] [--test-limit N]
 */

import { parseArgs } from 'node:util';

import { makeConfig, ProfileName } from './config.js';
import type { DatasetName } from './datasets.js';
import { runExtraction } from './extract.js';

export function parseLayerList(text: string): number[] {
  const out: number[] = [];
  for (const part of text.split(',')) {
    const trimmed = part.trim();
    if (!trimmed) continue;
    const range = trimmed.match(/^(\d+)-(\d+)$/);
    if (range) {
      const lo = Number(range[1]);
      const hi = Number(range[2]);
      if (hi < lo) throw new Error(`empty layer range ${trimmed}`);
      for (let i = lo; i <= hi; i++) out.push(i);
    } else {
      const value = Number(trimmed);
      if (!Number.isInteger(value)) throw new Error(`bad layer value ${trimmed}`);
      out.push(value);
    }
  }
  if (out.length === 0) throw new Error('layer list is empty');
  return out;
}

export async function main(argv: string[]): Promise<void> {
  const { values } = parseArgs({
    args: argv,
    options: {
      dataset: { type: 'string' },
      profile: { type: 'string', default: 'desk' },
      out: { type: 'string' },
      layers: { type: 'string' },
      'data-dir': { type: 'string' },
      seed: { type: 'string', default: '0' },
      epochs: { type: 'string' },
      'batch-size': { type: 'string' },
      lr: { type: 'string' },
      'train-limit': { type: 'string' },
      'test-limit': { type: 'string' },
      help: { type: 'boolean', default: false },
    },
  });
  if (values.help || !values.dataset || !values.out) {
    console.log(
      'usage: extract --dataset mnist|fashion_mnist|cifar10 --profile desk|paper|micro ' +
        '--out DIR [--layers 1-20] [--data-dir DIR] [--seed N] [--epochs N] ' +
        '[--batch-size N] [--lr X] [--train-limit N] [--test-limit N]',
    );
    if (values.help) return;
    throw new Error('--dataset and --out are required');
  }
  const overrides: Record<string, unknown> = { seed: Number(values.seed) };
  if (values.layers) overrides.layerIds = parseLayerList(values.layers);
  if (values.epochs !== undefined) overrides.epochs = Number(values.epochs);
  if (values['batch-size'] !== undefined) overrides.batchSize = Number(values['batch-size']);
  if (values.lr !== undefined) overrides.learningRate = Number(values.lr);
  if (values['train-limit'] !== undefined) overrides.trainLimit = Number(values['train-limit']);
  if (values['test-limit'] !== undefined) overrides.testLimit = Number(values['test-limit']);

  const config = makeConfig(
    {
      dataset: values.dataset as DatasetName,
      dataDir: values['data-dir'] ?? values.out,
      outputDir: values.out,
    },
    values.profile as ProfileName,
    overrides,
  );
  const result = await runExtraction(config);
  console.log(`manifest: ${result.manifestPath}`);
  console.log(`baseline_accuracy: ${result.baselineAccuracy}`);
}

const isDirectRun =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split('/').pop() as string);

if (isDirectRun) {
  main(process.argv.slice(2)).catch((error) => {
    console.error(`extract: error: ${error.message ?? error}`);
    process.exit(2);
  });
}
