/**
 * Extraction configuration and named profiles.
 *
 * `paper` carries the reference hyperparameters (60 epochs, batch 128,
 * lr 0.001, full dataset). `desk` is the reduced profile (5000/1000
 * examples, 3 epochs). `micro` is for CI: a handful of examples, no
 * training, so the pipeline is exercised end to end in seconds-to-minutes
 * on the pure-JS/WASM backends.
 */

import type { DatasetName } from './datasets.js';

export interface ExtractionConfig {
  dataset: DatasetName;
  dataDir: string;
  outputDir: string;
  epochs: number;
  batchSize: number;
  learningRate: number;
  seed: number;
  layerIds: number[];
  evalMode: boolean;
  trainLimit?: number;
  testLimit?: number;
}

export type ProfileName = 'paper' | 'desk' | 'micro';

const ALL_LAYERS = Array.from({ length: 20 }, (_, i) => i + 1);

export const PROFILES: Record<ProfileName, Partial<ExtractionConfig>> = {
  paper: { epochs: 60, batchSize: 128, learningRate: 0.001 },
  desk: { epochs: 3, batchSize: 128, learningRate: 0.001, trainLimit: 5000, testLimit: 1000 },
  micro: { epochs: 0, batchSize: 16, learningRate: 0.001, trainLimit: 48, testLimit: 16 },
};

export function makeConfig(
  base: { dataset: DatasetName; dataDir: string; outputDir: string },
  profile: ProfileName,
  overrides: Partial<ExtractionConfig> = {},
): ExtractionConfig {
  const config: ExtractionConfig = {
    epochs: 60,
    batchSize: 128,
    learningRate: 0.001,
    seed: 0,
    layerIds: ALL_LAYERS,
    evalMode: true,
    ...base,
    ...PROFILES[profile],
    ...overrides,
  };
  validateConfig(config);
  return config;
}

export function validateConfig(config: ExtractionConfig): void {
  if (!['mnist', 'fashion_mnist', 'cifar10'].includes(config.dataset)) {
    throw new Error(`unknown dataset ${config.dataset}`);
  }
  if (config.epochs < 0) throw new Error(`epochs must be >= 0, got ${config.epochs}`);
  if (config.batchSize < 1) throw new Error(`batch_size must be >= 1`);
  if (!(config.learningRate > 0)) throw new Error(`learning_rate must be > 0`);
  if (config.layerIds.length === 0) throw new Error('layer_ids must be non-empty');
  const seen = new Set<number>();
  for (const id of config.layerIds) {
    if (!Number.isInteger(id) || id < 1 || id > 20) {
      throw new Error(`layer id ${id} outside 1..20`);
    }
    if (seen.has(id)) throw new Error(`duplicate layer id ${id}`);
    seen.add(id);
  }
}
