/**
 * Micro end-to-end runs of the extraction pipeline. Scaled for the pure-JS /
 * WASM backends: a few dozen examples, no training epochs (plus one tiny
 * 1-epoch smoke), a subset of layers. Asserts the outputs through the
 * engine's own CLI, which is the consuming contract.
 */

import { execFileSync } from 'node:child_process';
import * as crypto from 'node:crypto';
import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { beforeAll, describe, expect, it } from 'vitest';

import { makeConfig } from '../src/config.js';
import { loadDataset } from '../src/datasets.js';
import { readNpy } from '../src/npy.js';
import { decodePng } from '../src/png.js';
import {
  ExtractionResult,
  rebuildFrozen,
  runExtraction,
  seededRng,
  shuffledIndices,
  trainBackbone,
} from '../src/extract.js';
import { scratchDir, synthesizeMnist, writeIdxImages, writeIdxLabels } from './helpers.js';

const LAYERS = [1, 8, 20];
const TRAIN = 24;
const TEST = 8;

let dataDir: string;
let outDir: string;
let result: ExtractionResult;

function microConfig(outputDir: string, overrides: Record<string, unknown> = {}) {
  return makeConfig(
    { dataset: 'mnist', dataDir, outputDir },
    'micro',
    {
      layerIds: LAYERS,
      batchSize: 8,
      seed: 7,
      trainLimit: TRAIN,
      testLimit: TEST,
      ...overrides,
    },
  );
}

beforeAll(async () => {
  dataDir = synthesizeMnist(TRAIN, TEST);
  outDir = scratchDir('extract-out');
  result = await runExtraction(microConfig(outDir));
}, 600_000);

describe('extraction outputs', () => {
  it('writes one embedding file per layer and split with aligned shapes', () => {
    for (const id of LAYERS) {
      const tag = String(id).padStart(2, '0');
      const train = readNpy(path.join(outDir, `layer${tag}_train.npy`));
      const test = readNpy(path.join(outDir, `layer${tag}_test.npy`));
      expect(train.shape).toEqual([TRAIN, result.layerDims[id]]);
      expect(test.shape).toEqual([TEST, result.layerDims[id]]);
      for (const v of train.float32!.subarray(0, 100)) expect(Number.isFinite(v)).toBe(true);
    }
    expect(result.layerDims[1]).toBe(64 * 28 * 28);
    expect(result.layerDims[8]).toBe(128 * 14 * 14);
    expect(result.layerDims[20]).toBe(512 * 4 * 4);
  });

  it('writes labels matching the dataset', () => {
    const labels = readNpy(path.join(outDir, 'train_labels.npy'));
    const dataset = loadDataset('mnist', dataDir, { train: TRAIN, test: TEST });
    expect(labels.shape).toEqual([TRAIN]);
    expect(Array.from(labels.int64!).map(Number)).toEqual(
      Array.from(dataset.train.labels),
    );
  });

  it('records a near-chance baseline for the untrained model', () => {
    expect(result.baselineAccuracy).toBeGreaterThanOrEqual(0);
    expect(result.baselineAccuracy).toBeLessThanOrEqual(0.5);
  });

  it('emits a 20-entry catalog beside the manifest', () => {
    const catalog = JSON.parse(
      fs.readFileSync(path.join(outDir, 'catalog.json'), 'utf8'),
    );
    expect(catalog.length).toBe(20);
    expect(catalog.filter((e: any) => e.downsampling).map((e: any) => e.layerId))
      .toEqual([8, 13, 18]);
  });
});

describe('engine interop', () => {
  it('passes the engine strict manifest validation via ebe index', () => {
    const out = execFileSync('ebe', [
      'index', '--manifest', result.manifestPath, '--layer', '8',
    ]).toString();
    expect(out.trim()).toBe(`layer=8 n=${TRAIN} d=${result.layerDims[8]} zero_rows=0`);
  });

  it('sweeps the extracted layers via ebe sweep', () => {
    const csvPath = path.join(outDir, 'sweep.csv');
    execFileSync('ebe', [
      'sweep', '--manifest', result.manifestPath,
      '--layers', LAYERS.join(','), '--k', '1,3', '--out', csvPath,
    ]);
    const lines = fs.readFileSync(csvPath, 'utf8').trim().split('\n');
    expect(lines.length).toBe(1 + LAYERS.length * 2);
    for (const line of lines.slice(1)) {
      const [, , , accuracy, purity] = line.split(',');
      expect(Number(accuracy)).toBeGreaterThanOrEqual(0);
      expect(Number(accuracy)).toBeLessThanOrEqual(1);
      expect(Number(purity)).toBeGreaterThanOrEqual(0);
      expect(Number(purity)).toBeLessThanOrEqual(1);
    }
  });

  it('renders a gallery from the exported images via ebe report', () => {
    const htmlPath = path.join(outDir, 'gallery.html');
    execFileSync('ebe', [
      'report', '--manifest', result.manifestPath, '--layer-list', '1,20',
      '--k', '3', '--queries', '0,5',
      '--images', path.join(outDir, 'images'), '--out', htmlPath,
    ]);
    const html = fs.readFileSync(htmlPath, 'utf8');
    expect((html.match(/<section>/g) ?? []).length).toBe(4);
    expect(html).toContain('data:image/png;base64,');
  });
});

describe('row alignment audit', () => {
  it('image, label, and embedding row i refer to the same example', async () => {
    const dataset = loadDataset('mnist', dataDir, { train: TRAIN, test: TEST });
    const prints = JSON.parse(
      fs.readFileSync(path.join(outDir, 'fingerprints_train.json'), 'utf8'),
    ) as string[];
    const labels = readNpy(path.join(outDir, 'train_labels.npy')).int64!;
    const layer20 = readNpy(path.join(outDir, 'layer20_train.npy'));

    const { backbone } = await rebuildFrozen(dataset, microConfig(scratchDir('align')));
    const extractModel = tf.model({
      inputs: backbone.model.inputs,
      outputs: [backbone.convOutputs[19]],
    });

    const rng = seededRng(99);
    const sampled = Array.from(shuffledIndices(TRAIN, rng).subarray(0, 8));
    for (const i of sampled) {
      // image fingerprint matches the sidecar
      const png = decodePng(
        fs.readFileSync(path.join(outDir, 'images', `train_${i}.png`)),
      );
      const digest = crypto.createHash('sha256').update(png.pixels).digest('hex');
      expect(digest).toBe(prints[i]);

      // label file entry matches the dataset
      expect(Number(labels[i])).toBe(dataset.train.labels[i]);

      // embedding row matches a fresh single-example forward pass
      const pixels = dataset.train.pixels.subarray(i * 784, (i + 1) * 784);
      const x = tf.tensor4d(Float32Array.from(pixels, (p) => p / 255), [1, 28, 28, 1]);
      const out = extractModel.predict(x) as tf.Tensor;
      const nchw = tf.transpose(out, [0, 3, 1, 2]);
      const fresh = (await nchw.data()) as Float32Array;
      const stored = layer20.float32!.subarray(
        i * result.layerDims[20], (i + 1) * result.layerDims[20],
      );
      let maxDiff = 0;
      for (let j = 0; j < fresh.length; j++) {
        maxDiff = Math.max(maxDiff, Math.abs(fresh[j] - stored[j]));
      }
      expect(maxDiff).toBeLessThan(1e-4);
      x.dispose();
      out.dispose();
      nchw.dispose();
    }
  }, 600_000);
});

describe('determinism', () => {
  it('two extraction runs of the frozen model produce bit-identical files', async () => {
    const second = scratchDir('extract-again');
    await runExtraction(microConfig(second));
    for (const id of LAYERS) {
      const tag = String(id).padStart(2, '0');
      for (const split of ['train', 'test']) {
        const a = crypto.createHash('sha256')
          .update(fs.readFileSync(path.join(outDir, `layer${tag}_${split}.npy`)))
          .digest('hex');
        const b = crypto.createHash('sha256')
          .update(fs.readFileSync(path.join(second, `layer${tag}_${split}.npy`)))
          .digest('hex');
        expect(b).toBe(a);
      }
    }
    const manifestA = JSON.parse(fs.readFileSync(result.manifestPath, 'utf8'));
    const manifestB = JSON.parse(
      fs.readFileSync(path.join(second, 'manifest.json'), 'utf8'),
    );
    expect(manifestB.baseline_accuracy).toBe(manifestA.baseline_accuracy);
  }, 600_000);
});

describe('training smoke', () => {
  it('one epoch updates the weights and still evaluates', async () => {
    // 14x14 inputs and a single batch-2 step: conv backprop on the pure-JS
    // cpu backend is the slowest thing this suite does.
    const tinyData = scratchDir('tiny-idx');
    writeIdxImages(path.join(tinyData, 'train-images-idx3-ubyte'), 2, 14, 14, 5);
    writeIdxLabels(path.join(tinyData, 'train-labels-idx1-ubyte'), [0, 1]);
    writeIdxImages(path.join(tinyData, 't10k-images-idx3-ubyte'), 2, 14, 14, 6);
    writeIdxLabels(path.join(tinyData, 't10k-labels-idx1-ubyte'), [2, 3]);
    const dataset = loadDataset('mnist', tinyData);
    const config = makeConfig(
      { dataset: 'mnist', dataDir: tinyData, outputDir: scratchDir('train') },
      'micro',
      { layerIds: [20], batchSize: 2, seed: 3, trainLimit: 2, testLimit: 2, epochs: 1 },
    );

    const trained = await trainBackbone(dataset, config);
    const init = await trainBackbone(dataset, { ...config, epochs: 0 });
    expect(trained.values.length).toBe(init.values.length);
    const changed = trained.values.some((v, i) => {
      const w = init.values[i];
      for (let j = 0; j < v.length; j++) if (v[j] !== w[j]) return true;
      return false;
    });
    expect(changed).toBe(true);
  }, 600_000);
});
