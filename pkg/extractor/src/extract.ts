/**
 * The extraction pipeline: train (or init) the backbone, freeze it, record
 * baseline test accuracy, capture every requested conv layer's activations
 * for both splits, and write everything in the engine's formats.
 *
 * Backend split: training runs on the 'cpu' backend (the WASM backend lacks
 * conv gradient kernels); the frozen weights are then rebuilt on 'wasm',
 * which is far faster for inference. Weights travel as plain Float32Arrays,
 * so results do not depend on the backend hop.
 */

import * as crypto from 'node:crypto';
import * as fs from 'node:fs';
import * as path from 'node:path';
import { createRequire } from 'node:module';

import * as tf from '@tensorflow/tfjs';
import wasmBackend from '@tensorflow/tfjs-backend-wasm';

import type { ExtractionConfig } from './config.js';
import { validateConfig } from './config.js';
import type { Dataset, SplitData } from './datasets.js';
import { loadDataset } from './datasets.js';
import { MatrixWriter, writeLabels } from './npy.js';
import { encodePng } from './png.js';
import { Backbone, buildBackbone, flattenedDims } from './resnet.js';

export interface FrozenWeights {
  shapes: number[][];
  values: Float32Array[];
}

export interface ExtractionResult {
  manifestPath: string;
  baselineAccuracy: number;
  layerDims: Record<number, number>;
}

let wasmReady = false;

async function useWasm(): Promise<void> {
  if (!wasmReady) {
    const require = createRequire(import.meta.url);
    const entry = require.resolve('@tensorflow/tfjs-backend-wasm');
    wasmBackend.setWasmPaths(path.join(path.dirname(entry), '/'));
    wasmReady = true;
  }
  await tf.setBackend('wasm');
  await tf.ready();
}

/** mulberry32: tiny deterministic PRNG for batch shuffling. */
export function seededRng(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let t = state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function shuffledIndices(count: number, rng: () => number): Int32Array {
  const order = new Int32Array(count);
  for (let i = 0; i < count; i++) order[i] = i;
  for (let i = count - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    const tmp = order[i];
    order[i] = order[j];
    order[j] = tmp;
  }
  return order;
}

function inputTensor(split: SplitData, indices?: ArrayLike<number>): tf.Tensor4D {
  const size = split.height * split.width * split.channels;
  const count = indices ? indices.length : split.count;
  const data = new Float32Array(count * size);
  for (let i = 0; i < count; i++) {
    const src = (indices ? indices[i] : i) * size;
    for (let p = 0; p < size; p++) data[i * size + p] = split.pixels[src + p] / 255;
  }
  return tf.tensor4d(data, [count, split.height, split.width, split.channels]);
}

function labelsFor(split: SplitData, indices: ArrayLike<number>): number[] {
  const out = new Array(indices.length);
  for (let i = 0; i < indices.length; i++) out[i] = split.labels[indices[i]];
  return out;
}

function detachWeights(model: tf.LayersModel): FrozenWeights {
  const weights = model.getWeights();
  return {
    shapes: weights.map((w) => w.shape.slice()),
    values: weights.map((w) => new Float32Array(w.dataSync() as Float32Array)),
  };
}

function buildOn(dataset: Dataset, config: ExtractionConfig): Backbone {
  const shape: [number, number, number] = [
    dataset.train.height,
    dataset.train.width,
    dataset.train.channels,
  ];
  return buildBackbone(shape, dataset.numClasses, config.seed);
}

/**
 * Train the backbone for `config.epochs` epochs (0 = keep the seeded
 * initialization) and return its frozen weights. Runs on the cpu backend.
 */
export async function trainBackbone(
  dataset: Dataset,
  config: ExtractionConfig,
): Promise<FrozenWeights> {
  await tf.setBackend('cpu');
  await tf.ready();
  const backbone = buildOn(dataset, config);
  const { model } = backbone;
  if (config.epochs > 0) {
    model.compile({
      optimizer: tf.train.adam(config.learningRate),
      loss: 'categoricalCrossentropy',
    });
    const rng = seededRng(config.seed + 1);
    const train = dataset.train;
    for (let epoch = 0; epoch < config.epochs; epoch++) {
      const order = shuffledIndices(train.count, rng);
      for (let start = 0; start < train.count; start += config.batchSize) {
        const slice = order.subarray(start, Math.min(start + config.batchSize, train.count));
        const x = inputTensor(train, slice);
        const y = tf.oneHot(tf.tensor1d(labelsFor(train, slice), 'int32'), dataset.numClasses);
        const loss = (await model.trainOnBatch(x, y)) as number;
        x.dispose();
        y.dispose();
        if (!Number.isFinite(loss)) {
          throw new Error(`non-finite training loss at epoch ${epoch}, offset ${start}`);
        }
      }
      console.log(`epoch ${epoch + 1}/${config.epochs} done`);
    }
  }
  const frozen = detachWeights(model);
  model.dispose();
  tf.disposeVariables();
  return frozen;
}

/** Rebuild the frozen model on the wasm backend for fast inference. */
export async function rebuildFrozen(
  dataset: Dataset,
  config: ExtractionConfig,
): Promise<{ backbone: Backbone; frozen: FrozenWeights }> {
  const frozen = await trainBackbone(dataset, config);
  await useWasm();
  const backbone = buildOn(dataset, config);
  const weightTensors = frozen.values.map((v, i) => tf.tensor(v, frozen.shapes[i]));
  backbone.model.setWeights(weightTensors);
  weightTensors.forEach((t) => t.dispose());
  return { backbone, frozen };
}

export async function evalAccuracy(
  model: tf.LayersModel,
  split: SplitData,
  batchSize: number,
): Promise<number> {
  let correct = 0;
  for (let start = 0; start < split.count; start += batchSize) {
    const indices = Array.from(
      { length: Math.min(batchSize, split.count - start) },
      (_, i) => start + i,
    );
    const x = inputTensor(split, indices);
    const logits = model.predict(x) as tf.Tensor;
    const preds = logits.argMax(-1);
    const got = (await preds.data()) as Int32Array;
    for (let i = 0; i < indices.length; i++) {
      if (got[i] === split.labels[indices[i]]) correct++;
    }
    x.dispose();
    logits.dispose();
    preds.dispose();
  }
  return correct / split.count;
}

/**
 * Capture the requested conv layers for one split and stream them to disk,
 * flattened row-major in (channel, height, width) order.
 */
export async function extractLayers(
  backbone: Backbone,
  split: SplitData,
  layerIds: number[],
  batchSize: number,
  files: Record<number, string>,
): Promise<Record<number, number>> {
  const outputs = layerIds.map((id) => backbone.convOutputs[id - 1]);
  const extractModel = tf.model({
    inputs: backbone.model.inputs,
    outputs,
  });
  const dims: Record<number, number> = {};
  const writers: Record<number, MatrixWriter> = {};
  layerIds.forEach((id, i) => {
    dims[id] = flattenedDims(outputs[i]);
    writers[id] = new MatrixWriter(files[id], split.count, dims[id]);
  });
  try {
    for (let start = 0; start < split.count; start += batchSize) {
      const indices = Array.from(
        { length: Math.min(batchSize, split.count - start) },
        (_, i) => start + i,
      );
      const x = inputTensor(split, indices);
      const raw = extractModel.predict(x) as tf.Tensor | tf.Tensor[];
      const batchOutputs = Array.isArray(raw) ? raw : [raw];
      for (let i = 0; i < layerIds.length; i++) {
        // NHWC -> NCHW so the flattened order is (channel, height, width)
        const nchw = tf.transpose(batchOutputs[i], [0, 3, 1, 2]);
        const flat = (await nchw.data()) as Float32Array;
        writers[layerIds[i]].append(flat);
        nchw.dispose();
        batchOutputs[i].dispose();
      }
      x.dispose();
    }
  } finally {
    for (const writer of Object.values(writers)) writer.close();
  }
  return dims;
}

export function exportImages(split: SplitData, splitName: string, imageDir: string): string[] {
  fs.mkdirSync(imageDir, { recursive: true });
  const size = split.height * split.width * split.channels;
  const fingerprints: string[] = [];
  for (let i = 0; i < split.count; i++) {
    const pixels = split.pixels.subarray(i * size, (i + 1) * size);
    const png = encodePng(pixels, split.width, split.height, split.channels as 1 | 3);
    fs.writeFileSync(path.join(imageDir, `${splitName}_${i}.png`), png);
    fingerprints.push(crypto.createHash('sha256').update(pixels).digest('hex'));
  }
  return fingerprints;
}

export async function runExtraction(config: ExtractionConfig): Promise<ExtractionResult> {
  validateConfig(config);
  const dataset = loadDataset(config.dataset, config.dataDir, {
    train: config.trainLimit,
    test: config.testLimit,
  });
  fs.mkdirSync(config.outputDir, { recursive: true });

  const { backbone } = await rebuildFrozen(dataset, config);
  // eval-mode inference: predict() keeps batch norm on its moving statistics
  const baselineAccuracy = await evalAccuracy(
    backbone.model,
    dataset.test,
    config.batchSize,
  );
  console.log(`baseline test accuracy: ${baselineAccuracy.toFixed(4)}`);

  const layerIds = [...config.layerIds].sort((a, b) => a - b);
  const layerFile = (id: number, split: string) =>
    `layer${String(id).padStart(2, '0')}_${split}.npy`;
  const trainFiles: Record<number, string> = {};
  const testFiles: Record<number, string> = {};
  for (const id of layerIds) {
    trainFiles[id] = path.join(config.outputDir, layerFile(id, 'train'));
    testFiles[id] = path.join(config.outputDir, layerFile(id, 'test'));
  }
  const dims = await extractLayers(
    backbone, dataset.train, layerIds, config.batchSize, trainFiles,
  );
  await extractLayers(backbone, dataset.test, layerIds, config.batchSize, testFiles);

  writeLabels(path.join(config.outputDir, 'train_labels.npy'), dataset.train.labels);
  writeLabels(path.join(config.outputDir, 'test_labels.npy'), dataset.test.labels);

  const imageDir = path.join(config.outputDir, 'images');
  const trainPrints = exportImages(dataset.train, 'train', imageDir);
  const testPrints = exportImages(dataset.test, 'test', imageDir);
  fs.writeFileSync(
    path.join(config.outputDir, 'fingerprints_train.json'),
    JSON.stringify(trainPrints, null, 1) + '\n',
  );
  fs.writeFileSync(
    path.join(config.outputDir, 'fingerprints_test.json'),
    JSON.stringify(testPrints, null, 1) + '\n',
  );

  const manifest = {
    dataset_name: config.dataset,
    num_classes: dataset.numClasses,
    baseline_accuracy: baselineAccuracy,
    layers: layerIds.map((id) => ({
      layer_id: id,
      train_path: layerFile(id, 'train'),
      test_path: layerFile(id, 'test'),
      dims: dims[id],
    })),
    train_labels_path: 'train_labels.npy',
    test_labels_path: 'test_labels.npy',
    image_dir: 'images',
  };
  const manifestPath = path.join(config.outputDir, 'manifest.json');
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + '\n');

  // layer ordinal -> module documentation lives beside (not inside) the
  // manifest: the engine validates manifests strictly.
  fs.writeFileSync(
    path.join(config.outputDir, 'catalog.json'),
    JSON.stringify(backbone.catalog, null, 2) + '\n',
  );

  return { manifestPath, baselineAccuracy, layerDims: dims };
}
