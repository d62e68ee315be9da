/**
 * Local dataset loaders: MNIST / Fashion-MNIST (IDX files) and CIFAR-10
 * (binary batches). Files must already be on disk; a missing file is a hard
 * error naming exactly what was expected — never a silent fallback.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

export type DatasetName = 'mnist' | 'fashion_mnist' | 'cifar10';

export interface SplitData {
  /** Raw pixels, row-major, one example after another (HWC within an example). */
  pixels: Uint8Array;
  labels: Uint8Array;
  count: number;
  height: number;
  width: number;
  channels: number;
}

export interface Dataset {
  name: DatasetName;
  numClasses: number;
  train: SplitData;
  test: SplitData;
}

const IDX_IMAGES_MAGIC = 2051;
const IDX_LABELS_MAGIC = 2049;

export function readIdxImages(filePath: string): Omit<SplitData, 'labels'> {
  const raw = fs.readFileSync(filePath);
  const magic = raw.readInt32BE(0);
  if (magic !== IDX_IMAGES_MAGIC) {
    throw new Error(`${filePath}: IDX image magic ${magic}, expected ${IDX_IMAGES_MAGIC}`);
  }
  const count = raw.readInt32BE(4);
  const height = raw.readInt32BE(8);
  const width = raw.readInt32BE(12);
  const pixels = new Uint8Array(raw.subarray(16, 16 + count * height * width));
  if (pixels.length !== count * height * width) {
    throw new Error(`${filePath}: truncated IDX image payload`);
  }
  return { pixels, count, height, width, channels: 1 };
}

export function readIdxLabels(filePath: string): Uint8Array {
  const raw = fs.readFileSync(filePath);
  const magic = raw.readInt32BE(0);
  if (magic !== IDX_LABELS_MAGIC) {
    throw new Error(`${filePath}: IDX label magic ${magic}, expected ${IDX_LABELS_MAGIC}`);
  }
  const count = raw.readInt32BE(4);
  const labels = new Uint8Array(raw.subarray(8, 8 + count));
  if (labels.length !== count) throw new Error(`${filePath}: truncated IDX label payload`);
  return labels;
}

function requireFiles(dataDir: string, names: string[], dataset: string): void {
  const missing = names.filter((name) => !fs.existsSync(path.join(dataDir, name)));
  if (missing.length > 0) {
    throw new Error(
      `${dataset}: missing data files under ${dataDir}: ${missing.join(', ')}. ` +
        `Download the canonical distribution into that directory first.`,
    );
  }
}

function limitSplit(split: SplitData, limit: number | undefined): SplitData {
  if (limit === undefined || limit >= split.count) return split;
  const size = split.height * split.width * split.channels;
  return {
    ...split,
    count: limit,
    pixels: split.pixels.subarray(0, limit * size),
    labels: split.labels.subarray(0, limit),
  };
}

function loadIdxDataset(name: DatasetName, dataDir: string): Dataset {
  const files = {
    trainImages: 'train-images-idx3-ubyte',
    trainLabels: 'train-labels-idx1-ubyte',
    testImages: 't10k-images-idx3-ubyte',
    testLabels: 't10k-labels-idx1-ubyte',
  };
  requireFiles(dataDir, Object.values(files), name);
  const train = readIdxImages(path.join(dataDir, files.trainImages));
  const test = readIdxImages(path.join(dataDir, files.testImages));
  return {
    name,
    numClasses: 10,
    train: { ...train, labels: readIdxLabels(path.join(dataDir, files.trainLabels)) },
    test: { ...test, labels: readIdxLabels(path.join(dataDir, files.testLabels)) },
  };
}

const CIFAR_RECORD = 1 + 3072;

export function readCifarBatch(filePath: string): { pixels: Uint8Array; labels: Uint8Array; count: number } {
  const raw = fs.readFileSync(filePath);
  if (raw.length % CIFAR_RECORD !== 0) {
    throw new Error(`${filePath}: size ${raw.length} is not a whole number of CIFAR records`);
  }
  const count = raw.length / CIFAR_RECORD;
  const labels = new Uint8Array(count);
  // CIFAR stores planes (RRR..GGG..BBB); convert to interleaved HWC.
  const pixels = new Uint8Array(count * 32 * 32 * 3);
  for (let i = 0; i < count; i++) {
    const record = raw.subarray(i * CIFAR_RECORD, (i + 1) * CIFAR_RECORD);
    labels[i] = record[0];
    for (let p = 0; p < 1024; p++) {
      pixels[i * 3072 + p * 3] = record[1 + p];
      pixels[i * 3072 + p * 3 + 1] = record[1 + 1024 + p];
      pixels[i * 3072 + p * 3 + 2] = record[1 + 2048 + p];
    }
  }
  return { pixels, labels, count };
}

function loadCifar10(dataDir: string): Dataset {
  const trainFiles = [1, 2, 3, 4, 5].map((i) => `data_batch_${i}.bin`);
  requireFiles(dataDir, [...trainFiles, 'test_batch.bin'], 'cifar10');
  const parts = trainFiles.map((f) => readCifarBatch(path.join(dataDir, f)));
  const count = parts.reduce((a, p) => a + p.count, 0);
  const pixels = new Uint8Array(count * 3072);
  const labels = new Uint8Array(count);
  let offset = 0;
  for (const part of parts) {
    pixels.set(part.pixels, offset * 3072);
    labels.set(part.labels, offset);
    offset += part.count;
  }
  const test = readCifarBatch(path.join(dataDir, 'test_batch.bin'));
  const dims = { height: 32, width: 32, channels: 3 };
  return {
    name: 'cifar10',
    numClasses: 10,
    train: { pixels, labels, count, ...dims },
    test: { pixels: test.pixels, labels: test.labels, count: test.count, ...dims },
  };
}

export function loadDataset(
  name: DatasetName,
  dataDir: string,
  limits: { train?: number; test?: number } = {},
): Dataset {
  const dataset =
    name === 'cifar10' ? loadCifar10(dataDir) : loadIdxDataset(name, dataDir);
  return {
    ...dataset,
    train: limitSplit(dataset.train, limits.train),
    test: limitSplit(dataset.test, limits.test),
  };
}
