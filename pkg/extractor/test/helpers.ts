/** Shared test fixtures: synthesized IDX datasets and scratch directories. */

import * as fs from 'node:fs';
import * as os from 'node:os';
import * as path from 'node:path';

export function scratchDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), `${prefix}-`));
}

/** Deterministic byte stream so synthesized images differ per example. */
function* byteStream(seed: number): Generator<number> {
  let state = seed >>> 0;
  while (true) {
    state = (Math.imul(state, 1103515245) + 12345) >>> 0;
    yield (state >>> 16) & 0xff;
  }
}

export function writeIdxImages(
  filePath: string,
  count: number,
  height = 28,
  width = 28,
  seed = 1,
): void {
  const header = Buffer.alloc(16);
  header.writeInt32BE(2051, 0);
  header.writeInt32BE(count, 4);
  header.writeInt32BE(height, 8);
  header.writeInt32BE(width, 12);
  const body = Buffer.alloc(count * height * width);
  const stream = byteStream(seed);
  for (let i = 0; i < body.length; i++) body[i] = stream.next().value as number;
  fs.writeFileSync(filePath, Buffer.concat([header, body]));
}

export function writeIdxLabels(filePath: string, labels: number[]): void {
  const header = Buffer.alloc(8);
  header.writeInt32BE(2049, 0);
  header.writeInt32BE(labels.length, 4);
  fs.writeFileSync(filePath, Buffer.concat([header, Buffer.from(labels)]));
}

/** A micro MNIST-shaped dataset on disk; returns its directory. */
export function synthesizeMnist(
  trainCount: number,
  testCount: number,
  seedOffset = 0,
): string {
  const dir = scratchDir('mnist-idx');
  writeIdxImages(path.join(dir, 'train-images-idx3-ubyte'), trainCount, 28, 28, 11 + seedOffset);
  writeIdxLabels(
    path.join(dir, 'train-labels-idx1-ubyte'),
    Array.from({ length: trainCount }, (_, i) => i % 10),
  );
  writeIdxImages(path.join(dir, 't10k-images-idx3-ubyte'), testCount, 28, 28, 37 + seedOffset);
  writeIdxLabels(
    path.join(dir, 't10k-labels-idx1-ubyte'),
    Array.from({ length: testCount }, (_, i) => (i * 3) % 10),
  );
  return dir;
}
