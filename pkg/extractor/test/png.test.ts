import { execFileSync } from 'node:child_process';
import * as fs from 'node:fs';
import * as path from 'node:path';
import { describe, expect, it } from 'vitest';

import { decodePng, encodePng } from '../src/png.js';
import { scratchDir } from './helpers.js';

function patternPixels(n: number): Uint8Array {
  return new Uint8Array(n).map((_, i) => (i * 31 + 7) % 256);
}

describe('png codec', () => {
  it('round-trips grayscale pixels losslessly', () => {
    const pixels = patternPixels(28 * 28);
    const decoded = decodePng(encodePng(pixels, 28, 28, 1));
    expect(decoded.width).toBe(28);
    expect(decoded.height).toBe(28);
    expect(decoded.channels).toBe(1);
    expect(Buffer.from(decoded.pixels)).toEqual(Buffer.from(pixels));
  });

  it('round-trips rgb pixels losslessly', () => {
    const pixels = patternPixels(8 * 8 * 3);
    const decoded = decodePng(encodePng(pixels, 8, 8, 3));
    expect(decoded.channels).toBe(3);
    expect(Buffer.from(decoded.pixels)).toEqual(Buffer.from(pixels));
  });

  it('is byte-deterministic', () => {
    const pixels = patternPixels(16 * 16);
    expect(encodePng(pixels, 16, 16, 1)).toEqual(encodePng(pixels, 16, 16, 1));
  });

  it('decodes identically under an independent decoder', () => {
    const dir = scratchDir('png');
    const file = path.join(dir, 'p.png');
    const pixels = patternPixels(12 * 9);
    fs.writeFileSync(file, encodePng(pixels, 12, 9, 1));
    const out = execFileSync('python3', [
      '-c',
      'import sys; from PIL import Image; import numpy as np; ' +
        `a = np.asarray(Image.open(${JSON.stringify(file)})); ` +
        "sys.stdout.write(','.join(map(str, a.flatten())))",
    ]).toString();
    expect(out.split(',').map(Number)).toEqual(Array.from(pixels));
  });

  it('rejects mismatched buffer sizes', () => {
    expect(() => encodePng(new Uint8Array(10), 4, 4, 1)).toThrow(/pixel buffer/);
  });
});
