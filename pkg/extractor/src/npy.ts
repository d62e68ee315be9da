/**
 * Writer/reader for the engine's tensor container: NPY v1.0 restricted to
 * little-endian float32 matrices and int64 label vectors, C order.
 *
 * Large matrices are written row-streamed: the header is emitted once with
 * the final shape, then payload batches are appended in arrival order.
 */

import * as fs from 'node:fs';

const MAGIC = Buffer.from([0x93, 0x4e, 0x55, 0x4d, 0x50, 0x59]); // \x93NUMPY
const VERSION = Buffer.from([0x01, 0x00]);
const HEADER_ALIGN = 64;

function shapeRepr(shape: number[]): string {
  if (shape.length === 1) return `(${shape[0]},)`;
  return `(${shape.join(', ')})`;
}

export function buildHeader(descr: '<f4' | '<i8', shape: number[]): Buffer {
  const dict = `{'descr': '${descr}', 'fortran_order': False, 'shape': ${shapeRepr(shape)}, }`;
  const prefix = MAGIC.length + VERSION.length + 2;
  const pad = (HEADER_ALIGN - ((prefix + dict.length + 1) % HEADER_ALIGN)) % HEADER_ALIGN;
  const header = Buffer.from(dict + ' '.repeat(pad) + '\n', 'latin1');
  const lengthField = Buffer.alloc(2);
  lengthField.writeUInt16LE(header.length, 0);
  return Buffer.concat([MAGIC, VERSION, lengthField, header]);
}

/** Incremental float32 matrix writer; rows must arrive in final row order. */
export class MatrixWriter {
  private fd: number;
  private rowsWritten = 0;

  constructor(readonly path: string, readonly rows: number, readonly dims: number) {
    this.fd = fs.openSync(path, 'w');
    fs.writeSync(this.fd, buildHeader('<f4', [rows, dims]));
  }

  append(batch: Float32Array): void {
    if (batch.length % this.dims !== 0) {
      throw new Error(`batch length ${batch.length} not a multiple of dims ${this.dims}`);
    }
    this.rowsWritten += batch.length / this.dims;
    if (this.rowsWritten > this.rows) {
      throw new Error(`wrote ${this.rowsWritten} rows, declared ${this.rows}`);
    }
    // Float32Array is little-endian on every platform node supports.
    fs.writeSync(this.fd, Buffer.from(batch.buffer, batch.byteOffset, batch.byteLength));
  }

  close(): void {
    fs.closeSync(this.fd);
    if (this.rowsWritten !== this.rows) {
      throw new Error(`${this.path}: wrote ${this.rowsWritten} of ${this.rows} rows`);
    }
  }
}

export function writeMatrix(path: string, rows: number, dims: number, values: Float32Array): void {
  const writer = new MatrixWriter(path, rows, dims);
  writer.append(values);
  writer.close();
}

export function writeLabels(path: string, labels: ArrayLike<number>): void {
  const payload = new BigInt64Array(labels.length);
  for (let i = 0; i < labels.length; i++) payload[i] = BigInt(labels[i]);
  fs.writeFileSync(
    path,
    Buffer.concat([
      buildHeader('<i8', [labels.length]),
      Buffer.from(payload.buffer, payload.byteOffset, payload.byteLength),
    ]),
  );
}

export interface NpyTensor {
  descr: '<f4' | '<i8';
  shape: number[];
  float32?: Float32Array;
  int64?: BigInt64Array;
}

/** Strict reader used by the test suite to audit written files. */
export function readNpy(path: string): NpyTensor {
  const raw = fs.readFileSync(path);
  if (!raw.subarray(0, 6).equals(MAGIC)) throw new Error(`${path}: bad magic`);
  if (!raw.subarray(6, 8).equals(VERSION)) throw new Error(`${path}: unsupported version`);
  const headerLen = raw.readUInt16LE(8);
  const header = raw.subarray(10, 10 + headerLen).toString('latin1');
  if (!header.endsWith('\n')) throw new Error(`${path}: header not newline-terminated`);
  const descrMatch = header.match(/'descr': '([^']+)'/);
  const orderMatch = header.match(/'fortran_order': (True|False)/);
  const shapeMatch = header.match(/'shape': \(([^)]*)\)/);
  if (!descrMatch || !orderMatch || !shapeMatch) throw new Error(`${path}: malformed header`);
  if (orderMatch[1] !== 'False') throw new Error(`${path}: fortran order unsupported`);
  const descr = descrMatch[1];
  if (descr !== '<f4' && descr !== '<i8') throw new Error(`${path}: dtype ${descr} unsupported`);
  const shape = shapeMatch[1]
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map(Number);
  const count = shape.reduce((a, b) => a * b, 1);
  const payload = raw.subarray(10 + headerLen);
  if (descr === '<f4') {
    if (payload.length !== count * 4) throw new Error(`${path}: truncated payload`);
    return { descr, shape, float32: new Float32Array(payload.buffer, payload.byteOffset, count) };
  }
  if (payload.length !== count * 8) throw new Error(`${path}: truncated payload`);
  return { descr, shape, int64: new BigInt64Array(payload.buffer.slice(payload.byteOffset, payload.byteOffset + count * 8)) };
}
