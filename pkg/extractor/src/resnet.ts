/**
 * ResNet18 backbone with its 20 convolutional layers enumerated in forward
 * order: the stem conv, then per residual block conv1, conv2, and (in the
 * first block of stages 2-4) the 1x1 strided shortcut conv after conv2.
 * Under this enumeration the shortcut convs land at ordinals 8, 13, and 18,
 * which are the downsampling layers.
 *
 * Embeddings are taken from each conv layer's own output (before batch
 * norm), matching a forward hook on the conv module.
 */

import * as tf from '@tensorflow/tfjs';
import type { SymbolicTensor } from '@tensorflow/tfjs';

export interface CatalogEntry {
  layerId: number;
  modulePath: string;
  downsampling: boolean;
  filters: number;
  stride: number;
}

export interface Backbone {
  model: tf.LayersModel;
  /** Symbolic output of each conv layer, index i = layer ordinal i+1. */
  convOutputs: SymbolicTensor[];
  catalog: CatalogEntry[];
}

const STAGES = [
  { filters: 64, stride: 1 },
  { filters: 128, stride: 2 },
  { filters: 256, stride: 2 },
  { filters: 512, stride: 2 },
];

export function layerCatalog(): CatalogEntry[] {
  const entries: CatalogEntry[] = [
    { layerId: 1, modulePath: 'conv1', downsampling: false, filters: 64, stride: 1 },
  ];
  let id = 2;
  STAGES.forEach((stage, s) => {
    for (let block = 1; block <= 2; block++) {
      const stride = block === 1 ? stage.stride : 1;
      entries.push({
        layerId: id++,
        modulePath: `stage${s + 1}.block${block}.conv1`,
        downsampling: false,
        filters: stage.filters,
        stride,
      });
      entries.push({
        layerId: id++,
        modulePath: `stage${s + 1}.block${block}.conv2`,
        downsampling: false,
        filters: stage.filters,
        stride: 1,
      });
      if (block === 1 && stage.stride === 2) {
        entries.push({
          layerId: id++,
          modulePath: `stage${s + 1}.block${block}.downsample`,
          downsampling: true,
          filters: stage.filters,
          stride: stage.stride,
        });
      }
    }
  });
  return entries;
}

export function buildBackbone(
  inputShape: [number, number, number],
  numClasses: number,
  seed: number,
): Backbone {
  let seedCounter = seed;
  const nextSeed = () => ++seedCounter;
  const conv = (filters: number, kernel: number, stride: number, name: string) =>
    tf.layers.conv2d({
      filters,
      kernelSize: kernel,
      strides: stride,
      padding: 'same',
      useBias: false,
      name,
      kernelInitializer: tf.initializers.heNormal({ seed: nextSeed() }),
    });
  const bn = (name: string) => tf.layers.batchNormalization({ name });

  const convOutputs: SymbolicTensor[] = [];
  const input = tf.input({ shape: inputShape, name: 'image' });

  let out = conv(64, 3, 1, 'conv1').apply(input) as SymbolicTensor;
  convOutputs.push(out);
  out = bn('bn1').apply(out) as SymbolicTensor;
  out = tf.layers.reLU({ name: 'relu1' }).apply(out) as SymbolicTensor;

  STAGES.forEach((stage, s) => {
    for (let block = 1; block <= 2; block++) {
      const prefix = `stage${s + 1}.block${block}`;
      const stride = block === 1 ? stage.stride : 1;
      const identity = out;

      let main = conv(stage.filters, 3, stride, `${prefix}.conv1`).apply(out) as SymbolicTensor;
      convOutputs.push(main);
      main = bn(`${prefix}.bn1`).apply(main) as SymbolicTensor;
      main = tf.layers.reLU({ name: `${prefix}.relu1` }).apply(main) as SymbolicTensor;
      main = conv(stage.filters, 3, 1, `${prefix}.conv2`).apply(main) as SymbolicTensor;
      convOutputs.push(main);
      main = bn(`${prefix}.bn2`).apply(main) as SymbolicTensor;

      let shortcut = identity;
      if (block === 1 && stage.stride === 2) {
        shortcut = conv(stage.filters, 1, stage.stride, `${prefix}.downsample`).apply(
          identity,
        ) as SymbolicTensor;
        convOutputs.push(shortcut);
        shortcut = bn(`${prefix}.bn_down`).apply(shortcut) as SymbolicTensor;
      }

      out = tf.layers.add({ name: `${prefix}.add` }).apply([main, shortcut]) as SymbolicTensor;
      out = tf.layers.reLU({ name: `${prefix}.relu2` }).apply(out) as SymbolicTensor;
    }
  });

  out = tf.layers.globalAveragePooling2d({ name: 'avgpool' }).apply(out) as SymbolicTensor;
  const logits = tf.layers.dense({
    units: numClasses,
    name: 'fc',
    kernelInitializer: tf.initializers.heNormal({ seed: nextSeed() }),
  }).apply(out) as SymbolicTensor;

  const model = tf.model({ inputs: input, outputs: logits, name: 'resnet18' });
  return { model, convOutputs, catalog: layerCatalog() };
}

/** Flattened embedding width of one conv output, in (channel, height, width) order. */
export function flattenedDims(output: SymbolicTensor): number {
  const [, h, w, c] = output.shape as [number | null, number, number, number];
  return c * h * w;
}
