/**
 * Stand-in convolutional backbone for offline runs.
 *
 * Real deployments point the extractor at a locally converted pretrained
 * network; environments without one can synthesize this deterministic
 * stand-in, which maps 224x224x3 input to the same 7x7x2048 final-stage
 * shape. Weights come from a seeded PRNG, so two backbones built with one
 * seed are identical.
 */

import * as tf from '@tensorflow/tfjs'
import { saveLayersModel } from './modelio'

export const INPUT_SIZE = 224
export const GRID = 7
export const CHANNELS = 2048

/** mulberry32: tiny deterministic PRNG, uniform in [0, 1). */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0
  return () => {
    state = (state + 0x6d2b79f5) >>> 0
    let t = state
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

export function buildStandInBackbone(seed: number, channels = CHANNELS): tf.LayersModel {
  const rand = mulberry32(seed)
  const pool = INPUT_SIZE / GRID // 32
  const kernelValues = Float32Array.from({ length: 3 * channels }, () =>
    (rand() - 0.5) * 2.0,
  )
  const kernel = tf.tensor4d(kernelValues, [1, 1, 3, channels])
  const model = tf.sequential()
  model.add(
    tf.layers.averagePooling2d({
      inputShape: [INPUT_SIZE, INPUT_SIZE, 3],
      poolSize: pool,
      strides: pool,
    }),
  )
  model.add(
    tf.layers.conv2d({
      filters: channels,
      kernelSize: 1,
      activation: 'tanh',
      useBias: true,
      weights: [kernel, tf.zeros([channels])],
    }),
  )
  return model
}

export async function makeBackbone(
  outDir: string,
  seed: number,
  channels = CHANNELS,
): Promise<void> {
  const model = buildStandInBackbone(seed, channels)
  await saveLayersModel(model, outDir)
  model.dispose()
}
