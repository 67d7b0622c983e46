/**
 * Filesystem save/load for tfjs layers models without tfjs-node: a minimal
 * IOHandler pair over the standard model.json + weights.bin layout, so a
 * directory produced here (or by any tfjs `model.save`) loads the same way.
 */

import * as tf from '@tensorflow/tfjs'
import { mkdirSync, readFileSync, writeFileSync } from 'fs'
import { join } from 'path'

const WEIGHTS_FILE = 'weights.bin'
const MODEL_FILE = 'model.json'

export async function saveLayersModel(
  model: tf.LayersModel,
  dir: string,
): Promise<void> {
  mkdirSync(dir, { recursive: true })
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const manifest = {
        modelTopology: artifacts.modelTopology,
        format: artifacts.format,
        generatedBy: artifacts.generatedBy,
        convertedBy: null,
        weightsManifest: [
          { paths: [WEIGHTS_FILE], weights: artifacts.weightSpecs },
        ],
      }
      writeFileSync(join(dir, MODEL_FILE), JSON.stringify(manifest))
      writeFileSync(
        join(dir, WEIGHTS_FILE),
        Buffer.from(artifacts.weightData as ArrayBuffer),
      )
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON',
        },
      }
    }),
  )
}

export async function loadLayersModel(dir: string): Promise<tf.LayersModel> {
  const manifest = JSON.parse(readFileSync(join(dir, MODEL_FILE), 'utf-8'))
  const weightSpecs = manifest.weightsManifest.flatMap(
    (group: { weights: unknown[] }) => group.weights,
  )
  const paths: string[] = manifest.weightsManifest.flatMap(
    (group: { paths: string[] }) => group.paths,
  )
  const buffers = paths.map((p) => readFileSync(join(dir, p)))
  const weightData = Buffer.concat(buffers)
  return tf.loadLayersModel(
    tf.io.fromMemory({
      modelTopology: manifest.modelTopology,
      weightSpecs,
      weightData: weightData.buffer.slice(
        weightData.byteOffset,
        weightData.byteOffset + weightData.byteLength,
      ),
    }),
  )
}
