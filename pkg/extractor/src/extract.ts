/**
 * Run a backbone over a directory of images and export the activations
 * in the captioner's binary feature format.
 *
 * The final-stage map (7x7x2048 for the standard shape) is flattened
 * row-major, spatial positions first, then regrouped into rows of 512,
 * giving the 196x512 grid the attention decoder consumes.
 */

import * as tf from '@tensorflow/tfjs'
import { readdirSync, statSync, writeFileSync } from 'fs'
import { basename, extname, join } from 'path'
import { INPUT_SIZE } from './backbone'
import { loadLayersModel } from './modelio'
import { PREPROCESS_CONSTANTS, loadImageTensorData } from './preprocess'
import { ImageFeatures, writeSaft } from './saft'

export const TARGET_K = 196
export const TARGET_D = 512

const IMAGE_EXTENSIONS = new Set(['.png', '.jpg', '.jpeg', '.bmp', '.tiff'])

export function listImageFiles(imagesPath: string): string[] {
  if (statSync(imagesPath).isFile()) {
    return [imagesPath]
  }
  return readdirSync(imagesPath)
    .filter((name) => IMAGE_EXTENSIONS.has(extname(name).toLowerCase()))
    .sort()
    .map((name) => join(imagesPath, name))
}

export interface ExtractOptions {
  modelDir: string
  imagesPath: string
  outPath: string
  batchSize?: number
  log?: (msg: string) => void
}

export interface ExtractSummary {
  written: number
  skipped: string[]
}

/** Reshape one [7,7,C] activation buffer into rows of TARGET_D values. */
export function regroupActivations(flat: Float32Array, k: number, d: number): Float32Array {
  if (flat.length !== k * d) {
    throw new Error(`activation size ${flat.length} != ${k}x${d}`)
  }
  // already row-major; the regroup is a pure reinterpretation
  return flat
}

export async function extract(options: ExtractOptions): Promise<ExtractSummary> {
  const log = options.log ?? (() => undefined)
  const batchSize = options.batchSize ?? 4
  const model = await loadLayersModel(options.modelDir)
  const files = listImageFiles(options.imagesPath)
  if (files.length === 0) {
    throw new Error(`no image files under ${options.imagesPath}`)
  }

  const decoded: { imageId: string; data: Float32Array }[] = []
  const skipped: string[] = []
  for (const file of files) {
    try {
      decoded.push({
        imageId: basename(file).replace(/\.[^.]+$/, ''),
        data: await loadImageTensorData(file),
      })
    } catch (err) {
      skipped.push(file)
      log(`skipping unreadable image ${file}: ${String(err)}`)
    }
  }
  if (decoded.length === 0) {
    model.dispose()
    throw new Error('no images could be decoded')
  }

  const images: ImageFeatures[] = []
  for (let start = 0; start < decoded.length; start += batchSize) {
    const chunk = decoded.slice(start, start + batchSize)
    const batch = tf.tensor4d(
      chunk.flatMap((c) => Array.from(c.data)),
      [chunk.length, INPUT_SIZE, INPUT_SIZE, 3],
    )
    const activations = model.predict(batch) as tf.Tensor
    const values = (await activations.data()) as Float32Array
    const per = values.length / chunk.length
    if (per !== TARGET_K * TARGET_D) {
      batch.dispose()
      activations.dispose()
      model.dispose()
      throw new Error(
        `backbone produced ${per} values per image, expected ` +
          `${TARGET_K}x${TARGET_D} = ${TARGET_K * TARGET_D}`,
      )
    }
    chunk.forEach((c, i) => {
      const slice = values.subarray(i * per, (i + 1) * per)
      images.push({
        imageId: c.imageId,
        values: regroupActivations(Float32Array.from(slice), TARGET_K, TARGET_D),
      })
    })
    batch.dispose()
    activations.dispose()
  }
  model.dispose()

  writeSaft(options.outPath, images, TARGET_K, TARGET_D)
  writeFileSync(
    options.outPath + '.meta.json',
    JSON.stringify({ preprocessing: PREPROCESS_CONSTANTS, images: images.length }, null, 2),
  )
  log(`wrote ${images.length} feature grids to ${options.outPath}`)
  return { written: images.length, skipped }
}
