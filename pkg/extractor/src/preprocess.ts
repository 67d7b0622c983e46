/**
 * Image decoding and normalization: resize the shorter side to 256,
 * center-crop 224x224, scale RGB to [0, 1]. The constants live here and
 * are recorded next to every output file.
 */

import { Jimp } from 'jimp'
import { INPUT_SIZE } from './backbone'

export const RESIZE_SHORTER = 256

export const PREPROCESS_CONSTANTS = {
  resize_shorter: RESIZE_SHORTER,
  crop: INPUT_SIZE,
  scale: '1/255',
  channel_order: 'rgb',
  reshape: 'row-major spatial-then-channel, (7,7,2048) -> (196,512)',
}

/** Decode one image file to a Float32Array of shape [224, 224, 3]. */
export async function loadImageTensorData(path: string): Promise<Float32Array> {
  const image = await Jimp.read(path)
  const scale = RESIZE_SHORTER / Math.min(image.width, image.height)
  image.resize({
    w: Math.max(RESIZE_SHORTER, Math.round(image.width * scale)),
    h: Math.max(RESIZE_SHORTER, Math.round(image.height * scale)),
  })
  image.crop({
    x: Math.floor((image.width - INPUT_SIZE) / 2),
    y: Math.floor((image.height - INPUT_SIZE) / 2),
    w: INPUT_SIZE,
    h: INPUT_SIZE,
  })

  const out = new Float32Array(INPUT_SIZE * INPUT_SIZE * 3)
  const data = image.bitmap.data
  for (let y = 0; y < INPUT_SIZE; y++) {
    for (let x = 0; x < INPUT_SIZE; x++) {
      const src = (y * INPUT_SIZE + x) * 4 // RGBA
      const dst = (y * INPUT_SIZE + x) * 3
      out[dst] = data[src] / 255
      out[dst + 1] = data[src + 1] / 255
      out[dst + 2] = data[src + 2] / 255
    }
  }
  return out
}
