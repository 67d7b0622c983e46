/**
 * Binary spatial-feature file ("SAFT"): the exchange format the captioner
 * loads. Layout: magic "SAFT", version u32, n_images u32, K u32, D u32,
 * then per image a u16 id length, the UTF-8 id, and K*D little-endian
 * f32 values.
 */

import { writeFileSync, readFileSync } from 'fs'

export const SAFT_MAGIC = 'SAFT'
export const SAFT_VERSION = 1

export interface ImageFeatures {
  imageId: string
  /** row-major K x D */
  values: Float32Array
}

export function encodeSaft(images: ImageFeatures[], k: number, d: number): Buffer {
  if (images.length === 0) {
    throw new Error('refusing to write an empty feature file')
  }
  for (const img of images) {
    if (img.values.length !== k * d) {
      throw new Error(
        `image ${img.imageId}: ${img.values.length} values, expected ${k * d}`,
      )
    }
  }
  const chunks: Buffer[] = []
  const header = Buffer.alloc(4 + 16)
  header.write(SAFT_MAGIC, 0, 'ascii')
  header.writeUInt32LE(SAFT_VERSION, 4)
  header.writeUInt32LE(images.length, 8)
  header.writeUInt32LE(k, 12)
  header.writeUInt32LE(d, 16)
  chunks.push(header)
  for (const img of images) {
    const id = Buffer.from(img.imageId, 'utf-8')
    const lenBuf = Buffer.alloc(2)
    lenBuf.writeUInt16LE(id.length, 0)
    chunks.push(lenBuf, id)
    const payload = Buffer.alloc(img.values.length * 4)
    for (let i = 0; i < img.values.length; i++) {
      payload.writeFloatLE(img.values[i], i * 4)
    }
    chunks.push(payload)
  }
  return Buffer.concat(chunks)
}

export function writeSaft(
  path: string,
  images: ImageFeatures[],
  k: number,
  d: number,
): void {
  writeFileSync(path, encodeSaft(images, k, d))
}

export interface SaftFile {
  k: number
  d: number
  images: ImageFeatures[]
}

/** Reader used by the extractor's own tests to validate round trips. */
export function readSaft(path: string): SaftFile {
  const buf = readFileSync(path)
  if (buf.toString('ascii', 0, 4) !== SAFT_MAGIC) {
    throw new Error(`${path}: bad magic`)
  }
  const version = buf.readUInt32LE(4)
  if (version !== SAFT_VERSION) {
    throw new Error(`${path}: unsupported version ${version}`)
  }
  const n = buf.readUInt32LE(8)
  const k = buf.readUInt32LE(12)
  const d = buf.readUInt32LE(16)
  let offset = 20
  const images: ImageFeatures[] = []
  for (let i = 0; i < n; i++) {
    const idLen = buf.readUInt16LE(offset)
    offset += 2
    const imageId = buf.toString('utf-8', offset, offset + idLen)
    offset += idLen
    const values = new Float32Array(k * d)
    for (let j = 0; j < k * d; j++) {
      values[j] = buf.readFloatLE(offset + j * 4)
    }
    offset += k * d * 4
    images.push({ imageId, values })
  }
  if (offset !== buf.length) {
    throw new Error(`${path}: ${buf.length - offset} trailing bytes`)
  }
  return { k, d, images }
}
