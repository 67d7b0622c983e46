import { mkdtempSync, writeFileSync } from 'fs'
import { tmpdir } from 'os'
import { join } from 'path'
import { describe, expect, it } from 'vitest'
import { encodeSaft, readSaft, writeSaft } from '../src/saft'

function tempDir(): string {
  return mkdtempSync(join(tmpdir(), 'saft-'))
}

describe('saft format', () => {
  it('writes the documented header layout', () => {
    const buf = encodeSaft(
      [{ imageId: 'img0', values: Float32Array.from([1, 2, 3, 4, 5, 6]) }],
      2,
      3,
    )
    expect(buf.toString('ascii', 0, 4)).toBe('SAFT')
    expect(buf.readUInt32LE(4)).toBe(1) // version
    expect(buf.readUInt32LE(8)).toBe(1) // n_images
    expect(buf.readUInt32LE(12)).toBe(2) // K
    expect(buf.readUInt32LE(16)).toBe(3) // D
    expect(buf.readUInt16LE(20)).toBe(4) // id length
    expect(buf.toString('utf-8', 22, 26)).toBe('img0')
    expect(buf.readFloatLE(26)).toBe(1)
    expect(buf.length).toBe(26 + 6 * 4)
  })

  it('round-trips through the reader', () => {
    const dir = tempDir()
    const path = join(dir, 'f.saft')
    const values = Float32Array.from({ length: 12 }, (_, i) => i / 7)
    writeSaft(path, [
      { imageId: 'a', values },
      { imageId: 'b', values: values.map((v) => -v) },
    ], 3, 4)
    const loaded = readSaft(path)
    expect(loaded.k).toBe(3)
    expect(loaded.d).toBe(4)
    expect(loaded.images.map((i) => i.imageId)).toEqual(['a', 'b'])
    expect(Array.from(loaded.images[0].values)).toEqual(Array.from(values))
  })

  it('rejects wrong-sized payloads and empty sets', () => {
    expect(() => encodeSaft([], 2, 2)).toThrow(/empty/)
    expect(() =>
      encodeSaft([{ imageId: 'x', values: new Float32Array(3) }], 2, 2),
    ).toThrow(/expected 4/)
  })

  it('detects trailing garbage', () => {
    const dir = tempDir()
    const path = join(dir, 'bad.saft')
    const buf = encodeSaft(
      [{ imageId: 'x', values: new Float32Array(4) }],
      2,
      2,
    )
    writeFileSync(path, Buffer.concat([buf, Buffer.from([0])]))
    expect(() => readSaft(path)).toThrow(/trailing/)
  })
})
