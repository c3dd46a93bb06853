// Image decoding (PNG, JPEG, binary PPM) and bilinear resize to the
// 299x299 RGB input recipe.

import { readFileSync } from 'node:fs'
import { PNG } from 'pngjs'
import jpeg from 'jpeg-js'

export interface RgbImage {
  width: number
  height: number
  /** Row-major RGB, 3 bytes per pixel. */
  data: Uint8Array
}

export class UnreadableImage extends Error {}

function decodePpm(buf: Buffer): RgbImage {
  // P6 binary: "P6" <ws> width <ws> height <ws> maxval <single ws> raw RGB
  let pos = 0
  const token = (): string => {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++
    if (buf[pos] === 0x23) {
      // comment line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      return token()
    }
    const start = pos
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) pos++
    return buf.subarray(start, pos).toString('ascii')
  }
  if (token() !== 'P6') throw new UnreadableImage('not a binary PPM')
  const width = parseInt(token(), 10)
  const height = parseInt(token(), 10)
  const maxval = parseInt(token(), 10)
  pos++ // single whitespace after maxval
  if (!(width > 0 && height > 0) || maxval !== 255) {
    throw new UnreadableImage('unsupported PPM header')
  }
  const need = width * height * 3
  if (buf.length - pos < need) throw new UnreadableImage('truncated PPM payload')
  return { width, height, data: new Uint8Array(buf.subarray(pos, pos + need)) }
}

export function decodeImage(path: string): RgbImage {
  let buf: Buffer
  try {
    buf = readFileSync(path)
  } catch (err) {
    throw new UnreadableImage(`${path}: ${err}`)
  }
  try {
    if (path.toLowerCase().endsWith('.ppm')) return decodePpm(buf)
    if (path.toLowerCase().endsWith('.png')) {
      const png = PNG.sync.read(buf)
      const data = new Uint8Array(png.width * png.height * 3)
      for (let i = 0; i < png.width * png.height; i++) {
        data[3 * i] = png.data[4 * i]
        data[3 * i + 1] = png.data[4 * i + 1]
        data[3 * i + 2] = png.data[4 * i + 2]
      }
      return { width: png.width, height: png.height, data }
    }
    if (/\.jpe?g$/.test(path.toLowerCase())) {
      const img = jpeg.decode(buf, { useTArray: true, formatAsRGBA: true })
      const data = new Uint8Array(img.width * img.height * 3)
      for (let i = 0; i < img.width * img.height; i++) {
        data[3 * i] = img.data[4 * i]
        data[3 * i + 1] = img.data[4 * i + 1]
        data[3 * i + 2] = img.data[4 * i + 2]
      }
      return { width: img.width, height: img.height, data }
    }
  } catch (err) {
    if (err instanceof UnreadableImage) throw err
    throw new UnreadableImage(`${path}: ${err}`)
  }
  throw new UnreadableImage(`${path}: unsupported extension`)
}

export const TARGET_SIZE = 299

/** Bilinear resize to TARGET_SIZE x TARGET_SIZE, floats in [0, 1]. */
export function resizeToTarget(img: RgbImage): Float64Array {
  const out = new Float64Array(TARGET_SIZE * TARGET_SIZE * 3)
  const sx = img.width / TARGET_SIZE
  const sy = img.height / TARGET_SIZE
  for (let y = 0; y < TARGET_SIZE; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1)
    const y0 = Math.max(Math.floor(fy), 0)
    const y1 = Math.min(y0 + 1, img.height - 1)
    const wy = Math.max(fy - y0, 0)
    for (let x = 0; x < TARGET_SIZE; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1)
      const x0 = Math.max(Math.floor(fx), 0)
      const x1 = Math.min(x0 + 1, img.width - 1)
      const wx = Math.max(fx - x0, 0)
      for (let c = 0; c < 3; c++) {
        const p00 = img.data[3 * (y0 * img.width + x0) + c]
        const p01 = img.data[3 * (y0 * img.width + x1) + c]
        const p10 = img.data[3 * (y1 * img.width + x0) + c]
        const p11 = img.data[3 * (y1 * img.width + x1) + c]
        const top = p00 + (p01 - p00) * wx
        const bottom = p10 + (p11 - p10) * wx
        out[3 * (y * TARGET_SIZE + x) + c] = (top + (bottom - top) * wy) / 255
      }
    }
  }
  return out
}
