// Image featurizers.  The default is a deterministic local model: block
// average-pooling of the resized image followed by a seeded random
// projection.  It needs no downloaded weights, produces byte-identical
// output on every run, and exists so fixtures can be built offline; pass
// a different --model id once a pretrained backbone is wired in.

import { Rng, fnv1a64 } from './rng.js'
import { RgbImage, TARGET_SIZE, resizeToTarget } from './image.js'

export interface Featurizer {
  id: string
  dim: number
  embed(img: RgbImage): Float32Array
}

interface ProjSpec {
  dim: number
  grid: number
}

const PROJECTION_MODELS: Record<string, ProjSpec> = {
  'proj64-v1': { dim: 64, grid: 16 },
  'proj128-v1': { dim: 128, grid: 16 },
}

class ProjectionFeaturizer implements Featurizer {
  readonly id: string
  readonly dim: number
  private grid: number
  private weights: Float64Array // dim x (grid*grid*3)

  constructor(id: string, spec: ProjSpec) {
    this.id = id
    this.dim = spec.dim
    this.grid = spec.grid
    const inputs = spec.grid * spec.grid * 3
    const rng = new Rng(fnv1a64(id))
    this.weights = new Float64Array(spec.dim * inputs)
    for (let i = 0; i < this.weights.length; i++) {
      this.weights[i] = rng.normal()
    }
  }

  embed(img: RgbImage): Float32Array {
    const pixels = resizeToTarget(img)
    const g = this.grid
    const pooled = new Float64Array(g * g * 3)
    const counts = new Float64Array(g * g)
    for (let y = 0; y < TARGET_SIZE; y++) {
      const by = Math.floor((y * g) / TARGET_SIZE)
      for (let x = 0; x < TARGET_SIZE; x++) {
        const bx = Math.floor((x * g) / TARGET_SIZE)
        const bin = by * g + bx
        counts[bin] += 1
        for (let c = 0; c < 3; c++) {
          pooled[3 * bin + c] += pixels[3 * (y * TARGET_SIZE + x) + c]
        }
      }
    }
    for (let bin = 0; bin < g * g; bin++) {
      for (let c = 0; c < 3; c++) pooled[3 * bin + c] /= counts[bin]
    }
    const inputs = pooled.length
    const scale = 1 / Math.sqrt(inputs)
    const out = new Float32Array(this.dim)
    for (let d = 0; d < this.dim; d++) {
      let acc = 0
      const row = d * inputs
      for (let j = 0; j < inputs; j++) acc += this.weights[row + j] * pooled[j]
      out[d] = acc * scale
    }
    return out
  }
}

export const DEFAULT_MODEL = 'proj64-v1'

export function makeFeaturizer(id: string = DEFAULT_MODEL): Featurizer {
  const spec = PROJECTION_MODELS[id]
  if (!spec) {
    throw new Error(
      `unknown model '${id}'; available: ${Object.keys(PROJECTION_MODELS).join(', ')}`
    )
  }
  return new ProjectionFeaturizer(id, spec)
}
