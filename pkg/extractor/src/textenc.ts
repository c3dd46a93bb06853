// Text encoders for class names.  The default hashes case-folded
// character trigrams into a fixed number of buckets and unit-normalizes,
// so "kitchen" and "Kitchen" map to the same vector; pass a different
// --encoder id once a pretrained text model is wired in.

export interface TextEncoder {
  id: string
  dim: number
  encode(name: string): Float32Array
}

const HASH_ENCODERS: Record<string, number> = {
  'chargram64-v1': 64,
  'chargram128-v1': 128,
}

function fnv1a32(text: string): number {
  let hash = 0x811c9dc5
  for (const byte of Buffer.from(text, 'utf-8')) {
    hash ^= byte
    hash = Math.imul(hash, 0x01000193) >>> 0
  }
  return hash >>> 0
}

class CharGramEncoder implements TextEncoder {
  readonly id: string
  readonly dim: number

  constructor(id: string, dim: number) {
    this.id = id
    this.dim = dim
  }

  encode(name: string): Float32Array {
    const out = new Float32Array(this.dim)
    const padded = `^${name.toLowerCase().trim()}$`
    for (let i = 0; i + 3 <= padded.length; i++) {
      const gram = padded.slice(i, i + 3)
      out[fnv1a32(gram) % this.dim] += 1
    }
    let norm = 0
    for (const v of out) norm += v * v
    norm = Math.sqrt(norm)
    if (norm === 0) throw new Error(`name ${JSON.stringify(name)} encodes to zero`)
    for (let i = 0; i < out.length; i++) out[i] /= norm
    return out
  }
}

export const DEFAULT_ENCODER = 'chargram64-v1'

export function makeTextEncoder(id: string = DEFAULT_ENCODER): TextEncoder {
  const dim = HASH_ENCODERS[id]
  if (!dim) {
    throw new Error(
      `unknown encoder '${id}'; available: ${Object.keys(HASH_ENCODERS).join(', ')}`
    )
  }
  return new CharGramEncoder(id, dim)
}

export function cosine(a: Float32Array, b: Float32Array): number {
  let dot = 0
  let na = 0
  let nb = 0
  for (let i = 0; i < a.length; i++) {
    dot += a[i] * b[i]
    na += a[i] * a[i]
    nb += b[i] * b[i]
  }
  if (na === 0 || nb === 0) return 0
  return dot / (Math.sqrt(na) * Math.sqrt(nb))
}
