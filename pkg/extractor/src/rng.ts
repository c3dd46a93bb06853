// Deterministic RNG: splitmix64 seeding of xoshiro256**, BigInt arithmetic.
// Same seed always yields the same stream, on every platform.

const MASK = (1n << 64n) - 1n

function splitmixNext(state: bigint): [bigint, bigint] {
  state = (state + 0x9e3779b97f4a7c15n) & MASK
  let z = state
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK
  return [state, z ^ (z >> 31n)]
}

function rotl(x: bigint, k: bigint): bigint {
  return ((x << k) | (x >> (64n - k))) & MASK
}

export class Rng {
  private s: bigint[]

  constructor(seed: bigint) {
    let sm = seed & MASK
    this.s = []
    for (let i = 0; i < 4; i++) {
      const [next, word] = splitmixNext(sm)
      sm = next
      this.s.push(word)
    }
  }

  nextU64(): bigint {
    const s = this.s
    const result = (rotl((s[1] * 5n) & MASK, 7n) * 9n) & MASK
    const t = (s[1] << 17n) & MASK
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = rotl(s[3], 45n)
    return result
  }

  /** Uniform in [0, 1) with 53 bits of precision. */
  random(): number {
    return Number(this.nextU64() >> 11n) * 2 ** -53
  }

  /** Standard normal via Box-Muller (one value per pair drawn). */
  normal(): number {
    let u1 = this.random()
    while (u1 <= 0) u1 = this.random()
    const u2 = this.random()
    return Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2)
  }
}

/** FNV-1a 64-bit hash of a UTF-8 string, as a bigint seed. */
export function fnv1a64(text: string): bigint {
  const bytes = Buffer.from(text, 'utf-8')
  let hash = 0xcbf29ce484222325n
  for (const b of bytes) {
    hash ^= BigInt(b)
    hash = (hash * 0x100000001b3n) & MASK
  }
  return hash
}
