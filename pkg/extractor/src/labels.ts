// The labels job: one unit-norm embedding per class name.

import { readFileSync, writeFileSync, mkdirSync } from 'node:fs'
import { dirname } from 'node:path'

import { makeTextEncoder, DEFAULT_ENCODER } from './textenc.js'
import { encodeLbl1 } from './formats.js'

export class DuplicateName extends Error {}

export function extractLabelEmbeddings(
  namesFile: string,
  outFile: string,
  encoderId: string = DEFAULT_ENCODER
): { count: number; dim: number } {
  const names = readFileSync(namesFile, 'utf-8')
    .split('\n')
    .map((line) => line.trim())
    .filter((line) => line.length > 0)
  if (names.length === 0) {
    throw new Error(`${namesFile}: no class names`)
  }
  const seen = new Set<string>()
  for (const name of names) {
    if (seen.has(name)) throw new DuplicateName(`duplicate class name: ${name}`)
    seen.add(name)
  }
  const encoder = makeTextEncoder(encoderId)
  const vectors = names.map((name) => encoder.encode(name))
  mkdirSync(dirname(outFile), { recursive: true })
  writeFileSync(outFile, encodeLbl1(names, vectors))
  return { count: names.length, dim: encoder.dim }
}
