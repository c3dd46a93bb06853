// The extract job: one class per sub-folder, one embedding per image.

import { readdirSync, statSync, writeFileSync, mkdirSync } from 'node:fs'
import { join, basename } from 'node:path'

import { decodeImage, UnreadableImage } from './image.js'
import { makeFeaturizer, DEFAULT_MODEL } from './features.js'
import { encodeEmb1, Emb1Record } from './formats.js'

export class EmptyClass extends Error {}

export interface ExtractResult {
  manifestPath: string
  classes: string[]
  recordCount: number
  skipped: string[]
}

const IMAGE_PATTERN = /\.(png|jpe?g|ppm)$/i

export function extractFeatures(
  imagesRoot: string,
  outDir: string,
  modelId: string = DEFAULT_MODEL,
  taskName?: string
): ExtractResult {
  const classDirs = readdirSync(imagesRoot)
    .filter((entry) => statSync(join(imagesRoot, entry)).isDirectory())
    .sort()
  if (classDirs.length === 0) {
    throw new EmptyClass(`${imagesRoot}: no class folders`)
  }
  const featurizer = makeFeaturizer(modelId)
  const records: Emb1Record[] = []
  const skipped: string[] = []
  classDirs.forEach((className, label) => {
    const dir = join(imagesRoot, className)
    const files = readdirSync(dir).filter((f) => IMAGE_PATTERN.test(f)).sort()
    let embedded = 0
    for (const file of files) {
      try {
        const image = decodeImage(join(dir, file))
        records.push({ label, vector: featurizer.embed(image) })
        embedded++
      } catch (err) {
        if (err instanceof UnreadableImage) {
          skipped.push(join(className, file))
        } else {
          throw err
        }
      }
    }
    if (embedded === 0) {
      throw new EmptyClass(`${dir}: no decodable images`)
    }
  })

  mkdirSync(outDir, { recursive: true })
  const dim = featurizer.dim
  writeFileSync(join(outDir, 'train.emb1'), encodeEmb1(dim, classDirs.length, records))
  writeFileSync(join(outDir, 'val.emb1'), encodeEmb1(dim, classDirs.length, []))
  writeFileSync(join(outDir, 'test.emb1'), encodeEmb1(dim, classDirs.length, []))
  const manifest = {
    classes: classDirs,
    dim,
    files: { test: 'test.emb1', train: 'train.emb1', val: 'val.emb1' },
    name: taskName ?? basename(imagesRoot),
  }
  const manifestPath = join(outDir, 'manifest.json')
  writeFileSync(manifestPath, JSON.stringify(manifest, null, 2) + '\n')
  return { manifestPath, classes: classDirs, recordCount: records.length, skipped }
}
