#!/usr/bin/env node
// CLI:
//   extract --images <root> --out <dir> [--model <id>] [--name <task>]
//   labels  --names <file> --out <file> [--encoder <id>]

import { extractFeatures } from './extract.js'
import { extractLabelEmbeddings } from './labels.js'

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>()
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i]
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`expected --flag value pairs, got '${argv.slice(i).join(' ')}'`)
    }
    flags.set(key.slice(2), argv[i + 1])
  }
  return flags
}

function need(flags: Map<string, string>, key: string): string {
  const value = flags.get(key)
  if (value === undefined) throw new Error(`missing required flag --${key}`)
  return value
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv
  try {
    if (command === 'extract') {
      const flags = parseFlags(rest)
      const result = extractFeatures(
        need(flags, 'images'),
        need(flags, 'out'),
        flags.get('model'),
        flags.get('name')
      )
      for (const file of result.skipped) {
        console.error(`warning: skipped unreadable image ${file}`)
      }
      console.log(
        `${result.manifestPath}: ${result.recordCount} embeddings, ` +
          `${result.classes.length} classes` +
          (result.skipped.length ? `, ${result.skipped.length} skipped` : '')
      )
      return 0
    }
    if (command === 'labels') {
      const flags = parseFlags(rest)
      const out = need(flags, 'out')
      const info = extractLabelEmbeddings(need(flags, 'names'), out, flags.get('encoder'))
      console.log(`${out}: ${info.count} label embeddings, dim ${info.dim}`)
      return 0
    }
    console.error(
      'usage: extract --images <root> --out <dir> [--model <id>] [--name <task>]\n' +
        '       labels --names <file> --out <file> [--encoder <id>]'
    )
    return 2
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`)
    return 1
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)))
}
