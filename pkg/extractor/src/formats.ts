// EMB1 and LBL1 fixture writers (little-endian) plus readers for tests.
//
// EMB1: magic "EMB1", version u32 = 1, dim u32, class_count u32,
//       record_count u64, then per record: label u32 + dim x f32.
// LBL1: magic "LBL1", count u32, E u32, then per class:
//       name length u16 + UTF-8 bytes + E x f32.

export interface Emb1Record {
  label: number
  vector: Float32Array
}

export function encodeEmb1(
  dim: number,
  classCount: number,
  records: Emb1Record[]
): Buffer {
  const recordSize = 4 + 4 * dim
  const buf = Buffer.alloc(4 + 12 + 8 + recordSize * records.length)
  let pos = 0
  buf.write('EMB1', pos, 'ascii')
  pos += 4
  buf.writeUInt32LE(1, pos)
  pos += 4
  buf.writeUInt32LE(dim, pos)
  pos += 4
  buf.writeUInt32LE(classCount, pos)
  pos += 4
  buf.writeBigUInt64LE(BigInt(records.length), pos)
  pos += 8
  for (const record of records) {
    buf.writeUInt32LE(record.label, pos)
    pos += 4
    for (const value of record.vector) {
      buf.writeFloatLE(value, pos)
      pos += 4
    }
  }
  return buf
}

export function decodeEmb1(buf: Buffer): {
  dim: number
  classCount: number
  records: Emb1Record[]
} {
  if (buf.subarray(0, 4).toString('ascii') !== 'EMB1') {
    throw new Error('not an EMB1 file')
  }
  const version = buf.readUInt32LE(4)
  if (version !== 1) throw new Error(`unsupported EMB1 version ${version}`)
  const dim = buf.readUInt32LE(8)
  const classCount = buf.readUInt32LE(12)
  const count = Number(buf.readBigUInt64LE(16))
  const records: Emb1Record[] = []
  let pos = 24
  for (let i = 0; i < count; i++) {
    const label = buf.readUInt32LE(pos)
    pos += 4
    const vector = new Float32Array(dim)
    for (let d = 0; d < dim; d++) {
      vector[d] = buf.readFloatLE(pos)
      pos += 4
    }
    records.push({ label, vector })
  }
  return { dim, classCount, records }
}

export function encodeLbl1(names: string[], vectors: Float32Array[]): Buffer {
  const dim = vectors[0]?.length ?? 0
  const parts: Buffer[] = []
  const head = Buffer.alloc(12)
  head.write('LBL1', 0, 'ascii')
  head.writeUInt32LE(names.length, 4)
  head.writeUInt32LE(dim, 8)
  parts.push(head)
  names.forEach((name, i) => {
    const raw = Buffer.from(name, 'utf-8')
    const entry = Buffer.alloc(2 + raw.length + 4 * dim)
    entry.writeUInt16LE(raw.length, 0)
    raw.copy(entry, 2)
    vectors[i].forEach((value, d) => entry.writeFloatLE(value, 2 + raw.length + 4 * d))
    parts.push(entry)
  })
  return Buffer.concat(parts)
}

export function decodeLbl1(buf: Buffer): { names: string[]; vectors: Float32Array[] } {
  if (buf.subarray(0, 4).toString('ascii') !== 'LBL1') {
    throw new Error('not an LBL1 file')
  }
  const count = buf.readUInt32LE(4)
  const dim = buf.readUInt32LE(8)
  const names: string[] = []
  const vectors: Float32Array[] = []
  let pos = 12
  for (let i = 0; i < count; i++) {
    const len = buf.readUInt16LE(pos)
    pos += 2
    names.push(buf.subarray(pos, pos + len).toString('utf-8'))
    pos += len
    const vector = new Float32Array(dim)
    for (let d = 0; d < dim; d++) {
      vector[d] = buf.readFloatLE(pos)
      pos += 4
    }
    vectors.push(vector)
  }
  return { names, vectors }
}
