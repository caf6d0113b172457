/*
 * EMBT container: tokenized texts, per-token float32 embeddings, and a
 * binary outcome per record. All integers little-endian.
 *
 *   magic "EMBT" | version u32 = 1 | D u32 | N u64 | max_tokens u32
 *   | provenance: u32 byte length + UTF-8
 *   | N records
 *
 *   record:
 *     id u64 | outcome u8 | U u32
 *     | U token strings (each: u32 byte length + UTF-8)
 *     | U*D float32 block, row-major
 *     | raw_text: u32 byte length (0 = absent) + UTF-8
 */

import { readFileSync, writeFileSync } from "node:fs";

export const EMBT_MAGIC = "EMBT";
export const EMBT_VERSION = 1;

export interface SampleRecord {
  id: number;
  tokens: string[];
  /** Row-major U x D block; length must equal tokens.length * dim. */
  embeddings: Float32Array;
  outcome: 0 | 1;
  rawText?: string;
}

export interface CorpusFile {
  dim: number;
  maxTokens: number;
  provenance: string;
  samples: SampleRecord[];
}

export class FormatError extends Error {}

function validate(corpus: CorpusFile): void {
  if (!Number.isInteger(corpus.dim) || corpus.dim < 1) {
    throw new FormatError(`embedding dim must be a positive integer, got ${corpus.dim}`);
  }
  if (!Number.isInteger(corpus.maxTokens) || corpus.maxTokens < 1) {
    throw new FormatError(`max_tokens must be a positive integer, got ${corpus.maxTokens}`);
  }
  const seen = new Set<number>();
  for (const s of corpus.samples) {
    if (!Number.isInteger(s.id) || s.id < 0) {
      throw new FormatError(`sample id must be a non-negative integer, got ${s.id}`);
    }
    if (seen.has(s.id)) throw new FormatError(`duplicate sample id ${s.id}`);
    seen.add(s.id);
    if (s.tokens.length < 1) {
      throw new FormatError(`sample ${s.id}: needs at least one token`);
    }
    if (s.tokens.length > corpus.maxTokens) {
      throw new FormatError(
        `sample ${s.id}: ${s.tokens.length} tokens exceeds max_tokens=${corpus.maxTokens}`,
      );
    }
    if (s.embeddings.length !== s.tokens.length * corpus.dim) {
      throw new FormatError(
        `sample ${s.id}: ${s.tokens.length} tokens need ` +
          `${s.tokens.length * corpus.dim} embedding values, got ${s.embeddings.length}`,
      );
    }
    for (let i = 0; i < s.embeddings.length; i++) {
      if (!Number.isFinite(s.embeddings[i])) {
        throw new FormatError(`sample ${s.id}: non-finite embedding entry`);
      }
    }
    if (s.outcome !== 0 && s.outcome !== 1) {
      throw new FormatError(`sample ${s.id}: outcome must be 0 or 1, got ${s.outcome}`);
    }
  }
}

class ByteWriter {
  private chunks: Buffer[] = [];

  u8(v: number): void {
    this.chunks.push(Buffer.from([v]));
  }
  u32(v: number): void {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v, 0);
    this.chunks.push(b);
  }
  u64(v: number): void {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(v), 0);
    this.chunks.push(b);
  }
  str(s: string): void {
    const raw = Buffer.from(s, "utf-8");
    this.u32(raw.length);
    if (raw.length > 0) this.chunks.push(raw);
  }
  raw(b: Buffer): void {
    this.chunks.push(b);
  }
  finish(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

/** Serialize a corpus to EMBT bytes, re-checking every invariant first. */
export function encodeCorpus(corpus: CorpusFile): Buffer {
  validate(corpus);
  const w = new ByteWriter();
  w.raw(Buffer.from(EMBT_MAGIC, "ascii"));
  w.u32(EMBT_VERSION);
  w.u32(corpus.dim);
  w.u64(corpus.samples.length);
  w.u32(corpus.maxTokens);
  w.str(corpus.provenance);
  for (const s of corpus.samples) {
    w.u64(s.id);
    w.u8(s.outcome);
    w.u32(s.tokens.length);
    for (const tok of s.tokens) w.str(tok);
    // explicit little-endian writes; a raw typed-array copy would be
    // platform-endian
    const block = Buffer.alloc(s.embeddings.length * 4);
    for (let i = 0; i < s.embeddings.length; i++) {
      block.writeFloatLE(s.embeddings[i], i * 4);
    }
    w.raw(block);
    w.str(s.rawText ?? "");
  }
  return w.finish();
}

export function writeCorpusFile(corpus: CorpusFile, path: string): number {
  const bytes = encodeCorpus(corpus);
  writeFileSync(path, bytes);
  return bytes.length;
}

class Cursor {
  pos = 0;
  recordId: number | null = null;

  constructor(private data: Buffer) {}

  private need(count: number): void {
    if (this.pos + count > this.data.length) {
      const where = this.recordId === null ? "in header" : `while reading record ${this.recordId}`;
      throw new FormatError(
        `stream ended at byte ${this.data.length}, needed ${this.pos + count} ${where}`,
      );
    }
  }
  u8(): number {
    this.need(1);
    return this.data[this.pos++];
  }
  u32(): number {
    this.need(4);
    const v = this.data.readUInt32LE(this.pos);
    this.pos += 4;
    return v;
  }
  u64(): number {
    this.need(8);
    const v = this.data.readBigUInt64LE(this.pos);
    this.pos += 8;
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new FormatError(`u64 value ${v} exceeds the safe integer range`);
    }
    return Number(v);
  }
  str(): string {
    const len = this.u32();
    this.need(len);
    const s = this.data.toString("utf-8", this.pos, this.pos + len);
    this.pos += len;
    return s;
  }
  floats(count: number): Float32Array {
    this.need(count * 4);
    // copy into an aligned buffer; the source offset may not be 4-aligned
    const out = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      out[i] = this.data.readFloatLE(this.pos + i * 4);
    }
    this.pos += count * 4;
    return out;
  }
  atEnd(): boolean {
    return this.pos === this.data.length;
  }
}

/** Parse EMBT bytes back into a corpus. Inverse of encodeCorpus. */
export function decodeCorpus(data: Buffer): CorpusFile {
  const c = new Cursor(data);
  const magic = Buffer.alloc(4);
  for (let i = 0; i < 4; i++) magic[i] = c.u8();
  if (magic.toString("ascii") !== EMBT_MAGIC) {
    throw new FormatError("not an EMBT file: bad magic bytes");
  }
  const version = c.u32();
  if (version !== EMBT_VERSION) {
    throw new FormatError(`EMBT version ${version} not supported (reader speaks ${EMBT_VERSION})`);
  }
  const dim = c.u32();
  const n = c.u64();
  const maxTokens = c.u32();
  const provenance = c.str();

  const samples: SampleRecord[] = [];
  for (let i = 0; i < n; i++) {
    c.recordId = null;
    const id = c.u64();
    c.recordId = id;
    const outcomeByte = c.u8();
    if (outcomeByte !== 0 && outcomeByte !== 1) {
      throw new FormatError(`record ${id}: outcome byte must be 0 or 1, got ${outcomeByte}`);
    }
    const u = c.u32();
    const tokens: string[] = [];
    for (let t = 0; t < u; t++) tokens.push(c.str());
    const embeddings = c.floats(u * dim);
    for (let k = 0; k < embeddings.length; k++) {
      if (!Number.isFinite(embeddings[k])) {
        throw new FormatError(`record ${id}: non-finite embedding entry in stream`);
      }
    }
    const raw = c.str();
    samples.push({
      id,
      tokens,
      embeddings,
      outcome: outcomeByte as 0 | 1,
      rawText: raw === "" ? undefined : raw,
    });
  }
  if (!c.atEnd()) {
    throw new FormatError(`${data.length - c.pos} trailing bytes after the last record`);
  }
  return { dim, maxTokens, provenance, samples };
}

export function readCorpusFile(path: string): CorpusFile {
  return decodeCorpus(readFileSync(path));
}
