/*
 * Post-export verification. Deliberately does not reuse the decoder in
 * format.ts: the walk below is a second, independent implementation of the
 * layout, so a bug shared by writer and reader still gets caught here.
 */

import { readFileSync } from "node:fs";

export interface Check {
  name: string;
  ok: boolean;
  detail: string;
}

export interface VerifyReport {
  ok: boolean;
  checks: Check[];
  records: number;
  tokens: number;
  dim: number;
}

export function verifyExport(path: string, expectedRecords?: number): VerifyReport {
  const data = readFileSync(path);
  const checks: Check[] = [];
  let pos = 0;
  let records = 0;
  let tokens = 0;
  let dim = 0;

  const done = (): VerifyReport => ({
    ok: checks.every((c) => c.ok),
    checks,
    records,
    tokens,
    dim,
  });

  // header fields, one by one
  if (data.length < 4 || data.toString("ascii", 0, 4) !== "EMBT") {
    checks.push({ name: "magic", ok: false, detail: "first four bytes are not EMBT" });
    return done();
  }
  checks.push({ name: "magic", ok: true, detail: "EMBT" });

  if (data.length < 8) {
    checks.push({ name: "version", ok: false, detail: "file ends inside the version field" });
    return done();
  }
  const version = data.readUInt32LE(4);
  if (version !== 1) {
    checks.push({ name: "version", ok: false, detail: `version ${version}, expected 1` });
    return done();
  }
  checks.push({ name: "version", ok: true, detail: "1" });

  if (data.length < 28) {
    checks.push({ name: "header", ok: false, detail: `only ${data.length} bytes, header needs 28` });
    return done();
  }
  dim = data.readUInt32LE(8);
  const declared = data.readBigUInt64LE(12);
  const maxTokens = data.readUInt32LE(20);
  const provLen = data.readUInt32LE(24);
  pos = 28 + provLen;
  if (dim < 1 || maxTokens < 1 || declared > BigInt(Number.MAX_SAFE_INTEGER) || pos > data.length) {
    checks.push({
      name: "header",
      ok: false,
      detail: `dim=${dim} max_tokens=${maxTokens} N=${declared} provenance_bytes=${provLen}`,
    });
    return done();
  }
  const n = Number(declared);
  checks.push({ name: "header", ok: true, detail: `dim=${dim} max_tokens=${maxTokens} N=${n}` });

  // record walk; every structural complaint lands in one named check
  let badOutcome: string | null = null;
  let nonFinite: string | null = null;
  for (let i = 0; i < n; i++) {
    if (pos + 13 > data.length) {
      checks.push({
        name: "token-row-agreement",
        ok: false,
        detail: `record ${i}: file ends inside the record prologue`,
      });
      return done();
    }
    const outcome = data.readUInt8(pos + 8);
    const u = data.readUInt32LE(pos + 9);
    pos += 13;
    if (outcome !== 0 && outcome !== 1 && badOutcome === null) {
      badOutcome = `record ${i}: outcome byte ${outcome}`;
    }
    if (u < 1 || u > maxTokens) {
      checks.push({
        name: "token-row-agreement",
        ok: false,
        detail: `record ${i}: token count ${u} outside [1, max_tokens=${maxTokens}]`,
      });
      return done();
    }
    for (let t = 0; t < u; t++) {
      if (pos + 4 > data.length) {
        checks.push({
          name: "token-row-agreement",
          ok: false,
          detail: `record ${i}: file ends inside token ${t} of ${u}`,
        });
        return done();
      }
      const len = data.readUInt32LE(pos);
      pos += 4 + len;
      if (pos > data.length) {
        checks.push({
          name: "token-row-agreement",
          ok: false,
          detail: `record ${i}: token ${t} claims ${len} bytes past the end of the file`,
        });
        return done();
      }
    }
    const blockBytes = u * dim * 4;
    if (pos + blockBytes > data.length) {
      const wholeRows = Math.floor((data.length - pos) / (dim * 4));
      checks.push({
        name: "token-row-agreement",
        ok: false,
        detail: `record ${i}: ${u} tokens declared but the embedding block ends after ${wholeRows} rows`,
      });
      return done();
    }
    if (nonFinite === null) {
      for (let k = 0; k < u * dim; k++) {
        const v = data.readFloatLE(pos + k * 4);
        if (!Number.isFinite(v)) {
          nonFinite = `record ${i}: entry ${k} is ${v}`;
          break;
        }
      }
    }
    pos += blockBytes;
    if (pos + 4 > data.length) {
      checks.push({
        name: "token-row-agreement",
        ok: false,
        detail: `record ${i}: file ends before the raw-text field`,
      });
      return done();
    }
    const rawLen = data.readUInt32LE(pos);
    pos += 4 + rawLen;
    if (pos > data.length) {
      checks.push({
        name: "token-row-agreement",
        ok: false,
        detail: `record ${i}: raw text claims ${rawLen} bytes past the end of the file`,
      });
      return done();
    }
    records += 1;
    tokens += u;
  }
  checks.push({
    name: "token-row-agreement",
    ok: true,
    detail: `${records} records, ${tokens} token rows`,
  });
  checks.push({
    name: "outcome-domain",
    ok: badOutcome === null,
    detail: badOutcome ?? "all outcomes in {0, 1}",
  });
  checks.push({
    name: "finite-embeddings",
    ok: nonFinite === null,
    detail: nonFinite ?? "no NaN or infinity",
  });
  checks.push({
    name: "trailing-bytes",
    ok: pos === data.length,
    detail: pos === data.length ? "none" : `${data.length - pos} bytes after the last record`,
  });
  if (expectedRecords !== undefined) {
    checks.push({
      name: "record-count",
      ok: records === expectedRecords,
      detail: `${records} records, expected ${expectedRecords}`,
    });
  }
  return done();
}
