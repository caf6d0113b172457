import { DeterministicEncoder, resolveEncoder } from "./encoder.js";
import { CorpusFile, SampleRecord, writeCorpusFile } from "./format.js";
import { loadRecords, TextRecord } from "./records.js";
import { tokenizeForExport } from "./tokenizer.js";

export interface EmbedJob {
  input: string;
  textCol: string;
  outcomeCol: string;
  encoder: string;
  maxTokens: number;
  out: string;
  /** Hint only; this implementation embeds records one at a time. */
  batchSize?: number;
  /** Hint only; this implementation is CPU-bound JS. */
  device?: string;
}

export interface EmbedResult {
  written: number;
  skippedEmpty: number;
  bytes: number;
  dim: number;
  provenance: string;
}

export const EXPORTER_VERSION = "0.1.0";

/**
 * Embed already-loaded records into an in-memory corpus. Records whose text
 * is empty after trimming are skipped; the caller learns how many.
 */
export function embedRecords(
  records: TextRecord[],
  encoderId: string,
  maxTokens: number,
): { corpus: CorpusFile; skippedEmpty: number } {
  const spec = resolveEncoder(encoderId);
  const enc = new DeterministicEncoder(spec);
  const samples: SampleRecord[] = [];
  let skippedEmpty = 0;
  for (const record of records) {
    const text = record.text.trim();
    if (text === "") {
      skippedEmpty += 1;
      continue;
    }
    const tokens = tokenizeForExport(text, maxTokens, spec.lowercase);
    const embeddings = enc.embed(tokens);
    if (embeddings.length !== tokens.length * spec.dim) {
      // the contract between encoder and container; a mismatch is fatal
      throw new Error(
        `encoder ${spec.id}: ${embeddings.length} values for ${tokens.length} ` +
          `tokens at dim ${spec.dim}`,
      );
    }
    samples.push({
      id: samples.length,
      tokens,
      embeddings,
      outcome: record.outcome,
      rawText: text,
    });
  }
  const corpus: CorpusFile = {
    dim: spec.dim,
    maxTokens,
    provenance: `encoder=${spec.id} dim=${spec.dim} exporter=embt-export/${EXPORTER_VERSION}`,
    samples,
  };
  return { corpus, skippedEmpty };
}

/** Load, embed, and write one job end to end. */
export function embedCorpus(job: EmbedJob): EmbedResult {
  const records = loadRecords(job.input, job.textCol, job.outcomeCol);
  const { corpus, skippedEmpty } = embedRecords(records, job.encoder, job.maxTokens);
  if (corpus.samples.length === 0) {
    throw new Error("no records left to embed (every text was empty)");
  }
  const bytes = writeCorpusFile(corpus, job.out);
  return {
    written: corpus.samples.length,
    skippedEmpty,
    bytes,
    dim: corpus.dim,
    provenance: corpus.provenance,
  };
}
