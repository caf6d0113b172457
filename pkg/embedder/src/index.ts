export {
  EMBT_MAGIC,
  EMBT_VERSION,
  FormatError,
  encodeCorpus,
  decodeCorpus,
  writeCorpusFile,
  readCorpusFile,
} from "./format.js";
export type { CorpusFile, SampleRecord } from "./format.js";
export { CLS, SEP, basicTokens, tokenizeForExport } from "./tokenizer.js";
export { ENCODERS, DeterministicEncoder, resolveEncoder } from "./encoder.js";
export type { EncoderSpec } from "./encoder.js";
export { loadRecords } from "./records.js";
export type { TextRecord } from "./records.js";
export { embedRecords, embedCorpus, EXPORTER_VERSION } from "./embed.js";
export type { EmbedJob, EmbedResult } from "./embed.js";
export { verifyExport } from "./verify.js";
export type { Check, VerifyReport } from "./verify.js";
