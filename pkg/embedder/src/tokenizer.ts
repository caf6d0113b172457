/*
 * Basic tokenization in the style of BERT's pre-wordpiece pass: whitespace
 * splits, every punctuation character becomes its own token, and every CJK
 * character becomes its own token. Without the checkpoint's subword vocab
 * this is the faithful approximation for both the Chinese and the English
 * encoders, which share the scheme.
 */

export const CLS = "[CLS]";
export const SEP = "[SEP]";

/** CJK ranges mirrored from BERT's tokenizer: ideographs get split per character. */
function isCjk(cp: number): boolean {
  return (
    (cp >= 0x4e00 && cp <= 0x9fff) ||
    (cp >= 0x3400 && cp <= 0x4dbf) ||
    (cp >= 0x20000 && cp <= 0x2a6df) ||
    (cp >= 0x2a700 && cp <= 0x2b73f) ||
    (cp >= 0x2b740 && cp <= 0x2b81f) ||
    (cp >= 0x2b820 && cp <= 0x2ceaf) ||
    (cp >= 0xf900 && cp <= 0xfaff) ||
    (cp >= 0x2f800 && cp <= 0x2fa1f)
  );
}

const WORD_CHAR = /[\p{L}\p{N}]/u;
const SPACE = /\s/u;

export function basicTokens(text: string, lowercase: boolean): string[] {
  const source = lowercase ? text.normalize("NFC").toLowerCase() : text.normalize("NFC");
  const tokens: string[] = [];
  let run = "";
  const flush = () => {
    if (run.length > 0) {
      tokens.push(run);
      run = "";
    }
  };
  for (const ch of source) {
    const cp = ch.codePointAt(0)!;
    if (SPACE.test(ch)) {
      flush();
    } else if (isCjk(cp)) {
      flush();
      tokens.push(ch);
    } else if (WORD_CHAR.test(ch)) {
      run += ch;
    } else {
      // punctuation and symbols stand alone
      flush();
      tokens.push(ch);
    }
  }
  flush();
  return tokens;
}

/**
 * Tokenize one record for export: [CLS] + content + [SEP], truncated so the
 * boundary tokens always survive. maxTokens must leave room for them.
 */
export function tokenizeForExport(text: string, maxTokens: number, lowercase: boolean): string[] {
  if (maxTokens < 2) {
    throw new Error(`max tokens must be >= 2 to fit the boundary tokens, got ${maxTokens}`);
  }
  const inner = basicTokens(text, lowercase).slice(0, maxTokens - 2);
  return [CLS, ...inner, SEP];
}
