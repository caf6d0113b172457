#!/usr/bin/env node
import { parseArgs } from "node:util";
import { pathToFileURL } from "node:url";
import { embedCorpus } from "./embed.js";
import { verifyExport } from "./verify.js";

const USAGE = `usage: embt-export --input FILE --encoder ID --out FILE.embt
                   [--text-col NAME] [--outcome-col NAME] [--max-tokens N]

Tokenize each input record, run the named encoder, and write per-token
embeddings with the binary outcome into an EMBT container. The fresh file
is verified before the command reports success.

  --input        .csv, .tsv, .jsonl, or .ndjson file of records
  --text-col     column holding the text (default: text)
  --outcome-col  column holding the 0/1 outcome (default: outcome)
  --encoder      encoder id, e.g. minirbt-h288 (dim 288) or bert-tiny (dim 128)
  --max-tokens   truncation budget including [CLS]/[SEP] (default: 150)
  --out          destination .embt path
`;

export function main(argv: string[]): number {
  let values: Record<string, string | boolean | undefined>;
  try {
    values = parseArgs({
      args: argv,
      options: {
        input: { type: "string" },
        "text-col": { type: "string", default: "text" },
        "outcome-col": { type: "string", default: "outcome" },
        encoder: { type: "string" },
        "max-tokens": { type: "string", default: "150" },
        out: { type: "string" },
        help: { type: "boolean", short: "h", default: false },
      },
      allowPositionals: false,
    }).values;
  } catch (e) {
    process.stderr.write(`error: ${(e as Error).message}\n`);
    return 1;
  }

  if (values.help) {
    process.stdout.write(USAGE);
    return 0;
  }
  for (const required of ["input", "encoder", "out"] as const) {
    if (!values[required]) {
      process.stderr.write(`error: --${required} is required\n${USAGE}`);
      return 1;
    }
  }
  const maxTokens = Number(values["max-tokens"]);
  if (!Number.isInteger(maxTokens) || maxTokens < 2) {
    process.stderr.write(`error: --max-tokens must be an integer >= 2, got ${values["max-tokens"]}\n`);
    return 1;
  }

  try {
    const result = embedCorpus({
      input: values.input as string,
      textCol: values["text-col"] as string,
      outcomeCol: values["outcome-col"] as string,
      encoder: values.encoder as string,
      maxTokens,
      out: values.out as string,
    });
    const skipped = result.skippedEmpty > 0 ? `, ${result.skippedEmpty} empty records skipped` : "";
    process.stdout.write(
      `wrote ${result.written} samples to ${values.out} ` +
        `(dim ${result.dim}, ${result.bytes} bytes${skipped})\n`,
    );

    const report = verifyExport(values.out as string, result.written);
    for (const check of report.checks) {
      if (!check.ok) process.stderr.write(`verify failed: ${check.name}: ${check.detail}\n`);
    }
    if (!report.ok) return 1;
    process.stdout.write(`verify: ${report.checks.length} checks passed\n`);
    return 0;
  } catch (e) {
    process.stderr.write(`error: ${(e as Error).message}\n`);
    return 1;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exit(main(process.argv.slice(2)));
}
