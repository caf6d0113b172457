import { readFileSync } from "node:fs";
import { extname } from "node:path";
import Papa from "papaparse";

export interface TextRecord {
  text: string;
  outcome: 0 | 1;
  /** 1-based position in the input, for error messages. */
  line: number;
}

function parseOutcome(value: unknown, line: number): 0 | 1 {
  const s = typeof value === "string" ? value.trim() : String(value);
  if (s === "0" || s === "false") return 0;
  if (s === "1" || s === "true") return 1;
  throw new Error(`record ${line}: outcome must be binary, got ${JSON.stringify(value)}`);
}

function fromRows(
  rows: Record<string, unknown>[],
  textCol: string,
  outcomeCol: string,
): TextRecord[] {
  return rows.map((row, i) => {
    const line = i + 1;
    if (!(textCol in row)) {
      const cols = Object.keys(row).join(", ");
      throw new Error(`record ${line}: no column "${textCol}" (columns: ${cols})`);
    }
    if (!(outcomeCol in row)) {
      const cols = Object.keys(row).join(", ");
      throw new Error(`record ${line}: no column "${outcomeCol}" (columns: ${cols})`);
    }
    const raw = row[textCol];
    return {
      text: raw === null || raw === undefined ? "" : String(raw),
      outcome: parseOutcome(row[outcomeCol], line),
      line,
    };
  });
}

function loadDelimited(content: string, delimiter: string, textCol: string, outcomeCol: string): TextRecord[] {
  const parsed = Papa.parse<Record<string, string>>(content, {
    header: true,
    delimiter,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`parse failure at row ${e.row ?? "?"}: ${e.message}`);
  }
  return fromRows(parsed.data, textCol, outcomeCol);
}

function loadJsonLines(content: string, textCol: string, outcomeCol: string): TextRecord[] {
  const rows: Record<string, unknown>[] = [];
  const lines = content.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "") continue;
    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch (e) {
      throw new Error(`line ${i + 1}: not valid JSON (${(e as Error).message})`);
    }
    if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
      throw new Error(`line ${i + 1}: expected a JSON object`);
    }
    rows.push(obj as Record<string, unknown>);
  }
  return fromRows(rows, textCol, outcomeCol);
}

/**
 * Load text records from a .csv, .tsv, or .jsonl/.ndjson file. Column names
 * are configurable; the outcome column must hold strictly binary values.
 */
export function loadRecords(path: string, textCol: string, outcomeCol: string): TextRecord[] {
  const ext = extname(path).toLowerCase();
  if (![".csv", ".tsv", ".jsonl", ".ndjson"].includes(ext)) {
    throw new Error(`unsupported input extension "${ext}" (use .csv, .tsv, .jsonl, or .ndjson)`);
  }
  const content = readFileSync(path, "utf-8");
  switch (ext) {
    case ".csv":
      return loadDelimited(content, ",", textCol, outcomeCol);
    case ".tsv":
      return loadDelimited(content, "\t", textCol, outcomeCol);
    default:
      return loadJsonLines(content, textCol, outcomeCol);
  }
}
