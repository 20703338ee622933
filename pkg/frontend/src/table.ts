import Papa from "papaparse";
import { SchemaError } from "./errors.js";

export type Row = Record<string, string>;

/**
 * Parse one comma-separated table and check it against a figure's
 * required columns.
 *
 * The harness emits a fixed header plus one record per line; columns
 * beyond the required ones are kept but ignored by the figures. A
 * missing required column or a completely empty table is a SchemaError
 * naming the problem.
 */
export function parseTable(text: string, required: string[], label: string): Row[] {
  const parsed = Papa.parse<Row>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  const fatal = parsed.errors.find((e) => e.type !== "FieldMismatch");
  if (fatal) {
    throw new SchemaError(`${label}: unparseable table (${fatal.message})`);
  }
  const columns = parsed.meta.fields ?? [];
  for (const column of required) {
    if (!columns.includes(column)) {
      throw new SchemaError(`${label}: missing required column "${column}"`);
    }
  }
  if (parsed.data.length === 0) {
    throw new SchemaError(`${label}: no rows`);
  }
  return parsed.data;
}

/** Numeric cell access; names the column when the value does not parse. */
export function numeric(row: Row, column: string, label: string): number {
  const value = Number(row[column]);
  if (!Number.isFinite(value)) {
    throw new SchemaError(
      `${label}: column "${column}" has non-numeric value "${row[column]}"`,
    );
  }
  return value;
}
