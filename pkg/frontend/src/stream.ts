import { SchemaError } from "./errors.js";

/** One accepted solver step from a trajectory stream. */
export interface StateRecord {
  t: number;
  y_mean: number[];
  y_std: number[];
}

export interface TrajectoryStream {
  states: StateRecord[];
  metadata: Record<string, unknown> | null;
}

/**
 * Parse a newline-delimited trajectory stream.
 *
 * Each line is one JSON record; records with kind "state" carry the
 * marginal means and standard deviations at one time, and a trailing
 * kind "metadata" record describes the solve. Missing fields are
 * SchemaErrors naming the field; a stream without state records is the
 * "no rows" case.
 */
export function parseStream(text: string, label: string): TrajectoryStream {
  const states: StateRecord[] = [];
  let metadata: Record<string, unknown> | null = null;
  const lines = text.split("\n").filter((line) => line.trim() !== "");
  lines.forEach((line, index) => {
    let record: Record<string, unknown>;
    try {
      record = JSON.parse(line);
    } catch {
      throw new SchemaError(`${label}: line ${index + 1} is not valid JSON`);
    }
    if (record["kind"] === "metadata") {
      metadata = record;
      return;
    }
    if (record["kind"] !== "state") {
      return;
    }
    for (const field of ["t", "y_mean", "y_std"]) {
      if (!(field in record)) {
        throw new SchemaError(
          `${label}: state record on line ${index + 1} is missing field "${field}"`,
        );
      }
    }
    const t = record["t"];
    const yMean = record["y_mean"];
    const yStd = record["y_std"];
    if (typeof t !== "number" || !Array.isArray(yMean) || !Array.isArray(yStd)) {
      throw new SchemaError(`${label}: malformed state record on line ${index + 1}`);
    }
    if (yMean.length !== yStd.length) {
      throw new SchemaError(
        `${label}: line ${index + 1} has ${yMean.length} means but ${yStd.length} standard deviations`,
      );
    }
    // diverged solves serialize non-finite values as null; a montage of
    // garbage is worse than a refusal
    for (const [field, values] of [["y_mean", yMean], ["y_std", yStd]] as const) {
      for (const value of values) {
        if (typeof value !== "number" || !Number.isFinite(value)) {
          throw new SchemaError(
            `${label}: line ${index + 1} field "${field}" contains a non-finite value`,
          );
        }
      }
    }
    states.push({ t, y_mean: yMean as number[], y_std: yStd as number[] });
  });
  if (states.length === 0) {
    throw new SchemaError(`${label}: no rows`);
  }
  return { states, metadata };
}
