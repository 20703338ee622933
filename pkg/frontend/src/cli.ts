import { readFile, writeFile } from "node:fs/promises";
import yargs from "yargs";
import { SchemaError } from "./errors.js";
import { parseTable, Row } from "./table.js";

export interface CliArgs {
  inputs: string[];
  output: string;
}

export async function parseArgs(argv: string[], description: string): Promise<CliArgs> {
  const args = await yargs(argv)
    .usage(description)
    .option("input", {
      type: "string",
      demandOption: true,
      array: true,
      describe: "input file written by the solver harness (repeatable)",
    })
    .option("output", {
      type: "string",
      demandOption: true,
      describe: "output SVG path",
    })
    .strict()
    .exitProcess(false)
    .parse();
  return { inputs: args.input, output: args.output };
}

type TableBuilder = (rows: Row[], label: string) => string;

/**
 * Shared driver for the table-backed figures: read every input, check
 * the schema, build one SVG, write it. Returns a process exit code;
 * schema problems go to stderr with the offending column named.
 */
export async function runTableFigure(
  argv: string[],
  description: string,
  required: string[],
  build: TableBuilder,
): Promise<number> {
  try {
    const cli = await parseArgs(argv, description);
    const rows: Row[] = [];
    for (const path of cli.inputs) {
      const text = await readFile(path, "utf8");
      rows.push(...parseTable(text, required, path));
    }
    await writeFile(cli.output, buildChecked(build, rows, cli.inputs.join("+")));
    return 0;
  } catch (err) {
    return reportError(err);
  }
}

function buildChecked(build: TableBuilder, rows: Row[], label: string): string {
  return build(rows, label);
}

export function reportError(err: unknown): number {
  if (err instanceof SchemaError) {
    console.error(err.message);
    return 1;
  }
  if (err instanceof Error && "code" in err && (err as NodeJS.ErrnoException).code === "ENOENT") {
    console.error(err.message);
    return 1;
  }
  if (err instanceof Error && err.name === "YError") {
    console.error(err.message);
    return 2;
  }
  throw err;
}
