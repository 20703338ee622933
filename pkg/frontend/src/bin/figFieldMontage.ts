#!/usr/bin/env node
import { readFile, writeFile } from "node:fs/promises";
import { pathToFileURL } from "node:url";
import { parseArgs, reportError } from "../cli.js";
import { SchemaError } from "../errors.js";
import { fieldMontageFigure } from "../figures/fieldMontage.js";
import { parseStream } from "../stream.js";

export async function run(argv: string[]): Promise<number> {
  try {
    const cli = await parseArgs(
      argv,
      "Render mean and standard-deviation heat maps from one trajectory stream.",
    );
    if (cli.inputs.length !== 1) {
      throw new SchemaError("the field montage expects exactly one --input stream");
    }
    const text = await readFile(cli.inputs[0], "utf8");
    const stream = parseStream(text, cli.inputs[0]);
    await writeFile(cli.output, fieldMontageFigure(stream.states, cli.inputs[0]));
    return 0;
  } catch (err) {
    return reportError(err);
  }
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  run(process.argv.slice(2)).then((code) => process.exit(code));
}
