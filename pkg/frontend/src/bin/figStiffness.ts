#!/usr/bin/env node
import { pathToFileURL } from "node:url";
import { runTableFigure } from "../cli.js";
import { REQUIRED, stiffnessFigure } from "../figures/stiffness.js";

export function run(argv: string[]): Promise<number> {
  return runTableFigure(
    argv,
    "Render accepted step counts per stiffness constant.",
    REQUIRED,
    stiffnessFigure,
  );
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  run(process.argv.slice(2)).then((code) => process.exit(code));
}
