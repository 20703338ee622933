#!/usr/bin/env node
import { pathToFileURL } from "node:url";
import { runTableFigure } from "../cli.js";
import { REQUIRED, stepScalingFigure } from "../figures/stepScaling.js";

export function run(argv: string[]): Promise<number> {
  return runTableFigure(
    argv,
    "Render single-step runtime scaling from bench-step tables.",
    REQUIRED,
    stepScalingFigure,
  );
}

if (process.argv[1] !== undefined && import.meta.url === pathToFileURL(process.argv[1]).href) {
  run(process.argv.slice(2)).then((code) => process.exit(code));
}
