import { SchemaError } from "../errors.js";
import { renderChart, Series } from "../chart.js";
import { numeric, Row } from "../table.js";

export const REQUIRED = ["solver", "rtol", "rmse_final", "wall_seconds", "status"];

/**
 * Work-precision: run time against endpoint RMSE, one curve per solver
 * with one point per tolerance. Reference and failed rows are skipped;
 * points keep the file's tolerance order (tightening along the curve).
 */
export function workPrecisionFigure(rows: Row[], label: string): string {
  const groups = new Map<string, { x: number; y: number }[]>();
  for (const row of rows) {
    if (row["status"] !== "ok") {
      continue;
    }
    const point = {
      x: numeric(row, "rmse_final", label),
      y: numeric(row, "wall_seconds", label),
    };
    const points = groups.get(row["solver"]);
    if (points === undefined) {
      groups.set(row["solver"], [point]);
    } else {
      points.push(point);
    }
  }
  if (groups.size === 0) {
    throw new SchemaError(`${label}: no rows with status "ok"`);
  }
  const series: Series[] = [...groups.entries()].map(([solver, points]) => ({
    label: solver,
    points,
  }));
  return renderChart({
    title: "Work-precision",
    xLabel: "endpoint RMSE",
    yLabel: "run time (s)",
    xLog: true,
    yLog: true,
    series,
  });
}
