import { SchemaError } from "../errors.js";
import { renderChart, Series } from "../chart.js";
import { numeric, Row } from "../table.js";

export const REQUIRED = ["solver", "nu", "d", "median_seconds", "status"];

/**
 * Log-log single-step runtime versus state dimension, one curve per
 * solver and prior order. Rows whose status is not "ok" (skipped or
 * failed configurations) are left out.
 */
export function stepScalingFigure(rows: Row[], label: string): string {
  const groups = new Map<string, { x: number; y: number }[]>();
  for (const row of rows) {
    if (row["status"] !== "ok") {
      continue;
    }
    const key = `${row["solver"]} nu=${row["nu"]}`;
    const point = {
      x: numeric(row, "d", label),
      y: numeric(row, "median_seconds", label),
    };
    const points = groups.get(key);
    if (points === undefined) {
      groups.set(key, [point]);
    } else {
      points.push(point);
    }
  }
  if (groups.size === 0) {
    throw new SchemaError(`${label}: no rows with status "ok"`);
  }
  const series: Series[] = [...groups.entries()].map(([key, points]) => ({
    label: key,
    points: points.slice().sort((a, b) => a.x - b.x),
  }));
  return renderChart({
    title: "Single-step runtime vs dimension",
    xLabel: "dimension d",
    yLabel: "median step time (s)",
    xLog: true,
    yLog: true,
    series,
  });
}
