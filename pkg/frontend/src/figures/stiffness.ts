import { SchemaError } from "../errors.js";
import { renderChart, Series } from "../chart.js";
import { numeric, Row } from "../table.js";

export const REQUIRED = ["solver", "mu", "n_accepted", "completed"];

/**
 * Accepted step counts against the stiffness constant, one curve per
 * solver. Runs that did not complete are dropped from their curve; the
 * remaining points still show where each solver survives.
 */
export function stiffnessFigure(rows: Row[], label: string): string {
  const groups = new Map<string, { x: number; y: number }[]>();
  for (const row of rows) {
    if (row["completed"] !== "true") {
      continue;
    }
    const point = {
      x: numeric(row, "mu", label),
      y: numeric(row, "n_accepted", label),
    };
    const points = groups.get(row["solver"]);
    if (points === undefined) {
      groups.set(row["solver"], [point]);
    } else {
      points.push(point);
    }
  }
  if (groups.size === 0) {
    throw new SchemaError(`${label}: no completed rows`);
  }
  const series: Series[] = [...groups.entries()].map(([solver, points]) => ({
    label: solver,
    points: points.slice().sort((a, b) => a.x - b.x),
  }));
  return renderChart({
    title: "Accepted steps vs stiffness",
    xLabel: "stiffness constant mu",
    yLabel: "accepted steps",
    xLog: true,
    yLog: true,
    series,
  });
}
