import { SchemaError } from "../errors.js";
import { StateRecord } from "../stream.js";
import { el, fmt, svgDocument, text } from "../svg.js";

const PANEL = 120;
const GAP = 14;
const LEFT = 56;
const TOP = 44;
const N_TIMES = 5;

// blue-white-red for means, white-to-purple for standard deviations
const MEAN_STOPS: [number, number, number][] = [
  [33, 102, 172],
  [247, 247, 247],
  [178, 24, 43],
];
const STD_STOPS: [number, number, number][] = [
  [252, 251, 253],
  [106, 81, 163],
];

function ramp(stops: [number, number, number][], u: number): string {
  const clamped = Math.min(1, Math.max(0, u));
  const pos = clamped * (stops.length - 1);
  const k = Math.min(stops.length - 2, Math.floor(pos));
  const frac = pos - k;
  const channel = (c: number) =>
    Math.round(stops[k][c] + frac * (stops[k + 1][c] - stops[k][c]));
  return `rgb(${channel(0)},${channel(1)},${channel(2)})`;
}

/** Evenly spaced indices over the trajectory, endpoints included. */
export function sampleIndices(length: number, count: number): number[] {
  if (length <= count) {
    return [...Array(length).keys()];
  }
  return [...Array(count).keys()].map((k) =>
    Math.round((k * (length - 1)) / (count - 1)),
  );
}

function gridSide(dim: number, label: string): number {
  // the reaction-diffusion state stacks two fields on a square grid
  const side = Math.round(Math.sqrt(dim / 2));
  if (2 * side * side !== dim) {
    throw new SchemaError(
      `${label}: state dimension ${dim} is not 2*G*G for any integer grid side G`,
    );
  }
  return side;
}

function heatmap(
  values: number[],
  side: number,
  lo: number,
  hi: number,
  stops: [number, number, number][],
  x0: number,
  y0: number,
): string {
  const cell = PANEL / side;
  const span = hi > lo ? hi - lo : 1;
  const rects: string[] = [];
  for (let i = 0; i < side; i++) {
    for (let j = 0; j < side; j++) {
      const u = (values[i * side + j] - lo) / span;
      rects.push(
        el("rect", {
          x: x0 + j * cell,
          y: y0 + i * cell,
          width: cell + 0.1,
          height: cell + 0.1,
          fill: ramp(stops, u),
        }),
      );
    }
  }
  return el("g", { class: "panel" }, rects);
}

/**
 * Mean and standard-deviation heat maps of the activator field at five
 * evenly spaced times: one row of means over one row of stds, shared
 * color range per row.
 */
export function fieldMontageFigure(states: StateRecord[], label: string): string {
  const side = gridSide(states[0].y_mean.length, label);
  for (const state of states) {
    if (state.y_mean.length !== states[0].y_mean.length) {
      throw new SchemaError(`${label}: state dimension changes along the stream`);
    }
  }
  const picks = sampleIndices(states.length, N_TIMES);
  const panels = picks.map((index) => {
    const state = states[index];
    return {
      t: state.t,
      mean: state.y_mean.slice(0, side * side),
      std: state.y_std.slice(0, side * side),
    };
  });

  const meanValues = panels.flatMap((p) => p.mean);
  const stdValues = panels.flatMap((p) => p.std);
  const meanLo = Math.min(...meanValues);
  const meanHi = Math.max(...meanValues);
  const stdHi = Math.max(...stdValues);

  const width = LEFT + panels.length * (PANEL + GAP);
  const height = TOP + 2 * PANEL + GAP + 24;
  const parts: string[] = [];
  parts.push(el("rect", { x: 0, y: 0, width, height, fill: "white" }));
  parts.push(
    text("Activator field: means (top) and standard deviations (bottom)", {
      x: LEFT,
      y: 22,
      "font-size": 14,
      "font-weight": "bold",
    }),
  );
  const rowCenter = (row: number) => TOP + row * (PANEL + GAP) + PANEL / 2;
  for (const [row, name] of [
    [0, "mean"],
    [1, "std"],
  ] as [number, string][]) {
    parts.push(
      text(name, {
        x: 16,
        y: rowCenter(row) + 4,
        "font-size": 12,
        "text-anchor": "middle",
        transform: `rotate(-90 16 ${fmt(rowCenter(row))})`,
      }),
    );
  }
  panels.forEach((panel, column) => {
    const x0 = LEFT + column * (PANEL + GAP);
    parts.push(
      text(`t=${fmt(panel.t)}`, {
        x: x0 + PANEL / 2,
        y: TOP - 8,
        "font-size": 11,
        "text-anchor": "middle",
      }),
    );
    parts.push(heatmap(panel.mean, side, meanLo, meanHi, MEAN_STOPS, x0, TOP));
    parts.push(heatmap(panel.std, side, 0, stdHi, STD_STOPS, x0, TOP + PANEL + GAP));
  });
  return svgDocument(width, height, parts);
}
