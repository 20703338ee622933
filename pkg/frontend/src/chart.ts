import { scaleLinear, scaleLog } from "d3";
import { Attrs, el, fmt, svgDocument, text } from "./svg.js";

export interface Series {
  label: string;
  points: { x: number; y: number }[];
}

export interface ChartSpec {
  title: string;
  xLabel: string;
  yLabel: string;
  xLog: boolean;
  yLog: boolean;
  series: Series[];
}

const WIDTH = 640;
const HEIGHT = 420;
const MARGIN = { top: 40, right: 180, bottom: 52, left: 72 };

// color-blind-safe cycle (Okabe-Ito), reused in series order
const PALETTE = [
  "#0072b2",
  "#d55e00",
  "#009e73",
  "#cc79a7",
  "#e69f00",
  "#56b4e9",
  "#f0e442",
  "#000000",
];

function extent(values: number[]): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    lo = Math.min(lo, v);
    hi = Math.max(hi, v);
  }
  if (lo === hi) {
    // degenerate span: pad so the scale stays invertible
    return lo === 0 ? [-1, 1] : [lo * 0.5, hi * 2];
  }
  return [lo, hi];
}

function makeScale(log: boolean, domain: [number, number], range: [number, number]) {
  return log
    ? scaleLog().domain(domain).range(range).nice()
    : scaleLinear().domain(domain).range(range).nice();
}

function tickLabel(value: number, log: boolean): string {
  if (!log) {
    return fmt(value);
  }
  const exp = Math.log10(value);
  if (Number.isInteger(exp)) {
    return exp >= -3 && exp <= 3 ? fmt(value) : `1e${exp}`;
  }
  return "";
}

/**
 * Assemble an x-y chart with per-series polylines and markers.
 *
 * Shared by the three table figures; axis transforms (log or linear)
 * are the only manipulation applied to the plotted values.
 */
export function renderChart(spec: ChartSpec): string {
  const xs = spec.series.flatMap((s) => s.points.map((p) => p.x));
  const ys = spec.series.flatMap((s) => s.points.map((p) => p.y));
  const x = makeScale(spec.xLog, extent(xs), [MARGIN.left, WIDTH - MARGIN.right]);
  const y = makeScale(spec.yLog, extent(ys), [HEIGHT - MARGIN.bottom, MARGIN.top]);

  const parts: string[] = [];
  parts.push(el("rect", { x: 0, y: 0, width: WIDTH, height: HEIGHT, fill: "white" }));
  parts.push(
    text(spec.title, {
      x: MARGIN.left,
      y: 24,
      "font-size": 15,
      "font-weight": "bold",
    }),
  );

  const xTicks = spec.xLog ? x.ticks() : x.ticks(6);
  for (const tick of xTicks) {
    const label = tickLabel(tick, spec.xLog);
    const px = x(tick);
    parts.push(
      el("line", {
        x1: px,
        y1: MARGIN.top,
        x2: px,
        y2: HEIGHT - MARGIN.bottom,
        stroke: "#dddddd",
        "stroke-width": label === "" ? 0.5 : 1,
      }),
    );
    if (label !== "") {
      parts.push(
        text(label, {
          x: px,
          y: HEIGHT - MARGIN.bottom + 18,
          "font-size": 11,
          "text-anchor": "middle",
        }),
      );
    }
  }
  const yTicks = spec.yLog ? y.ticks() : y.ticks(6);
  for (const tick of yTicks) {
    const label = tickLabel(tick, spec.yLog);
    const py = y(tick);
    parts.push(
      el("line", {
        x1: MARGIN.left,
        y1: py,
        x2: WIDTH - MARGIN.right,
        y2: py,
        stroke: "#dddddd",
        "stroke-width": label === "" ? 0.5 : 1,
      }),
    );
    if (label !== "") {
      parts.push(
        text(label, {
          x: MARGIN.left - 8,
          y: py + 4,
          "font-size": 11,
          "text-anchor": "end",
        }),
      );
    }
  }

  const axisAttrs: Attrs = { stroke: "black", "stroke-width": 1 };
  parts.push(
    el("line", {
      x1: MARGIN.left,
      y1: HEIGHT - MARGIN.bottom,
      x2: WIDTH - MARGIN.right,
      y2: HEIGHT - MARGIN.bottom,
      ...axisAttrs,
    }),
  );
  parts.push(
    el("line", {
      x1: MARGIN.left,
      y1: MARGIN.top,
      x2: MARGIN.left,
      y2: HEIGHT - MARGIN.bottom,
      ...axisAttrs,
    }),
  );
  parts.push(
    text(spec.xLabel, {
      x: (MARGIN.left + WIDTH - MARGIN.right) / 2,
      y: HEIGHT - 14,
      "font-size": 13,
      "text-anchor": "middle",
    }),
  );
  parts.push(
    text(spec.yLabel, {
      x: 18,
      y: (MARGIN.top + HEIGHT - MARGIN.bottom) / 2,
      "font-size": 13,
      "text-anchor": "middle",
      transform: `rotate(-90 18 ${fmt((MARGIN.top + HEIGHT - MARGIN.bottom) / 2)})`,
    }),
  );

  spec.series.forEach((series, index) => {
    const color = PALETTE[index % PALETTE.length];
    const coords = series.points.map((p) => `${fmt(x(p.x))},${fmt(y(p.y))}`);
    if (coords.length > 1) {
      parts.push(
        el("polyline", {
          points: coords.join(" "),
          fill: "none",
          stroke: color,
          "stroke-width": 1.8,
        }),
      );
    }
    for (const p of series.points) {
      parts.push(el("circle", { cx: x(p.x), cy: y(p.y), r: 3, fill: color }));
    }
  });

  const legend: string[] = [];
  spec.series.forEach((series, index) => {
    const color = PALETTE[index % PALETTE.length];
    const ly = MARGIN.top + 8 + index * 18;
    legend.push(
      el("line", {
        x1: WIDTH - MARGIN.right + 12,
        y1: ly,
        x2: WIDTH - MARGIN.right + 34,
        y2: ly,
        stroke: color,
        "stroke-width": 2,
      }),
    );
    legend.push(
      text(series.label, {
        x: WIDTH - MARGIN.right + 40,
        y: ly + 4,
        "font-size": 11,
      }),
    );
  });
  parts.push(el("g", { class: "legend" }, legend));

  return svgDocument(WIDTH, HEIGHT, parts);
}
