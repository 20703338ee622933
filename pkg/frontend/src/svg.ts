/**
 * Minimal deterministic SVG assembly: plain string building with fixed
 * number formatting, so identical inputs produce byte-identical files.
 */

export interface Attrs {
  [name: string]: string | number;
}

/** Fixed-precision coordinate formatting; trims trailing zeros. */
export function fmt(value: number): string {
  if (Number.isInteger(value)) {
    return String(value);
  }
  return String(Number(value.toFixed(3)));
}

function renderAttrs(attrs: Attrs): string {
  return Object.entries(attrs)
    .map(([name, value]) => ` ${name}="${typeof value === "number" ? fmt(value) : value}"`)
    .join("");
}

export function el(tag: string, attrs: Attrs, children?: string[] | string): string {
  const body = children === undefined ? "" : Array.isArray(children) ? children.join("") : children;
  if (body === "") {
    return `<${tag}${renderAttrs(attrs)}/>`;
  }
  return `<${tag}${renderAttrs(attrs)}>${body}</${tag}>`;
}

export function text(content: string, attrs: Attrs): string {
  return el("text", { "font-family": "sans-serif", ...attrs }, escapeText(content));
}

export function escapeText(value: string): string {
  return value.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function svgDocument(width: number, height: number, children: string[]): string {
  const open =
    `<svg xmlns="http://www.w3.org/2000/svg" width="${fmt(width)}" height="${fmt(height)}" ` +
    `viewBox="0 0 ${fmt(width)} ${fmt(height)}">`;
  return `${open}\n${children.join("\n")}\n</svg>\n`;
}
