/**
 * Minimal deterministic SVG assembly: fixed-precision coordinates, no
 * timestamps and no randomness, so identical inputs give byte-identical
 * documents.
 */

export function fmt(value: number, digits = 2): string {
  if (!Number.isFinite(value)) return "0";
  const text = value.toFixed(digits);
  return text === "-0.00" ? "0.00" : text;
}

export function tag(name: string, attrs: Record<string, string | number>, body = ""): string {
  const parts = Object.entries(attrs)
    .map(([k, v]) => `${k}="${typeof v === "number" ? fmt(v) : v}"`)
    .join(" ");
  return body === "" ? `<${name} ${parts}/>` : `<${name} ${parts}>${body}</${name}>`;
}

export function document(width: number, height: number, body: string[]): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
      `viewBox="0 0 ${width} ${height}">`,
    ...body,
    "</svg>",
    "",
  ].join("\n");
}

/** White-to-deep-blue ramp; t clamped to [0, 1]. */
export function heatColor(t: number): string {
  const s = Math.min(1, Math.max(0, t));
  const from = [247, 251, 255];
  const to = [8, 48, 107];
  const rgb = from.map((f, i) => Math.round(f + (to[i] - f) * s));
  return `rgb(${rgb[0]},${rgb[1]},${rgb[2]})`;
}

export function text(x: number, y: number, label: string, size = 11,
                     anchor: "start" | "middle" | "end" = "middle"): string {
  return tag("text", {
    x, y, "font-size": size, "font-family": "sans-serif", "text-anchor": anchor,
    fill: "#333",
  }, label);
}
