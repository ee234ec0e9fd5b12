/**
 * Isometric 3-D surface panel: the density matrix as a painter-sorted quad
 * mesh, tallest features rendered above their neighbors.
 */

import { DensityGrid } from "./csv.js";
import { fmt, heatColor, tag, text } from "./svg.js";

import { PanelGeometry } from "./contour.js";

const COS = Math.cos(Math.PI / 6);
const SIN = Math.sin(Math.PI / 6);
const HEIGHT_SHARE = 0.45; // fraction of the panel devoted to peak height

export function surfacePanel(grid: DensityGrid, geo: PanelGeometry): string[] {
  const n = grid.centers.length;
  let top = 0;
  for (const row of grid.density) {
    for (const d of row) if (Number.isFinite(d) && d > top) top = d;
  }
  if (top <= 0) top = 1;

  const z = (i: number, j: number) => {
    const d = grid.density[i][j];
    return (Number.isFinite(d) ? d : top) / top;
  };
  // isometric projection of the unit square, z pointing up on screen
  const raw = (u: number, v: number, h: number): [number, number] =>
    [(u - v) * COS, (u + v) * SIN - h * HEIGHT_SHARE];

  const spanX = 2 * COS;
  const spanY = 2 * SIN + HEIGHT_SHARE;
  const scale = geo.size / Math.max(spanX, spanY);
  const cx = geo.x + geo.size / 2;
  const cy = geo.y + geo.size - 0.12 * geo.size;
  const project = (u: number, v: number, h: number): [number, number] => {
    const [px, py] = raw(u, v, h);
    return [cx + px * scale, cy - (2 * SIN - py) * scale];
  };

  const body: string[] = [];
  const step = 1 / (n - 1);
  const quads: Array<{ depth: number; path: string; shade: number }> = [];
  for (let i = 0; i < n - 1; i++) {
    for (let j = 0; j < n - 1; j++) {
      const corners: Array<[number, number, number]> = [
        [i * step, j * step, z(i, j)],
        [(i + 1) * step, j * step, z(i + 1, j)],
        [(i + 1) * step, (j + 1) * step, z(i + 1, j + 1)],
        [i * step, (j + 1) * step, z(i, j + 1)],
      ];
      const pts = corners.map(([u, v, h]) => project(u, v, h));
      const path = pts.map(([x, y], k) => `${k === 0 ? "M" : "L"}${fmt(x)},${fmt(y)}`).join("") + "Z";
      const mean = corners.reduce((acc, c) => acc + c[2], 0) / 4;
      quads.push({ depth: i + j, path, shade: mean });
    }
  }
  quads.sort((a, b) => a.depth - b.depth || a.path.localeCompare(b.path));
  for (const quad of quads) {
    body.push(tag("path", {
      d: quad.path,
      fill: heatColor(quad.shade),
      stroke: "#5b7ea3",
      "stroke-width": 0.3,
    }));
  }
  body.push(text(geo.x + geo.size / 2, geo.y + geo.size + 14, "density surface", 10));
  return body;
}
