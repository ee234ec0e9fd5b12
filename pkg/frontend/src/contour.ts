/**
 * Filled contour panel for one density grid, with optional data-frequency
 * dots and a true-signal square, in the unit square of leading frequencies.
 */

import { contours } from "d3-contour";

import { DensityGrid, ObservedFrequencies, TrajectoryPoint } from "./csv.js";
import { fmt, heatColor, tag, text } from "./svg.js";

export interface PanelGeometry {
  x: number;
  y: number;
  size: number;
}

export interface ContourOverlays {
  observations?: ObservedFrequencies[];
  signal?: TrajectoryPoint;
}

function finiteMax(grid: DensityGrid): number {
  let top = 0;
  for (const row of grid.density) {
    for (const d of row) if (Number.isFinite(d) && d > top) top = d;
  }
  return top > 0 ? top : 1;
}

export function contourPanel(grid: DensityGrid, geo: PanelGeometry,
                             overlays: ContourOverlays = {}, levels = 12): string[] {
  const n = grid.centers.length;
  const top = finiteMax(grid);
  // row-major with the first frequency on the horizontal axis; diverging
  // boundary cells clamp to the finite maximum for display
  const values = new Float64Array(n * n);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      const d = grid.density[i][j];
      values[j * n + i] = Number.isFinite(d) ? d : top;
    }
  }
  const thresholds = Array.from({ length: levels }, (_, k) => (top * (k + 0.5)) / levels);
  const polygons = contours().size([n, n]).thresholds(thresholds)(Array.from(values));

  const toX = (cx: number) => geo.x + (cx / n) * geo.size;
  const toY = (cy: number) => geo.y + geo.size - (cy / n) * geo.size;

  const body: string[] = [];
  body.push(tag("rect", {
    x: geo.x, y: geo.y, width: geo.size, height: geo.size,
    fill: heatColor(0), stroke: "none",
  }));
  for (const contour of polygons) {
    const path = contour.coordinates
      .map((poly) =>
        poly
          .map((ring) =>
            ring
              .map(([cx, cy], i) => `${i === 0 ? "M" : "L"}${fmt(toX(cx))},${fmt(toY(cy))}`)
              .join("") + "Z",
          )
          .join(""),
      )
      .join("");
    if (path.length === 0) continue;
    body.push(tag("path", {
      d: path,
      fill: heatColor(contour.value / top),
      stroke: "none",
      "fill-rule": "evenodd",
    }));
  }
  body.push(tag("rect", {
    x: geo.x, y: geo.y, width: geo.size, height: geo.size,
    fill: "none", stroke: "#333", "stroke-width": 1,
  }));

  for (const point of overlays.observations ?? []) {
    body.push(tag("circle", {
      cx: toX(point.leading[0] * n), cy: toY(point.leading[1] * n), r: 3.5,
      fill: "#d62728", stroke: "white", "stroke-width": 1,
    }));
  }
  if (overlays.signal) {
    const [sx, sy] = overlays.signal.leading;
    body.push(tag("rect", {
      x: toX(sx * n) - 4, y: toY(sy * n) - 4, width: 8, height: 8,
      fill: "none", stroke: "#d62728", "stroke-width": 2,
    }));
  }

  for (const t of [0, 0.5, 1]) {
    body.push(text(toX(t * n), geo.y + geo.size + 14, fmt(t, 1), 10));
    body.push(text(geo.x - 8, toY(t * n) + 3, fmt(t, 1), 10, "end"));
  }
  return body;
}
