/**
 * Panel-set composition: one run directory in, one multi-row figure out.
 *
 * Each exported density grid becomes a row with the surface view on the left
 * and the contour view (data dots, optional signal square) on the right.
 */

import { readdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import {
  ObservedFrequencies,
  TrajectoryPoint,
  readDensityGrid,
  readTraceMarkers,
  readTrajectory,
} from "./csv.js";
import { contourPanel } from "./contour.js";
import { surfacePanel } from "./surface.js";
import { document, text } from "./svg.js";

const PANEL = 280;
const GAP = 70;
const MARGIN = 56;

export interface FigureOptions {
  runDir: string;
  outPath: string;
  trajectoryPath?: string;
}

function gridFiles(runDir: string): string[] {
  const names = readdirSync(runDir)
    .filter((name) => /^(filter|smooth)_density_.+\.csv$/.test(name))
    .sort((a, b) => a.localeCompare(b, undefined, { numeric: true }));
  if (names.length === 0) {
    throw new Error(`${runDir}: no density grid exports found`);
  }
  return names;
}

export function figure(options: FigureOptions): string {
  const names = gridFiles(options.runDir);
  let markers: ObservedFrequencies[] = [];
  try {
    markers = readTraceMarkers(join(options.runDir, "filter_trace.json"));
  } catch {
    markers = []; // smoothing-only runs may not carry a trace
  }
  let signals: TrajectoryPoint[] = [];
  if (options.trajectoryPath) signals = readTrajectory(options.trajectoryPath);

  const rows = names.length;
  const width = 2 * PANEL + GAP + 2 * MARGIN;
  const height = rows * (PANEL + GAP) + MARGIN;
  const body: string[] = [];

  names.forEach((name, row) => {
    const grid = readDensityGrid(join(options.runDir, name));
    const y = MARGIN + row * (PANEL + GAP);
    const marker = markers[row];
    const signal = signals.length
      ? signals.reduce((best, s) =>
          marker && Math.abs(s.time - marker.time) < Math.abs(best.time - marker.time)
            ? s : best)
      : undefined;
    body.push(text(MARGIN + PANEL / 2, y - 12, name.replace(".csv", ""), 12));
    body.push(...surfacePanel(grid, { x: MARGIN, y, size: PANEL }));
    body.push(...contourPanel(grid, { x: MARGIN + PANEL + GAP, y, size: PANEL }, {
      observations: marker ? [marker] : [],
      signal,
    }));
  });

  const svg = document(width, height, body);
  writeFileSync(options.outPath, svg);
  return svg;
}
