/**
 * Single-panel rendering: one grid CSV in, one SVG out.
 */

import { writeFileSync } from "node:fs";

import {
  DensityGrid,
  ObservedFrequencies,
  TrajectoryPoint,
  readDensityGrid,
  readObservations,
  readTrajectory,
} from "./csv.js";
import { ContourOverlays, contourPanel } from "./contour.js";
import { surfacePanel } from "./surface.js";
import { document, text } from "./svg.js";

export type PlotStyle = "surface" | "contour";

export interface PlotSpec {
  gridPath: string;
  style: PlotStyle;
  outPath: string;
  trajectoryPath?: string;
  observationsPath?: string;
  /** pick the signal marker (and nothing else) by nearest time; default: last */
  time?: number;
  title?: string;
  xLabel?: string;
  yLabel?: string;
}

const PANEL = 360;
const MARGIN = 48;

function nearest<T extends { time: number }>(rows: T[], time?: number): T | undefined {
  if (rows.length === 0) return undefined;
  if (time === undefined) return rows[rows.length - 1];
  return rows.reduce((best, row) =>
    Math.abs(row.time - time) < Math.abs(best.time - time) ? row : best);
}

export function renderPanelBody(grid: DensityGrid, style: PlotStyle,
                                overlays: ContourOverlays,
                                x: number, y: number, size: number): string[] {
  const geo = { x, y, size };
  return style === "surface" ? surfacePanel(grid, geo)
    : contourPanel(grid, geo, overlays);
}

export function render(spec: PlotSpec): string {
  const grid = readDensityGrid(spec.gridPath);
  let observations: ObservedFrequencies[] | undefined;
  let signal: TrajectoryPoint | undefined;
  if (spec.observationsPath) observations = readObservations(spec.observationsPath);
  if (spec.trajectoryPath) signal = nearest(readTrajectory(spec.trajectoryPath), spec.time);

  const width = PANEL + 2 * MARGIN;
  const height = PANEL + 2 * MARGIN;
  const body: string[] = [];
  if (spec.title) body.push(text(width / 2, MARGIN - 16, spec.title, 13));
  body.push(...renderPanelBody(grid, spec.style, { observations, signal },
                               MARGIN, MARGIN, PANEL));
  body.push(text(width / 2, height - 8, spec.xLabel ?? "leading frequency, locus 0", 11));
  body.push(text(12, height / 2, spec.yLabel ?? "leading frequency, locus 1", 11));

  const svg = document(width, height, body);
  writeFileSync(spec.outPath, svg);
  return svg;
}
