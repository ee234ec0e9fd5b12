/**
 * Readers for the primary component's CSV exports.
 *
 * Every reader validates its header and reports malformed content with the
 * offending row number, since a silent parse slip would shift an entire
 * density surface.
 */

import { readFileSync } from "node:fs";

export class CsvError extends Error {}

function parseNumber(raw: string, file: string, row: number, column: string): number {
  const text = raw.trim();
  if (text === "inf" || text === "Infinity") return Infinity;
  if (text === "-inf" || text === "-Infinity") return -Infinity;
  const value = Number(text);
  if (text === "" || Number.isNaN(value)) {
    throw new CsvError(`${file}: row ${row}: column '${column}' is not numeric (got '${raw}')`);
  }
  return value;
}

function readTable(path: string, required: string[]): Array<Record<string, string>> {
  const text = readFileSync(path, "utf8");
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length === 0) throw new CsvError(`${path}: empty file`);
  const header = lines[0].split(",").map((h) => h.trim());
  for (const name of required) {
    if (!header.includes(name)) {
      throw new CsvError(`${path}: missing required column '${name}' (have: ${header.join(", ")})`);
    }
  }
  const rows: Array<Record<string, string>> = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = lines[i].split(",");
    if (cells.length !== header.length) {
      throw new CsvError(`${path}: row ${i + 1}: expected ${header.length} cells, got ${cells.length}`);
    }
    const record: Record<string, string> = {};
    header.forEach((name, j) => (record[name] = cells[j]));
    rows.push(record);
  }
  return rows;
}

/** Square density grid over the two leading allele frequencies. */
export interface DensityGrid {
  /** shared cell-center coordinates along either axis, ascending */
  centers: number[];
  /** density[i][j] at x1 = centers[i], x2 = centers[j] */
  density: number[][];
}

export function readDensityGrid(path: string): DensityGrid {
  const rows = readTable(path, ["x1", "x2", "density"]);
  const byKey = new Map<string, number>();
  const centerSet = new Set<number>();
  rows.forEach((rec, idx) => {
    const row = idx + 2;
    const x1 = parseNumber(rec.x1, path, row, "x1");
    const x2 = parseNumber(rec.x2, path, row, "x2");
    const d = parseNumber(rec.density, path, row, "density");
    if (d < 0) throw new CsvError(`${path}: row ${row}: negative density`);
    centerSet.add(x1);
    centerSet.add(x2);
    byKey.set(`${x1}|${x2}`, d);
  });
  const centers = [...centerSet].sort((a, b) => a - b);
  const n = centers.length;
  if (n < 2 || byKey.size !== n * n) {
    throw new CsvError(`${path}: not a complete square grid (${byKey.size} cells, ${n} centers)`);
  }
  const density = centers.map((a) =>
    centers.map((b) => {
      const d = byKey.get(`${a}|${b}`);
      if (d === undefined) throw new CsvError(`${path}: missing grid cell (${a}, ${b})`);
      return d;
    }),
  );
  return { centers, density };
}

/** One trajectory record: time plus the leading frequency at each locus. */
export interface TrajectoryPoint {
  time: number;
  leading: [number, number];
}

export function readTrajectory(path: string): TrajectoryPoint[] {
  const rows = readTable(path, ["time", "x_0_0", "x_1_0"]);
  return rows.map((rec, idx) => ({
    time: parseNumber(rec.time, path, idx + 2, "time"),
    leading: [
      parseNumber(rec.x_0_0, path, idx + 2, "x_0_0"),
      parseNumber(rec.x_1_0, path, idx + 2, "x_1_0"),
    ] as [number, number],
  }));
}

/** Observed leading-allele relative frequencies per sampling time. */
export interface ObservedFrequencies {
  time: number;
  leading: [number, number];
}

export function readObservations(path: string): ObservedFrequencies[] {
  const rows = readTable(path, ["time", "locus", "type", "count"]);
  const byTime = new Map<number, Map<number, { first: number; total: number }>>();
  rows.forEach((rec, idx) => {
    const row = idx + 2;
    const time = parseNumber(rec.time, path, row, "time");
    const locus = parseNumber(rec.locus, path, row, "locus");
    const type = parseNumber(rec.type, path, row, "type");
    const count = parseNumber(rec.count, path, row, "count");
    const loci = byTime.get(time) ?? new Map();
    const acc = loci.get(locus) ?? { first: 0, total: 0 };
    acc.total += count;
    if (type === 0) acc.first += count;
    loci.set(locus, acc);
    byTime.set(time, loci);
  });
  return [...byTime.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([time, loci]) => {
      const l0 = loci.get(0);
      const l1 = loci.get(1);
      if (!l0 || !l1 || l0.total === 0 || l1.total === 0) {
        throw new CsvError(`${path}: time ${time}: need nonzero counts at loci 0 and 1`);
      }
      return { time, leading: [l0.first / l0.total, l1.first / l1.total] as [number, number] };
    });
}

/** Per-step data markers recovered from a filter trace export. */
export function readTraceMarkers(path: string): ObservedFrequencies[] {
  let payload: unknown;
  try {
    payload = JSON.parse(readFileSync(path, "utf8"));
  } catch (err) {
    throw new CsvError(`${path}: invalid JSON (${(err as Error).message})`);
  }
  const steps = (payload as { steps?: unknown }).steps;
  if (!Array.isArray(steps)) throw new CsvError(`${path}: no 'steps' array`);
  return steps.map((step, i) => {
    const s = step as { time?: number; y?: number[]; sizes?: number[] };
    if (!s.y || !s.sizes || s.y.length < 4 || s.sizes.length < 2) {
      throw new CsvError(`${path}: step ${i}: malformed y/sizes`);
    }
    return {
      time: Number(s.time ?? i),
      leading: [s.y[0] / s.sizes[0], s.y[2] / s.sizes[1]] as [number, number],
    };
  });
}
