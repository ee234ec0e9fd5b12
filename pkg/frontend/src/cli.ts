#!/usr/bin/env node
/**
 * cwfilter-plots: figure rendering for cwfilter CSV/JSON exports.
 *
 *   cwfilter-plots render --grid PATH --style {surface,contour} --out PATH
 *                         [--traj PATH] [--obs PATH] [--time T] [--title S]
 *   cwfilter-plots figure --run DIR --out PATH [--traj PATH]
 */

import { PlotStyle, render } from "./render.js";
import { figure } from "./figure.js";

class UsageError extends Error {}

function parseFlags(argv: string[], allowed: Set<string>): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || !allowed.has(key)) {
      throw new UsageError(`unknown or misplaced argument '${key}'`);
    }
    const value = argv[i + 1];
    if (value === undefined) throw new UsageError(`flag ${key} needs a value`);
    flags.set(key.slice(2), value);
  }
  return flags;
}

function need(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) throw new UsageError(`missing required flag --${name}`);
  return value;
}

export function main(argv: string[]): number {
  try {
    const [command, ...rest] = argv;
    if (command === "render") {
      const flags = parseFlags(rest, new Set([
        "--grid", "--style", "--out", "--traj", "--obs", "--time", "--title",
        "--xlabel", "--ylabel",
      ]));
      const style = need(flags, "style");
      if (style !== "surface" && style !== "contour") {
        throw new UsageError(`--style must be 'surface' or 'contour', got '${style}'`);
      }
      render({
        gridPath: need(flags, "grid"),
        style: style as PlotStyle,
        outPath: need(flags, "out"),
        trajectoryPath: flags.get("traj"),
        observationsPath: flags.get("obs"),
        time: flags.has("time") ? Number(flags.get("time")) : undefined,
        title: flags.get("title"),
        xLabel: flags.get("xlabel"),
        yLabel: flags.get("ylabel"),
      });
      return 0;
    }
    if (command === "figure") {
      const flags = parseFlags(rest, new Set(["--run", "--out", "--traj"]));
      figure({
        runDir: need(flags, "run"),
        outPath: need(flags, "out"),
        trajectoryPath: flags.get("traj"),
      });
      return 0;
    }
    throw new UsageError(`unknown command '${command ?? ""}'; use render or figure`);
  } catch (err) {
    const kind = err instanceof UsageError ? "usage" : "render";
    process.stderr.write(JSON.stringify({ error: kind, message: (err as Error).message }) + "\n");
    return err instanceof UsageError ? 2 : 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
