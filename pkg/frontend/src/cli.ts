#!/usr/bin/env node
/**
 * plots --errors errors.csv --slice temporal|spatial --out fig.svg
 *
 * Renders one log-log convergence panel from a completed study's error
 * table; .png output is rasterised, anything else is written as SVG.
 */

import { renderConvergence } from "./plot.js";

function usage(): never {
  console.error(
    "usage: plots --errors <errors.csv> --slice temporal|spatial --out <fig.svg|fig.png>",
  );
  process.exit(2);
}

function parseArgs(argv: string[]) {
  const args: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const val = argv[i + 1];
    if (!key?.startsWith("--") || val === undefined) usage();
    args[key.slice(2)] = val;
  }
  if (!args.errors || !args.out) usage();
  if (args.slice !== "temporal" && args.slice !== "spatial") usage();
  return {
    errorsCsv: args.errors,
    slice: args.slice as "temporal" | "spatial",
    out: args.out,
  };
}

renderConvergence(parseArgs(process.argv.slice(2))).catch((err) => {
  console.error(`plots: ${err.message}`);
  process.exit(1);
});
