/**
 * Convergence-figure rendering from a study error table.
 *
 * The temporal slice plots the finest-mesh rows against the time step with
 * first- and second-order guides; the spatial slice plots the
 * smallest-time-step rows against the mesh size with a second-order guide.
 */

import { readFile, writeFile } from "fs/promises";

import { ErrorRow, parseErrorsCsv } from "./csv.js";
import { PanelSpec, renderPanel } from "./svg.js";

export interface PlotSpec {
  errorsCsv: string;
  slice: "temporal" | "spatial";
  out: string;
}

export function slicedRows(rows: ErrorRow[], slice: "temporal" | "spatial"):
  ErrorRow[] {
  const finite = rows.filter(
    (r) => Number.isFinite(r.err_velocity) && Number.isFinite(r.err_position),
  );
  if (slice === "temporal") {
    const lxMax = Math.max(...finite.map((r) => r.Lx));
    return finite.filter((r) => r.Lx === lxMax).sort((a, b) => a.Lt - b.Lt);
  }
  const ltMax = Math.max(...finite.map((r) => r.Lt));
  return finite.filter((r) => r.Lt === ltMax).sort((a, b) => a.Lx - b.Lx);
}

export function buildPanel(rows: ErrorRow[], slice: "temporal" | "spatial"):
  PanelSpec {
  const sel = slicedRows(rows, slice);
  if (sel.length === 0) {
    throw new Error(`no rows with finite errors in the ${slice} slice`);
  }
  const x = (r: ErrorRow) => (slice === "temporal" ? r.dt : r.h);
  const series = [
    {
      id: "series-velocity",
      label: "interface velocity",
      color: "#1f77b4",
      marker: "circle" as const,
      points: sel.map((r): [number, number] => [x(r), r.err_velocity]),
    },
    {
      id: "series-position",
      label: "interface position",
      color: "#d62728",
      marker: "square" as const,
      dashed: true,
      points: sel.map((r): [number, number] => [x(r), r.err_position]),
    },
  ];
  const guides =
    slice === "temporal"
      ? [
          { id: "guide-1", label: "O(dt)", order: 1 },
          { id: "guide-2", label: "O(dt^2)", order: 2 },
        ]
      : [{ id: "guide-2", label: "O(h^2)", order: 2 }];
  return {
    title:
      slice === "temporal"
        ? "Convergence vs time step (finest mesh)"
        : "Convergence vs mesh size (smallest time step)",
    xLabel: slice === "temporal" ? "dt" : "h",
    series,
    guides,
  };
}

export async function renderConvergence(spec: PlotSpec): Promise<void> {
  const text = await readFile(spec.errorsCsv, "utf8");
  const rows = parseErrorsCsv(text);
  const svg = renderPanel(buildPanel(rows, spec.slice));
  if (spec.out.toLowerCase().endsWith(".png")) {
    const sharp = (await import("sharp")).default;
    const png = await sharp(Buffer.from(svg), { density: 144 })
      .png()
      .toBuffer();
    await writeFile(spec.out, png);
  } else {
    await writeFile(spec.out, svg, "utf8");
  }
}
