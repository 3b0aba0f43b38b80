import { mkdtempSync, readFileSync, writeFileSync, existsSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { describe, expect, it } from "vitest";

import { parseErrorsCsv, SCHEMA } from "../src/csv.js";
import { buildPanel, renderConvergence, slicedRows } from "../src/plot.js";
import { renderPanel } from "../src/svg.js";

const HEADER = SCHEMA.join(",");

function syntheticCsv(rate: number, kind: "temporal" | "spatial" = "temporal"):
  string {
  const lines = [HEADER];
  if (kind === "temporal") {
    // finest-mesh slice with errors falling like dt^rate
    for (let lt = 0; lt <= 4; lt++) {
      const dt = 0.02 * Math.pow(2, -lt);
      const err = 0.1 * Math.pow(dt / 0.02, rate);
      lines.push(`3,${lt},0.0125,${dt},${err},${err * 0.5},,`);
    }
  } else {
    // smallest-time-step slice with errors falling like h^rate
    for (let lx = 0; lx <= 3; lx++) {
      const h = 0.1 * Math.pow(2, -lx);
      const err = 0.05 * Math.pow(h / 0.1, rate);
      lines.push(`${lx},4,${h},0.00125,${err},${err * 0.5},,`);
    }
  }
  return lines.join("\n") + "\n";
}

function polylinePoints(svg: string, id: string): Array<[number, number]> {
  const m = svg.match(new RegExp(`<polyline id="${id}" points="([^"]+)"`));
  if (!m) throw new Error(`polyline ${id} not found`);
  return m[1]
    .trim()
    .split(/\s+/)
    .map((pair) => {
      const [x, y] = pair.split(",").map(Number);
      return [x, y] as [number, number];
    });
}

function slope(points: Array<[number, number]>): number {
  const [x0, y0] = points[0];
  const [x1, y1] = points[points.length - 1];
  return (y1 - y0) / (x1 - x0);
}

describe("csv parsing", () => {
  it("round-trips the schema", () => {
    const rows = parseErrorsCsv(syntheticCsv(1));
    expect(rows).toHaveLength(5);
    expect(rows[0].err_velocity).toBeCloseTo(0.1);
    expect(rows[0].observed_rate_t).toBeNull();
  });

  it("reports the offending header on mismatch", () => {
    const bad = syntheticCsv(1).replace("err_velocity", "velocity_err");
    expect(() => parseErrorsCsv(bad)).toThrowError(/velocity_err/);
  });

  it("rejects wrong column counts", () => {
    expect(() => parseErrorsCsv("a,b\n1,2\n")).toThrowError(/schema mismatch/);
  });
});

describe("slicing", () => {
  it("temporal slice keeps the finest mesh", () => {
    const rows = parseErrorsCsv(syntheticCsv(1));
    const sel = slicedRows(rows, "temporal");
    expect(sel.map((r) => r.Lt)).toEqual([0, 1, 2, 3, 4]);
    expect(sel.every((r) => r.Lx === 3)).toBe(true);
  });

  it("spatial slice keeps the smallest time step", () => {
    const rows = parseErrorsCsv(syntheticCsv(2, "spatial"));
    const sel = slicedRows(rows, "spatial");
    expect(sel.map((r) => r.Lx)).toEqual([0, 1, 2, 3]);
  });

  it("raises on an empty slice", () => {
    const rows = parseErrorsCsv(
      HEADER + "\n0,0,0.1,0.02,nan,nan,,\n",
    );
    expect(() => buildPanel(rows, "temporal")).toThrowError(/no rows/);
  });
});

describe("rendering", () => {
  it("rate-1 data plots parallel to the O(dt) guide", () => {
    const rows = parseErrorsCsv(syntheticCsv(1));
    const svg = renderPanel(buildPanel(rows, "temporal"));
    const sVel = slope(polylinePoints(svg, "series-velocity"));
    const sG1 = slope(polylinePoints(svg, "guide-1"));
    const sG2 = slope(polylinePoints(svg, "guide-2"));
    expect(Math.abs(sVel - sG1)).toBeLessThan(0.02 * Math.abs(sG1));
    expect(Math.abs(sVel - sG2)).toBeGreaterThan(0.3 * Math.abs(sG2));
  });

  it("rate-2 data plots parallel to the O(dt^2) guide", () => {
    const rows = parseErrorsCsv(syntheticCsv(2));
    const svg = renderPanel(buildPanel(rows, "temporal"));
    const sVel = slope(polylinePoints(svg, "series-velocity"));
    const sG2 = slope(polylinePoints(svg, "guide-2"));
    expect(Math.abs(sVel - sG2)).toBeLessThan(0.02 * Math.abs(sG2));
  });

  it("spatial panel carries the O(h^2) guide", () => {
    const rows = parseErrorsCsv(syntheticCsv(2, "spatial"));
    const svg = renderPanel(buildPanel(rows, "spatial"));
    const sVel = slope(polylinePoints(svg, "series-velocity"));
    const sG2 = slope(polylinePoints(svg, "guide-2"));
    expect(Math.abs(sVel - sG2)).toBeLessThan(0.02 * Math.abs(sG2));
  });

  it("identical csv gives identical svg bytes", () => {
    const rows = parseErrorsCsv(syntheticCsv(1));
    const a = renderPanel(buildPanel(rows, "temporal"));
    const b = renderPanel(buildPanel(rows, "temporal"));
    expect(a).toEqual(b);
  });
});

describe("file output", () => {
  it("writes svg and png, and refuses an empty slice without output", async () => {
    const dir = mkdtempSync(join(tmpdir(), "plots-"));
    const csv = join(dir, "errors.csv");
    writeFileSync(csv, syntheticCsv(1));
    const svgOut = join(dir, "fig.svg");
    await renderConvergence({ errorsCsv: csv, slice: "temporal", out: svgOut });
    expect(readFileSync(svgOut, "utf8")).toContain("<svg");

    const spatialCsv = join(dir, "errors_spatial.csv");
    writeFileSync(spatialCsv, syntheticCsv(2, "spatial"));
    const pngOut = join(dir, "fig.png");
    await renderConvergence({ errorsCsv: spatialCsv, slice: "spatial", out: pngOut });
    const png = readFileSync(pngOut);
    expect(png.subarray(1, 4).toString()).toBe("PNG");

    const emptyCsv = join(dir, "empty.csv");
    writeFileSync(emptyCsv, HEADER + "\n");
    const missingOut = join(dir, "missing.svg");
    await expect(
      renderConvergence({ errorsCsv: emptyCsv, slice: "temporal", out: missingOut }),
    ).rejects.toThrow();
    expect(existsSync(missingOut)).toBe(false);
  });
});
