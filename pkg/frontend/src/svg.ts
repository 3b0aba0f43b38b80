/**
 * Minimal deterministic SVG builder for one log-log convergence panel.
 *
 * No DOM, no plotting library: scales are plain log10 maps and the markup
 * is assembled as a string, so identical data gives identical bytes.
 */

export interface Series {
  id: string;
  label: string;
  color: string;
  dashed?: boolean;
  marker: "circle" | "square";
  points: Array<[number, number]>; // (x, y) in data coordinates
}

export interface Guide {
  id: string;
  label: string;
  order: number; // slope in the log-log plane
}

export interface PanelSpec {
  title: string;
  xLabel: string;
  series: Series[];
  guides: Guide[];
}

const W = 560;
const H = 420;
const M = { left: 72, right: 24, top: 40, bottom: 56 };

function niceLogTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let e = Math.floor(Math.log10(lo)); e <= Math.ceil(Math.log10(hi)); e++) {
    const v = Math.pow(10, e);
    if (v >= lo / 1.0001 && v <= hi * 1.0001) ticks.push(v);
  }
  return ticks;
}

function fmtTick(v: number): string {
  const e = Math.round(Math.log10(v));
  return `1e${e}`;
}

export function renderPanel(spec: PanelSpec): string {
  const xs = spec.series.flatMap((s) => s.points.map((p) => p[0]));
  const ys = spec.series.flatMap((s) => s.points.map((p) => p[1]));
  const xmin = Math.min(...xs) / 1.3;
  const xmax = Math.max(...xs) * 1.3;
  let ymin = Math.min(...ys) / 2;
  let ymax = Math.max(...ys) * 2;

  // guide anchor: coarsest (largest-x) velocity point, shifted down
  const anchorSeries = spec.series[0];
  const anchor = anchorSeries.points.reduce((a, b) => (b[0] > a[0] ? b : a));
  for (const g of spec.guides) {
    const yAtMin = (anchor[1] * 0.5) * Math.pow(xmin * 1.3 / anchor[0], g.order);
    ymin = Math.min(ymin, yAtMin / 1.5);
  }

  const sx = (x: number) =>
    M.left + ((Math.log10(x) - Math.log10(xmin)) /
      (Math.log10(xmax) - Math.log10(xmin))) * (W - M.left - M.right);
  const sy = (y: number) =>
    H - M.bottom - ((Math.log10(y) - Math.log10(ymin)) /
      (Math.log10(ymax) - Math.log10(ymin))) * (H - M.top - M.bottom);

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" ` +
      `viewBox="0 0 ${W} ${H}" font-family="sans-serif" font-size="12">`,
  );
  parts.push(`<rect width="${W}" height="${H}" fill="white"/>`);
  parts.push(
    `<text x="${W / 2}" y="22" text-anchor="middle" font-size="14">` +
      `${spec.title}</text>`,
  );

  // frame and ticks
  const x0 = M.left, x1 = W - M.right, y0 = H - M.bottom, y1 = M.top;
  parts.push(
    `<rect x="${x0}" y="${y1}" width="${x1 - x0}" height="${y0 - y1}" ` +
      `fill="none" stroke="black"/>`,
  );
  for (const t of niceLogTicks(xmin, xmax)) {
    const px = sx(t).toFixed(2);
    parts.push(
      `<line x1="${px}" y1="${y0}" x2="${px}" y2="${y1}" stroke="#ddd"/>`,
      `<text x="${px}" y="${y0 + 18}" text-anchor="middle">${fmtTick(t)}</text>`,
    );
  }
  for (const t of niceLogTicks(ymin, ymax)) {
    const py = sy(t).toFixed(2);
    parts.push(
      `<line x1="${x0}" y1="${py}" x2="${x1}" y2="${py}" stroke="#ddd"/>`,
      `<text x="${x0 - 6}" y="${py}" text-anchor="end" ` +
        `dominant-baseline="middle">${fmtTick(t)}</text>`,
    );
  }
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${H - 14}" text-anchor="middle">` +
      `${spec.xLabel}</text>`,
    `<text x="18" y="${(y0 + y1) / 2}" text-anchor="middle" ` +
      `transform="rotate(-90 18 ${(y0 + y1) / 2})">error</text>`,
  );

  // order guide lines through the shifted anchor
  for (const g of spec.guides) {
    const gx0 = xmin * 1.15;
    const gx1 = xmax / 1.15;
    const gy = (x: number) => anchor[1] * 0.5 * Math.pow(x / anchor[0], g.order);
    const pts = `${sx(gx0).toFixed(2)},${sy(gy(gx0)).toFixed(2)} ` +
      `${sx(gx1).toFixed(2)},${sy(gy(gx1)).toFixed(2)}`;
    parts.push(
      `<polyline id="${g.id}" points="${pts}" fill="none" stroke="#888" ` +
        `stroke-dasharray="2,3"/>`,
      `<text x="${sx(gx1).toFixed(2)}" y="${(sy(gy(gx1)) - 5).toFixed(2)}" ` +
        `text-anchor="end" fill="#888">${g.label}</text>`,
    );
  }

  // data series
  for (const s of spec.series) {
    const sorted = [...s.points].sort((a, b) => a[0] - b[0]);
    const pts = sorted
      .map((p) => `${sx(p[0]).toFixed(2)},${sy(p[1]).toFixed(2)}`)
      .join(" ");
    const dash = s.dashed ? ` stroke-dasharray="6,3"` : "";
    parts.push(
      `<polyline id="${s.id}" points="${pts}" fill="none" ` +
        `stroke="${s.color}" stroke-width="1.5"${dash}/>`,
    );
    for (const p of sorted) {
      const cx = sx(p[0]).toFixed(2);
      const cy = sy(p[1]).toFixed(2);
      if (s.marker === "circle") {
        parts.push(`<circle cx="${cx}" cy="${cy}" r="3.5" fill="${s.color}"/>`);
      } else {
        parts.push(
          `<rect x="${(Number(cx) - 3).toFixed(2)}" ` +
            `y="${(Number(cy) - 3).toFixed(2)}" width="6" height="6" ` +
            `fill="${s.color}"/>`,
        );
      }
    }
  }

  // legend
  let ly = y1 + 14;
  for (const s of spec.series) {
    parts.push(
      `<line x1="${x0 + 10}" y1="${ly}" x2="${x0 + 34}" y2="${ly}" ` +
        `stroke="${s.color}" stroke-width="1.5"/>`,
      `<text x="${x0 + 40}" y="${ly + 4}">${s.label}</text>`,
    );
    ly += 16;
  }

  parts.push("</svg>");
  return parts.join("\n");
}
