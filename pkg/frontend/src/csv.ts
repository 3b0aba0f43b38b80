/**
 * Reader for the study error table (errors.csv).
 *
 * The schema is fixed; any header drift is reported with the offending
 * column so a stale or foreign CSV fails loudly.
 */

export interface ErrorRow {
  Lx: number;
  Lt: number;
  h: number;
  dt: number;
  err_velocity: number;
  err_position: number;
  observed_rate_t: number | null;
  observed_rate_x: number | null;
}

export const SCHEMA = [
  "Lx",
  "Lt",
  "h",
  "dt",
  "err_velocity",
  "err_position",
  "observed_rate_t",
  "observed_rate_x",
] as const;

export function parseErrorsCsv(text: string): ErrorRow[] {
  const lines = text.trim().split(/\r?\n/);
  if (lines.length === 0) {
    throw new Error("errors.csv is empty");
  }
  const header = lines[0].split(",").map((s) => s.trim());
  if (header.length !== SCHEMA.length) {
    throw new Error(
      `errors.csv schema mismatch: expected ${SCHEMA.length} columns ` +
        `(${SCHEMA.join(",")}), found ${header.length} (${header.join(",")})`,
    );
  }
  for (let i = 0; i < SCHEMA.length; i++) {
    if (header[i] !== SCHEMA[i]) {
      throw new Error(
        `errors.csv schema mismatch at column ${i + 1}: expected ` +
          `"${SCHEMA[i]}", found "${header[i]}"`,
      );
    }
  }
  const rows: ErrorRow[] = [];
  for (const line of lines.slice(1)) {
    if (!line.trim()) continue;
    const cells = line.split(",");
    const num = (i: number): number => Number(cells[i]);
    const opt = (i: number): number | null =>
      cells[i] === undefined || cells[i].trim() === "" ? null : Number(cells[i]);
    rows.push({
      Lx: num(0),
      Lt: num(1),
      h: num(2),
      dt: num(3),
      err_velocity: num(4),
      err_position: num(5),
      observed_rate_t: opt(6),
      observed_rate_x: opt(7),
    });
  }
  return rows;
}
