/** RFC-4180 CSV reading/writing and the results-file schema. */

export const RESULTS_HEADER = [
  "dataset", "sequence", "dewarp", "init", "features", "residual", "epsilon",
  "curvature", "window_s", "window_j", "ate_t", "rte_t", "wrte_t",
  "ate_r", "rte_r", "wrte_r", "runtime_ms", "iterations_mean",
] as const;

export type ResultRow = Record<string, string>;

export function parseCsv(text: string): string[][] {
  const rows: string[][] = [];
  let field = "";
  let row: string[] = [];
  let inQuotes = false;
  for (let i = 0; i < text.length; i++) {
    const c = text[i];
    if (inQuotes) {
      if (c === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i++;
        } else {
          inQuotes = false;
        }
      } else {
        field += c;
      }
    } else if (c === '"') {
      inQuotes = true;
    } else if (c === ",") {
      row.push(field);
      field = "";
    } else if (c === "\n") {
      row.push(field);
      rows.push(row);
      field = "";
      row = [];
    } else if (c !== "\r") {
      field += c;
    }
  }
  if (field.length > 0 || row.length > 0) {
    row.push(field);
    rows.push(row);
  }
  return rows;
}

export function formatCsv(rows: (string | number)[][]): string {
  const quote = (v: string | number): string => {
    const s = typeof v === "number" ? String(v) : v;
    return /[",\n\r]/.test(s) ? `"${s.replaceAll('"', '""')}"` : s;
  };
  return rows.map((r) => r.map(quote).join(",")).join("\n") + "\n";
}

/** Parse a results CSV into keyed rows, validating the fixed header. */
export function readResults(text: string, path = "results"): ResultRow[] {
  const rows = parseCsv(text);
  if (rows.length === 0) throw new Error(`${path}: empty results CSV`);
  const header = rows[0];
  if (header.join(",") !== RESULTS_HEADER.join(",")) {
    throw new Error(
      `${path}: unexpected header; want "${RESULTS_HEADER.join(",")}", got "${header.join(",")}"`,
    );
  }
  return rows.slice(1).filter((r) => r.length > 1 || r[0] !== "").map((r, i) => {
    if (r.length !== header.length) {
      throw new Error(`${path}: row ${i + 2} has ${r.length} fields, want ${header.length}`);
    }
    const out: ResultRow = {};
    header.forEach((name, j) => (out[name] = r[j]));
    return out;
  });
}
