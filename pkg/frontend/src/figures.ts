/** The three figure kinds over a results CSV.
 *
 * Every figure co-emits the numbers it draws as a CSV next to the image, so
 * correctness is testable without image diffing; the only computation done
 * here beyond grouping is the percent change C = 100 (a - b) / b.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { formatCsv, readResults, ResultRow } from "./csv.js";
import { datasetColors, symlog, symlogTicks } from "./scale.js";
import { line, polyline, rect, render, Shape, text } from "./svg.js";

export type FigureKind = "percent_change_bars" | "window_sweep" | "epsilon_curve";

export interface FigureSpec {
  csv: string;
  kind: FigureKind;
  /** column=value pairs identifying the base case row b per (dataset, sequence) */
  baseline?: Record<string, string>;
  /** columns whose values label the compared techniques */
  group?: string[];
  metric?: string;
  out: string;
}

export interface FigureOutput {
  imagePath: string;
  dataPath: string;
}

const WIDTH = 720;
const HEIGHT = 400;
const MARGIN = { left: 64, right: 16, top: 28, bottom: 56 };

function seqKey(row: ResultRow): string {
  return `${row.dataset}/${row.sequence}`;
}

function label(row: ResultRow, group: string[]): string {
  return group.map((g) => `${g}=${row[g]}`).join(" ");
}

export function percentChange(a: number, b: number): number {
  if (!(b > 0)) throw new Error(`percent change needs a positive base, got ${b}`);
  return (100 * (a - b)) / b;
}

function matchesBaseline(row: ResultRow, baseline: Record<string, string>): boolean {
  return Object.entries(baseline).every(([k, v]) => row[k] === v);
}

export function percentChangeTable(
  rows: ResultRow[], baseline: Record<string, string>, group: string[], metric: string,
): { dataset: string; sequence: string; label: string; value: number; base: number;
     percent: number }[] {
  const bySeq = new Map<string, ResultRow[]>();
  for (const row of rows) {
    const key = seqKey(row);
    if (!bySeq.has(key)) bySeq.set(key, []);
    bySeq.get(key)!.push(row);
  }
  const missing: string[] = [];
  const out: { dataset: string; sequence: string; label: string; value: number;
               base: number; percent: number }[] = [];
  for (const [key, seqRows] of [...bySeq.entries()].sort()) {
    const bases = seqRows.filter((r) => matchesBaseline(r, baseline));
    if (bases.length !== 1) {
      missing.push(`${key} (${bases.length} baseline rows)`);
      continue;
    }
    const b = Number(bases[0][metric]);
    for (const row of seqRows) {
      if (row === bases[0]) continue;
      const a = Number(row[metric]);
      out.push({
        dataset: row.dataset,
        sequence: row.sequence,
        label: label(row, group),
        value: a,
        base: b,
        percent: percentChange(a, b),
      });
    }
  }
  if (missing.length) {
    throw new Error(
      `baseline selector did not match exactly one row for: ${missing.join("; ")}`,
    );
  }
  return out;
}

function percentChangeBars(rows: ResultRow[], spec: FigureSpec) {
  const baseline = spec.baseline ?? {};
  if (Object.keys(baseline).length === 0) {
    throw new Error("percent_change_bars needs a baseline selector");
  }
  const group = spec.group ?? ["residual"];
  const metric = spec.metric ?? "wrte_t";
  const table = percentChangeTable(rows, baseline, group, metric);
  const data: (string | number)[][] = [
    ["dataset", "sequence", "label", metric, `baseline_${metric}`, "percent_change"],
    ...table.map((t) => [t.dataset, t.sequence, t.label, t.value, t.base, t.percent]),
  ];

  const labels = [...new Set(table.map((t) => t.label))].sort();
  const colors = datasetColors(table.map((t) => t.dataset));
  const maxAbs = Math.max(100, ...table.map((t) => Math.abs(t.percent)));
  const top = symlog(maxAbs) * 1.1;
  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const yOf = (v: number) => MARGIN.top + plotH * (1 - (symlog(v) + top) / (2 * top));

  const shapes: Shape[] = [];
  for (const tick of symlogTicks(maxAbs)) {
    const y = yOf(tick);
    shapes.push(line(MARGIN.left, y, WIDTH - MARGIN.right, y, "#ddd"));
    shapes.push(text(MARGIN.left - 6, y + 3, String(tick), 10, "end"));
  }
  shapes.push(line(MARGIN.left, yOf(0), WIDTH - MARGIN.right, yOf(0), "#444"));

  const seqs = [...new Set(table.map((t) => seqKey({dataset: t.dataset, sequence: t.sequence} as ResultRow)))].sort();
  const groupW = plotW / Math.max(labels.length, 1);
  const barW = Math.min(24, (groupW - 8) / Math.max(seqs.length, 1));
  table.forEach((t) => {
    const gi = labels.indexOf(t.label);
    const si = seqs.indexOf(`${t.dataset}/${t.sequence}`);
    const x = MARGIN.left + gi * groupW + 4 + si * barW;
    const y0 = yOf(0);
    const y1 = yOf(t.percent);
    shapes.push(rect(x, Math.min(y0, y1), barW * 0.9, Math.max(Math.abs(y1 - y0), 0.5),
                     colors.get(t.dataset)!));
  });
  labels.forEach((l, gi) => {
    shapes.push(text(MARGIN.left + gi * groupW + groupW / 2, HEIGHT - MARGIN.bottom + 16, l, 10));
  });
  shapes.push(text(WIDTH / 2, 16, `percent change in ${metric} vs ${Object.entries(baseline)
    .map(([k, v]) => `${k}=${v}`).join(",")}`, 12));
  shapes.push(text(14, HEIGHT / 2, "%", 11));
  return { svg: render(WIDTH, HEIGHT, shapes), data };
}

function seriesFigure(rows: ResultRow[], spec: FigureSpec, xColumn: string, title: string) {
  const group = spec.group ?? [];
  const metric = spec.metric ?? "wrte_t";
  const byKey = new Map<string, { x: number; y: number }[]>();
  const datasetOf = new Map<string, string>();
  for (const row of rows) {
    const key = `${seqKey(row)}${group.length ? " " + label(row, group) : ""}`;
    if (!byKey.has(key)) byKey.set(key, []);
    byKey.get(key)!.push({ x: Number(row[xColumn]), y: Number(row[metric]) });
    datasetOf.set(key, row.dataset);
  }
  const data: (string | number)[][] = [["series", xColumn, metric]];
  for (const [key, pts] of [...byKey.entries()].sort()) {
    pts.sort((p, q) => p.x - q.x);
    for (const p of pts) data.push([key, p.x, p.y]);
  }

  const all = [...byKey.values()].flat();
  const xMax = Math.max(...all.map((p) => p.x));
  const xMin = Math.min(...all.map((p) => p.x));
  const yMax = Math.max(...all.map((p) => p.y), 1e-12);
  const plotW = WIDTH - MARGIN.left - MARGIN.right;
  const plotH = HEIGHT - MARGIN.top - MARGIN.bottom;
  const xOf = (v: number) =>
    MARGIN.left + (xMax > xMin ? ((v - xMin) / (xMax - xMin)) * plotW : plotW / 2);
  const yOf = (v: number) => MARGIN.top + plotH * (1 - v / (yMax * 1.05));

  const colors = datasetColors(datasetOf.values());
  const shapes: Shape[] = [
    line(MARGIN.left, MARGIN.top, MARGIN.left, HEIGHT - MARGIN.bottom),
    line(MARGIN.left, HEIGHT - MARGIN.bottom, WIDTH - MARGIN.right, HEIGHT - MARGIN.bottom),
  ];
  for (let i = 0; i <= 4; i++) {
    const v = (yMax * 1.05 * i) / 4;
    shapes.push(text(MARGIN.left - 6, yOf(v) + 3, v.toPrecision(3), 10, "end"));
    const xv = xMin + ((xMax - xMin) * i) / 4;
    shapes.push(text(xOf(xv), HEIGHT - MARGIN.bottom + 16, xv.toPrecision(3), 10));
  }
  for (const [key, pts] of [...byKey.entries()].sort()) {
    pts.sort((p, q) => p.x - q.x);
    shapes.push(
      polyline(pts.map((p) => [xOf(p.x), yOf(p.y)]), colors.get(datasetOf.get(key)!)!),
    );
  }
  shapes.push(text(WIDTH / 2, 16, title, 12));
  shapes.push(text(WIDTH / 2, HEIGHT - 12, xColumn, 11));
  return { svg: render(WIDTH, HEIGHT, shapes), data };
}

export function plot(spec: FigureSpec): FigureOutput {
  const rows = readResults(fs.readFileSync(spec.csv, "utf8"), spec.csv);
  if (rows.length === 0) throw new Error(`${spec.csv}: no data rows`);
  let made: { svg: string; data: (string | number)[][] };
  if (spec.kind === "percent_change_bars") {
    made = percentChangeBars(rows, spec);
  } else if (spec.kind === "window_sweep") {
    made = seriesFigure(rows, spec, "window_j", `${spec.metric ?? "wrte_t"} vs window`);
  } else if (spec.kind === "epsilon_curve") {
    made = seriesFigure(rows, spec, "epsilon", `${spec.metric ?? "wrte_t"} vs epsilon`);
  } else {
    throw new Error(`unknown figure kind ${String(spec.kind)}`);
  }
  fs.mkdirSync(spec.out, { recursive: true });
  const stem = path.join(spec.out, spec.kind);
  const imagePath = `${stem}.svg`;
  const dataPath = `${stem}.csv`;
  fs.writeFileSync(imagePath, made.svg);
  fs.writeFileSync(dataPath, formatCsv(made.data));
  return { imagePath, dataPath };
}
