/** CLI: render figures from a results CSV.
 *
 * Usage:
 *   plot --csv results.csv --kind percent_change_bars --baseline dewarp=none \
 *        --group dewarp --metric wrte_t --out figures/
 *   plot --spec figure.json
 *
 * Exit codes: 0 success, 1 bad arguments/spec, 2 runtime failure.
 */

import * as fs from "node:fs";

import { FigureKind, FigureSpec, plot } from "./figures.js";

function parseArgs(argv: string[]): FigureSpec {
  const flags = new Map<string, string[]>();
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) throw new UsageError(`unexpected argument ${arg}`);
    const name = arg.slice(2);
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new UsageError(`flag --${name} needs a value`);
    }
    if (!flags.has(name)) flags.set(name, []);
    flags.get(name)!.push(value);
    i++;
  }
  if (flags.has("spec")) {
    const doc = JSON.parse(fs.readFileSync(flags.get("spec")![0], "utf8"));
    return validateSpec(doc);
  }
  const spec: Record<string, unknown> = {
    csv: flags.get("csv")?.[0],
    kind: flags.get("kind")?.[0],
    metric: flags.get("metric")?.[0],
    out: flags.get("out")?.[0],
  };
  if (flags.has("group")) spec.group = flags.get("group")!.flatMap((g) => g.split(","));
  if (flags.has("baseline")) {
    const baseline: Record<string, string> = {};
    for (const pair of flags.get("baseline")!.flatMap((b) => b.split(","))) {
      const eq = pair.indexOf("=");
      if (eq < 1) throw new UsageError(`baseline selector must be column=value, got ${pair}`);
      baseline[pair.slice(0, eq)] = pair.slice(eq + 1);
    }
    spec.baseline = baseline;
  }
  return validateSpec(spec);
}

class UsageError extends Error {}

const KINDS: FigureKind[] = ["percent_change_bars", "window_sweep", "epsilon_curve"];

function validateSpec(doc: Record<string, unknown>): FigureSpec {
  if (typeof doc.csv !== "string") throw new UsageError("--csv (or spec.csv) is required");
  if (typeof doc.out !== "string") throw new UsageError("--out (or spec.out) is required");
  if (!KINDS.includes(doc.kind as FigureKind)) {
    throw new UsageError(`--kind must be one of ${KINDS.join(", ")}`);
  }
  return doc as unknown as FigureSpec;
}

export function main(argv: string[]): number {
  try {
    const spec = parseArgs(argv);
    const out = plot(spec);
    console.log(`figure: ${out.imagePath}`);
    console.log(`data:   ${out.dataPath}`);
    return 0;
  } catch (e) {
    console.error(`error: ${e instanceof Error ? e.message : String(e)}`);
    return e instanceof UsageError ? 1 : 2;
  }
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
