/** Axis scales, including the symlog scale used by percent-change figures:
 * linear inside [-100, 100] and logarithmic outside. */

export function symlog(v: number): number {
  const a = Math.abs(v);
  const t = a <= 100 ? a : 100 * (1 + Math.log10(a / 100));
  return Math.sign(v) * t;
}

export function symlogTicks(maxAbs: number): number[] {
  const ticks = [-100, -50, 0, 50, 100];
  let m = 1000;
  while (m <= maxAbs * 1.01) {
    ticks.push(m);
    ticks.unshift(-m);
    m *= 10;
  }
  return ticks.filter((t) => Math.abs(t) <= Math.max(maxAbs * 1.2, 100));
}

/** Stable dataset colors: index by hash, in sorted-name order for legends. */
const PALETTE = [
  "#4269d0", "#efb118", "#ff725c", "#6cc5b0", "#3ca951",
  "#ff8ab7", "#a463f2", "#97bbf5", "#9c6b4e", "#9498a0",
];

function fnv1a(s: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h;
}

export function datasetColors(names: Iterable<string>): Map<string, string> {
  const sorted = [...new Set(names)].sort();
  const out = new Map<string, string>();
  const used = new Set<number>();
  for (const name of sorted) {
    let idx = fnv1a(name) % PALETTE.length;
    while (used.has(idx) && used.size < PALETTE.length) idx = (idx + 1) % PALETTE.length;
    used.add(idx);
    out.set(name, PALETTE[idx]);
  }
  return out;
}
