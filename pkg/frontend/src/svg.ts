/** Minimal SVG document builder; figures are plain shape lists. */

export interface Shape {
  tag: string;
  attrs: Record<string, string | number>;
  text?: string;
}

export function rect(x: number, y: number, w: number, h: number, fill: string): Shape {
  return { tag: "rect", attrs: { x: r2(x), y: r2(y), width: r2(w), height: r2(h), fill } };
}

export function line(x1: number, y1: number, x2: number, y2: number, stroke = "#444",
                     width = 1): Shape {
  return {
    tag: "line",
    attrs: { x1: r2(x1), y1: r2(y1), x2: r2(x2), y2: r2(y2), stroke, "stroke-width": width },
  };
}

export function polyline(pts: [number, number][], stroke: string, width = 1.5): Shape {
  return {
    tag: "polyline",
    attrs: {
      points: pts.map(([x, y]) => `${r2(x)},${r2(y)}`).join(" "),
      fill: "none",
      stroke,
      "stroke-width": width,
    },
  };
}

export function text(x: number, y: number, content: string, size = 11,
                     anchor: "start" | "middle" | "end" = "middle",
                     fill = "#222"): Shape {
  return {
    tag: "text",
    attrs: { x: r2(x), y: r2(y), "font-size": size, "text-anchor": anchor, fill,
             "font-family": "sans-serif" },
    text: content,
  };
}

function r2(v: number): number {
  return Math.round(v * 100) / 100;
}

function escape(s: string): string {
  return s.replaceAll("&", "&amp;").replaceAll("<", "&lt;").replaceAll(">", "&gt;");
}

export function render(width: number, height: number, shapes: Shape[]): string {
  const body = shapes
    .map((s) => {
      const attrs = Object.entries(s.attrs)
        .map(([k, v]) => `${k}="${v}"`)
        .join(" ");
      return s.text !== undefined
        ? `  <${s.tag} ${attrs}>${escape(s.text)}</${s.tag}>`
        : `  <${s.tag} ${attrs}/>`;
    })
    .join("\n");
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}">\n` +
    `  <rect x="0" y="0" width="${width}" height="${height}" fill="white"/>\n` +
    body +
    "\n</svg>\n"
  );
}
