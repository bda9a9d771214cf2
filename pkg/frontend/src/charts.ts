// Minimal SVG chart helpers: the console draws everything itself so the
// payload values reach the screen without any client-side recomputation.

export interface Scale {
  (x: number): number;
  domain: [number, number];
  range: [number, number];
}

export function scaleLinear(domain: [number, number], range: [number, number]): Scale {
  const [d0, d1] = domain;
  const [r0, r1] = range;
  const k = d1 === d0 ? 0 : (r1 - r0) / (d1 - d0);
  const fn = ((x: number) => r0 + (x - d0) * k) as Scale;
  fn.domain = domain;
  fn.range = range;
  return fn;
}

export function extent(values: number[], pad = 0.05): [number, number] {
  const finite = values.filter((v) => Number.isFinite(v));
  if (!finite.length) return [0, 1];
  let lo = Math.min(...finite);
  let hi = Math.max(...finite);
  if (lo === hi) {
    lo -= 1;
    hi += 1;
  }
  const span = hi - lo;
  return [lo - pad * span, hi + pad * span];
}

export function ticks(lo: number, hi: number, count = 5): number[] {
  const span = hi - lo;
  if (!(span > 0)) return [lo];
  const step0 = span / Math.max(count, 1);
  const mag = Math.pow(10, Math.floor(Math.log10(step0)));
  const norm = step0 / mag;
  const step = (norm >= 5 ? 5 : norm >= 2 ? 2 : 1) * mag;
  const start = Math.ceil(lo / step) * step;
  const out: number[] = [];
  for (let v = start; v <= hi + 1e-12; v += step) out.push(Number(v.toFixed(12)));
  return out;
}

/** Polyline path with gaps at non-finite samples. */
export function linePath(xs: number[], ys: number[], sx: Scale, sy: Scale): string {
  let d = "";
  let pen = false;
  for (let i = 0; i < xs.length; i++) {
    if (!Number.isFinite(xs[i]) || !Number.isFinite(ys[i])) {
      pen = false;
      continue;
    }
    const cmd = pen ? "L" : "M";
    d += `${cmd}${sx(xs[i]).toFixed(1)},${sy(ys[i]).toFixed(1)}`;
    pen = true;
  }
  return d;
}

export interface Series {
  xs: number[];
  ys: number[];
  color: string;
  label: string;
  dash?: string;
  dots?: boolean;
}

export interface Marker {
  x: number;
  label: string;
  color?: string;
}

export interface ChartOptions {
  width?: number;
  height?: number;
  xLabel?: string;
  yLabel?: string;
  series: Series[];
  markers?: Marker[];
  yExtent?: [number, number];
}

const M = { left: 52, right: 12, top: 14, bottom: 30 };

export function svgChart(opts: ChartOptions): string {
  const width = opts.width ?? 640;
  const height = opts.height ?? 240;
  const xs = opts.series.flatMap((s) => s.xs);
  const ys = opts.series.flatMap((s) => s.ys);
  const xd = extent(xs, 0.02);
  const yd = opts.yExtent ?? extent(ys);
  const sx = scaleLinear(xd, [M.left, width - M.right]);
  const sy = scaleLinear(yd, [height - M.bottom, M.top]);
  const parts: string[] = [];
  parts.push(
    `<svg class="chart" viewBox="0 0 ${width} ${height}" preserveAspectRatio="none" role="img">`,
  );
  for (const t of ticks(yd[0], yd[1])) {
    const y = sy(t).toFixed(1);
    parts.push(
      `<line class="grid" x1="${M.left}" x2="${width - M.right}" y1="${y}" y2="${y}"/>`,
      `<text class="tick" x="${M.left - 6}" y="${y}" text-anchor="end" dominant-baseline="middle">${t}</text>`,
    );
  }
  for (const t of ticks(xd[0], xd[1], 7)) {
    const x = sx(t).toFixed(1);
    parts.push(
      `<text class="tick" x="${x}" y="${height - M.bottom + 14}" text-anchor="middle">${t}</text>`,
    );
  }
  for (const m of opts.markers ?? []) {
    const x = sx(m.x).toFixed(1);
    parts.push(
      `<line class="marker" data-label="${m.label}" x1="${x}" x2="${x}" y1="${M.top}" y2="${height - M.bottom}" stroke="${m.color ?? "#888"}" stroke-dasharray="3,3"/>`,
      `<text class="marker-label" x="${x}" y="${M.top - 2}" text-anchor="middle">${m.label}</text>`,
    );
  }
  for (const s of opts.series) {
    const d = linePath(s.xs, s.ys, sx, sy);
    parts.push(
      `<path class="series" data-label="${s.label}" d="${d}" fill="none" stroke="${s.color}"${s.dash ? ` stroke-dasharray="${s.dash}"` : ""} stroke-width="1.6"/>`,
    );
    if (s.dots) {
      for (let i = 0; i < s.xs.length; i++) {
        if (Number.isFinite(s.ys[i])) {
          parts.push(
            `<circle cx="${sx(s.xs[i]).toFixed(1)}" cy="${sy(s.ys[i]).toFixed(1)}" r="2.4" fill="${s.color}"/>`,
          );
        }
      }
    }
  }
  if (opts.xLabel) {
    parts.push(
      `<text class="axis-label" x="${(M.left + width - M.right) / 2}" y="${height - 4}" text-anchor="middle">${opts.xLabel}</text>`,
    );
  }
  if (opts.yLabel) {
    parts.push(
      `<text class="axis-label" transform="rotate(-90)" x="${-height / 2}" y="12" text-anchor="middle">${opts.yLabel}</text>`,
    );
  }
  const legendX = M.left + 8;
  opts.series.forEach((s, i) => {
    parts.push(
      `<rect x="${legendX + i * 150}" y="${M.top}" width="10" height="3" fill="${s.color}"/>`,
      `<text class="legend" x="${legendX + 14 + i * 150}" y="${M.top + 4}">${s.label}</text>`,
    );
  });
  parts.push("</svg>");
  return parts.join("");
}
