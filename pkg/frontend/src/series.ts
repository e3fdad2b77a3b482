// Trend buffers for the live chart. Each point keeps its own (x, y) arrays in
// sim time; a sample with quality != ok stores null, which the plot renders as
// a gap. Values are never synthesized between samples.

import type { LatestSample } from "./api.js";
import type { TrendRow } from "./api.js";

export interface PointSeries {
  x: number[];
  y: (number | null)[];
}

export class SeriesStore {
  byPoint = new Map<string, PointSeries>();

  /** Fold one stream points payload in; only new sample times append. */
  applyPoints(values: Record<string, LatestSample | null>): void {
    for (const [id, latest] of Object.entries(values)) {
      if (!latest) continue;
      let series = this.byPoint.get(id);
      if (!series) {
        series = { x: [], y: [] };
        this.byPoint.set(id, series);
      }
      const last = series.x.length ? series.x[series.x.length - 1] : -Infinity;
      if (latest.t <= last) continue;
      series.x.push(latest.t);
      series.y.push(latest.quality === "ok" ? latest.value : null);
    }
  }

  /** Seed history fetched over /api/trends before the stream took over. */
  applyHistory(id: string, rows: TrendRow[]): void {
    const series: PointSeries = { x: [], y: [] };
    for (const [t, value, quality] of rows) {
      series.x.push(t);
      series.y.push(quality === "ok" ? value : null);
    }
    const live = this.byPoint.get(id);
    if (live) {
      // keep any stream samples newer than the fetched history
      const cut = series.x.length ? series.x[series.x.length - 1] : -Infinity;
      for (let i = 0; i < live.x.length; i++) {
        if (live.x[i] > cut) {
          series.x.push(live.x[i]);
          series.y.push(live.y[i]);
        }
      }
    }
    this.byPoint.set(id, series);
  }

  get(id: string): PointSeries {
    return this.byPoint.get(id) ?? { x: [], y: [] };
  }
}

/** Parse a bundle trends.csv for the baseline overlay. */
export function parseTrendsCsv(text: string): Map<string, PointSeries> {
  const out = new Map<string, PointSeries>();
  const lines = text.split("\n");
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const [t, point, value, quality] = line.split(",");
    let series = out.get(point);
    if (!series) {
      series = { x: [], y: [] };
      out.set(point, series);
    }
    series.x.push(Number(t));
    series.y.push(quality === "ok" && value !== "" ? Number(value) : null);
  }
  return out;
}

export interface NamedSeries {
  label: string;
  data: PointSeries;
}

export interface AlignedData {
  x: number[];
  ys: (number | null)[][];
}

/**
 * K-way merge onto one x axis. A series without a sample at some merged x
 * gets null there; nulls from missing quality survive as nulls. Either way
 * the chart shows a hole, never an interpolated or zero value.
 */
export function align(series: NamedSeries[]): AlignedData {
  const xs = new Set<number>();
  for (const s of series) for (const x of s.data.x) xs.add(x);
  const x = [...xs].sort((a, b) => a - b);
  const index = new Map<number, number>();
  x.forEach((t, i) => index.set(t, i));
  const ys = series.map((s) => {
    const col: (number | null)[] = new Array(x.length).fill(null);
    for (let i = 0; i < s.data.x.length; i++) {
      col[index.get(s.data.x[i])!] = s.data.y[i];
    }
    return col;
  });
  return { x, ys };
}
