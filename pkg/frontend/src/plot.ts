// Thin uPlot wrapper. x is sim time in seconds; null y values break the line
// (spanGaps stays off), which is how missing data must look.

import uPlot from "uplot";
import { cToF, hms } from "./format.js";
import type { AlignedData } from "./series.js";
import type { TempUnit } from "./format.js";

const PALETTE = [
  "#4fc3f7", "#81c784", "#ffb74d", "#e57373", "#ba68c8",
  "#4db6ac", "#fff176", "#a1887f", "#90a4ae", "#f06292",
];

export class TrendPlot {
  private plot: uPlot | null = null;
  private el: HTMLElement;
  private labels: string[] = [];

  constructor(el: HTMLElement) {
    this.el = el;
  }

  /** (Re)build when the selected series set changes. */
  private rebuild(labels: string[]): void {
    this.plot?.destroy();
    this.labels = [...labels];
    const series: uPlot.Series[] = [
      { label: "sim time", value: (_u, v) => (v === null ? "--" : hms(v)) },
    ];
    labels.forEach((label, i) => {
      const overlay = label.endsWith("(baseline)");
      series.push({
        label,
        stroke: PALETTE[i % PALETTE.length],
        width: overlay ? 1 : 2,
        dash: overlay ? [6, 4] : undefined,
        spanGaps: false,
        points: { show: false },
      });
    });
    this.plot = new uPlot(
      {
        width: this.el.clientWidth || 800,
        height: 320,
        series,
        scales: { x: { time: false } },
        axes: [
          {
            stroke: "#ccc",
            grid: { stroke: "#333" },
            values: (_u, ticks) => ticks.map((t) => hms(t)),
          },
          { stroke: "#ccc", grid: { stroke: "#333" } },
        ],
        legend: { live: true },
        cursor: { y: false },
      },
      [[], []],
      this.el,
    );
  }

  setData(labels: string[], aligned: AlignedData, temps: TempUnit): void {
    if (!this.plot || labels.join("\t") !== this.labels.join("\t")) {
      this.rebuild(labels);
    }
    const ys = temps === "F"
      ? aligned.ys.map((col) => col.map((v) => (v === null ? null : cToF(v))))
      : aligned.ys;
    this.plot!.setData([aligned.x, ...ys] as uPlot.AlignedData);
  }

  resize(): void {
    if (this.plot) this.plot.setSize({ width: this.el.clientWidth || 800, height: 320 });
  }
}
