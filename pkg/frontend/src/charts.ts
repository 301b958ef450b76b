/**
 * Real-time chart store and SVG renderer.
 *
 * Result events append points to a series keyed (task, host, oid); each
 * series keeps a bounded, strictly time-ordered window and renders as an
 * SVG polyline.  No resampling: points plot as they arrive.
 */

import type { ResultRecord } from "./api.js";

export const WINDOW_POINTS = 500;

export interface SeriesKey {
  task: string;
  host: string;
  oid: string;
}

export interface Series {
  key: SeriesKey;
  points: [number, number][];
}

export function seriesId(key: SeriesKey): string {
  return `${key.task}|${key.host}|${key.oid}`;
}

export class ChartStore {
  readonly series = new Map<string, Series>();

  ingest(record: ResultRecord): string[] {
    if (record.kind !== "values") return [];
    const pairs = (record.data["values"] ?? []) as [string, number | string | null][];
    const touched: string[] = [];
    for (const [oid, value] of pairs) {
      if (typeof value !== "number") continue;
      const key = { task: record.task, host: record.host, oid };
      const id = seriesId(key);
      let entry = this.series.get(id);
      if (!entry) {
        entry = { key, points: [] };
        this.series.set(id, entry);
      }
      const last = entry.points[entry.points.length - 1];
      if (last && record.timestamp <= last[0]) continue; // strictly time-ordered
      entry.points.push([record.timestamp, value]);
      if (entry.points.length > WINDOW_POINTS) {
        entry.points.splice(0, entry.points.length - WINDOW_POINTS);
      }
      touched.push(id);
    }
    return touched;
  }
}

const SVG_NS = "http://www.w3.org/2000/svg";
const WIDTH = 560;
const HEIGHT = 120;
const PAD = 6;

export function renderSeries(entry: Series): SVGSVGElement {
  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${WIDTH} ${HEIGHT}`);
  svg.setAttribute("class", "chart");
  svg.dataset["series"] = seriesId(entry.key);
  const polyline = document.createElementNS(SVG_NS, "polyline");
  polyline.setAttribute("fill", "none");
  polyline.setAttribute("stroke", "#58a6ff");
  polyline.setAttribute("stroke-width", "1.5");
  polyline.setAttribute("points", scalePoints(entry.points));
  svg.appendChild(polyline);
  return svg;
}

export function scalePoints(points: [number, number][]): string {
  if (points.length === 0) return "";
  const ts = points.map((p) => p[0]);
  const vs = points.map((p) => p[1]);
  const tMin = Math.min(...ts);
  const tMax = Math.max(...ts);
  const vMin = Math.min(...vs);
  const vMax = Math.max(...vs);
  const tSpan = tMax - tMin || 1;
  const vSpan = vMax - vMin || 1;
  return points
    .map(([t, v]) => {
      const x = PAD + ((t - tMin) / tSpan) * (WIDTH - 2 * PAD);
      const y = HEIGHT - PAD - ((v - vMin) / vSpan) * (HEIGHT - 2 * PAD);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

export class ChartsView {
  readonly element: HTMLElement;
  private store: ChartStore;

  constructor(store: ChartStore) {
    this.store = store;
    this.element = document.createElement("div");
    this.element.className = "charts";
    this.element.innerHTML = `<p class="empty">no chart data yet; results appear as agents return</p>`;
  }

  refresh(): void {
    if (this.store.series.size === 0) return;
    this.element.innerHTML = "";
    const ordered = [...this.store.series.values()].sort((a, b) =>
      seriesId(a.key).localeCompare(seriesId(b.key)),
    );
    for (const entry of ordered) {
      const block = document.createElement("div");
      block.className = "chart-block";
      const label = document.createElement("div");
      label.className = "chart-label";
      const latest = entry.points[entry.points.length - 1];
      label.textContent = `${entry.key.task} @ ${entry.key.host} — ${entry.key.oid}` +
        (latest ? ` = ${latest[1]}` : "");
      block.appendChild(label);
      block.appendChild(renderSeries(entry));
      this.element.appendChild(block);
    }
  }
}
