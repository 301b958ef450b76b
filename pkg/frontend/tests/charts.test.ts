import { describe, expect, it } from "vitest";

import { ChartStore, ChartsView, WINDOW_POINTS, renderSeries, scalePoints, seriesId } from "../src/charts.js";
import { resultRecord } from "./helpers.js";
import type { ResultRecord } from "../src/api.js";

function record(timestamp: number, value: number, oid = "1.3.6.1.2.1.1.3.0") {
  return resultRecord({ timestamp, data: { values: [[oid, value]] } }) as unknown as ResultRecord;
}

describe("chart store", () => {
  it("appends points per (task, host, oid) series", () => {
    const store = new ChartStore();
    store.ingest(record(1000, 5));
    store.ingest(record(2000, 7));
    store.ingest(record(2500, 1, "9.9.9"));
    expect(store.series.size).toBe(2);
    const main = store.series.get("uptimePoll|127.0.0.1:7711|1.3.6.1.2.1.1.3.0")!;
    expect(main.points).toEqual([
      [1000, 5],
      [2000, 7],
    ]);
  });

  it("keeps points strictly time-ordered", () => {
    const store = new ChartStore();
    store.ingest(record(2000, 7));
    store.ingest(record(1000, 5)); // stale, dropped
    store.ingest(record(2000, 9)); // equal timestamp, dropped
    store.ingest(record(3000, 9));
    const points = [...store.series.values()][0]!.points;
    expect(points).toEqual([
      [2000, 7],
      [3000, 9],
    ]);
  });

  it("bounds the window", () => {
    const store = new ChartStore();
    for (let i = 0; i < WINDOW_POINTS + 50; i++) {
      store.ingest(record(1000 + i, i));
    }
    const points = [...store.series.values()][0]!.points;
    expect(points.length).toBe(WINDOW_POINTS);
    expect(points[0]![0]).toBe(1050);
  });

  it("skips non-numeric and missing values", () => {
    const store = new ChartStore();
    store.ingest(
      resultRecord({ data: { values: [["1.2", "up"], ["1.3", null]] } }) as unknown as ResultRecord,
    );
    store.ingest(resultRecord({ kind: "rows", data: { rows: [] } }) as unknown as ResultRecord);
    expect(store.series.size).toBe(0);
  });

  it("renders a linear ramp as a visibly monotone polyline", () => {
    const store = new ChartStore();
    for (let i = 0; i < 6; i++) {
      store.ingest(record(1000 + i * 1000, 100 + 5 * i));
    }
    const svg = renderSeries([...store.series.values()][0]!);
    const points = svg
      .querySelector("polyline")!
      .getAttribute("points")!
      .split(" ")
      .map((pair) => pair.split(",").map(Number));
    for (let i = 1; i < points.length; i++) {
      expect(points[i]![0]).toBeGreaterThan(points[i - 1]![0]); // time advances
      expect(points[i]![1]).toBeLessThan(points[i - 1]![1]); // value climbs (y is inverted)
    }
  });

  it("scales degenerate series without dividing by zero", () => {
    expect(scalePoints([])).toBe("");
    expect(scalePoints([[1000, 5]])).toContain(",");
  });

  it("charts view renders one block per series with the latest value", () => {
    const store = new ChartStore();
    const view = new ChartsView(store);
    store.ingest(record(1000, 5));
    store.ingest(record(2000, 7));
    store.ingest(record(1500, 3, "5.6.7"));
    view.refresh();
    const blocks = view.element.querySelectorAll(".chart-block");
    expect(blocks.length).toBe(2);
    expect(view.element.textContent).toContain("= 7");
    const id = seriesId({ task: "uptimePoll", host: "127.0.0.1:7711", oid: "1.3.6.1.2.1.1.3.0" });
    expect(view.element.querySelector(`[data-series="${id}"]`)).toBeTruthy();
  });
});
