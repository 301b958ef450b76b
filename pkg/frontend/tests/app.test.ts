import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { mountApp } from "../src/app.js";
import { FakeEventSource, mockFetch, resultRecord } from "./helpers.js";

beforeEach(() => {
  FakeEventSource.reset();
  mockFetch([
    { method: "GET", pattern: /\/hosts$/, handler: () => ({ body: [] }) },
    { method: "GET", pattern: /\/hosts\/[^/]+\/agents$/, handler: () => ({ body: [] }) },
    {
      method: "GET",
      pattern: /\/topology$/,
      handler: () => ({ body: { manager: "m:1", nodes: [], edges: [] } }),
    },
  ]);
});

afterEach(() => vi.unstubAllGlobals());

function mount() {
  const root = document.createElement("div");
  document.body.appendChild(root);
  const handles = mountApp(root, new ApiClient(""), (url) => new FakeEventSource(url));
  return { root, handles };
}

function flush() {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

describe("console app", () => {
  it("appends chart points live from a scripted ramp", async () => {
    const { root, handles } = mount();
    const source = FakeEventSource.latest();
    source.open();
    for (let i = 0; i < 5; i++) {
      source.emit("result", resultRecord({ timestamp: 1000 + i * 1000, data: { values: [["1.2", 100 + 5 * i]] } }));
    }
    await flush();
    const polyline = root.querySelector("polyline")!;
    const ys = polyline
      .getAttribute("points")!
      .split(" ")
      .map((pair) => Number(pair.split(",")[1]));
    expect(ys.length).toBe(5);
    for (let i = 1; i < ys.length; i++) {
      expect(ys[i]!).toBeLessThan(ys[i - 1]!); // monotone increasing value
    }
    expect(handles.store.series.size).toBe(1);
  });

  it("raises exactly one alarm banner per crossing event", async () => {
    const { root } = mount();
    const source = FakeEventSource.latest();
    source.open();
    source.emit("result", resultRecord({ timestamp: 1000 }));
    source.emit("alarm", {
      task: "watch",
      host: "h:1",
      kind: "alarm",
      data: { oid: "1.2", quantity: 900, limit: 500, comparator: "GT" },
    });
    source.emit("result", resultRecord({ timestamp: 2000 }));
    await flush();
    const banners = root.querySelectorAll(".alarm-banner");
    expect(banners.length).toBe(1);
    expect(banners[0]!.textContent).toContain("h:1");
    expect(banners[0]!.textContent).toContain("900");
    (banners[0]!.querySelector("button.dismiss") as HTMLButtonElement).click();
    expect(root.querySelectorAll(".alarm-banner").length).toBe(0);
  });

  it("tracks stream health in the indicator and recovers", async () => {
    vi.useFakeTimers();
    try {
      const { root } = mount();
      const dot = root.querySelector(".stream-dot") as HTMLElement;
      expect(dot.dataset["status"]).toBe("stale");
      FakeEventSource.latest().open();
      expect(dot.dataset["status"]).toBe("live");
      FakeEventSource.latest().fail();
      expect(dot.dataset["status"]).toBe("stale");
      vi.advanceTimersByTime(500);
      FakeEventSource.latest().open();
      expect(dot.dataset["status"]).toBe("live");
      FakeEventSource.latest().emit("result", resultRecord({ timestamp: 9000 }));
      expect(root.querySelectorAll(".chart-block").length).toBe(1);
    } finally {
      vi.useRealTimers();
    }
  });

  it("switches tabs with the panels in sync", async () => {
    const { root } = mount();
    const tabs = [...root.querySelectorAll<HTMLButtonElement>(".tabs button")];
    tabs.find((b) => b.dataset["tab"] === "charts")!.click();
    expect(root.querySelector('[data-panel="charts"]')!.classList.contains("active")).toBe(true);
    expect(root.querySelector('[data-panel="agents"]')!.classList.contains("active")).toBe(false);
    tabs.find((b) => b.dataset["tab"] === "tasks")!.click();
    expect(root.querySelector('[data-panel="tasks"] form.wizard')).toBeTruthy();
  });
});
