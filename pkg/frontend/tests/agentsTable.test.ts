import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api.js";
import { AGENT_COLUMNS, AgentsView } from "../src/agentsTable.js";
import { agentRow, mockFetch, type Route } from "./helpers.js";

afterEach(() => vi.unstubAllGlobals());

interface ServerState {
  rows: ReturnType<typeof agentRow>[];
  freqError?: boolean;
}

/** A stateful stand-in for one masd behind the manager API. */
function agentServerRoutes(state: ServerState): Route[] {
  return [
    {
      method: "GET",
      pattern: /\/hosts$/,
      handler: () => ({
        body: [
          {
            host_id: "127.0.0.1:7711",
            host: "127.0.0.1",
            port: 7711,
            device_class: "",
            state: "ACTIVE",
            last_announce: 0,
            load: { cpu_percent: 1, mem_bytes_used: 0, sampled_at: 0 },
            bundles: [],
          },
        ],
      }),
    },
    {
      method: "GET",
      pattern: /\/hosts\/[^/]+\/agents$/,
      handler: () => ({ body: state.rows }),
    },
    {
      method: "POST",
      pattern: /\/hosts\/[^/]+\/agents\/([^/]+)\/(suspend|resume|activate)$/,
      handler: (match) => {
        const id = decodeURIComponent(match[1]!);
        const action = match[2]!;
        const row = state.rows.find((r) => r.id === id);
        if (!row) return { status: 404, body: { error: "UNKNOWN_ID" } };
        if (action === "suspend" && row.status !== "active") {
          return { status: 409, body: { error: "BAD_STATE" } };
        }
        row.status = action === "suspend" ? "suspended" : "active";
        return { body: { status: "OK" } };
      },
    },
    {
      method: "PATCH",
      pattern: /\/tasks\/([^/]+)\/frequency$/,
      handler: (_match, body) => {
        if (state.freqError) return { status: 409, body: { error: "BAD_STATE" } };
        const seconds = (body as { seconds: number }).seconds;
        for (const row of state.rows) row.frequency_s = seconds;
        return { body: { name: "uptimePoll", frequency_s: seconds } };
      },
    },
  ];
}

async function mounted(state: ServerState) {
  mockFetch(agentServerRoutes(state));
  const view = new AgentsView(new ApiClient(""));
  await view.loadHosts();
  await view.refresh();
  return view;
}

function flush() {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

describe("agents table", () => {
  it("renders the profiling columns from API data", async () => {
    const view = await mounted({ rows: [agentRow()] });
    const headers = [...view.element.querySelectorAll("th")].map((th) => th.textContent);
    expect(headers).toEqual([...AGENT_COLUMNS]);
    const cells = [...view.element.querySelectorAll("tbody td")].map((td) => td.textContent);
    expect(cells[0]).toBe("127.0.0.1:7700:1");
    expect(cells[1]).toBe("uptimePoll");
    expect(cells[2]).toBe("periodic");
    expect(cells[4]).toBe("✓"); // authentication always on
    expect(cells[5]).toBe("✗");
    expect(cells[6]).toBe("active");
    const freq = view.element.querySelector("input.frequency") as HTMLInputElement;
    expect(freq.value).toBe("20");
  });

  it("enables actions according to status", async () => {
    const view = await mounted({
      rows: [agentRow({ id: "a", status: "active" }), agentRow({ id: "b", status: "suspended" })],
    });
    const [activeRow, suspendedRow] = [...view.element.querySelectorAll("tbody tr")];
    expect((activeRow!.querySelector(".action-suspend") as HTMLButtonElement).disabled).toBe(false);
    expect((activeRow!.querySelector(".action-resume") as HTMLButtonElement).disabled).toBe(true);
    expect((suspendedRow!.querySelector(".action-suspend") as HTMLButtonElement).disabled).toBe(true);
    expect((suspendedRow!.querySelector(".action-resume") as HTMLButtonElement).disabled).toBe(false);
    expect((suspendedRow!.querySelector(".action-activate") as HTMLButtonElement).disabled).toBe(false);
  });

  it("suspend then resume round-trips and tracks the server", async () => {
    const state: ServerState = { rows: [agentRow()] };
    const view = await mounted(state);
    (view.element.querySelector(".action-suspend") as HTMLButtonElement).click();
    await flush();
    expect(state.rows[0]!.status).toBe("suspended");
    expect(view.element.querySelector("tbody tr")!.textContent).toContain("suspended");
    expect(
      (view.element.querySelector(".action-resume") as HTMLButtonElement).disabled,
    ).toBe(false);

    (view.element.querySelector(".action-resume") as HTMLButtonElement).click();
    await flush();
    expect(state.rows[0]!.status).toBe("active");
    expect(view.element.querySelector("tbody tr")!.textContent).toContain("active");
  });

  it("rolls back and resyncs when an action fails", async () => {
    const state: ServerState = { rows: [agentRow({ status: "suspended" })] };
    const view = await mounted(state);
    // Suspending a suspended agent: the server answers BAD_STATE.
    const row = view.element.querySelector("tbody tr")!;
    const suspend = row.querySelector(".action-suspend") as HTMLButtonElement;
    suspend.disabled = false; // simulate a stale UI racing the server
    suspend.click();
    await flush();
    expect(view.element.querySelector(".inline-error")!.textContent).toContain("BAD_STATE");
    expect(view.element.querySelector("tbody tr")!.textContent).toContain("suspended");
  });

  it("removes rows the server no longer knows after a failed action", async () => {
    const state: ServerState = { rows: [agentRow({ id: "gone" })] };
    const view = await mounted(state);
    state.rows.length = 0; // the agent departed between render and click
    (view.element.querySelector(".action-suspend") as HTMLButtonElement).click();
    await flush();
    expect(view.element.querySelectorAll("tbody tr").length).toBe(0);
  });

  it("frequency edit patches the task and persists", async () => {
    const state: ServerState = { rows: [agentRow()] };
    const view = await mounted(state);
    const input = view.element.querySelector("input.frequency") as HTMLInputElement;
    input.value = "25";
    input.dispatchEvent(new Event("change"));
    await flush();
    expect(state.rows[0]!.frequency_s).toBe(25);
    expect((view.element.querySelector("input.frequency") as HTMLInputElement).value).toBe("25");
  });

  it("frequency edit rolls back on API error", async () => {
    const state: ServerState = { rows: [agentRow()], freqError: true };
    const view = await mounted(state);
    const input = view.element.querySelector("input.frequency") as HTMLInputElement;
    input.value = "25";
    input.dispatchEvent(new Event("change"));
    await flush();
    expect(state.rows[0]!.frequency_s).toBe(20);
    expect((view.element.querySelector("input.frequency") as HTMLInputElement).value).toBe("20");
    expect(view.element.querySelector(".inline-error")!.textContent).not.toBe("");
  });

  it("rejects a non-positive frequency locally", async () => {
    const state: ServerState = { rows: [agentRow()] };
    const view = await mounted(state);
    const input = view.element.querySelector("input.frequency") as HTMLInputElement;
    input.value = "0";
    input.dispatchEvent(new Event("change"));
    await flush();
    expect(input.value).toBe("20");
    expect(state.rows[0]!.frequency_s).toBe(20);
  });
});
