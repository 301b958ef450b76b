/**
 * Live agents table: the per-device profiling view.
 *
 * Columns: ID, class, poll mode, frequency, authentication, encryption,
 * status.  The status decides which action buttons are live (a suspended
 * agent offers Resume/Activate, an active one Suspend), so every control
 * action is one click once a host is selected.  Frequency edits and action
 * clicks apply optimistically and roll back on API errors; after any
 * action the rows are refetched so the table always tracks the server.
 */

import { ApiClient, ApiError, type AgentRow } from "./api.js";

export const AGENT_COLUMNS = [
  "ID",
  "Agent Class Name",
  "Pol. Mode",
  "Pol. Frequency",
  "Authentication",
  "Encryption",
  "Status",
  "Actions",
] as const;

type Action = "suspend" | "resume" | "activate";

const ENABLED_WHEN: Record<Action, (status: string) => boolean> = {
  suspend: (s) => s === "active",
  resume: (s) => s === "suspended",
  activate: (s) => s !== "active",
};

export class AgentsView {
  readonly element: HTMLElement;
  private host = "";
  private rows: AgentRow[] = [];

  constructor(private api: ApiClient) {
    this.element = document.createElement("div");
    this.element.className = "agents-view";
    this.element.innerHTML = `
      <div class="toolbar">
        <label>host <select class="host-select"></select></label>
        <button class="refresh">refresh</button>
        <span class="inline-error" role="alert"></span>
      </div>
      <table class="agents-table">
        <thead><tr>${AGENT_COLUMNS.map((c) => `<th>${c}</th>`).join("")}</tr></thead>
        <tbody></tbody>
      </table>`;
    this.element.querySelector(".refresh")!.addEventListener("click", () => void this.refresh());
    this.element
      .querySelector(".host-select")!
      .addEventListener("change", (ev) => {
        this.host = (ev.target as HTMLSelectElement).value;
        void this.refresh();
      });
  }

  async loadHosts(): Promise<void> {
    const hosts = await this.api.hosts();
    const select = this.element.querySelector(".host-select") as HTMLSelectElement;
    select.innerHTML = hosts
      .map((h) => `<option value="${h.host_id}">${h.host_id} (${h.state})</option>`)
      .join("");
    if (!this.host && hosts.length) {
      this.host = hosts[0]!.host_id;
    }
  }

  async refresh(): Promise<void> {
    if (!this.host) return;
    this.rows = await this.api.agents(this.host);
    this.renderRows();
  }

  private setError(message: string): void {
    this.element.querySelector(".inline-error")!.textContent = message;
  }

  private renderRows(): void {
    const tbody = this.element.querySelector("tbody")!;
    tbody.innerHTML = "";
    for (const row of this.rows) {
      tbody.appendChild(this.renderRow(row));
    }
  }

  private renderRow(row: AgentRow): HTMLTableRowElement {
    const tr = document.createElement("tr");
    tr.dataset["agentId"] = row.id;
    tr.dataset["status"] = row.status;

    const cells = [
      row.id,
      row.class_name,
      row.poll_mode,
      null, // frequency input below
      row.authentication ? "✓" : "✗",
      row.encrypt ? "✓" : "✗",
      row.status,
    ];
    for (const value of cells) {
      const td = document.createElement("td");
      if (value === null) {
        td.appendChild(this.frequencyEditor(row));
      } else {
        td.textContent = String(value);
      }
      tr.appendChild(td);
    }

    const actions = document.createElement("td");
    for (const action of ["suspend", "resume", "activate"] as Action[]) {
      const button = document.createElement("button");
      button.textContent = action;
      button.className = `action-${action}`;
      button.disabled = !ENABLED_WHEN[action](row.status);
      button.addEventListener("click", () => void this.runAction(row, action, tr));
      actions.appendChild(button);
    }
    tr.appendChild(actions);
    return tr;
  }

  private frequencyEditor(row: AgentRow): HTMLInputElement {
    const input = document.createElement("input");
    input.type = "number";
    input.min = "1";
    input.className = "frequency";
    input.value = String(row.frequency_s);
    input.addEventListener("change", () => void this.applyFrequency(row, input));
    return input;
  }

  private async applyFrequency(row: AgentRow, input: HTMLInputElement): Promise<void> {
    const previous = row.frequency_s;
    const wanted = Number(input.value);
    if (!Number.isInteger(wanted) || wanted < 1) {
      input.value = String(previous);
      this.setError("frequency must be a positive whole number of seconds");
      return;
    }
    row.frequency_s = wanted; // optimistic
    this.setError("");
    try {
      await this.api.setFrequency(row.class_name, wanted);
      await this.refresh();
    } catch (err) {
      row.frequency_s = previous; // rollback
      input.value = String(previous);
      this.setError(err instanceof Error ? err.message : String(err));
      await this.refresh();
    }
  }

  private async runAction(row: AgentRow, action: Action, tr: HTMLTableRowElement): Promise<void> {
    const previous = row.status;
    row.status = { suspend: "suspended", resume: "active", activate: "active" }[action];
    tr.dataset["status"] = row.status;
    this.setError("");
    try {
      await this.api.agentAction(this.host, row.id, action);
      await this.refresh();
    } catch (err) {
      row.status = previous; // rollback, then resync with the server
      this.setError(err instanceof ApiError ? err.message : String(err));
      await this.refresh();
    }
  }
}
