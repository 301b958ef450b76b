/** Server directory, per-host load, and the planner's topology. */

import { ApiClient } from "./api.js";

export class HostsView {
  readonly element: HTMLElement;

  constructor(private api: ApiClient) {
    this.element = document.createElement("div");
    this.element.className = "hosts-view";
    this.element.innerHTML = `
      <table class="hosts-table">
        <thead><tr>
          <th>Host</th><th>Class</th><th>State</th><th>CPU %</th><th>Mem</th><th>Bundles</th><th></th>
        </tr></thead>
        <tbody></tbody>
      </table>
      <pre class="topology"></pre>`;
  }

  async refresh(): Promise<void> {
    const [hosts, topo] = await Promise.all([this.api.hosts(), this.api.topology()]);
    const tbody = this.element.querySelector("tbody")!;
    tbody.innerHTML = "";
    for (const entry of hosts) {
      const tr = document.createElement("tr");
      tr.dataset["state"] = entry.state;
      tr.innerHTML = `
        <td>${entry.host_id}</td>
        <td>${entry.device_class || "-"}</td>
        <td class="state-${entry.state.toLowerCase()}">${entry.state}</td>
        <td>${entry.load.cpu_percent.toFixed(1)}</td>
        <td>${(entry.load.mem_bytes_used / (1024 * 1024)).toFixed(1)} MiB</td>
        <td>${entry.bundles.map((b) => `${b.name}@${b.version}`).join(", ") || "-"}</td>`;
      const td = document.createElement("td");
      const button = document.createElement("button");
      button.textContent = "sample load";
      button.addEventListener("click", () => {
        void this.api.hostLoad(entry.host_id).then((load) => {
          tr.cells[3]!.textContent = load.cpu_percent.toFixed(1);
          tr.cells[4]!.textContent = (load.mem_bytes_used / (1024 * 1024)).toFixed(1) + " MiB";
        });
      });
      td.appendChild(button);
      tr.appendChild(td);
      tbody.appendChild(tr);
    }
    const lines = [
      `manager: ${topo.manager}`,
      ...topo.edges.map((e) => `${e.a} -- ${e.b}  cost ${e.cost}`),
    ];
    this.element.querySelector(".topology")!.textContent = lines.join("\n");
  }
}
