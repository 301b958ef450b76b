/** Console shell: tab wiring and the live event plumbing. */

import { ApiClient } from "./api.js";
import { AgentsView } from "./agentsTable.js";
import { AlarmPane } from "./alarms.js";
import { ChartsView, ChartStore } from "./charts.js";
import { HostsView } from "./hostsView.js";
import { EventStream, type EventSourceFactory } from "./stream.js";
import { TaskWizard } from "./wizard.js";
import type { ResultRecord } from "./api.js";

export interface AppHandles {
  agents: AgentsView;
  wizard: TaskWizard;
  charts: ChartsView;
  store: ChartStore;
  alarms: AlarmPane;
  hosts: HostsView;
  stream: EventStream;
}

export function mountApp(
  root: HTMLElement,
  api: ApiClient = new ApiClient(""),
  sourceFactory?: EventSourceFactory,
): AppHandles {
  root.innerHTML = `
    <header>
      <h1>patrol console</h1>
      <span class="stream-dot" data-status="stale" title="event stream"></span>
      <nav class="tabs">
        <button data-tab="agents" class="active">Agents</button>
        <button data-tab="tasks">Tasks</button>
        <button data-tab="charts">Charts</button>
        <button data-tab="hosts">Hosts</button>
      </nav>
    </header>
    <main>
      <section data-panel="agents" class="active"></section>
      <section data-panel="tasks"></section>
      <section data-panel="charts"></section>
      <section data-panel="hosts"></section>
    </main>`;

  const agents = new AgentsView(api);
  const wizard = new TaskWizard(api);
  const store = new ChartStore();
  const charts = new ChartsView(store);
  const alarms = new AlarmPane();
  const hosts = new HostsView(api);

  root.querySelector('[data-panel="agents"]')!.appendChild(agents.element);
  root.querySelector('[data-panel="tasks"]')!.appendChild(wizard.element);
  const chartsPanel = root.querySelector('[data-panel="charts"]')!;
  chartsPanel.appendChild(alarms.element);
  chartsPanel.appendChild(charts.element);
  root.querySelector('[data-panel="hosts"]')!.appendChild(hosts.element);

  for (const button of root.querySelectorAll<HTMLButtonElement>(".tabs button")) {
    button.addEventListener("click", () => {
      for (const b of root.querySelectorAll(".tabs button")) b.classList.remove("active");
      for (const p of root.querySelectorAll("main section")) p.classList.remove("active");
      button.classList.add("active");
      root.querySelector(`[data-panel="${button.dataset["tab"]}"]`)!.classList.add("active");
      if (button.dataset["tab"] === "hosts") void hosts.refresh();
      if (button.dataset["tab"] === "agents") void agents.refresh();
    });
  }

  const stream = new EventStream(api.streamUrl(), sourceFactory);
  const dot = root.querySelector(".stream-dot") as HTMLElement;
  stream
    .on("result", (record) => {
      store.ingest(record as unknown as ResultRecord);
      charts.refresh();
    })
    .on("alarm", (record) => alarms.raise(record))
    .on("directory", () => void hosts.refresh())
    .onStatus((status) => {
      dot.dataset["status"] = status;
    });
  stream.connect();

  wizard.onCreated = () => void agents.loadHosts();
  void agents.loadHosts().then(() => agents.refresh());
  void hosts.refresh();
  return { agents, wizard, charts, store, alarms, hosts, stream };
}
