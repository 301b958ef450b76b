/**
 * Typed client for the manager console API.
 *
 * Every request goes through one of the documented endpoints below; the
 * contract test walks this table against the client's methods so the
 * console can never quietly grow an undocumented call.
 */

export const API_CONTRACT: ReadonlyArray<readonly [string, string]> = [
  ["GET", "/hosts"],
  ["GET", "/hosts/{host}/agents"],
  ["POST", "/hosts/{host}/agents/{id}/suspend"],
  ["POST", "/hosts/{host}/agents/{id}/resume"],
  ["POST", "/hosts/{host}/agents/{id}/activate"],
  ["GET", "/hosts/{host}/load"],
  ["GET", "/tasks"],
  ["POST", "/tasks"],
  ["PATCH", "/tasks/{name}/frequency"],
  ["GET", "/tasks/{name}/results"],
  ["GET", "/topology"],
  ["GET", "/stream"],
];

export interface AgentRow {
  id: string;
  class_name: string;
  class_version: number;
  poll_mode: string;
  frequency_s: number;
  authentication: boolean;
  encrypt: boolean;
  arrival_time: number;
  status: string;
  priority: number;
  host: string;
}

export interface HostEntry {
  host_id: string;
  host: string;
  port: number;
  device_class: string;
  state: string;
  last_announce: number;
  load: { cpu_percent: number; mem_bytes_used: number; sampled_at: number };
  bundles: { name: string; version: number; digest: string }[];
}

export interface TaskEntry {
  name: string;
  version: number;
  service_type: string;
  poll_mode: string;
  frequency_s: number;
  encrypt: boolean;
  device_class: string;
  oids: string[];
  priority: number;
  enabled: boolean;
  round: number;
  routes: string[][];
}

export interface ResultRecord {
  task: string;
  round: number;
  agent_id: string;
  host: string;
  timestamp: number;
  kind: string;
  data: Record<string, unknown>;
}

export interface TaskForm {
  name: string;
  service_type: string;
  oids: string[];
  filter?: { column: number; comparator: string; constant: number | string };
  threshold?: { expression: string; comparator: string; limit: number };
  poll_mode: string;
  frequency_s?: number;
  encrypt: boolean;
  device_class: string;
  priority?: number;
}

export interface CreateTaskResult {
  name: string;
  version: number;
  distributed: string[];
  failed: string[];
  warning?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: Record<string, unknown>,
  ) {
    super(`${body["error"] ?? status}: ${body["detail"] ?? ""}`);
  }
}

export class ApiClient {
  constructor(private base: string = "") {}

  private async request<T>(
    method: string,
    template: string,
    subs: Record<string, string> = {},
    body?: unknown,
    query?: Record<string, string>,
  ): Promise<T> {
    if (!API_CONTRACT.some(([m, t]) => m === method && t === template)) {
      throw new Error(`undocumented endpoint: ${method} ${template}`);
    }
    let path = template;
    for (const [key, value] of Object.entries(subs)) {
      path = path.replace(`{${key}}`, encodeURIComponent(value));
    }
    if (query && Object.keys(query).length) {
      path += "?" + new URLSearchParams(query).toString();
    }
    const resp = await fetch(this.base + path, {
      method,
      headers: body !== undefined ? { "Content-Type": "application/json" } : {},
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    let parsed: unknown = null;
    try {
      parsed = await resp.json();
    } catch {
      parsed = {};
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, (parsed ?? {}) as Record<string, unknown>);
    }
    return parsed as T;
  }

  hosts(): Promise<HostEntry[]> {
    return this.request("GET", "/hosts");
  }

  agents(host: string): Promise<AgentRow[]> {
    return this.request("GET", "/hosts/{host}/agents", { host });
  }

  agentAction(host: string, id: string, action: "suspend" | "resume" | "activate") {
    return this.request<Record<string, unknown>>(
      "POST",
      `/hosts/{host}/agents/{id}/${action}`,
      { host, id },
    );
  }

  hostLoad(host: string): Promise<HostEntry["load"]> {
    return this.request("GET", "/hosts/{host}/load", { host });
  }

  tasks(): Promise<TaskEntry[]> {
    return this.request("GET", "/tasks");
  }

  createTask(form: TaskForm): Promise<CreateTaskResult> {
    return this.request("POST", "/tasks", {}, form);
  }

  setFrequency(name: string, seconds: number) {
    return this.request<{ name: string; frequency_s: number }>(
      "PATCH",
      "/tasks/{name}/frequency",
      { name },
      { seconds },
    );
  }

  results(name: string, opts: { since?: number; host?: string } = {}): Promise<ResultRecord[]> {
    const query: Record<string, string> = {};
    if (opts.since !== undefined) query["since"] = String(opts.since);
    if (opts.host !== undefined) query["host"] = opts.host;
    return this.request("GET", "/tasks/{name}/results", { name }, undefined, query);
  }

  topology(): Promise<{ manager: string; nodes: string[]; edges: { a: string; b: string; cost: number }[] }> {
    return this.request("GET", "/topology");
  }

  streamUrl(): string {
    return this.base + "/stream";
  }
}
