import { vi } from "vitest";

export type Route = {
  method: string;
  pattern: RegExp;
  handler: (match: RegExpMatchArray, body: unknown) => { status?: number; body: unknown };
};

export interface FetchLogEntry {
  method: string;
  path: string;
  body: unknown;
}

/** Install a fetch mock backed by a route table; returns the call log. */
export function mockFetch(routes: Route[]): FetchLogEntry[] {
  const log: FetchLogEntry[] = [];
  vi.stubGlobal(
    "fetch",
    vi.fn(async (url: string, init?: RequestInit) => {
      const method = init?.method ?? "GET";
      const path = url.toString();
      const body = init?.body ? JSON.parse(init.body as string) : undefined;
      log.push({ method, path, body });
      for (const route of routes) {
        const match = path.match(route.pattern);
        if (match && route.method === method) {
          const out = route.handler(match, body);
          const status = out.status ?? 200;
          return {
            ok: status < 400,
            status,
            // Deep copy: real HTTP serializes, so the client can never alias
            // the mock server's state objects.
            json: async () => structuredClone(out.body),
          } as Response;
        }
      }
      return { ok: false, status: 404, json: async () => ({ error: "NO_SUCH_ENDPOINT" }) } as Response;
    }),
  );
  return log;
}

type Listener = (ev: { data: string }) => void;

export class FakeEventSource {
  static instances: FakeEventSource[] = [];
  listeners = new Map<string, Listener[]>();
  onopen: ((ev: unknown) => void) | null = null;
  onerror: ((ev: unknown) => void) | null = null;
  closed = false;

  constructor(public url: string) {
    FakeEventSource.instances.push(this);
  }

  static reset(): void {
    FakeEventSource.instances = [];
  }

  static latest(): FakeEventSource {
    return FakeEventSource.instances[FakeEventSource.instances.length - 1]!;
  }

  addEventListener(type: string, listener: Listener): void {
    const list = this.listeners.get(type) ?? [];
    list.push(listener);
    this.listeners.set(type, list);
  }

  close(): void {
    this.closed = true;
  }

  open(): void {
    this.onopen?.({});
  }

  fail(): void {
    this.onerror?.({});
  }

  emit(type: string, data: unknown): void {
    for (const listener of this.listeners.get(type) ?? []) {
      listener({ data: JSON.stringify(data) });
    }
  }
}

export function agentRow(overrides: Partial<Record<string, unknown>> = {}) {
  return {
    id: "127.0.0.1:7700:1",
    class_name: "uptimePoll",
    class_version: 1,
    poll_mode: "periodic",
    frequency_s: 20,
    authentication: true,
    encrypt: false,
    arrival_time: 1000,
    status: "active",
    priority: 5,
    host: "127.0.0.1:7711",
    ...overrides,
  };
}

export function resultRecord(overrides: Partial<Record<string, unknown>> = {}) {
  return {
    task: "uptimePoll",
    round: 0,
    agent_id: "m:1",
    host: "127.0.0.1:7711",
    timestamp: 1000,
    kind: "values",
    data: { values: [["1.3.6.1.2.1.1.3.0", 100]] },
    ...overrides,
  };
}
