/**
 * Server-push event stream with automatic reconnect.
 *
 * Wraps EventSource; on stream loss the status callback flips to "stale"
 * (views show the stale-data indicator) and reconnection retries with
 * exponential backoff, resetting once the stream is live again.
 */

export type StreamEvent = "result" | "alarm" | "directory" | "dispatch";
export type StreamStatus = "live" | "stale";

// Loose enough that both the DOM EventSource and test fakes satisfy it.
type EventSourceLike = {
  addEventListener(type: string, listener: (ev: { data: string }) => void): void;
  close(): void;
  onopen: ((this: never, ev: never) => unknown) | null;
  onerror: ((this: never, ev: never) => unknown) | null;
};

export type EventSourceFactory = (url: string) => EventSourceLike;

const EVENT_NAMES: StreamEvent[] = ["result", "alarm", "directory", "dispatch"];

export class EventStream {
  private source: EventSourceLike | null = null;
  private handlers = new Map<StreamEvent, ((data: Record<string, unknown>) => void)[]>();
  private statusHandlers: ((status: StreamStatus) => void)[] = [];
  private retries = 0;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;

  constructor(
    private url: string,
    private factory: EventSourceFactory = (u) => new EventSource(u),
    private baseDelayMs = 500,
    private maxDelayMs = 10_000,
  ) {}

  on(event: StreamEvent, handler: (data: Record<string, unknown>) => void): this {
    const list = this.handlers.get(event) ?? [];
    list.push(handler);
    this.handlers.set(event, list);
    return this;
  }

  onStatus(handler: (status: StreamStatus) => void): this {
    this.statusHandlers.push(handler);
    return this;
  }

  connect(): void {
    if (this.closed) return;
    this.source = this.factory(this.url);
    for (const name of EVENT_NAMES) {
      this.source.addEventListener(name, (ev) => this.dispatch(name, ev));
    }
    this.source.onopen = () => {
      this.retries = 0;
      this.emitStatus("live");
    };
    this.source.onerror = () => this.handleLoss();
  }

  private dispatch(name: StreamEvent, ev: { data: string }): void {
    let data: Record<string, unknown>;
    try {
      data = JSON.parse(ev.data);
    } catch {
      return;
    }
    for (const handler of this.handlers.get(name) ?? []) {
      handler(data);
    }
  }

  private handleLoss(): void {
    if (this.closed) return;
    this.emitStatus("stale");
    this.source?.close();
    this.source = null;
    const delay = Math.min(this.baseDelayMs * 2 ** this.retries, this.maxDelayMs);
    this.retries += 1;
    this.timer = setTimeout(() => this.connect(), delay);
  }

  get retryCount(): number {
    return this.retries;
  }

  private emitStatus(status: StreamStatus): void {
    for (const handler of this.statusHandlers) {
      handler(status);
    }
  }

  close(): void {
    this.closed = true;
    if (this.timer) clearTimeout(this.timer);
    this.source?.close();
    this.source = null;
  }
}
