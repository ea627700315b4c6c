/** Server-sent events over a streaming fetch, resubscribed with backoff.
 *
 * EventSource would handle reconnects natively, but reading the stream by
 * hand lets tests inject fetch and lets stop() tear the socket down
 * deterministically. One instance == one subscription.
 */

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export interface EventStreamOptions {
  fetchFn?: FetchLike;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
  onStateChange?: (connected: boolean) => void;
}

/** Incremental text/event-stream decoder. Feed chunks, get data payloads.
 * Comment-only blocks (keep-alives) produce nothing. */
export class SseParser {
  private buffer = "";

  feed(chunk: string): string[] {
    this.buffer += chunk;
    const out: string[] = [];
    for (;;) {
      const cut = this.buffer.indexOf("\n\n");
      if (cut < 0) break;
      const block = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const data = block
        .split("\n")
        .filter((line) => line.startsWith("data:"))
        .map((line) => line.slice(5).replace(/^ /, ""));
      if (data.length > 0) out.push(data.join("\n"));
    }
    return out;
  }
}

export class EventStream<T> {
  /** Sockets opened so far; grows by one per (re)connect. */
  connections = 0;
  private stopped = true;
  private controller: AbortController | null = null;

  constructor(
    private readonly url: string,
    private readonly onEvent: (event: T) => void,
    private readonly opts: EventStreamOptions = {},
  ) {}

  get running(): boolean {
    return !this.stopped;
  }

  start(): void {
    if (!this.stopped) return;
    this.stopped = false;
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    const fetchFn: FetchLike =
      this.opts.fetchFn ?? ((input, init) => globalThis.fetch(input, init));
    const initial = this.opts.initialBackoffMs ?? 500;
    const max = this.opts.maxBackoffMs ?? 8000;
    let backoff = initial;

    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const res = await fetchFn(this.url, {
          signal: this.controller.signal,
          headers: { accept: "text/event-stream" },
        });
        if (!res.ok || !res.body) throw new Error(`stream returned ${res.status}`);
        this.connections += 1;
        this.opts.onStateChange?.(true);
        const parser = new SseParser();
        const reader = res.body.getReader();
        const decoder = new TextDecoder();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const payload of parser.feed(decoder.decode(value, { stream: true }))) {
            backoff = initial; // events flowing, reset the clock
            this.onEvent(JSON.parse(payload) as T);
          }
        }
      } catch {
        // connection refused, aborted, or mid-stream failure; retry below
      }
      this.opts.onStateChange?.(false);
      if (this.stopped) break;
      await new Promise((resolve) => setTimeout(resolve, backoff));
      backoff = Math.min(backoff * 2, max);
    }
  }
}
