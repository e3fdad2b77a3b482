// Server-sent events over a plain fetch so the auth header can ride along
// (EventSource cannot set headers). One connection; drops reconnect with
// backoff and a visible stale state while the gap lasts.

import type { LatestSample, Speed } from "./api.js";

export interface TickEvent {
  sim_time: number;
  speed: Speed;
  running: boolean;
  paused: boolean;
  traffic_pps: number;
}

export interface PointsEvent {
  values: Record<string, LatestSample | null>;
}

export interface AlarmStreamEvent {
  what: string; // raised | cleared
  rule: string;
  point: string;
  onset_s: number;
  cleared_s: number | null;
  peak: number | null;
}

export interface SseEvent {
  event: string;
  data: string;
}

/** Incremental text/event-stream splitter; chunks may cut events anywhere. */
export class SseParser {
  private buf = "";

  push(chunk: string): SseEvent[] {
    this.buf += chunk;
    const out: SseEvent[] = [];
    let idx: number;
    while ((idx = this.buf.indexOf("\n\n")) >= 0) {
      const block = this.buf.slice(0, idx);
      this.buf = this.buf.slice(idx + 2);
      let event = "message";
      const data: string[] = [];
      for (const line of block.split("\n")) {
        if (line.startsWith("event:")) event = line.slice(6).trim();
        else if (line.startsWith("data:")) data.push(line.slice(5).trimStart());
        // comment lines and unknown fields fall through per the SSE spec
      }
      if (data.length) out.push({ event, data: data.join("\n") });
    }
    return out;
  }
}

export type StreamState = "connecting" | "live" | "stale" | "closed";

export interface StreamOptions {
  base?: string;
  token?: () => string;
  fetchFn?: (url: string, init?: RequestInit) => Promise<Response>;
  staleMs?: number; // banner threshold, default 5000
  retryMs?: number; // initial backoff, default 1000
  onTick?: (tick: TickEvent) => void;
  onPoints?: (points: PointsEvent) => void;
  onAlarm?: (alarm: AlarmStreamEvent) => void;
  onState?: (state: StreamState) => void;
}

export class StreamClient {
  state: StreamState = "closed";
  private opts: StreamOptions;
  private stopped = false;
  private lastEventAt = 0;
  private watchdog: ReturnType<typeof setInterval> | null = null;
  private abort: AbortController | null = null;

  constructor(opts: StreamOptions) {
    this.opts = opts;
  }

  start(): void {
    this.stopped = false;
    this.lastEventAt = Date.now();
    this.watchdog = setInterval(() => this.checkStale(), 1000);
    void this.run();
  }

  stop(): void {
    this.stopped = true;
    if (this.watchdog !== null) clearInterval(this.watchdog);
    this.watchdog = null;
    this.abort?.abort();
    this.setState("closed");
  }

  private setState(state: StreamState): void {
    if (state === this.state) return;
    this.state = state;
    this.opts.onState?.(state);
  }

  private checkStale(): void {
    if (this.stopped || this.state === "closed") return;
    const staleMs = this.opts.staleMs ?? 5000;
    if (Date.now() - this.lastEventAt > staleMs) this.setState("stale");
  }

  private async run(): Promise<void> {
    let backoff = this.opts.retryMs ?? 1000;
    while (!this.stopped) {
      this.setState("connecting");
      try {
        await this.consume();
        backoff = this.opts.retryMs ?? 1000; // stream ended cleanly, reset
      } catch {
        // connection refused or dropped mid-read; retry below
      }
      if (this.stopped) return;
      this.setState("stale");
      await new Promise((r) => setTimeout(r, backoff));
      backoff = Math.min(backoff * 2, 10_000);
    }
  }

  private async consume(): Promise<void> {
    const fetchFn = this.opts.fetchFn ?? ((url: string, init?: RequestInit) => fetch(url, init));
    const headers: Record<string, string> = {};
    const token = this.opts.token?.();
    if (token) headers["Authorization"] = `Bearer ${token}`;
    this.abort = new AbortController();
    const res = await fetchFn((this.opts.base ?? "") + "/api/stream", {
      headers,
      signal: this.abort.signal,
    });
    if (!res.ok || !res.body) throw new Error(`stream HTTP ${res.status}`);
    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      for (const ev of parser.push(decoder.decode(value, { stream: true }))) {
        this.lastEventAt = Date.now();
        this.setState("live");
        this.dispatch(ev);
      }
    }
  }

  private dispatch(ev: SseEvent): void {
    let payload: unknown;
    try {
      payload = JSON.parse(ev.data);
    } catch {
      return; // garbage frame, skip
    }
    if (ev.event === "tick") this.opts.onTick?.(payload as TickEvent);
    else if (ev.event === "points") this.opts.onPoints?.(payload as PointsEvent);
    else if (ev.event === "alarm") this.opts.onAlarm?.(payload as AlarmStreamEvent);
  }
}
