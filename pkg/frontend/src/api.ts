// Typed client for the simulator's HTTP API. Reads go out as plain fetches;
// mutations are serialized through a promise queue so rapid operator clicks
// cannot interleave on the wire.

export type Speed = number | "max";

export interface SimStatus {
  scenario: string;
  date: string;
  seed: string;
  sim_time: number;
  duration_s: number;
  speed: Speed;
  running: boolean;
  paused: boolean;
  traffic_pps: number;
  packets: number;
}

export interface DeviceRow {
  name: string;
  instance: number;
  network: number;
  station: number;
  online: boolean;
  last_seen: number | null;
}

export interface LatestSample {
  t: number;
  value: number | null;
  quality: string;
}

export interface PointRow {
  id: string;
  latest: LatestSample | null;
}

export interface AlarmRow {
  rule: string;
  point: string;
  onset_s: number;
  cleared_s: number | null;
  peak: number | null;
}

export interface AuditRow {
  t: number;
  actor: string;
  point: string;
  value: number | null;
  priority: number | null;
}

export interface AttackRow {
  id: string;
  kind: string;
  target: string | null;
  start_s: number;
  end_s: number;
  active: boolean;
}

export interface WriteResult {
  point: string;
  value: number;
  priority: number;
  status: string; // pending | ok | error | timeout
}

export type TrendRow = [number, number | null, string];

export class ApiError extends Error {
  status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.status = status;
  }
}

type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  token = "";
  private base: string;
  private fetchFn: FetchFn;
  private queue: Promise<unknown> = Promise.resolve();

  constructor(base = "", fetchFn?: FetchFn) {
    this.base = base;
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  headers(): Record<string, string> {
    const h: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) h["Authorization"] = `Bearer ${this.token}`;
    return h;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(this.base + path, {
      ...init,
      headers: this.headers(),
    });
    const text = await res.text();
    if (!res.ok) {
      let detail = text || res.statusText;
      try {
        const body = JSON.parse(text);
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body, keep raw text
      }
      throw new ApiError(res.status, detail);
    }
    return JSON.parse(text) as T;
  }

  // one mutation on the wire at a time, in click order
  private mutate<T>(path: string, init: RequestInit): Promise<T> {
    const job = () => this.request<T>(path, init);
    const next = this.queue.then(job, job);
    this.queue = next.catch(() => undefined);
    return next;
  }

  sim(): Promise<SimStatus> {
    return this.request("/api/sim");
  }

  pause(): Promise<{ paused: boolean }> {
    return this.mutate("/api/sim/pause", { method: "POST" });
  }

  resume(): Promise<{ paused: boolean }> {
    return this.mutate("/api/sim/resume", { method: "POST" });
  }

  setSpeed(multiplier: Speed): Promise<{ speed: Speed }> {
    return this.mutate("/api/sim/speed", {
      method: "POST",
      body: JSON.stringify({ multiplier }),
    });
  }

  devices(): Promise<{ devices: DeviceRow[] }> {
    return this.request("/api/devices");
  }

  points(): Promise<{ points: PointRow[] }> {
    return this.request("/api/points");
  }

  trends(id: string, from?: number, to?: number): Promise<{ point: string; rows: TrendRow[] }> {
    const q = new URLSearchParams();
    if (from !== undefined) q.set("from", String(from));
    if (to !== undefined) q.set("to", String(to));
    const suffix = q.toString() ? `?${q}` : "";
    return this.request(`/api/trends/${encodeURIComponent(id)}${suffix}`);
  }

  writePoint(id: string, value: number, priority?: number): Promise<WriteResult> {
    const body: Record<string, unknown> = { value };
    if (priority !== undefined) body.priority = priority;
    return this.mutate(`/api/points/${encodeURIComponent(id)}/write`, {
      method: "POST",
      body: JSON.stringify(body),
    });
  }

  alarms(): Promise<{ alarms: AlarmRow[]; open: number }> {
    return this.request("/api/alarms");
  }

  audit(limit = 50): Promise<{ rows: AuditRow[]; total: number }> {
    return this.request(`/api/audit?limit=${limit}`);
  }

  attacks(): Promise<{ attacks: AttackRow[] }> {
    return this.request("/api/attacks");
  }

  launchAttack(spec: Record<string, unknown>): Promise<{ ids: string[] }> {
    return this.mutate("/api/attacks", {
      method: "POST",
      body: JSON.stringify(spec),
    });
  }

  cancelAttack(id: string): Promise<{ cancelled: string }> {
    return this.mutate(`/api/attacks/${encodeURIComponent(id)}`, {
      method: "DELETE",
    });
  }
}
