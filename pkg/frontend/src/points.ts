// Point-table view model, kept free of DOM so the reconcile rules are
// testable: a write is shown optimistically, then the next fresh sample for
// that point wins. A write the device never acknowledges turns into a
// warning instead of lingering as fake state.

import type { LatestSample } from "./api.js";

export const WRITE_WARN_AFTER_MS = 10_000;

export interface PendingWrite {
  value: number;
  sentAtWallMs: number;
  sampleT: number; // latest sample time when the write left
}

export interface PointViewState {
  latest: Record<string, LatestSample | null>;
  pending: Map<string, PendingWrite>;
}

export function emptyState(): PointViewState {
  return { latest: {}, pending: new Map() };
}

/** New stream payload: adopt samples, clear pendings their sample outdates. */
export function applyPoints(
  state: PointViewState,
  values: Record<string, LatestSample | null>,
): void {
  for (const [id, sample] of Object.entries(values)) {
    const prev = state.latest[id];
    state.latest[id] = sample;
    const pending = state.pending.get(id);
    if (pending && sample && sample.t > pending.sampleT) {
      state.pending.delete(id);
    } else if (!prev && sample) {
      state.pending.delete(id);
    }
  }
}

export function noteWrite(state: PointViewState, id: string, value: number, nowMs: number): void {
  const sample = state.latest[id];
  state.pending.set(id, {
    value,
    sentAtWallMs: nowMs,
    sampleT: sample ? sample.t : -Infinity,
  });
}

export interface RowView {
  value: number | null;
  quality: string; // ok | missing | stale
  pending: boolean;
  warn: boolean; // write unconfirmed past the deadline
}

export function rowView(state: PointViewState, id: string, nowMs: number): RowView {
  const sample = state.latest[id] ?? null;
  const pending = state.pending.get(id);
  if (pending) {
    return {
      value: pending.value,
      quality: sample ? sample.quality : "stale",
      pending: true,
      warn: nowMs - pending.sentAtWallMs > WRITE_WARN_AFTER_MS,
    };
  }
  if (!sample) return { value: null, quality: "stale", pending: false, warn: false };
  return { value: sample.value, quality: sample.quality, pending: false, warn: false };
}
