// Operator console wiring: one stream connection feeds the header, table,
// chart and alarm panel; every mutation goes out through the API client.

import { ApiClient, ApiError } from "./api.js";
import { StreamClient } from "./stream.js";
import type { StreamState, TickEvent } from "./stream.js";
import { SeriesStore, align, parseTrendsCsv } from "./series.js";
import type { NamedSeries, PointSeries } from "./series.js";
import { countdown, formatValue, hms, pointMeta, speedLabel } from "./format.js";
import type { TempUnit } from "./format.js";
import { validateAttackForm } from "./attackform.js";
import type { AttackFormState } from "./attackform.js";
import { applyPoints, emptyState, noteWrite, rowView } from "./points.js";
import { TrendPlot } from "./plot.js";
import type { AlarmRow, AttackRow, AuditRow } from "./api.js";

const $ = (id: string) => document.getElementById(id)!;

// token can arrive once via ?token=... and then sticks for the browser
const urlToken = new URLSearchParams(location.search).get("token");
if (urlToken) localStorage.setItem("bas-sim-token", urlToken);
const token = localStorage.getItem("bas-sim-token") ?? "";

const api = new ApiClient("");
api.token = token;

const seriesStore = new SeriesStore();
const tableState = emptyState();
const plot = new TrendPlot($("plot"));

let pointIds: string[] = [];
let selected = new Set<string>();
let tempUnit: TempUnit = "C";
let durationS = 86_400;
let lastTick: TickEvent | null = null;
let baseline: Map<string, PointSeries> | null = null;
let attacks: AttackRow[] = [];
let ticks = 0;

// -- header ---------------------------------------------------------------

function renderTick(tick: TickEvent): void {
  $("clock").textContent = hms(tick.sim_time);
  $("speed-now").textContent = tick.paused ? "paused" : speedLabel(tick.speed);
  $("pps").textContent = `${tick.traffic_pps} pkt/s`;
  ($("btn-pause") as HTMLButtonElement).textContent = tick.paused ? "resume" : "pause";
  if (!tick.running) {
    $("banner").textContent = "run finished";
    $("banner").className = "banner done";
  }
}

function renderState(state: StreamState): void {
  const banner = $("banner");
  if (state === "live") {
    banner.className = "banner hidden";
  } else if (lastTick && !lastTick.running) {
    banner.textContent = "run finished";
    banner.className = "banner done";
  } else {
    banner.textContent = state === "stale"
      ? "stream stale, reconnecting"
      : "connecting to simulator";
    banner.className = "banner stale";
  }
}

// -- points table -----------------------------------------------------------

function renderTable(): void {
  const now = Date.now();
  const rows = pointIds.map((id) => {
    const meta = pointMeta(id);
    const view = rowView(tableState, id, now);
    const badge = view.pending ? "pending" : view.quality;
    const warn = view.warn ? ` <span class="warn">no confirmation</span>` : "";
    return `<tr>
      <td><label><input type="checkbox" data-sel="${id}" ${selected.has(id) ? "checked" : ""}> ${meta.name}</label></td>
      <td class="num">${formatValue(view.value, meta.unit, tempUnit)}${warn}</td>
      <td><span class="badge ${badge}">${badge}</span></td>
      <td><button data-write="${id}">write</button></td>
    </tr>`;
  });
  $("points-body").innerHTML = rows.join("");
}

// -- chart ------------------------------------------------------------------

function renderPlot(): void {
  const named: NamedSeries[] = [];
  for (const id of pointIds) {
    if (!selected.has(id)) continue;
    named.push({ label: pointMeta(id).name, data: seriesStore.get(id) });
    const overlay = baseline?.get(id);
    if (overlay) named.push({ label: `${pointMeta(id).name} (baseline)`, data: overlay });
  }
  plot.setData(named.map((s) => s.label), align(named), tempUnit);
}

async function seedHistory(id: string): Promise<void> {
  try {
    const res = await api.trends(id);
    seriesStore.applyHistory(id, res.rows);
    renderPlot();
  } catch {
    // history is a nicety; the stream still fills the chart from now on
  }
}

// -- write dialog -------------------------------------------------------------

const dlg = $("dlg") as HTMLDialogElement;
let dlgPoint = "";

function openWriteDialog(id: string): void {
  dlgPoint = id;
  $("dlg-title").textContent = `${pointMeta(id).name} (${id})`;
  ($("dlg-value") as HTMLInputElement).value = "";
  ($("dlg-priority") as HTMLInputElement).value = "8";
  $("dlg-error").textContent = "";
  dlg.showModal();
}

async function submitWrite(): Promise<void> {
  const valueText = ($("dlg-value") as HTMLInputElement).value.trim();
  const prioText = ($("dlg-priority") as HTMLInputElement).value.trim();
  const value = Number(valueText);
  if (!valueText || !Number.isFinite(value)) {
    $("dlg-error").textContent = "value must be a number (API units)";
    return;
  }
  const priority = prioText ? Number(prioText) : undefined;
  if (priority !== undefined && (!Number.isInteger(priority) || priority < 1 || priority > 16)) {
    $("dlg-error").textContent = "priority must be 1..16";
    return;
  }
  try {
    const res = await api.writePoint(dlgPoint, value, priority);
    if (res.status === "error" || res.status === "timeout") {
      $("dlg-error").textContent = `device ${res.status} on write`;
      return;
    }
    noteWrite(tableState, dlgPoint, value, Date.now());
    dlg.close();
    renderTable();
    void refreshAudit();
  } catch (err) {
    $("dlg-error").textContent = err instanceof ApiError
      ? `${err.status}: ${err.message}` : String(err);
  }
}

// -- alarms -------------------------------------------------------------------

function alarmLine(a: AlarmRow): string {
  const status = a.cleared_s === null
    ? `<span class="badge missing">open</span>`
    : `cleared ${hms(a.cleared_s)}`;
  const peak = a.peak === null ? "" : ` peak ${a.peak.toFixed(2)}`;
  return `<li>${hms(a.onset_s)} ${a.rule} on ${a.point}${peak} ${status}</li>`;
}

async function refreshAlarms(): Promise<void> {
  const res = await api.alarms();
  $("alarm-count").textContent = String(res.open);
  $("alarm-list").innerHTML = res.alarms.slice(-12).reverse().map(alarmLine).join("")
    || "<li class=dim>no alarms</li>";
}

// -- audit ----------------------------------------------------------------------

function auditLine(r: AuditRow): string {
  const value = r.value === null ? "" : ` = ${r.value}`;
  const prio = r.priority === null ? "" : ` @${r.priority}`;
  return `<li>${hms(r.t)} <b>${r.actor}</b> ${r.point}${value}${prio}</li>`;
}

async function refreshAudit(): Promise<void> {
  const res = await api.audit(12);
  $("audit-list").innerHTML = res.rows.reverse().map(auditLine).join("")
    || "<li class=dim>no writes yet</li>";
}

// -- attack console ---------------------------------------------------------------

function readAttackForm(): AttackFormState {
  return {
    kind: ($("atk-kind") as HTMLSelectElement).value as AttackFormState["kind"],
    start: ($("atk-start") as HTMLInputElement).value,
    end: ($("atk-end") as HTMLInputElement).value,
    target_point: ($("atk-point") as HTMLInputElement).value,
    value: ($("atk-value") as HTMLInputElement).value,
    priority: ($("atk-priority") as HTMLInputElement).value,
    target_device: ($("atk-device") as HTMLInputElement).value,
    rate: ($("atk-rate") as HTMLInputElement).value,
    ttl: ($("atk-ttl") as HTMLInputElement).value,
  };
}

function showFieldErrors(errors: Record<string, string>): void {
  for (const field of ["start", "end", "target_point", "value", "priority",
                       "target_device", "rate", "ttl"]) {
    const el = document.getElementById(`err-${field}`);
    if (el) el.textContent = errors[field] ?? "";
  }
}

function syncAttackFields(): void {
  const kind = ($("atk-kind") as HTMLSelectElement).value;
  $("fdi-fields").classList.toggle("hidden", kind !== "fdi");
  $("dos-fields").classList.toggle("hidden", kind !== "device-dos");
  $("rogue-fields").classList.toggle("hidden", kind !== "rogue-register");
}

function attackLine(a: AttackRow): string {
  const sim = lastTick?.sim_time ?? 0;
  let phase: string;
  if (!a.active) phase = `<span class="dim">cancelled</span>`;
  else if (sim < a.start_s) phase = `starts in ${countdown(a.start_s - sim)}`;
  else if (sim < a.end_s) phase = `<b>${countdown(a.end_s - sim)} left</b>`;
  else phase = "done";
  const cancel = a.active && sim < a.end_s
    ? ` <button data-cancel="${a.id}">cancel</button>` : "";
  return `<li>${a.id}: ${a.kind} on ${a.target ?? "-"} ` +
    `[${hms(a.start_s)}..${hms(a.end_s)}] ${phase}${cancel}</li>`;
}

function renderAttacks(): void {
  $("attack-list").innerHTML = attacks.map(attackLine).join("")
    || "<li class=dim>none scheduled</li>";
}

async function refreshAttacks(): Promise<void> {
  attacks = (await api.attacks()).attacks;
  renderAttacks();
}

async function submitAttack(): Promise<void> {
  const form = readAttackForm();
  const result = validateAttackForm(form, durationS);
  showFieldErrors(result.errors as Record<string, string>);
  $("atk-error").textContent = "";
  if (!result.ok || !result.spec) return;
  try {
    await api.launchAttack(result.spec);
    await refreshAttacks();
  } catch (err) {
    $("atk-error").textContent = err instanceof ApiError
      ? `server rejected: ${err.message}` : String(err);
  }
}

// -- stream -----------------------------------------------------------------------

const stream = new StreamClient({
  token: () => api.token,
  onState: renderState,
  onTick: (tick) => {
    lastTick = tick;
    ticks += 1;
    renderTick(tick);
    renderPlot(); // tick cadence keeps the chart moving even between samples
    renderAttacks();
    if (ticks % 20 === 0) {
      void refreshAttacks();
      void refreshAudit();
    }
  },
  onPoints: (ev) => {
    seriesStore.applyPoints(ev.values);
    applyPoints(tableState, ev.values);
    renderTable();
  },
  onAlarm: () => void refreshAlarms(),
});

// -- bootstrap -----------------------------------------------------------------------

async function init(): Promise<void> {
  const sim = await api.sim();
  durationS = sim.duration_s;
  $("scenario").textContent = `${sim.scenario} (${sim.date}, seed ${sim.seed})`;

  const points = await api.points();
  pointIds = points.points.map((p) => p.id);
  const zones = pointIds.filter((id) => /^vav\d+\.analog-input:1$/.test(id));
  selected = new Set(zones.length ? zones : pointIds.slice(0, 3));
  const latest: Record<string, never> = {};
  applyPoints(tableState, Object.fromEntries(points.points.map((p) => [p.id, p.latest])) as typeof latest);
  renderTable();
  for (const id of selected) void seedHistory(id);

  const devices = await api.devices();
  $("device-options").innerHTML = devices.devices
    .map((d) => `<option value="${d.name}">`).join("");

  await refreshAlarms();
  await refreshAudit();
  await refreshAttacks();
  stream.start();
}

// -- events ------------------------------------------------------------------------

$("points-body").addEventListener("click", (ev) => {
  const target = ev.target as HTMLElement;
  const writeId = target.getAttribute("data-write");
  if (writeId) openWriteDialog(writeId);
});

$("points-body").addEventListener("change", (ev) => {
  const target = ev.target as HTMLInputElement;
  const id = target.getAttribute("data-sel");
  if (!id) return;
  if (target.checked) {
    selected.add(id);
    void seedHistory(id);
  } else {
    selected.delete(id);
  }
  renderPlot();
});

$("dlg-ok").addEventListener("click", (ev) => {
  ev.preventDefault();
  void submitWrite();
});
$("dlg-cancel").addEventListener("click", (ev) => {
  ev.preventDefault();
  dlg.close();
});

$("btn-pause").addEventListener("click", () => {
  if (!lastTick) return;
  void (lastTick.paused ? api.resume() : api.pause());
});

$("speed-select").addEventListener("change", () => {
  const raw = ($("speed-select") as HTMLSelectElement).value;
  void api.setSpeed(raw === "max" ? "max" : Number(raw));
});

$("atk-kind").addEventListener("change", syncAttackFields);
$("atk-submit").addEventListener("click", (ev) => {
  ev.preventDefault();
  void submitAttack();
});

$("attack-list").addEventListener("click", (ev) => {
  const id = (ev.target as HTMLElement).getAttribute("data-cancel");
  if (!id) return;
  api.cancelAttack(id).then(refreshAttacks).catch((err) => {
    $("atk-error").textContent = err instanceof ApiError ? err.message : String(err);
  });
});

$("baseline-file").addEventListener("change", async () => {
  const input = $("baseline-file") as HTMLInputElement;
  const file = input.files?.[0];
  if (!file) {
    baseline = null;
  } else {
    baseline = parseTrendsCsv(await file.text());
    $("baseline-name").textContent = file.name;
  }
  renderPlot();
});

for (const unit of ["C", "F"] as const) {
  $(`unit-${unit}`).addEventListener("change", () => {
    tempUnit = unit;
    renderTable();
    renderPlot();
  });
}

window.addEventListener("resize", () => plot.resize());

void init().catch((err) => {
  $("banner").textContent = err instanceof ApiError && err.status === 401
    ? "unauthorized: open with ?token=... matching BAS_SIM_TOKEN"
    : `cannot reach simulator API: ${err}`;
  $("banner").className = "banner stale";
});
