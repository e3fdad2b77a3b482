// Display-side formatting. The API speaks SI; Fahrenheit exists only here.

export type TempUnit = "C" | "F";

export function cToF(c: number): number {
  return c * 9 / 5 + 32;
}

export function fToC(f: number): number {
  return (f - 32) * 5 / 9;
}

export function hms(seconds: number): string {
  const s = Math.max(0, Math.floor(seconds));
  const h = Math.floor(s / 3600);
  const m = Math.floor((s % 3600) / 60);
  const sec = s % 60;
  const pad = (n: number) => String(n).padStart(2, "0");
  return `${pad(h)}:${pad(m)}:${pad(sec)}`;
}

/** Short mm:ss countdown for the attack list. */
export function countdown(seconds: number): string {
  const s = Math.max(0, Math.ceil(seconds));
  return `${Math.floor(s / 60)}:${String(s % 60).padStart(2, "0")}`;
}

export function speedLabel(speed: number | "max"): string {
  if (speed === "max") return "max speed";
  if (speed === 1) return "real time";
  return `${speed}x`;
}

export interface PointMeta {
  name: string;
  unit: string; // degC | kg/s | frac
}

const POINT_NAMES: Record<string, PointMeta> = {
  "ahu.analog-input:1": { name: "AHU supply air temp", unit: "degC" },
  "ahu.analog-value:1": { name: "AHU SAT setpoint", unit: "degC" },
  "ahu.analog-output:1": { name: "AHU cooling valve", unit: "frac" },
  "ahu.analog-output:2": { name: "AHU outdoor air damper", unit: "frac" },
  "chiller.analog-input:1": { name: "CHW supply temp", unit: "degC" },
  "chiller.analog-value:1": { name: "CHW setpoint", unit: "degC" },
};

export function pointMeta(id: string): PointMeta {
  const known = POINT_NAMES[id];
  if (known) return known;
  const vav = id.match(/^vav(\d+)\.analog-input:(\d)$/);
  if (vav) {
    return vav[2] === "1"
      ? { name: `VAV ${vav[1]} zone temp`, unit: "degC" }
      : { name: `VAV ${vav[1]} airflow`, unit: "kg/s" };
  }
  return { name: id, unit: "" };
}

/** Format a value for the table: temps honor the unit toggle, rest are SI. */
export function formatValue(value: number | null, unit: string, temps: TempUnit): string {
  if (value === null) return "--";
  if (unit === "degC") {
    const v = temps === "F" ? cToF(value) : value;
    return `${v.toFixed(1)} ${temps === "F" ? "°F" : "°C"}`;
  }
  if (unit === "frac") return `${(value * 100).toFixed(0)} %`;
  if (unit === "kg/s") return `${value.toFixed(2)} kg/s`;
  return value.toFixed(2);
}
