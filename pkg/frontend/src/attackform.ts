// Attack launch form model. Validation mirrors the server's schema so most
// mistakes are caught before the POST; the server stays the authority and its
// 400/409 details are rendered when something slips through (overlap windows
// need run state the client does not have).

export interface AttackFormState {
  kind: "fdi" | "device-dos" | "rogue-register";
  start: string;
  end: string;
  target_point: string;
  value: string;
  priority: string;
  target_device: string;
  rate: string;
  ttl: string;
}

export const EMPTY_FORM: AttackFormState = {
  kind: "fdi",
  start: "",
  end: "",
  target_point: "ahu.analog-value:1",
  value: "95F",
  priority: "",
  target_device: "ahu",
  rate: "1.0",
  ttl: "",
};

export interface FormResult {
  ok: boolean;
  errors: Partial<Record<keyof AttackFormState, string>>;
  spec?: Record<string, unknown>;
}

/** "HH:MM[:SS]" or bare seconds, matching the scenario-file grammar. */
export function parseClock(text: string): number | null {
  const trimmed = text.trim();
  if (!trimmed) return null;
  if (/^\d+(\.\d+)?$/.test(trimmed)) return Number(trimmed);
  const parts = trimmed.split(":");
  if (parts.length !== 2 && parts.length !== 3) return null;
  if (!parts.every((p) => /^\d+$/.test(p))) return null;
  const [h, m, s] = [Number(parts[0]), Number(parts[1]), Number(parts[2] ?? 0)];
  if (m >= 60 || s >= 60) return null;
  return h * 3600 + m * 60 + s;
}

/** Celsius number or a "95F"/"35C" suffixed string; both are accepted upstream. */
export function parseTemperature(text: string): number | null {
  const trimmed = text.trim();
  if (!trimmed) return null;
  if (/^-?\d+(\.\d+)?$/.test(trimmed)) return Number(trimmed);
  const unit = trimmed.slice(-1).toUpperCase();
  if (unit !== "C" && unit !== "F") return null;
  const magnitude = Number(trimmed.slice(0, -1));
  if (!Number.isFinite(magnitude)) return null;
  return unit === "C" ? magnitude : ((magnitude - 32) * 5) / 9;
}

export function validateAttackForm(form: AttackFormState, durationS: number): FormResult {
  const errors: FormResult["errors"] = {};

  const start = parseClock(form.start);
  const end = parseClock(form.end);
  if (start === null) errors.start = "use HH:MM or seconds";
  if (end === null) errors.end = "use HH:MM or seconds";
  if (start !== null && end !== null) {
    if (end <= start) errors.end = "end must be after start";
    else if (start < 0 || end > durationS) errors.end = `window must fit in the ${durationS}s run`;
  }

  const spec: Record<string, unknown> = {
    kind: form.kind,
    start: form.start.trim(),
    end: form.end.trim(),
  };

  if (form.kind === "fdi") {
    if (!form.target_point.trim()) errors.target_point = "required";
    else spec.target_point = form.target_point.trim();
    if (parseTemperature(form.value) === null) errors.value = "number, or 95F / 35C";
    else spec.value = form.value.trim();
    if (form.priority.trim()) {
      const p = Number(form.priority);
      if (!Number.isInteger(p) || p < 1 || p > 16) errors.priority = "1..16";
      else spec.priority = p;
    }
  } else if (form.kind === "device-dos") {
    if (!form.target_device.trim()) errors.target_device = "required";
    else spec.target_device = form.target_device.trim();
    const rate = Number(form.rate);
    if (!form.rate.trim() || !Number.isFinite(rate) || rate <= 0) {
      errors.rate = "packets per second > 0";
    } else {
      spec.rate = rate;
    }
  } else {
    if (form.ttl.trim()) {
      const ttl = Number(form.ttl);
      if (!Number.isFinite(ttl) || ttl <= 0) errors.ttl = "seconds > 0";
      else spec.ttl = ttl;
    }
  }

  if (Object.keys(errors).length) return { ok: false, errors };
  return { ok: true, errors, spec };
}
