"""Point-by-point comparison of an attack bundle against its baseline.

Both runs must come from the same scenario except for the attack tables:
same duration, seed, plant, and supervisor settings, hence row-aligned
trends.  The report gives, per monitored point, the peak deviation and
when it occurred, the post-attack recovery time, and missing-record
counts split into pre/during/post attack windows.
"""

from __future__ import annotations

import json
from dataclasses import replace
from pathlib import Path
from typing import Optional

from .scenario import ScenarioConfig, parse_scenario_text

RECOVERY_BAND_K = 0.5
RECOVERY_SUSTAIN_S = 600.0


class DiffError(ValueError):
    """Bundles cannot be compared; the message says why."""


Trends = dict[str, dict[float, Optional[float]]]


def load_bundle(bundle_dir) -> tuple[ScenarioConfig, Trends]:
    """Read a run directory's resolved scenario and trend table."""
    d = Path(bundle_dir)
    try:
        cfg = parse_scenario_text((d / "scenario.resolved").read_text(encoding="utf-8"))
        lines = (d / "trends.csv").read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DiffError(f"not a run bundle: {exc}") from None
    if not lines or lines[0] != "sim_time_s,point,value,quality":
        raise DiffError(f"{d}/trends.csv: unexpected header")
    trends: Trends = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 4:
            raise DiffError(f"{d}/trends.csv line {lineno}: expected 4 columns")
        t, point, value, _quality = parts
        trends.setdefault(point, {})[float(t)] = float(value) if value else None
    return cfg, trends


def check_aligned(base_cfg: ScenarioConfig, attack_cfg: ScenarioConfig,
                  base: Trends, attack: Trends) -> None:
    stripped_base = replace(base_cfg, name=attack_cfg.name, speed=attack_cfg.speed,
                            attacks=attack_cfg.attacks)
    if stripped_base != attack_cfg:
        raise DiffError("bundles come from different scenarios "
                        "(only name, speed, and attacks may differ)")
    if set(base) != set(attack):
        raise DiffError("bundles trend different point sets")
    for point in base:
        if list(base[point]) != list(attack[point]):
            raise DiffError(f"trend rows for {point} are not time-aligned")


def _window(attack_cfg: ScenarioConfig) -> Optional[tuple[float, float]]:
    if not attack_cfg.attacks:
        return None
    return (min(a.start_s for a in attack_cfg.attacks),
            max(a.end_s for a in attack_cfg.attacks))


def _classify(t: float, window: Optional[tuple[float, float]]) -> str:
    if window is None or t < window[0]:
        return "pre"
    return "during" if t < window[1] else "post"


def _recovery_time(times: list[float], devs: dict[float, Optional[float]],
                   attack_end: float, duration_s: float) -> Optional[float]:
    """First row time >= attack end from which |dev| stays inside the band.

    The band must hold for RECOVERY_SUSTAIN_S (clipped at the run end);
    a missing row inside that window breaks the streak.
    """
    for i, t0 in enumerate(times):
        if t0 < attack_end:
            continue
        horizon = min(t0 + RECOVERY_SUSTAIN_S, duration_s)
        ok = True
        for t in times[i:]:
            if t >= horizon:
                break
            dev = devs[t]
            if dev is None or abs(dev) >= RECOVERY_BAND_K:
                ok = False
                break
        if ok:
            return t0
    return None


def compute(baseline_dir, attack_dir) -> dict:
    """Build the comparison report; raises DiffError on misaligned bundles."""
    base_cfg, base = load_bundle(baseline_dir)
    attack_cfg, attack = load_bundle(attack_dir)
    check_aligned(base_cfg, attack_cfg, base, attack)
    return _report(base_cfg, attack_cfg, base, attack)


def _report(base_cfg: ScenarioConfig, attack_cfg: ScenarioConfig,
            base: Trends, attack: Trends) -> dict:
    window = _window(attack_cfg)
    attack_end = window[1] if window else 0.0
    points = {}
    for point in sorted(base):
        times = list(base[point])
        devs: dict[float, Optional[float]] = {}
        missing_base = {"pre": 0, "during": 0, "post": 0}
        missing_attack = {"pre": 0, "during": 0, "post": 0}
        for t in times:
            b, a = base[point][t], attack[point][t]
            phase = _classify(t, window)
            missing_base[phase] += b is None
            missing_attack[phase] += a is None
            devs[t] = None if b is None or a is None else a - b
        present = [(abs(d), t) for t, d in devs.items() if d is not None]
        peak, peak_t = max(present) if present else (None, None)
        points[point] = {
            "rows": len(times),
            "max_abs_dev": peak,
            "peak_s": peak_t,
            "recovery_s": _recovery_time(times, devs, attack_end,
                                         base_cfg.duration_s),
            "missing_baseline": missing_base,
            "missing_attack": missing_attack,
        }

    return {
        "v": 1,
        "baseline": base_cfg.name,
        "attack": attack_cfg.name,
        "seed": base_cfg.seed,
        "duration_s": base_cfg.duration_s,
        "window": None if window is None else {"start_s": window[0],
                                               "end_s": window[1]},
        "attacks": [{"id": a.attack_id, "kind": a.kind,
                     "start_s": a.start_s, "end_s": a.end_s}
                    for a in attack_cfg.attacks],
        "points": points,
    }


def paired_csv(base: Trends, attack: Trends) -> str:
    """Plot-ready long table: one row per (time, point) with both values."""
    rows = ["sim_time_s,point,baseline,attack,deviation"]
    for point in sorted(base):
        for t, b in base[point].items():
            a = attack.get(point, {}).get(t)
            b_txt = "" if b is None else f"{b:.6g}"
            a_txt = "" if a is None else f"{a:.6g}"
            d_txt = "" if b is None or a is None else f"{a - b:.6g}"
            rows.append(f"{t:.10g},{point},{b_txt},{a_txt},{d_txt}")
    return "\n".join(rows) + "\n"


def write_report(baseline_dir, attack_dir, out_dir) -> dict:
    """Compute the report and drop diff.json plus the paired CSV in out_dir."""
    base_cfg, base = load_bundle(baseline_dir)
    attack_cfg, attack = load_bundle(attack_dir)
    check_aligned(base_cfg, attack_cfg, base, attack)
    report = _report(base_cfg, attack_cfg, base, attack)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "diff.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    (out / "paired.csv").write_text(paired_csv(base, attack), encoding="utf-8")
    return report
