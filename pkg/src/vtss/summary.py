"""Aggregates and trend diagnostics over result rows."""

import math

import numpy as np


def summarize(records):
    """Mean and sample standard deviation per row id across seeds."""
    groups = {}
    for rec in records:
        groups.setdefault(rec.row_id, []).append(rec)
    out = {}
    for row_id, recs in groups.items():
        entry = {"n": len(recs)}
        for key in ("pretext_acc", "semisup_acc"):
            vals = np.array([getattr(r, key) for r in recs], dtype=np.float64)
            vals = vals[np.isfinite(vals)]
            entry[f"{key}_mean"] = float(vals.mean()) if len(vals) else math.nan
            entry[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[row_id] = entry
    return out


def count_inversions(values, tolerance=0.0):
    """Number of consecutive increases larger than ``tolerance`` and the largest one."""
    rises = [b - a for a, b in zip(values, values[1:]) if b - a > tolerance]
    return len(rises), max(rises, default=0.0)


def exp1_trend(records):
    """Collapse-pattern diagnostics for the injection runs of one seed group."""
    runs = sorted((r for r in records if r.row_id.startswith("run")),
                  key=lambda r: int(r.row_id[3:]))
    pretext = [r.pretext_acc for r in runs]
    semisup = [r.semisup_acc for r in runs]
    c_inv, c_max = count_inversions(semisup)
    p_inv, p_max = count_inversions(pretext, tolerance=3.0)
    return {"pretext": pretext, "semisup": semisup,
            "semisup_inversions": c_inv, "semisup_max_inversion": c_max,
            "pretext_non_increasing_within_3pt": p_inv == 0, "pretext_max_rise": p_max}
