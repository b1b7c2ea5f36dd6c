"""Localization error metrics, recall summaries and report tables."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .camera import Pose4, extrinsics, rotation_angle_deg

THRESHOLDS = ((2.0, 2.0), (3.0, 3.0), (5.0, 5.0))

CSV_COLUMNS = ("method", "variant", "cost_kind", "recall_2m2deg", "recall_3m3deg", "recall_5m5deg",
               "median_te_m", "median_re_deg", "n_queries", "degenerate_n", "mean_ms")


@dataclass(frozen=True)
class PoseError:
    translation_error: float  # meters
    rotation_error: float  # degrees, in [0, 180]


def pose_error(est: Pose4, gt: Pose4) -> PoseError:
    te = math.dist((est.x, est.y, est.z), (gt.x, gt.y, gt.z))
    Ra = extrinsics(est)[:3, :3]
    Rb = extrinsics(gt)[:3, :3]
    return PoseError(te, rotation_angle_deg(Ra, Rb))


def recall_at(errors, thresholds=THRESHOLDS) -> list[float]:
    """Percentage of errors within each (meters, degrees) threshold, both bounds inclusive."""
    errors = list(errors)
    if not errors:
        raise ValueError("recall needs at least one error")
    te = np.array([e.translation_error for e in errors])
    re = np.array([e.rotation_error for e in errors])
    return [100.0 * np.count_nonzero((te <= m) & (re <= d)) / len(errors) for m, d in thresholds]


def median(values) -> float:
    """Median; an even count averages the two central values."""
    v = sorted(values)
    if not v:
        raise ValueError("median of an empty list")
    mid = len(v) // 2
    if len(v) % 2:
        return float(v[mid])
    return (v[mid - 1] + v[mid]) / 2.0


@dataclass(frozen=True)
class Summary:
    method: str
    variant: str
    cost_kind: str
    recalls: tuple
    median_te_m: float
    median_re_deg: float
    n_queries: int
    degenerate_n: int
    mean_ms: float

    def row(self, with_time: bool = True) -> dict:
        r = {
            "method": self.method,
            "variant": self.variant,
            "cost_kind": self.cost_kind,
            "recall_2m2deg": f"{self.recalls[0]:.2f}",
            "recall_3m3deg": f"{self.recalls[1]:.2f}",
            "recall_5m5deg": f"{self.recalls[2]:.2f}",
            "median_te_m": f"{self.median_te_m:.4f}",
            "median_re_deg": f"{self.median_re_deg:.4f}",
            "n_queries": str(self.n_queries),
            "degenerate_n": str(self.degenerate_n),
            "mean_ms": f"{self.mean_ms:.1f}" if with_time else "",
        }
        return r


def summarize(results, method: str = "lodloc", variant: str = "full", cost_kind: str = "confidence") -> Summary:
    """Aggregate (LocalizationResult, gt Pose4) pairs into one report row."""
    results = list(results)
    if not results:
        raise ValueError("summarize needs at least one result")
    errors = [pose_error(r.pose, gt) for r, gt in results]
    return Summary(
        method, variant, cost_kind,
        tuple(recall_at(errors)),
        median(e.translation_error for e in errors),
        median(e.rotation_error for e in errors),
        len(results),
        sum(1 for r, _ in results if r.degenerate),
        float(np.mean([r.wall_time_ms for r, _ in results])),
    )


def to_csv(summaries, with_time: bool = True) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for s in summaries:
        w.writerow(s.row(with_time))
    return buf.getvalue()


def to_text(summaries) -> str:
    """Fixed-width table for terminals."""
    head = ("variant", "cost", "2m-2°", "3m-3°", "5m-5°", "T.e.(m)", "R.e.(°)", "n", "degen", "ms")
    rows = [head]
    for s in summaries:
        rows.append((s.variant, s.cost_kind, *(f"{r:.2f}" for r in s.recalls),
                     f"{s.median_te_m:.3f}", f"{s.median_re_deg:.3f}", str(s.n_queries),
                     str(s.degenerate_n), f"{s.mean_ms:.0f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    lines = ["  ".join(c.rjust(w) if i >= 2 else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in rows]
    return "\n".join(lines) + "\n"
