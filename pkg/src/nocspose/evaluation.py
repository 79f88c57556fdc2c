"""Pose-error metrics and precision tables over (degrees, distance)
threshold pairs, with a symmetry-aware angular error for objects that are
rotationally symmetric about their y-axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, SimilarityTransform

SYMMETRY_KINDS = ("none", "y-axis")


def pose_errors(pred: SimilarityTransform, gt: SimilarityTransform):
    """(geodesic rotation error in degrees, translation distance)."""
    r = pred.rotation @ gt.rotation.T
    cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    rot_deg = float(np.degrees(np.arccos(cos)))
    trans = float(np.linalg.norm(pred.translation - gt.translation))
    return rot_deg, trans


def scale_error(pred: SimilarityTransform, gt: SimilarityTransform) -> float:
    """Relative scale error |s_pred - s_gt| / s_gt."""
    return abs(pred.scale - gt.scale) / gt.scale


def symmetric_axis_error(r_pred: np.ndarray, r_gt: np.ndarray) -> float:
    """Angle in [0, 90] degrees between predicted and true symmetry axes
    (the rotations' second columns); invariant to spins about the axis and
    to axis sign."""
    y_pred = np.asarray(r_pred, dtype=np.float64)[:, 1]
    y_gt = np.asarray(r_gt, dtype=np.float64)[:, 1]
    cos = abs(float(y_gt @ y_pred)) / (np.linalg.norm(y_gt)
                                       * np.linalg.norm(y_pred))
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


@dataclass
class EvalInstance:
    pred: SimilarityTransform
    gt: SimilarityTransform
    category: str
    symmetry: str = "none"

    def __post_init__(self):
        if self.symmetry not in SYMMETRY_KINDS:
            raise GeometryError(f"symmetry must be one of {SYMMETRY_KINDS}")

    def passes(self, rot_thresh_deg: float, trans_thresh: float) -> bool:
        rot_deg, trans = pose_errors(self.pred, self.gt)
        if self.symmetry == "y-axis":
            rot_deg = symmetric_axis_error(self.pred.rotation,
                                           self.gt.rotation)
        return rot_deg <= rot_thresh_deg and trans <= trans_thresh


@dataclass
class MetricTable:
    thresholds: list            # [(deg, dist), ...]
    categories: list            # category names in report order
    precision: dict             # category -> [fraction per threshold]
    mean_row: list              # unweighted category mean per threshold
    counts: dict                # category -> instance count
    warnings: list              # skipped-category messages

    def to_dict(self) -> dict:
        return {
            "thresholds": [{"deg": d, "dist": m} for d, m in self.thresholds],
            "categories": self.categories,
            "precision": self.precision,
            "mean": self.mean_row,
            "counts": self.counts,
            "warnings": self.warnings,
        }


def precision_table(instances: list, thresholds: list) -> MetricTable:
    """Per-category pass fraction at each threshold pair, plus the
    unweighted mean row. Categories without instances are excluded with a
    warning record."""
    if not instances:
        raise GeometryError("no instances to evaluate")
    categories = []
    for inst in instances:
        if inst.category not in categories:
            categories.append(inst.category)
    precision: dict = {}
    counts: dict = {}
    warnings: list = []
    for cat in list(categories):
        members = [i for i in instances if i.category == cat]
        if not members:
            warnings.append(f"category '{cat}' has no instances; excluded")
            categories.remove(cat)
            continue
        counts[cat] = len(members)
        precision[cat] = [
            float(np.mean([m.passes(d, t) for m in members]))
            for d, t in thresholds
        ]
    mean_row = [float(np.mean([precision[c][k] for c in categories]))
                for k in range(len(thresholds))]
    return MetricTable(list(thresholds), categories, precision, mean_row,
                       counts, warnings)


def format_table(table: MetricTable, unit_label: str = "cm",
                 unit_scale: float = 0.01) -> str:
    """Aligned-column text report; distance thresholds are printed in the
    configured display unit."""
    headers = ["category", "n"] + [
        f"{d:g}deg {m / unit_scale:g}{unit_label}"
        for d, m in table.thresholds]
    rows = []
    for cat in table.categories:
        rows.append([cat, str(table.counts[cat])]
                    + [f"{v:.3f}" for v in table.precision[cat]])
    rows.append(["mean", str(sum(table.counts.values()))]
                + [f"{v:.3f}" for v in table.mean_row])
    widths = [max(len(r[c]) for r in [headers] + rows)
              for c in range(len(headers))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(x.ljust(w) for x, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def parse_thresholds(spec: str, unit_scale: float = 0.01) -> list:
    """Parse 'deg:dist,deg:dist,...' with dist in display units."""
    out = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            d, m = part.split(":")
            out.append((float(d), float(m) * unit_scale))
        except ValueError as err:
            raise GeometryError(f"bad threshold '{part}', "
                                "expected deg:dist") from err
    if not out:
        raise GeometryError("no thresholds given")
    return out
