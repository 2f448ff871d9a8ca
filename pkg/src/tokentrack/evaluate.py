"""One-pass evaluation: success curve, AUC, precision, and trackfile I/O.

Success at threshold 0 counts strictly positive overlap; every higher
threshold is inclusive, so a perfect track scores AUC 1.0 and an
all-miss track scores 0. Curves are averaged per sequence first, then
across sequences.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boxes import BoundingBox, iou

THRESHOLDS = np.round(np.arange(21) * 0.05, 2)
PRECISION_PX = 20.0
NORM_PRECISION_FRAC = 0.2


@dataclass
class SequenceResult:
    name: str
    ious: np.ndarray
    center_errors: np.ndarray
    norm_center_errors: np.ndarray

    @property
    def success_curve(self):
        curve = np.empty(len(THRESHOLDS))
        for i, tau in enumerate(THRESHOLDS):
            if tau == 0.0:
                curve[i] = float(np.mean(self.ious > 0.0))
            else:
                curve[i] = float(np.mean(self.ious >= tau))
        return curve

    @property
    def auc(self):
        return float(self.success_curve.mean())

    @property
    def mean_iou(self):
        return float(self.ious.mean())

    @property
    def precision(self):
        return float(np.mean(self.center_errors <= PRECISION_PX))

    @property
    def norm_precision(self):
        return float(np.mean(self.norm_center_errors <= NORM_PRECISION_FRAC))


@dataclass
class EvalReport:
    sequences: list = field(default_factory=list)

    @property
    def success_curve(self):
        return np.mean([s.success_curve for s in self.sequences], axis=0)

    @property
    def auc(self):
        return float(np.mean([s.auc for s in self.sequences]))

    @property
    def mean_iou(self):
        return float(np.mean([s.mean_iou for s in self.sequences]))

    @property
    def precision(self):
        return float(np.mean([s.precision for s in self.sequences]))

    @property
    def norm_precision(self):
        return float(np.mean([s.norm_precision for s in self.sequences]))

    def to_dict(self):
        return {
            "auc": self.auc,
            "mean_iou": self.mean_iou,
            "precision": self.precision,
            "norm_precision": self.norm_precision,
            "thresholds": [float(t) for t in THRESHOLDS],
            "success_curve": [float(v) for v in self.success_curve],
            "sequences": [
                {"name": s.name, "auc": s.auc, "mean_iou": s.mean_iou,
                 "precision": s.precision, "norm_precision": s.norm_precision}
                for s in self.sequences
            ],
        }


def score_sequence(pred_boxes, gt_boxes, name="sequence"):
    """Per-frame IoU and center errors for one sequence's box lists."""
    if len(pred_boxes) != len(gt_boxes):
        raise ValueError(f"{name}: {len(pred_boxes)} predictions vs {len(gt_boxes)} ground-truth boxes")
    ious, errs, nerrs = [], [], []
    for p, g in zip(pred_boxes, gt_boxes):
        ious.append(iou(p, g))
        pc, gc = p.center, g.center
        dx, dy = pc[0] - gc[0], pc[1] - gc[1]
        errs.append(float(np.hypot(dx, dy)))
        # center error normalized per-axis by the gt box extents
        nerrs.append(float(np.hypot(dx / max(g.width, 1e-6), dy / max(g.height, 1e-6))))
    return SequenceResult(name=name, ious=np.asarray(ious),
                          center_errors=np.asarray(errs), norm_center_errors=np.asarray(nerrs))


def evaluate_ope(pairs):
    """pairs: iterable of (name, pred_boxes, gt_boxes). Returns an EvalReport."""
    report = EvalReport()
    for name, pred, gt in pairs:
        report.sequences.append(score_sequence(pred, gt, name=name))
    if not report.sequences:
        raise ValueError("nothing to evaluate")
    return report


# ---------------------------------------------------------------------------
# trackfiles: one line per frame, "frame x_min y_min width height score"

def write_trackfile(path, results):
    """results: list of (BoundingBox, score) in frame order."""
    with open(path, "w", encoding="utf-8") as fh:
        for t, (box, score) in enumerate(results):
            fh.write(f"{t} {box.x_min:.6f} {box.y_min:.6f} {box.width:.6f} {box.height:.6f} {score:.6f}\n")


def read_trackfile(path):
    boxes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno + 1}: expected 6 fields, got {len(parts)}")
            _, x, y, w, h, score = parts
            boxes.append((BoundingBox(float(x), float(y), float(w), float(h)), float(score)))
    return boxes


def write_report(report, json_path, csv_path=None):
    Path(json_path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if csv_path:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "success"])
            for tau, val in zip(THRESHOLDS, report.success_curve):
                writer.writerow([f"{tau:.2f}", f"{val:.6f}"])
