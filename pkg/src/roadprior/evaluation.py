"""Chamfer-distance average precision for vectorized map elements.

Predictions are matched to ground truth per frame and per class, greedily in
order of decreasing confidence.  AP at a threshold is the exact area under
the monotone precision envelope; the class AP averages over thresholds and
mAP averages over the three classes.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ClassMismatch
from .geometry import CLASSES, ElementClass, RoadElement, chamfer_matrix

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.5, 1.0, 1.5)
STRICT_THRESHOLDS = (0.2,)


@dataclass(frozen=True, eq=False)
class Prediction:
    element: RoadElement
    confidence: float
    frame_id: str = ""

    def __post_init__(self):
        if not np.isfinite(self.confidence):
            raise ValueError("confidence must be finite")


@dataclass(frozen=True)
class Match:
    pred_id: str
    gt_id: str | None
    distance: float | None
    threshold: float
    tp: bool
    confidence: float
    frame_id: str
    cls: ElementClass


@dataclass(eq=False)
class EvalReport:
    thresholds: tuple
    ap: dict  # (class, tau) -> AP_tau
    class_ap: dict  # class -> mean over thresholds
    map_score: float
    matches: list = field(default_factory=list)
    n_gt: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "ap": {c.value: {str(t): self.ap[c, t] for t in self.thresholds} for c in CLASSES},
            "class_ap": {c.value: self.class_ap[c] for c in CLASSES},
            "mAP": self.map_score,
            "n_gt": {c.value: self.n_gt.get(c, 0) for c in CLASSES},
            "matches": [
                {
                    "frame_id": m.frame_id,
                    "class": m.cls.value,
                    "pred_id": m.pred_id,
                    "gt_id": m.gt_id,
                    "distance": m.distance,
                    "threshold": m.threshold,
                    "tp": m.tp,
                    "confidence": m.confidence,
                }
                for m in self.matches
            ],
        }

    def table(self) -> str:
        """Per-class AP and mAP as a plain-text table, in percent."""
        head = f"{'tau':>8} {'AP_ped':>8} {'AP_div':>8} {'AP_bound':>9} {'mAP':>8}"
        rows = [head]
        for t in self.thresholds:
            vals = [self.ap[c, t] for c in CLASSES]
            rows.append(
                f"{t:>8g} " + " ".join(f"{100 * v:>7.2f}%" for v in vals[:2])
                + f" {100 * vals[2]:>8.2f}% {100 * np.mean(vals):>7.2f}%"
            )
        vals = [self.class_ap[c] for c in CLASSES]
        rows.append(
            f"{'mean':>8} " + " ".join(f"{100 * v:>7.2f}%" for v in vals[:2])
            + f" {100 * vals[2]:>8.2f}% {100 * self.map_score:>7.2f}%"
        )
        return "\n".join(rows)


def _order(confidences) -> np.ndarray:
    return np.argsort(-np.asarray(confidences, dtype=float), kind="stable")


def match_frame(preds, gts, tau: float) -> list:
    """Greedy one-to-one matching of one frame and one class.

    Returns ``(prediction, tp, gt_index, distance)`` in descending confidence
    order.  Each prediction claims its nearest unclaimed GT when the Chamfer
    distance is below ``tau``.
    """
    preds = list(preds)
    gts = list(gts)
    if not preds:
        return []
    order = _order([p.confidence for p in preds])
    if not gts:
        return [(preds[i], False, None, None) for i in order]
    D = chamfer_matrix(
        np.stack([p.element.points for p in preds]), np.stack([g.points for g in gts])
    )
    claimed = np.zeros(len(gts), dtype=bool)
    out = []
    for i in order:
        d = np.where(claimed, np.inf, D[i])
        j = int(np.argmin(d))
        if d[j] < tau:
            claimed[j] = True
            out.append((preds[i], True, j, float(D[i, j])))
        else:
            out.append((preds[i], False, None, None if np.isinf(d[j]) else float(d[j])))
    return out


def average_precision(tp_flags, confidences, n_gt: int) -> float:
    """Area under the interpolated precision-recall curve.

    Predictions with equal confidence form one operating point, so the result
    depends only on the confidence ordering, never on input order.
    """
    tp = np.asarray(tp_flags, dtype=bool)
    conf = np.asarray(confidences, dtype=float)
    if n_gt == 0:
        log.info("no ground truth for this class/threshold; AP defined as 0")
        return 0.0
    if tp.size == 0:
        return 0.0
    order = _order(conf)
    tp, conf = tp[order], conf[order]
    ctp = np.cumsum(tp)
    # keep the last index of each run of equal confidences
    last = np.flatnonzero(np.append(conf[1:] != conf[:-1], True))
    recall = ctp[last] / n_gt
    precision = ctp[last] / (last + 1)
    env = np.maximum.accumulate(precision[::-1])[::-1]
    d_recall = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(d_recall * env))


def _group(items, frame_of, class_of):
    out = defaultdict(list)
    for it in items:
        out[frame_of(it), class_of(it)].append(it)
    return out


def evaluate(predictions, ground_truth, thresholds=DEFAULT_THRESHOLDS) -> EvalReport:
    """Evaluate predictions against ground truth over all frames.

    ``predictions`` is an iterable of :class:`Prediction`; ``ground_truth`` an
    iterable of scene records (anything with ``frame_id`` and ``elements``).
    """
    thresholds = tuple(float(t) for t in thresholds)
    predictions = list(predictions)
    for p in predictions:
        if not isinstance(p.element.cls, ElementClass) or p.element.cls not in CLASSES:
            raise ClassMismatch(f"unknown class {p.element.cls!r}")
    gt_items = [(rec.frame_id, e) for rec in ground_truth for e in rec.elements]
    gt_groups = _group(gt_items, lambda x: x[0], lambda x: x[1].cls)
    pred_groups = _group(predictions, lambda p: p.frame_id, lambda p: p.element.cls)
    keys = sorted(set(gt_groups) | set(pred_groups), key=lambda k: (k[0], CLASSES.index(k[1])))
    n_gt = {c: sum(len(v) for (f, cc), v in gt_groups.items() if cc is c) for c in CLASSES}

    ap, matches = {}, []
    for tau in thresholds:
        flags = defaultdict(list)
        confs = defaultdict(list)
        for key in keys:
            frame, cls = key
            gts = [e for _, e in gt_groups.get(key, [])]
            for pred, tp, j, dist in match_frame(pred_groups.get(key, []), gts, tau):
                flags[cls].append(tp)
                confs[cls].append(pred.confidence)
                matches.append(
                    Match(pred.element.id, gts[j].id if tp else None, dist, tau, tp, pred.confidence, frame, cls)
                )
        for c in CLASSES:
            ap[c, tau] = average_precision(flags[c], confs[c], n_gt[c])
    class_ap = {c: float(np.mean([ap[c, t] for t in thresholds])) for c in CLASSES}
    map_score = float(np.mean([class_ap[c] for c in CLASSES]))
    return EvalReport(thresholds, ap, class_ap, map_score, matches, n_gt)
