"""Lane evaluation: rasterised IoU with F1 (CULane style) and point accuracy (TuSimple style)."""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormatError
from .lanes import CULANE_SIZE, TUSIMPLE_SIZE
from .matching import hungarian

CULANE_LINE_WIDTH = 30.0
IOU_THRESHOLD = 0.5


def scaled_line_width(image_size, ref_width=CULANE_LINE_WIDTH, ref_size=CULANE_SIZE):
    """The reference stroke width rescaled by the ratio of image diagonals."""
    h, w = image_size
    return ref_width * math.hypot(h, w) / math.hypot(*ref_size)


def lane_mask(lane, image_size, line_width):
    h, w = image_size
    return kernels.raster_polyline(lane.to_pixels(image_size), h, w, line_width / 2.0)


def mask_iou(a, b):
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / union if union else 0.0


def lane_iou(a, b, image_size=CULANE_SIZE, line_width=None):
    """IoU of the two lanes drawn as ``line_width``-pixel strokes with round caps."""
    if line_width is None:
        line_width = scaled_line_width(image_size)
    if line_width < 1:
        raise ValueError("line_width must be >= 1")
    if a.n_valid == 0 or b.n_valid == 0:
        return 0.0
    return mask_iou(lane_mask(a, image_size, line_width), lane_mask(b, image_size, line_width))


def iou_matrix(preds, gts, image_size=CULANE_SIZE, line_width=None):
    if line_width is None:
        line_width = scaled_line_width(image_size)
    pm = [lane_mask(p, image_size, line_width) if p.n_valid else None for p in preds]
    gm = [lane_mask(g, image_size, line_width) if g.n_valid else None for g in gts]
    out = np.zeros((len(preds), len(gts)))
    for i, a in enumerate(pm):
        for j, b in enumerate(gm):
            if a is not None and b is not None:
                out[i, j] = mask_iou(a, b)
    return out


def match_ious(ious, iou_threshold=IOU_THRESHOLD):
    """(TP, FP, FN) from a pred x gt IoU matrix under one-to-one matching.

    The matching maximises the number of pairs at or above the threshold, then
    total IoU among those.
    """
    n_p, n_g = ious.shape
    n = max(n_p, n_g)
    if n_p == 0 or n_g == 0:
        return 0, n_p, n_g
    score = np.zeros((n, n))
    hit = ious >= iou_threshold
    score[:n_p, :n_g] = np.where(hit, 1.0 + ious, 0.0)
    sigma = hungarian(-score).sigma
    tp = sum(1 for i in range(n_p) if sigma[i] < n_g and hit[i, sigma[i]])
    return tp, n_p - tp, n_g - tp


def match_frame(preds, gts, iou_threshold=IOU_THRESHOLD, image_size=CULANE_SIZE, line_width=None):
    return match_ious(iou_matrix(preds, gts, image_size, line_width), iou_threshold)


def _ratio(a, b):
    return a / b if b else 0.0


@dataclass
class EvalReport:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    breakdown: dict = field(default_factory=dict)

    @property
    def precision(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return _ratio(2 * p * r, p + r)

    def add(self, tp, fp, fn):
        self.tp += tp
        self.fp += fp
        self.fn += fn
        return self

    def merge(self, other):
        out = EvalReport(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)
        for cat in sorted(set(self.breakdown) | set(other.breakdown)):
            a = self.breakdown.get(cat, EvalReport())
            b = other.breakdown.get(cat, EvalReport())
            out.breakdown[cat] = a.merge(b)
        return out

    def summary(self):
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}

    def to_jsonl(self):
        lines = [json.dumps({"category": "total", **self.summary()}, sort_keys=True)]
        for cat in sorted(self.breakdown):
            lines.append(json.dumps({"category": cat, **self.breakdown[cat].summary()}, sort_keys=True))
        return "".join(line + "\n" for line in lines)

    def table(self):
        """Categories as columns, F1 (%) as the row, Total last."""
        cats = sorted(self.breakdown)
        head = ["Metric", *cats, "Total"]
        f1s = ["F1(%)", *(f"{100 * self.breakdown[c].f1:.2f}" for c in cats), f"{100 * self.f1:.2f}"]
        pre = ["Precision(%)", *(f"{100 * self.breakdown[c].precision:.2f}" for c in cats),
               f"{100 * self.precision:.2f}"]
        rec = ["Recall(%)", *(f"{100 * self.breakdown[c].recall:.2f}" for c in cats), f"{100 * self.recall:.2f}"]
        widths = [max(len(r[i]) for r in (head, f1s, pre, rec)) for i in range(len(head))]
        fmt = lambda row: " | ".join(c.rjust(w) for c, w in zip(row, widths))  # noqa: E731
        rule = "-+-".join("-" * w for w in widths)
        return "\n".join([fmt(head), rule, fmt(f1s), fmt(pre), fmt(rec)]) + "\n"


def aggregate(reports):
    """Merge per-category reports ({category: EvalReport}) into one with a breakdown."""
    total = EvalReport()
    for cat in sorted(reports):
        rep = reports[cat]
        total = total.merge(EvalReport(rep.tp, rep.fp, rep.fn, {cat: EvalReport(rep.tp, rep.fp, rep.fn)}))
    return total


# ------------------------------------------------------------------- TuSimple


def _lane_xs_px(lane, h_samples, image_size):
    h, w = image_size
    return lane.x_at(np.asarray(h_samples, dtype=np.float64) / h) * w


def point_accuracy(pred_xs, gt_xs, pixel_thresh=20.0):
    """Share of the ground truth's present samples where the prediction is within threshold."""
    present = np.isfinite(gt_xs)
    if not present.any():
        return 0.0
    close = np.isfinite(pred_xs) & (np.abs(np.nan_to_num(pred_xs, nan=np.inf) - gt_xs) < pixel_thresh)
    return float((close & present).sum() / present.sum())


def tusimple_metrics(pred_frames, gt_frames, image_size=TUSIMPLE_SIZE, pixel_thresh=20.0, pt_thresh=0.85):
    """(accuracy, FP rate, FN rate) over aligned frames.

    Per frame, predictions and ground-truth lanes are paired one-to-one to
    maximise point accuracy. A ground-truth lane is matched when its partner's
    point accuracy exceeds ``pt_thresh``. Frame accuracy is the sum of the
    paired point accuracies over the number of ground-truth lanes; the result
    averages it over frames. FP rate = unmatched predictions / predictions and
    FN rate = unmatched ground truth / ground truth, pooled over frames.
    """
    if len(pred_frames) != len(gt_frames):
        raise FormatError(f"{len(pred_frames)} prediction frames vs {len(gt_frames)} ground-truth frames")
    accs, fp, fn, n_pred, n_gt = [], 0, 0, 0, 0
    for pf, gf in zip(pred_frames, gt_frames):
        if pf.raw_file != gf.raw_file or list(pf.h_samples) != list(gf.h_samples):
            raise FormatError(f"frame mismatch: {pf.raw_file!r} vs {gf.raw_file!r}")
        gx = [_lane_xs_px(g, gf.h_samples, image_size) for g in gf.lanes]
        px = [_lane_xs_px(p, gf.h_samples, image_size) for p in pf.lanes]
        acc = np.array([[point_accuracy(p, g, pixel_thresh) for g in gx] for p in px]).reshape(len(px), len(gx))
        matched, total = 0, 0.0
        if px and gx:
            n = max(len(px), len(gx))
            score = np.zeros((n, n))
            score[:len(px), :len(gx)] = acc
            sigma = hungarian(-score).sigma
            for i in range(len(px)):
                j = sigma[i]
                if j < len(gx):
                    total += acc[i, j]
                    matched += acc[i, j] > pt_thresh
        accs.append(total / len(gx) if gx else 1.0 if not px else 0.0)
        fp += len(px) - matched
        fn += len(gx) - matched
        n_pred += len(px)
        n_gt += len(gx)
    accuracy = float(np.mean(accs)) if accs else 0.0
    return accuracy, _ratio(fp, n_pred), _ratio(fn, n_gt)
