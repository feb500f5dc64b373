"""Detector outputs -> fixed-size box embeddings (Z_b) and ROI embeddings (Z_r)."""
import logging
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import FormatError, GeometryError, ShapeError

log = logging.getLogger(__name__)

CATEGORIES = ("padded", "person", "rider", "car", "truck", "bus", "motorcycle")
VEHICLES = ("car", "truck", "bus", "motorcycle")
BOX_DIM = 4 + len(CATEGORIES)
MIN_PAD_SIZE = 0.05


@dataclass(frozen=True)
class DetectionBox:
    x1: float
    y1: float
    x2: float
    y2: float
    score: float
    category: str = "car"

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if self.category == "padded" and self.score != 0.0:
            raise ValueError("padded boxes must have score 0")

    @property
    def coords(self):
        return (self.x1, self.y1, self.x2, self.y2)

    @property
    def degenerate(self):
        return not (self.x2 > self.x1 and self.y2 > self.y1)

    @property
    def padded(self):
        return self.category == "padded"


def random_padded_box(rng):
    """Uniform random corners with each side at least ``MIN_PAD_SIZE``."""
    x1, y1 = rng.uniform(0.0, 1.0 - MIN_PAD_SIZE, size=2)
    x2 = rng.uniform(x1 + MIN_PAD_SIZE, 1.0)
    y2 = rng.uniform(y1 + MIN_PAD_SIZE, 1.0)
    return DetectionBox(float(x1), float(y1), float(x2), float(y2), 0.0, "padded")


def select_and_pad(boxes, m, score_threshold=0.6, rng_seed=0):
    """Exactly ``m`` boxes: threshold, keep the ``m`` best, then pad.

    Boxes scoring below ``score_threshold`` are dropped. If more than ``m``
    remain the highest scores win (earlier input wins ties) and survivors keep
    their input order. Shortfalls are filled with random zero-score padded boxes
    drawn from ``rng_seed`` (an int or a ``numpy.random.Generator``).
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    kept = [(i, b) for i, b in enumerate(boxes) if b.score >= score_threshold and not b.padded]
    if len(kept) > m:
        best = sorted(kept, key=lambda ib: (-ib[1].score, ib[0]))[:m]
        kept = sorted(best, key=lambda ib: ib[0])
    out = [b for _, b in kept]
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    while len(out) < m:
        out.append(random_padded_box(rng))
    return out


def encode_box(box, use_category=True):
    """``[x1, y1, x2, y2]`` followed by a 7-way one-hot (index 0 = padded)."""
    vec = np.zeros(BOX_DIM if use_category else 4)
    vec[:4] = box.coords
    if use_category:
        vec[4 + CATEGORIES.index(box.category)] = 1.0
    return vec


def encode_boxes(boxes, use_category=True):
    return np.stack([encode_box(b, use_category) for b in boxes])


def bbox_embeddings(encoded, w, b):
    """Z_b = relu(encoded @ w + b); works on (M, 11) or batched (B, M, 11) input."""
    enc = nx.as_tensor(encoded)
    if enc.shape[-1] != nx.as_tensor(w).shape[0]:
        raise ShapeError(f"box encodings {enc.shape} do not match weight {nx.as_tensor(w).shape}")
    return nx.relu(nx.linear(enc, w, b))


def roi_weight_matrix(boxes, feat_hw, roi_size=3, use_score=True):
    """Stacked sampling weights (M * roi_size**2, h * w), each box's block scaled by its score.

    Returns the matrix and the number of degenerate boxes, whose rows are zero.
    """
    h, w = feat_hw
    s2 = roi_size * roi_size
    mat = np.zeros((len(boxes) * s2, h * w))
    n_bad = 0
    for i, box in enumerate(boxes):
        try:
            block = nx.roi_sampling_matrix(box.coords, (h, w), roi_size)
        except GeometryError:
            n_bad += 1
            continue
        mat[i * s2:(i + 1) * s2] = block * (box.score if use_score else 1.0)
    return mat, n_bad


def weighted_roi_features(feature, boxes, roi_size=3, use_score=True):
    """Score-weighted, flattened ROI-aligned features, one row per box.

    ``feature`` is (h, w, d); the result is (M, roi_size**2 * d). Degenerate
    boxes contribute an all-zero row and are counted in the second return value.
    """
    f = nx.as_tensor(feature)
    h, w, d = f.shape
    mat, n_bad = roi_weight_matrix(boxes, (h, w), roi_size, use_score)
    if n_bad:
        log.warning("%d degenerate detection box(es) replaced by zero ROI features", n_bad)
    out = nx.matmul(mat, nx.reshape(f, (h * w, d)))
    return nx.reshape(out, (len(boxes), roi_size * roi_size * d)), n_bad


def roi_embeddings(feature, boxes, w, b, roi_size=3, use_score=True):
    """Z_r = relu(perceptron(score * roi_align(feature, box))) per box.

    Returns ``(Z_r, n_degenerate)``.
    """
    feats, n_bad = weighted_roi_features(feature, boxes, roi_size, use_score)
    return nx.relu(nx.linear(feats, w, b)), n_bad


# ------------------------------------------------------------ detection files


def parse_detections(text):
    """``frame_id x1 y1 x2 y2 score category`` per line -> {frame_id: [DetectionBox]}."""
    frames = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 7:
            raise FormatError(f"expected 7 fields, got {len(parts)}", line=lineno)
        try:
            vals = [float(v) for v in parts[1:6]]
            box = DetectionBox(*vals, category=parts[6])
        except ValueError as exc:
            raise FormatError(str(exc), line=lineno) from None
        frames.setdefault(parts[0], []).append(box)
    return frames


def emit_detections(frames):
    lines = []
    for frame_id, boxes in frames.items():
        for bx in boxes:
            coords = " ".join(f"{v:.6f}" for v in (*bx.coords, bx.score))
            lines.append(f"{frame_id} {coords} {bx.category}")
    return "".join(line + "\n" for line in lines)
