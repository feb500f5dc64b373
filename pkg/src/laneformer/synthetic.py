"""Seeded toy road scenes: lane images, ground-truth lanes and correlated detections.

Each scene index draws from its own stream ``default_rng([seed, index])`` so
scenes can be generated in any order or in parallel with identical results.
"""
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .detections import VEHICLES, DetectionBox, emit_detections
from .errors import LaneformerError
from .lanes import emit_culane_lines, resample_to_grid

BOX_MODES = ("correlated", "random", "none")


@dataclass
class SceneSpec:
    seed: int = 0
    canvas: tuple = (64, 128)  # (height, width)
    lane_count: tuple = (1, 4)
    curvature: tuple = (-0.12, 0.12)
    occlusion_prob: float = 0.25
    box_mode: str = "correlated"
    category_mix: dict = field(default_factory=lambda: {"normal": 0.5, "crowded": 0.25, "night": 0.25})
    noise: float = 0.04
    val_fraction: float = 0.1

    def __post_init__(self):
        self.canvas = tuple(int(v) for v in self.canvas)
        self.lane_count = tuple(int(v) for v in self.lane_count)
        self.curvature = tuple(float(v) for v in self.curvature)
        if self.box_mode not in BOX_MODES:
            raise ValueError(f"box_mode must be one of {BOX_MODES}")
        if not 1 <= self.lane_count[0] <= self.lane_count[1] <= 4:
            raise ValueError("lane_count must satisfy 1 <= lo <= hi <= 4")


@dataclass
class Scene:
    image: np.ndarray  # (H, W, 1) in [0, 1], quantised to 1/255
    lanes: list
    boxes: list
    category: str
    placement: list  # (category, distance to nearest lane) per box


def _lane_curve(rng, spec, base_x, vx, horizon, curve):
    t = np.linspace(0.0, 1.0, 241)
    x = vx + (base_x - vx) * t + curve * t * (1.0 - t)
    y = horizon + (1.0 - horizon) * t
    return x, y


def _clip_curve(x, y, start):
    keep = (y >= start) & (x >= 0.0) & (x <= 1.0)
    idx = np.flatnonzero(keep)
    if len(idx) < 2:
        return None
    # longest contiguous run
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    run = max(runs, key=len)
    return x[run], y[run]


def _render_lane_layer(shape, polylines, half_width, band=4):
    """Anti-aliased strokes: coverage = clip(half_width + 0.5 - distance, 0, 1).

    Pixels are processed in bands of rows against only the segments that can
    reach them, which gives the same result as the dense distance field.
    """
    h, w = shape
    reach = half_width + 0.5
    xs = np.arange(w) + 0.5
    layer = np.zeros((h, w))
    for pts in polylines:
        a, b = pts[:-1], pts[1:]
        lo, hi = np.minimum(a[:, 1], b[:, 1]), np.maximum(a[:, 1], b[:, 1])
        for r0 in range(0, h, band):
            r1 = min(h, r0 + band)
            sel = (hi >= r0 + 0.5 - reach) & (lo <= r1 - 0.5 + reach)
            if not sel.any():
                continue
            sa, sd = a[sel], b[sel] - a[sel]
            seg2 = np.maximum((sd * sd).sum(1), 1e-12)
            gy, gx = np.meshgrid(np.arange(r0, r1) + 0.5, xs, indexing="ij")
            pix = np.column_stack([gx.ravel(), gy.ravel()])
            rel = pix[:, None, :] - sa[None]
            t = np.clip((rel * sd[None]).sum(-1) / seg2, 0.0, 1.0)
            near = rel - t[..., None] * sd[None]
            dist = np.sqrt((near * near).sum(-1)).min(1).reshape(r1 - r0, w)
            layer[r0:r1] = np.maximum(layer[r0:r1], np.clip(reach - dist, 0.0, 1.0))
    return layer


def gen_scene(spec, index):
    """Render scene ``index`` of ``spec``; identical inputs give identical bytes."""
    rng = np.random.default_rng([int(spec.seed), int(index)])
    h, w = spec.canvas
    cats = sorted(spec.category_mix)
    probs = np.array([spec.category_mix[c] for c in cats], dtype=np.float64)
    category = cats[int(rng.choice(len(cats), p=probs / probs.sum()))]

    horizon = rng.uniform(0.3, 0.4)
    vx = rng.uniform(0.42, 0.58)
    curve = rng.uniform(*spec.curvature)
    n_lanes = int(rng.integers(spec.lane_count[0], spec.lane_count[1] + 1))
    spacing = rng.uniform(0.28, 0.36)
    first = rng.integers(0, 4 - n_lanes + 1)
    offsets = (np.arange(4)[first:first + n_lanes] - 1.5) * spacing
    centre = rng.uniform(0.4, 0.6)

    lanes, curves = [], []
    for off in offsets:
        base = centre + off + rng.uniform(-0.02, 0.02)
        x, y = _lane_curve(rng, spec, base, vx, horizon, curve + rng.uniform(-0.01, 0.01))
        start = horizon + rng.uniform(0.03, 0.1)
        if rng.random() < spec.occlusion_prob:
            start = rng.uniform(start, 0.6)
        clipped = _clip_curve(x, y, start)
        if clipped is None:
            continue
        cx, cy = clipped
        if cy[-1] - cy[0] < 0.2:
            continue
        lane = resample_to_grid(np.column_stack([cx, cy]))
        if lane.n_valid < 8:
            continue
        lanes.append(lane)
        curves.append((cx, cy))
    if not lanes:  # guarantee one lane: a straight centre lane
        cx = np.linspace(vx, centre, 50)
        cy = np.linspace(horizon + 0.05, 1.0, 50)
        lanes.append(resample_to_grid(np.column_stack([cx, cy])))
        curves.append((cx, cy))

    night = category == "night"
    bright = rng.uniform(0.35, 0.5) if night else rng.uniform(0.75, 1.0)
    road = rng.uniform(0.05, 0.12) if night else rng.uniform(0.2, 0.32)
    yy = (np.arange(h)[:, None] + 0.5) / h
    img = np.where(yy < horizon, road * 0.5 + 0.25 * (not night), road) * np.ones((h, w))
    polys = [np.column_stack([cx * w, cy * h]) for cx, cy in curves]
    layer = _render_lane_layer((h, w), polys, half_width=rng.uniform(0.7, 1.0))
    img = img + (bright - img) * layer

    boxes, placement = _place_boxes(rng, spec, category, lanes, horizon)
    for bx in boxes:  # vehicles/people as flat patches over the road
        if bx.category in VEHICLES or bx.category in ("person", "rider"):
            x0, x1 = int(bx.x1 * w), int(np.ceil(bx.x2 * w))
            y0, y1 = int(bx.y1 * h), int(np.ceil(bx.y2 * h))
            img[y0:y1, x0:x1] = 0.5 * img[y0:y1, x0:x1] + 0.5 * (0.45 if bx.category in VEHICLES else 0.6)
    img = img + rng.normal(0.0, spec.noise, size=img.shape)
    img = np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0
    return Scene(img[..., None], lanes, boxes, category, placement)


def _nearest_lane_distance(lanes, x, y):
    best = np.inf
    for ln in lanes:
        lx = ln.x_at(np.array([y]))[0]
        if np.isfinite(lx):
            best = min(best, abs(lx - x))
    return best


def _place_boxes(rng, spec, category, lanes, horizon):
    if spec.box_mode == "none":
        return [], []
    n_vehicles = int(rng.integers(3, 7) if category == "crowded" else rng.integers(1, 4))
    n_people = int(rng.integers(1, 4) if category == "crowded" else rng.integers(0, 2))
    boxes, placement = [], []
    for i in range(n_vehicles + n_people):
        vehicle = i < n_vehicles
        cat = VEHICLES[int(rng.integers(len(VEHICLES)))] if vehicle else ("person", "rider")[int(rng.integers(2))]
        yb = rng.uniform(horizon + 0.15, 0.98)
        size = 0.05 + 0.2 * (yb - horizon) / (1.0 - horizon)
        bw = size * (1.0 if vehicle else 0.4)
        bh = size * (0.8 if vehicle else 1.6) * 2.0
        if spec.box_mode == "correlated":
            if vehicle:
                ln = lanes[int(rng.integers(len(lanes)))]
                lx = ln.x_at(np.array([min(max(yb, ln.s), ln.e)]))[0]
                side = 1.0 if rng.random() < 0.5 else -1.0
                cx = lx + side * rng.uniform(0.02, 0.08)
            else:
                xs = [ln.x_at(np.array([min(max(yb, ln.s), ln.e)]))[0] for ln in lanes]
                cx = (min(xs) - rng.uniform(0.12, 0.25)) if rng.random() < 0.5 else (max(xs) + rng.uniform(0.12, 0.25))
        else:
            cx = rng.uniform(0.05, 0.95)
        x1, x2 = np.clip([cx - bw / 2, cx + bw / 2], 0.0, 1.0)
        y1, y2 = np.clip([yb - bh, yb], 0.0, 1.0)
        if x2 - x1 < 0.01 or y2 - y1 < 0.01:
            continue
        score = float(np.round(rng.uniform(0.3, 1.0), 4))
        boxes.append(DetectionBox(float(x1), float(y1), float(x2), float(y2), score, cat))
        placement.append((cat, float(_nearest_lane_distance(lanes, (x1 + x2) / 2, y2))))
    return boxes, placement


# -------------------------------------------------------------------- dataset


def write_pgm(path, image):
    arr = np.asarray(image)
    if arr.ndim == 3:
        arr = arr[..., 0]
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    if tokens[0] != "P5":
        raise LaneformerError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
    return (data.astype(np.float64) / maxval)[..., None]


def split_indices(n, seed, val_fraction=0.1):
    """Seeded shuffle; the first ``round(n * val_fraction)`` shuffled indices are validation."""
    perm = np.random.default_rng([int(seed), 0x5EED]).permutation(n)
    n_val = int(round(n * val_fraction))
    val = set(perm[:n_val].tolist())
    return ["val" if i in val else "train" for i in range(n)]


def frame_id(i):
    return f"{i:05d}"


def gen_dataset(spec, n, out_dir, jobs=1):
    """Write ``n`` scenes under ``out_dir`` and return the manifest records.

    Layout: ``images/<id>.pgm``, ``gt/<id>.lines.txt`` (CULane text at canvas
    resolution), ``detections.txt`` and ``manifest.jsonl`` (one record per frame
    with its category tag and split), plus ``spec.json``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    try:
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "gt"), exist_ok=True)
    except OSError as exc:
        raise LaneformerError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    splits = split_indices(n, spec.seed, spec.val_fraction)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            scenes = list(pool.map(gen_scene, [spec] * n, range(n)))
    else:
        scenes = [gen_scene(spec, i) for i in range(n)]
    records, dets = [], {}
    for i, sc in enumerate(scenes):
        fid = frame_id(i)
        img_rel = f"images/{fid}.pgm"
        gt_rel = f"gt/{fid}.lines.txt"
        write_pgm(os.path.join(out_dir, img_rel), sc.image)
        with open(os.path.join(out_dir, gt_rel), "w") as fh:
            fh.write(emit_culane_lines(sc.lanes, spec.canvas))
        dets[fid] = sc.boxes
        records.append({"frame": fid, "image": img_rel, "gt": gt_rel, "category": sc.category,
                        "split": splits[i]})
    with open(os.path.join(out_dir, "detections.txt"), "w") as fh:
        fh.write(emit_detections(dets))
    with open(os.path.join(out_dir, "manifest.jsonl"), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(os.path.join(out_dir, "spec.json"), "w") as fh:
        fh.write(json.dumps(asdict(spec), sort_keys=True, indent=1) + "\n")
    return records


def load_manifest(data_dir):
    with open(os.path.join(data_dir, "manifest.jsonl")) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_spec(data_dir):
    with open(os.path.join(data_dir, "spec.json")) as fh:
        raw = json.load(fh)
    return SceneSpec(**raw)
