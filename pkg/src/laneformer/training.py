"""Toy training loop, evaluation over a split and the ablation harness."""
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import model as lm
from . import numerics as nx
from .detections import parse_detections, select_and_pad
from .errors import LaneformerError, NonFiniteError
from .lanes import Lane, parse_culane_lines
from .matching import batch_loss, loss_terms, match_frame_predictions, pad_ground_truth
from .metrics import EvalReport, aggregate, match_frame, scaled_line_width
from .synthetic import frame_id, gen_scene, load_manifest, load_spec, read_pgm, split_indices


@dataclass
class Sample:
    frame: str
    image: np.ndarray  # (H, W, C)
    lanes: list
    boxes: list  # raw detections, before selection and padding
    category: str = "normal"


@dataclass
class TrainConfig:
    epochs: int = 180
    batch_size: int = 8
    lr_backbone: float = 2e-3
    lr_transformer: float = 1e-3
    lr_drop_epoch: int = 150
    lr_drop_factor: float = 0.1
    seed: int = 0
    grad_clip: float = 1.0
    weight_decay: float = 0.0
    rms_decay: float = 0.999
    eps: float = 1e-8
    eval_every: int = 1
    log_every: int = 1
    # augmentation of training frames; labels follow every geometric change exactly
    hflip_prob: float = 0.5
    max_shift: int = 4
    photometric: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.eval_every < 1 or self.log_every < 1:
            raise ValueError("epochs must be >= 0; batch_size, eval_every and log_every >= 1")
        if min(self.lr_backbone, self.lr_transformer, self.weight_decay) < 0:
            raise ValueError("learning rates and weight decay must be non-negative")
        if not 0 < self.lr_drop_factor <= 1 or not 0 <= self.rms_decay < 1:
            raise ValueError("lr_drop_factor must be in (0, 1], rms_decay in [0, 1)")
        if self.grad_clip <= 0 or self.eps <= 0:
            raise ValueError("grad_clip and eps must be positive")
        if not 0 <= self.hflip_prob <= 1 or self.max_shift < 0 or not 0 <= self.photometric < 1:
            raise ValueError("hflip_prob must be in [0, 1], max_shift >= 0, photometric in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**raw)


class TrainingDiverged(LaneformerError):
    """Raised when the loss or a gradient turns non-finite; ``snapshot`` names the dump."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


# ------------------------------------------------------------------ datasets


def samples_from_scenes(spec, indices):
    out = []
    for i in indices:
        sc = gen_scene(spec, i)
        out.append(Sample(frame_id(i), sc.image, sc.lanes, sc.boxes, sc.category))
    return out


def synthetic_splits(spec, n):
    """In-memory train/val samples following the same split as ``gen_dataset``."""
    splits = split_indices(n, spec.seed, spec.val_fraction)
    train = [i for i in range(n) if splits[i] == "train"]
    val = [i for i in range(n) if splits[i] == "val"]
    return samples_from_scenes(spec, train), samples_from_scenes(spec, val)


def load_dataset(data_dir, split=None):
    """Samples from a directory written by ``gen_dataset``; ``split`` filters by the manifest tag."""
    try:
        records = load_manifest(data_dir)
        spec = load_spec(data_dir)
        with open(os.path.join(data_dir, "detections.txt")) as fh:
            dets = parse_detections(fh.read())
    except FileNotFoundError as exc:
        raise LaneformerError(f"dataset {data_dir} is incomplete: {exc}") from exc
    out = []
    for rec in records:
        if split is not None and rec["split"] != split:
            continue
        image = read_pgm(os.path.join(data_dir, rec["image"]))
        with open(os.path.join(data_dir, rec["gt"])) as fh:
            lanes = parse_culane_lines(fh.read(), spec.canvas)
        out.append(Sample(rec["frame"], image, lanes, dets.get(rec["frame"], []), rec["category"]))
    if not out:
        raise LaneformerError(f"dataset {data_dir} has no frames" + (f" in split {split!r}" if split else ""))
    return out


# -------------------------------------------------------------- augmentation


def _shift_columns(image, k):
    """Shift right by ``k`` pixels (left when negative), repeating the edge column."""
    if k == 0:
        return image
    out = np.roll(image, k, axis=1)
    if k > 0:
        out[:, :k] = image[:, :1]
    else:
        out[:, k:] = image[:, -1:]
    return out


def augment_sample(sample, rng, tcfg):
    """Random mirror, integer horizontal shift and gain/offset jitter of one frame.

    With pixel centres at ``x * W`` a mirror maps ``x`` to ``(W - 1) / W - x``
    and a shift of ``k`` pixels adds ``k / W``; lanes and boxes move with the
    image. Out-of-frame lane points are kept as regression targets.
    """
    image = sample.image
    w = image.shape[1]
    lanes, boxes = sample.lanes, sample.boxes
    flip = rng.uniform() < tcfg.hflip_prob
    k = int(rng.integers(-tcfg.max_shift, tcfg.max_shift + 1)) if tcfg.max_shift else 0
    gain, offset = (rng.uniform(1 - tcfg.photometric, 1 + tcfg.photometric),
                    rng.uniform(-tcfg.photometric, tcfg.photometric)) if tcfg.photometric else (1.0, 0.0)
    if flip:
        image = image[:, ::-1]
        m = (w - 1) / w
        lanes = [Lane(np.where(ln.valid, m - ln.xs, 0.0), ln.s, ln.e) for ln in lanes]
        boxes = [replace(b, x1=max(m - b.x2, 0.0), x2=min(m - b.x1, 1.0)) for b in boxes]
    if k:
        image = _shift_columns(image, k)
        lanes = [Lane(np.where(ln.valid, ln.xs + k / w, 0.0), ln.s, ln.e) for ln in lanes]
        boxes = [replace(b, x1=min(max(b.x1 + k / w, 0.0), 1.0), x2=min(max(b.x2 + k / w, 0.0), 1.0))
                 for b in boxes]
    boxes = [b for b in boxes if not b.degenerate]  # shifted fully out of frame
    if gain != 1.0 or offset != 0.0:
        image = np.clip(image * gain + offset, 0.0, 1.0)
    return replace(sample, image=np.ascontiguousarray(image), lanes=lanes, boxes=boxes)


# ------------------------------------------------------------------ optimiser


class AdaptiveStep:
    """Momentum-free adaptive update: each coordinate is scaled by a running RMS of its gradient.

    ``v = rho v + (1 - rho) g^2``; ``p -= lr g / (sqrt(v / (1 - rho^t)) + eps)``,
    with optional decoupled weight decay and one learning rate per group.
    """

    def __init__(self, params, groups, lrs, rho=0.999, eps=1e-8, weight_decay=0.0):
        self.params = params
        self.groups = groups
        self.lrs = dict(lrs)
        self.rho, self.eps, self.weight_decay = rho, eps, weight_decay
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        corr = 1.0 - self.rho ** self.t
        for group, names in self.groups.items():
            lr = self.lrs[group]
            if lr == 0:
                continue
            for k in names:
                g = grads[k]
                v = self.v[k]
                v *= self.rho
                v += (1.0 - self.rho) * g * g
                p = self.params[k].data
                if self.weight_decay:
                    p -= lr * self.weight_decay * p
                p -= lr * g / (np.sqrt(v / corr) + self.eps)


def clip_by_global_norm(grads, max_norm):
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if not math.isfinite(norm):
        raise NonFiniteError("gradient norm is not finite")
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------- steps


def prepare_batch(cfg, samples, rng):
    images = np.stack([s.image for s in samples])
    seeds = rng.integers(0, 2 ** 31, size=len(samples))
    boxes = [select_and_pad(s.boxes, cfg.n_boxes, cfg.box_score_threshold, int(sd)) for s, sd in zip(samples, seeds)]
    slots = [pad_ground_truth(s.lanes, cfg.n_queries) for s in samples]
    return images, boxes, slots


def batch_objective(params, cfg, images, boxes, slots, sigmas=None, rng=None):
    """Forward, match each frame (unless ``sigmas`` is given) and return (loss Tensor, sigmas, output).

    ``rng`` turns on dropout for this pass.
    """
    out = lm.forward(params, cfg, images, boxes if cfg.detection_attention else None, rng=rng)
    if sigmas is None:
        sigmas = [match_frame_predictions(sl, out.probs.data[i], out.reg.data[i], cfg.loss_weights).sigma
                  for i, sl in enumerate(slots)]
    loss = batch_loss(slots, out.probs, out.reg, sigmas, cfg.loss_weights, reduce="mean")
    return loss, sigmas, out


def gradients(params, loss):
    for t in params.values():
        t.grad = None
    loss.backward()
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for k, t in params.items()}


def lr_at(tcfg, epoch):
    factor = tcfg.lr_drop_factor if epoch >= tcfg.lr_drop_epoch else 1.0
    return {"backbone": tcfg.lr_backbone * factor, "transformer": tcfg.lr_transformer * factor}


def _snapshot(out_dir, params, cfg, info):
    if not out_dir:
        return None
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "diverged.ckpt")
    lm.save_checkpoint(path, params, cfg, extra=info)
    return path


def train(cfg, tcfg, train_set, val_set=None, params=None, out_dir=None, log=None, progress=None):
    """Train in place and return ``(params, history)``.

    ``history`` holds the per-step and per-epoch records that also go to
    ``log`` (a writable text stream) as JSON lines. When ``out_dir`` is set the
    final checkpoint is written to ``out_dir/model.ckpt``.
    """
    if not train_set:
        raise LaneformerError("training set is empty")
    if params is None:
        params = lm.init_params(cfg, tcfg.seed)
    groups = lm.param_groups(params)
    opt = AdaptiveStep(params, groups, lr_at(tcfg, 0), tcfg.rms_decay, tcfg.eps, tcfg.weight_decay)
    rng = np.random.default_rng([tcfg.seed, 0x7EA1])
    history = []

    def emit(rec):
        history.append(rec)
        if log is not None:
            log.write(json.dumps(rec, sort_keys=True) + "\n")
        if progress is not None:
            progress(rec)

    step = 0
    for epoch in range(tcfg.epochs):
        opt.lrs = lr_at(tcfg, epoch)
        order = rng.permutation(len(train_set))
        for start in range(0, len(order), tcfg.batch_size):
            batch = [augment_sample(train_set[i], rng, tcfg) for i in order[start:start + tcfg.batch_size]]
            images, boxes, slots = prepare_batch(cfg, batch, rng)
            info = {"epoch": epoch, "step": step, "frames": [s.frame for s in batch]}
            try:
                loss, sigmas, out = batch_objective(params, cfg, images, boxes, slots, rng=rng)
                if not math.isfinite(loss.item()):
                    raise NonFiniteError(f"loss is {loss.item()}")
                grads = gradients(params, loss)
                gnorm = clip_by_global_norm(grads, tcfg.grad_clip)
            except NonFiniteError as exc:
                path = _snapshot(out_dir, params, cfg, info)
                raise TrainingDiverged(f"non-finite value at epoch {epoch} step {step}: {exc}"
                                       + (f"; snapshot written to {path}" if path else ""), path) from exc
            opt.step(grads)
            if step % tcfg.log_every == 0:
                terms = loss_terms(slots, out.probs.data, out.reg.data, sigmas, cfg.loss_weights)
                emit({"kind": "step", "epoch": epoch, "step": step, "loss": loss.item(),
                      "grad_norm": gnorm, **{k: v / len(batch) for k, v in terms.items()}})
            step += 1
        if val_set and ((epoch + 1) % tcfg.eval_every == 0 or epoch + 1 == tcfg.epochs):
            rep = evaluate(params, cfg, val_set)
            emit({"kind": "epoch", "epoch": epoch, "step": step, **{f"val_{k}": v for k, v in rep.summary().items()}})
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        lm.save_checkpoint(os.path.join(out_dir, "model.ckpt"), params, cfg, extra={"train": tcfg.to_dict()})
    return params, history


# ----------------------------------------------------------------- evaluation


def predict(params, cfg, samples, rng_seed=0, threshold=None, batch_size=16):
    """Predicted lanes per sample; padded boxes for frame ``k`` use seed ``rng_seed + k``."""
    thr = cfg.score_threshold_infer if threshold is None else threshold
    preds = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([s.image for s in chunk])
        boxes = [select_and_pad(s.boxes, cfg.n_boxes, cfg.box_score_threshold, rng_seed + start + k)
                 for k, s in enumerate(chunk)]
        with nx.no_grad():
            out = lm.forward(params, cfg, images, boxes if cfg.detection_attention else None)
        for k in range(len(chunk)):
            preds.append(lm.predictions_to_lanes(out.probs.data[k], out.reg.data[k], thr))
    return preds


def evaluate_predictions(preds, samples, image_size, line_width=None):
    if len(preds) != len(samples):
        raise LaneformerError(f"{len(preds)} predictions for {len(samples)} frames")
    if line_width is None:
        line_width = scaled_line_width(image_size)
    per_cat = {}
    for pr, s in zip(preds, samples):
        tp, fp, fn = match_frame(pr, s.lanes, image_size=image_size, line_width=line_width)
        per_cat.setdefault(s.category, EvalReport()).add(tp, fp, fn)
    return aggregate(per_cat)


def evaluate(params, cfg, samples, rng_seed=0):
    """CULane-style report (with per-category breakdown) at the model's image size."""
    return evaluate_predictions(predict(params, cfg, samples, rng_seed), samples, cfg.image_size)


# ------------------------------------------------------------------- ablation

ABLATION_ROWS = (
    ("baseline", dict(row_column=False, detection_attention=False, use_score_weighting=False, use_category=False)),
    ("+ row-column attention", dict(row_column=True, detection_attention=False, use_score_weighting=False,
                                    use_category=False)),
    ("+ bounding box", dict(row_column=True, detection_attention=True, use_score_weighting=False,
                            use_category=False)),
    ("+ score", dict(row_column=True, detection_attention=True, use_score_weighting=True, use_category=False)),
    ("+ category", dict(row_column=True, detection_attention=True, use_score_weighting=True, use_category=True)),
)


@dataclass
class AblationResult:
    name: str
    switches: dict
    report: EvalReport
    n_params: int


def ablation_suite(cfg, tcfg, train_set, val_set, rows=ABLATION_ROWS, log=None):
    """Train one model per switch combination (in lattice order) and evaluate each on ``val_set``."""
    results = []
    for name, switches in rows:
        c = replace(cfg, **switches)
        params, _ = train(c, tcfg, train_set, val_set=None, log=log)
        results.append(AblationResult(name, dict(switches), evaluate(params, c, val_set), lm.count_params(params)))
    return results


def ablation_table(results):
    head = ["Configuration", "row-col", "bbox", "score", "category", "F1(%)", "Precision(%)", "Recall(%)"]
    rows = []
    for r in results:
        sw = r.switches
        mark = lambda on: "x" if on else ""  # noqa: E731
        rows.append([r.name, mark(sw["row_column"]), mark(sw["detection_attention"]),
                     mark(sw["use_score_weighting"]), mark(sw["use_category"]),
                     f"{100 * r.report.f1:.2f}", f"{100 * r.report.precision:.2f}", f"{100 * r.report.recall:.2f}"])
    widths = [max(len(x[i]) for x in [head, *rows]) for i in range(len(head))]
    fmt = lambda row: " | ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))  # noqa: E731
    return "\n".join([fmt(head), "-+-".join("-" * w for w in widths), *map(fmt, rows)]) + "\n"
