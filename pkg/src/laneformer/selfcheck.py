"""Finite-difference checks over every differentiable block, on small configurations."""
from dataclasses import dataclass

import numpy as np

from . import attention as att
from . import model as lm
from . import numerics as nx
from .detections import DetectionBox, roi_embeddings, select_and_pad
from .lanes import N_ROWS, Lane
from .matching import batch_loss, match_frame_predictions, pad_ground_truth

TOLERANCE = 1e-5
# central-difference step; large enough that round-off stays well under the tolerance
STEP = 1e-5

PRESETS = {
    "toy": dict(d_model=8, n_queries=3, n_boxes=2, heads=2, ffn_dim=8, backbone_widths=(2, 3, 4),
                image_size=(16, 32)),
}


@dataclass
class CheckResult:
    block: str
    max_rel_error: float
    n_params: int

    @property
    def passed(self):
        return bool(self.max_rel_error < TOLERANCE)


def preset_config(name, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return lm.ModelConfig(**{**PRESETS[name], **overrides})


def _probe_check(fn, arrays, rng, max_coords=None):
    """grad_check of <fn(*arrays), fixed random probe>, so every output element contributes."""
    params = [nx.Tensor(a, requires_grad=True) for a in arrays]
    probe = None

    def f():
        nonlocal probe
        out = fn(*params)
        if probe is None:
            probe = rng.normal(size=out.shape)
        return nx.tsum(nx.mul(out, probe))

    return nx.grad_check(f, params, eps=STEP, max_coords=max_coords, rng=rng), sum(a.size for a in arrays)


def _random_boxes(rng, m):
    boxes = []
    for _ in range(m):
        x1, y1 = rng.uniform(0, 0.6, size=2)
        w, h = rng.uniform(0.15, 0.4, size=2)
        boxes.append(DetectionBox(x1, y1, x1 + w, y1 + h, float(rng.uniform(0.6, 1.0)), "car"))
    return boxes


def _random_lane(rng):
    s, e = sorted(rng.uniform(0.05, 0.95, size=2))
    if e - s < 0.2:
        s, e = 0.1, 0.9
    return Lane(rng.uniform(0.1, 0.9, size=N_ROWS), s, e)


def _generic_params(cfg, rng):
    """Initial parameters with jittered biases, so no pre-activation sits exactly on a ReLU kink."""
    params = lm.init_params(cfg, seed=int(rng.integers(1 << 30)))
    for k, t in params.items():
        if k.endswith(".b"):
            t.data += rng.normal(scale=0.1, size=t.data.shape)
    return params


def _mha_arrays(rng, d):
    out = []
    for _ in range(4):
        out += [rng.normal(scale=0.5, size=(d, d)), rng.normal(scale=0.1, size=d)]
    return out


def block_cases(cfg, rng):
    """{name: (fn, arrays)} for the attention, detection and network blocks."""
    d = cfg.d_model
    fh, fw = cfg.feature_hw
    fd = cfg.feature_dim
    b = 2
    boxes = [select_and_pad(_random_boxes(rng, cfg.n_boxes - 1), cfg.n_boxes, 0.6, k) for k in range(b)]
    keys = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")

    def mha(x, y, *w):
        return att.multi_head_attention(x, y, y, dict(zip((f"m.{k}" for k in keys), w)), "m", cfg.heads).values

    base = _generic_params(cfg, rng)
    images = rng.uniform(size=(b, *cfg.image_size, cfg.image_channels))

    def with_params(names, fn):
        def run(*arrays):
            p = dict(base)
            p.update(zip(names, arrays))
            return fn(p)
        return run, [base[k].data.copy() for k in names]

    enc_names = [k for k in base if k.startswith("enc") or k.startswith("input_proj")]
    dec_names = [k for k in base if k.startswith("dec") or k == "query_embed"]
    h_f = nx.relu(nx.Tensor(rng.normal(size=(b, fh, fw, fd)))).data

    def enc_fn(p):
        h_r, h_c = lm.rows_and_columns(nx.Tensor(h_f))
        z_b, z_r, _ = lm.detection_embeddings(p, cfg, nx.Tensor(h_f), boxes)
        return lm.encoder_forward(p, cfg, nx.Tensor(h_f), h_r, h_c, z_b, z_r)

    memory = rng.normal(size=(b, fh * fw, d))
    zb, zr = rng.normal(size=(b, cfg.n_boxes, d)), rng.normal(size=(b, cfg.n_boxes, d))

    feats = rng.normal(size=(b, cfg.n_queries, d))

    def dec_fn(p):
        return lm.decoder_forward(p, cfg, nx.Tensor(memory), nx.Tensor(zb), nx.Tensor(zr))

    cases = {
        "scaled_dot_attention": (lambda q, k, v: att.scaled_dot_attention(q, k, v).values,
                                 [rng.normal(size=(2, 4, d)), rng.normal(size=(2, 5, d)), rng.normal(size=(2, 5, 3))]),
        "multi_head_attention": (mha, [rng.normal(size=(2, 4, d)), rng.normal(size=(2, 5, d))] + _mha_arrays(rng, d)),
        "row_attention": (lambda x, w, bb: att.row_attention(x, w, bb).values,
                          [rng.normal(size=(b, fh, fw * fd)), rng.normal(scale=0.3, size=(fw * fd, d)),
                           rng.normal(size=d)]),
        "column_attention": (lambda x, w, bb: att.column_attention(x, w, bb).values,
                             [rng.normal(size=(b, fw, fh * fd)), rng.normal(scale=0.3, size=(fh * fd, d)),
                              rng.normal(size=d)]),
        "pixel_to_bbox": (lambda h, z1, z2: att.pixel_to_bbox(h, z1, z2).values,
                          [rng.normal(size=(b, fh * fw, d)), rng.normal(size=(b, cfg.n_boxes, d)),
                           rng.normal(size=(b, cfg.n_boxes, d))]),
        "query_to_bbox": (lambda q, z1, z2: att.query_to_bbox(q, z1, z2).values,
                          [rng.normal(size=(b, cfg.n_queries, d)), rng.normal(size=(b, cfg.n_boxes, d)),
                           rng.normal(size=(b, cfg.n_boxes, d))]),
        "roi_embeddings": (lambda f, w, bb: roi_embeddings(f, boxes[0], w, bb, cfg.roi_size)[0],
                           [rng.normal(size=(fh, fw, fd)), rng.normal(scale=0.3, size=(cfg.roi_size ** 2 * fd, d)),
                            rng.normal(size=d)]),
        "backbone_forward": with_params([k for k in base if k.startswith("backbone.")],
                                        lambda p: lm.backbone_forward(p, cfg, images)[0].h_f),
        "encoder_forward": with_params(enc_names + [k for k in base if k.startswith("det.")], enc_fn),
        "decoder_forward": with_params(dec_names, dec_fn),
        "predict_heads": with_params([k for k in base if k.startswith("head.")],
                                     lambda p: nx.concat(lm.predict_heads(p, nx.Tensor(feats)), axis=-1)),
    }
    return cases


def full_loss_checks(cfg, rng, max_coords=None):
    """Loss gradient with respect to each parameter group, with the assignment held fixed."""
    params = _generic_params(cfg, rng)
    b = 2
    images = rng.uniform(size=(b, *cfg.image_size, cfg.image_channels))
    boxes = [select_and_pad(_random_boxes(rng, cfg.n_boxes - 1), cfg.n_boxes, 0.6, k) for k in range(b)]
    slots = [pad_ground_truth([_random_lane(rng) for _ in range(k + 1)], cfg.n_queries) for k in range(b)]
    with nx.no_grad():
        out = lm.forward(params, cfg, images, boxes)
    sigmas = [match_frame_predictions(sl, out.probs.data[i], out.reg.data[i], cfg.loss_weights).sigma
              for i, sl in enumerate(slots)]

    def f():
        o = lm.forward(params, cfg, images, boxes)
        return batch_loss(slots, o.probs, o.reg, sigmas, cfg.loss_weights)

    results = []
    for group, names in lm.param_groups(params).items():
        ts = [params[k] for k in names]
        err = nx.grad_check(f, ts, eps=STEP, max_coords=max_coords, rng=rng)
        results.append(CheckResult(f"loss/{group}", err, sum(t.data.size for t in ts)))
    return results


def gradient_suite(cfg=None, seed=0, max_coords=None):
    """Run every block check and the full-loss check; returns a list of CheckResult."""
    cfg = preset_config("toy") if cfg is None else cfg
    rng = np.random.default_rng([seed, 0x6C])
    results = []
    for name, (fn, arrays) in block_cases(cfg, rng).items():
        err, n = _probe_check(fn, arrays, rng, max_coords)
        results.append(CheckResult(name, err, n))
    results += full_loss_checks(cfg, rng, max_coords)
    return results
