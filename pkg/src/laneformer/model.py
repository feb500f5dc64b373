"""The full network: toy backbone, detection processing, encoder, decoder, heads.

Parameters live in a flat ``{name: Tensor}`` dict. Activations carry a leading
batch axis throughout; every frame in a batch has exactly ``n_boxes`` box slots.
"""
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import attention as att
from . import numerics as nx
from .detections import BOX_DIM, encode_boxes, roi_weight_matrix, select_and_pad
from .errors import LaneformerError, ShapeError
from .lanes import N_ROWS, Lane

STAGES = ("C3", "C4", "C5")
CHECKPOINT_MAGIC = b"LFCKPT\x00\x01"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    d_model: int = 64
    n_queries: int = 25
    n_boxes: int = 10
    encoder_layers: int = 1
    decoder_layers: int = 1
    heads: int = 1
    ffn_dim: int = 128
    roi_size: int = 3
    feature_stage: str = "C4"
    score_threshold_infer: float = 0.8
    box_score_threshold: float = 0.6
    loss_weights: tuple = (2.0, 10.0, 10.0, 10.0)
    backbone_widths: tuple = (16, 32, 64)
    image_size: tuple = (64, 128)
    image_channels: int = 1
    coord_channels: bool = True
    dropout: float = 0.1  # training only, on each sublayer output before its residual add
    # ablation switches
    row_column: bool = True
    detection_attention: bool = True
    use_score_weighting: bool = True
    use_category: bool = True

    def __post_init__(self):
        self.loss_weights = tuple(float(v) for v in self.loss_weights)
        self.backbone_widths = tuple(int(v) for v in self.backbone_widths)
        self.image_size = tuple(int(v) for v in self.image_size)
        if self.feature_stage not in STAGES:
            raise ValueError(f"feature_stage must be one of {STAGES}")
        ints = (self.d_model, self.n_queries, self.n_boxes, self.encoder_layers, self.decoder_layers,
                self.heads, self.ffn_dim, self.roi_size, self.image_channels, *self.backbone_widths,
                *self.image_size)
        if min(ints) < 1 or min(self.loss_weights) <= 0:
            raise ValueError("model sizes and loss weights must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if len(self.backbone_widths) != 3:
            raise ValueError("backbone_widths needs one width per stage (C3, C4, C5)")
        if self.d_model % 4:
            raise ValueError("d_model must be divisible by 4 for 2-D position encodings")
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        h, w = self.image_size
        if h % self.total_stride or w % self.total_stride:
            raise ShapeError(f"image size {self.image_size} must be divisible by stride {self.total_stride}")

    @property
    def total_stride(self):
        """Stride of the working stage; later stages are never computed."""
        return 2 ** (self.stage_index + 1)

    @property
    def stage_index(self):
        return STAGES.index(self.feature_stage)

    @property
    def feature_hw(self):
        s = self.total_stride
        return self.image_size[0] // s, self.image_size[1] // s

    @property
    def feature_dim(self):
        return self.backbone_widths[self.stage_index]

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, raw):
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class BackboneFeatures:
    stages: dict  # name -> Tensor (B, h, w, d)
    working: str

    @property
    def h_f(self):
        return self.stages[self.working]


@dataclass
class ForwardOutput:
    probs: nx.Tensor  # (B, N, 2)
    reg: nx.Tensor  # (B, N, 74)
    attention: dict = field(default_factory=dict)
    n_degenerate: int = 0


# ------------------------------------------------------------ initialisation


def _xavier(rng, fan_in, fan_out, shape=None):
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def _mha_params(rng, p, prefix, d):
    for k in ("q", "k", "v", "o"):
        p[f"{prefix}.w{k}"] = _xavier(rng, d, d)
        p[f"{prefix}.b{k}"] = np.zeros(d)


def _ln_params(p, prefix, d):
    p[f"{prefix}.g"] = np.ones(d)
    p[f"{prefix}.b"] = np.zeros(d)


def init_params(cfg, seed=0):
    """Deterministic parameter set for ``cfg``."""
    rng = np.random.default_rng([int(seed), 0xA11CE])
    p = {}
    d = cfg.d_model
    cin = cfg.image_channels + (2 if cfg.coord_channels else 0)
    for name, cout in zip(STAGES[:cfg.stage_index + 1], cfg.backbone_widths):
        p[f"backbone.{name}.conv1.w"] = _xavier(rng, 9 * cin, 9 * cout, (3, 3, cin, cout))
        p[f"backbone.{name}.conv1.b"] = np.zeros(cout)
        p[f"backbone.{name}.conv2.w"] = _xavier(rng, 9 * cout, 9 * cout, (3, 3, cout, cout))
        p[f"backbone.{name}.conv2.b"] = np.zeros(cout)
        cin = cout
    fh, fw = cfg.feature_hw
    fd = cfg.feature_dim
    p["input_proj.w"] = _xavier(rng, fd, d)
    p["input_proj.b"] = np.zeros(d)
    if cfg.detection_attention:
        p["det.box.w"] = _xavier(rng, BOX_DIM if cfg.use_category else 4, d)
        p["det.box.b"] = np.zeros(d)
        p["det.roi.w"] = _xavier(rng, cfg.roi_size ** 2 * fd, d)
        p["det.roi.b"] = np.zeros(d)
    for layer in range(cfg.encoder_layers):
        pre = f"enc{layer}"
        _mha_params(rng, p, f"{pre}.sa", d)
        if cfg.row_column:
            row_in, col_in = (fw * fd, fh * fd) if layer == 0 else (fw * d, fh * d)
            p[f"{pre}.row.w"] = _xavier(rng, row_in, d)
            p[f"{pre}.row.b"] = np.zeros(d)
            p[f"{pre}.col.w"] = _xavier(rng, col_in, d)
            p[f"{pre}.col.b"] = np.zeros(d)
        p[f"{pre}.ffn1.w"] = _xavier(rng, d, cfg.ffn_dim)
        p[f"{pre}.ffn1.b"] = np.zeros(cfg.ffn_dim)
        p[f"{pre}.ffn2.w"] = _xavier(rng, cfg.ffn_dim, d)
        p[f"{pre}.ffn2.b"] = np.zeros(d)
        _ln_params(p, f"{pre}.ln1", d)
        _ln_params(p, f"{pre}.ln2", d)
    p["query_embed"] = rng.normal(0.0, 1.0, size=(cfg.n_queries, d))
    for layer in range(cfg.decoder_layers):
        pre = f"dec{layer}"
        _mha_params(rng, p, f"{pre}.sa", d)
        _mha_params(rng, p, f"{pre}.ca", d)
        p[f"{pre}.ffn1.w"] = _xavier(rng, d, cfg.ffn_dim)
        p[f"{pre}.ffn1.b"] = np.zeros(cfg.ffn_dim)
        p[f"{pre}.ffn2.w"] = _xavier(rng, cfg.ffn_dim, d)
        p[f"{pre}.ffn2.b"] = np.zeros(d)
        for k in (1, 2, 3):
            _ln_params(p, f"{pre}.ln{k}", d)
    p["head.cls.w"] = _xavier(rng, d, 2)
    p["head.cls.b"] = np.zeros(2)
    p["head.reg1.w"] = _xavier(rng, d, d)
    p["head.reg1.b"] = np.zeros(d)
    p["head.reg2.w"] = _xavier(rng, d, d)
    p["head.reg2.b"] = np.zeros(d)
    p["head.reg3.w"] = _xavier(rng, d, N_ROWS + 2)
    p["head.reg3.b"] = np.zeros(N_ROWS + 2)
    return {k: nx.Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def param_groups(params):
    """Split parameter names into the backbone and transformer learning-rate groups."""
    backbone = [k for k in params if k.startswith("backbone.")]
    rest = [k for k in params if not k.startswith("backbone.")]
    return {"backbone": backbone, "transformer": rest}


def count_params(params):
    return int(sum(t.data.size for t in params.values()))


# ------------------------------------------------------------------- forward


def coord_channels(b, h, w):
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    grid = np.stack(np.meshgrid(xs, ys), axis=-1)  # (h, w, 2): x, y
    return np.broadcast_to(grid, (b, h, w, 2))


def backbone_forward(p, cfg, images):
    """Toy strided CNN. Returns BackboneFeatures plus row (B, h, w*d) and column (B, w, h*d) features."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    b, h, w, c = x.shape
    if c != cfg.image_channels:
        raise ShapeError(f"image has {c} channels, config expects {cfg.image_channels}")
    if h % cfg.total_stride or w % cfg.total_stride:
        raise ShapeError(f"image {h}x{w} is not divisible by the required stride {cfg.total_stride}")
    if cfg.coord_channels:
        x = np.concatenate([x, coord_channels(b, h, w)], axis=-1)
    t = nx.Tensor(x)
    stages = {}
    for name in STAGES[:cfg.stage_index + 1]:
        t = nx.relu(nx.conv2d(t, p[f"backbone.{name}.conv1.w"], p[f"backbone.{name}.conv1.b"], stride=2, padding=1))
        t = nx.relu(nx.conv2d(t, p[f"backbone.{name}.conv2.w"], p[f"backbone.{name}.conv2.b"], stride=1, padding=1))
        stages[name] = t
    feats = BackboneFeatures(stages, cfg.feature_stage)
    h_r, h_c = rows_and_columns(feats.h_f)
    return feats, h_r, h_c


def rows_and_columns(h_f):
    """Flatten each row (B, h, w*d) and each column (B, w, h*d) of a (B, h, w, d) map."""
    b, h, w, d = h_f.shape
    h_r = nx.reshape(h_f, (b, h, w * d))
    h_c = nx.reshape(nx.transpose(h_f, (0, 2, 1, 3)), (b, w, h * d))
    return h_r, h_c


def detection_embeddings(p, cfg, h_f, boxes_batch):
    """Z_b, Z_r as (B, M, d') Tensors, plus the count of degenerate boxes."""
    b, fh, fw, fd = h_f.shape
    if len(boxes_batch) != b:
        raise ShapeError(f"{len(boxes_batch)} box lists for a batch of {b}")
    m = cfg.n_boxes
    enc = np.zeros((b, m, BOX_DIM if cfg.use_category else 4))
    mats = np.zeros((b, m * cfg.roi_size ** 2, fh * fw))
    n_bad = 0
    for i, boxes in enumerate(boxes_batch):
        if len(boxes) != m:
            raise ShapeError(f"frame {i} has {len(boxes)} box slots, expected {m}")
        enc[i] = encode_boxes(boxes, cfg.use_category)
        mats[i], bad = roi_weight_matrix(boxes, (fh, fw), cfg.roi_size, cfg.use_score_weighting)
        n_bad += bad
    z_b = nx.relu(nx.linear(enc, p["det.box.w"], p["det.box.b"]))
    roi = nx.matmul(mats, nx.reshape(h_f, (b, fh * fw, fd)))
    roi = nx.reshape(roi, (b, m, cfg.roi_size ** 2 * fd))
    z_r = nx.relu(nx.linear(roi, p["det.roi.w"], p["det.roi.b"]))
    return z_b, z_r, n_bad


def _ffn(p, pre, x):
    return nx.linear(nx.relu(nx.linear(x, p[f"{pre}.ffn1.w"], p[f"{pre}.ffn1.b"])), p[f"{pre}.ffn2.w"], p[f"{pre}.ffn2.b"])


def _ln(p, pre, x):
    return nx.layer_norm(x, p[f"{pre}.g"], p[f"{pre}.b"])


def dropout_fn(rate, rng):
    """Inverted dropout with masks drawn from ``rng``; identity when ``rng`` is None or rate is 0."""
    if rng is None or rate == 0.0:
        return lambda x: x

    def drop(x):
        keep = rng.uniform(size=x.shape) >= rate
        return nx.mul(x, keep / (1.0 - rate))

    return drop


def encoder_forward(p, cfg, h_f, h_r, h_c, z_b=None, z_r=None, attn=None, drop=None):
    """Memory tokens (B, h*w, d').

    Per layer: fused = self-attention + pixel-to-box attention + row output
    broadcast along its row + column output broadcast down its column; then
    ``x = LN(x + fused)`` and ``x = LN(x + FFN(x))``. Layer 0 reads row/column
    features from the backbone, later layers from the current token map.
    ``drop`` (see ``dropout_fn``) is applied to the fused and FFN outputs.
    """
    drop = drop or (lambda t: t)
    b, fh, fw, fd = h_f.shape
    d = cfg.d_model
    x = nx.linear(nx.reshape(h_f, (b, fh * fw, fd)), p["input_proj.w"], p["input_proj.b"])
    pos = nx.sinusoidal_grid(fh, fw, d)
    for layer in range(cfg.encoder_layers):
        pre = f"enc{layer}"
        qk = nx.add(x, pos)
        sa = att.multi_head_attention(qk, qk, x, p, f"{pre}.sa", cfg.heads)
        fused = sa.values
        if attn is not None:
            attn[f"{pre}.self"] = sa.weights
        if cfg.detection_attention and z_b is not None:
            p2b = att.pixel_to_bbox(x, z_b, z_r)
            fused = nx.add(fused, p2b.values)
            if attn is not None:
                attn[f"{pre}.pixel_to_bbox"] = p2b.weights
        if cfg.row_column:
            if layer == 0:
                rows, cols = h_r, h_c
            else:
                rows, cols = rows_and_columns(nx.reshape(x, (b, fh, fw, d)))
            ro = att.row_attention(rows, p[f"{pre}.row.w"], p[f"{pre}.row.b"])
            co = att.column_attention(cols, p[f"{pre}.col.w"], p[f"{pre}.col.b"])
            grid = att.broadcast_rows_cols(nx.reshape(fused, (b, fh, fw, d)), ro.values, co.values)
            fused = nx.reshape(grid, (b, fh * fw, d))
            if attn is not None:
                attn[f"{pre}.row"] = ro.weights
                attn[f"{pre}.column"] = co.weights
        x = _ln(p, f"{pre}.ln1", nx.add(x, drop(fused)))
        x = _ln(p, f"{pre}.ln2", nx.add(x, drop(_ffn(p, pre, x))))
    return x


def decoder_forward(p, cfg, memory, z_b=None, z_r=None, query_embeddings=None, attn=None, drop=None):
    """Per-query features (B, N, d').

    Per layer: query self-attention; then cross-attention on memory (keys carry
    2-D sinusoids) plus query-to-box attention, added; then the feed-forward
    block. Residual + layer norm after each, with ``drop`` on each sublayer output.
    """
    drop = drop or (lambda t: t)
    b, t, d = memory.shape
    fh, fw = cfg.feature_hw
    if t != fh * fw:
        raise ShapeError(f"memory has {t} tokens, expected {fh}x{fw}")
    q = p["query_embed"] if query_embeddings is None else nx.as_tensor(query_embeddings)
    tgt = nx.add(np.zeros((b, *q.shape)), q)
    mem_k = nx.add(memory, nx.sinusoidal_grid(fh, fw, d))
    for layer in range(cfg.decoder_layers):
        pre = f"dec{layer}"
        sa = att.multi_head_attention(tgt, tgt, tgt, p, f"{pre}.sa", cfg.heads)
        tgt = _ln(p, f"{pre}.ln1", nx.add(tgt, drop(sa.values)))
        ca = att.multi_head_attention(tgt, mem_k, memory, p, f"{pre}.ca", cfg.heads)
        mixed = ca.values
        if attn is not None:
            attn[f"{pre}.self"] = sa.weights
            attn[f"{pre}.cross"] = ca.weights
        if cfg.detection_attention and z_b is not None:
            q2b = att.query_to_bbox(tgt, z_b, z_r)
            mixed = nx.add(mixed, q2b.values)
            if attn is not None:
                attn[f"{pre}.query_to_bbox"] = q2b.weights
        tgt = _ln(p, f"{pre}.ln2", nx.add(tgt, drop(mixed)))
        tgt = _ln(p, f"{pre}.ln3", nx.add(tgt, drop(_ffn(p, pre, tgt))))
    return tgt


def predict_heads(p, feats):
    """Class probabilities (B, N, 2) and sigmoid-squashed regressions (B, N, 74): 72 x, start, end."""
    probs = nx.softmax(nx.linear(feats, p["head.cls.w"], p["head.cls.b"]), axis=-1)
    h = nx.relu(nx.linear(feats, p["head.reg1.w"], p["head.reg1.b"]))
    h = nx.relu(nx.linear(h, p["head.reg2.w"], p["head.reg2.b"]))
    reg = nx.sigmoid(nx.linear(h, p["head.reg3.w"], p["head.reg3.b"]))
    return probs, reg


def forward(p, cfg, images, boxes_batch=None, keep_attention=False, rng=None):
    """Full network on a batch. ``boxes_batch`` holds exactly ``n_boxes`` boxes per frame.

    Passing ``rng`` switches on training-mode dropout; without it the pass is deterministic.
    """
    drop = dropout_fn(cfg.dropout, rng)
    feats, h_r, h_c = backbone_forward(p, cfg, images)
    attn = {} if keep_attention else None
    z_b = z_r = None
    n_bad = 0
    if cfg.detection_attention:
        if boxes_batch is None:
            raise LaneformerError("detection attention is enabled but no boxes were given")
        z_b, z_r, n_bad = detection_embeddings(p, cfg, feats.h_f, boxes_batch)
    memory = encoder_forward(p, cfg, feats.h_f, h_r, h_c, z_b, z_r, attn, drop)
    q = decoder_forward(p, cfg, memory, z_b, z_r, attn=attn, drop=drop)
    probs, reg = predict_heads(p, q)
    return ForwardOutput(probs, reg, attn or {}, n_bad)


def predictions_to_lanes(probs, reg, threshold):
    """Queries whose lane probability reaches ``threshold`` -> Lanes (no other post-processing).

    Queries whose predicted end lies above their start describe no rows and are dropped.
    """
    out = []
    for q in np.flatnonzero(probs[:, 1] >= threshold):
        s, e = float(reg[q, N_ROWS]), float(reg[q, N_ROWS + 1])
        if e < s:
            continue
        out.append(Lane(reg[q, :N_ROWS], s, e))
    return out


def infer(p, cfg, image, detections=(), rng_seed=0, threshold=None):
    """Lanes for one image given raw detector boxes."""
    if not p:
        raise LaneformerError("model parameters are missing")
    missing = set(init_param_names(cfg)) - set(p)
    if missing:
        raise LaneformerError(f"model parameters are missing: {sorted(missing)[:5]}")
    boxes = select_and_pad(list(detections), cfg.n_boxes, cfg.box_score_threshold, rng_seed)
    with nx.no_grad():
        out = forward(p, cfg, np.asarray(image)[None], [boxes])
    thr = cfg.score_threshold_infer if threshold is None else threshold
    return predictions_to_lanes(out.probs.data[0], out.reg.data[0], thr)


def init_param_names(cfg):
    return list(init_params(cfg, seed=0).keys())


# ---------------------------------------------------------------- checkpoint


def save_checkpoint(path, p, cfg, extra=None):
    """Write parameters to ``path``.

    Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
    ``{"format_version", "config", "extra", "tensors": [{"name", "shape",
    "offset", "nbytes"}]}``, then the tensors as contiguous little-endian
    float64 in header order (offsets relative to the end of the header).
    """
    entries, offset = [], 0
    names = sorted(p)
    for name in names:
        t = p[name].data
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": t.size * 8})
        offset += t.size * 8
    header = json.dumps({"format_version": CHECKPOINT_VERSION, "config": cfg.to_dict(),
                         "extra": extra or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.ascontiguousarray(p[name].data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(params, config, extra)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise LaneformerError(f"{path}: not a checkpoint file")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise LaneformerError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    base = 16 + hlen
    cfg = ModelConfig.from_dict(header["config"])
    expected = {k: v.data.shape for k, v in init_params(cfg).items()}
    stored = {ent["name"]: tuple(ent["shape"]) for ent in header["tensors"]}
    if stored != expected:
        bad = sorted(set(stored.items()) ^ set(expected.items()))
        raise LaneformerError(f"{path}: parameters do not match the stored config, e.g. {bad[0][0]}")
    if len(raw) != base + sum(ent["nbytes"] for ent in header["tensors"]):
        raise LaneformerError(f"{path}: truncated or padded tensor data")
    params = {}
    for ent in header["tensors"]:
        buf = raw[base + ent["offset"]:base + ent["offset"] + ent["nbytes"]]
        arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(ent["shape"])
        params[ent["name"]] = nx.Tensor(arr, requires_grad=True, name=ent["name"])
    return params, cfg, header.get("extra", {})
