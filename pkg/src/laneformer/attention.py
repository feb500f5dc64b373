"""Attention operators: generic scaled dot-product, row/column, pixel- and query-to-box.

All operators accept optional leading batch axes. Weights are kept on the
returned :class:`AttentionOutput` so they can be inspected or dumped.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ShapeError


@dataclass
class AttentionOutput:
    values: nx.Tensor
    weights: np.ndarray


def scaled_dot_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v for q: (..., T, d), k: (..., S, d), v: (..., S, dv)."""
    q, k, v = nx.as_tensor(q), nx.as_tensor(k), nx.as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query {q.shape} and key {k.shape} differ in width")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: key {k.shape} and value {v.shape} differ in token count")
    if k.shape[-2] == 0:
        raise ShapeError(f"attention over an empty key set {k.shape}")
    d = q.shape[-1]
    kt = nx.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))
    logits = nx.scale(nx.matmul(q, kt), 1.0 / math.sqrt(d))
    w = nx.softmax(logits, axis=-1)
    return AttentionOutput(nx.matmul(w, v), w.data)


def _split_heads(x, heads):
    *lead, t, d = x.shape
    x = nx.reshape(x, (*lead, t, heads, d // heads))
    n = x.ndim
    return nx.transpose(x, tuple(range(n - 3)) + (n - 2, n - 3, n - 1))


def _merge_heads(x):
    n = x.ndim
    x = nx.transpose(x, tuple(range(n - 3)) + (n - 2, n - 3, n - 1))
    *lead, t, h, d = x.shape
    return nx.reshape(x, (*lead, t, h * d))


def multi_head_attention(q_in, k_in, v_in, p, prefix, heads=1):
    """Projected attention with parameters ``{prefix}.wq/bq/wk/bk/wv/bv/wo/bo`` in ``p``."""
    q = nx.linear(q_in, p[f"{prefix}.wq"], p[f"{prefix}.bq"])
    k = nx.linear(k_in, p[f"{prefix}.wk"], p[f"{prefix}.bk"])
    v = nx.linear(v_in, p[f"{prefix}.wv"], p[f"{prefix}.bv"])
    if q.shape[-1] % heads:
        raise ShapeError(f"width {q.shape[-1]} not divisible by {heads} heads")
    if heads > 1:
        q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
        att = scaled_dot_attention(q, k, v)
        out = _merge_heads(att.values)
    else:
        att = scaled_dot_attention(q, k, v)
        out = att.values
    return AttentionOutput(nx.linear(out, p[f"{prefix}.wo"], p[f"{prefix}.bo"]), att.weights)


def _line_attention(lines, w_reduce, b_reduce, use_positions):
    reduced = nx.linear(lines, w_reduce, b_reduce)
    if use_positions:
        n, d = reduced.shape[-2:]
        qk = nx.add(reduced, nx.sinusoidal_table(n, d))
    else:
        qk = reduced
    return scaled_dot_attention(qk, qk, reduced)


def row_attention(h_r, w_reduce, b_reduce=None, use_positions=True):
    """Self-attention between feature rows.

    ``h_r`` is (..., h, w*d): each row of the feature map flattened. Rows are
    linearly reduced to d', row-index sinusoids are added to queries and keys,
    and values are the reduced rows. Returns (..., h, d').
    """
    h_r = nx.as_tensor(h_r)
    if h_r.ndim < 2 or h_r.shape[-1] != nx.as_tensor(w_reduce).shape[0]:
        raise ShapeError(f"row features {h_r.shape} do not match reduction {nx.as_tensor(w_reduce).shape}")
    return _line_attention(h_r, w_reduce, b_reduce, use_positions)


def column_attention(h_c, w_reduce, b_reduce=None, use_positions=True):
    """Self-attention between feature columns; ``h_c`` is (..., w, h*d)."""
    h_c = nx.as_tensor(h_c)
    if h_c.ndim < 2 or h_c.shape[-1] != nx.as_tensor(w_reduce).shape[0]:
        raise ShapeError(f"column features {h_c.shape} do not match reduction {nx.as_tensor(w_reduce).shape}")
    return _line_attention(h_c, w_reduce, b_reduce, use_positions)


def _box_attention(queries, z_b, z_r):
    z_b, z_r = nx.as_tensor(z_b), nx.as_tensor(z_r)
    if z_b.shape[-2] == 0:
        raise ShapeError("box attention needs at least one box slot")
    if z_b.shape != z_r.shape:
        raise ShapeError(f"box embeddings {z_b.shape} and ROI embeddings {z_r.shape} differ")
    return scaled_dot_attention(queries, z_b, z_r)


def pixel_to_bbox(h_f, z_b, z_r):
    """Pixels of the reduced feature map attend to detections: keys Z_b, values Z_r."""
    return _box_attention(h_f, z_b, z_r)


def query_to_bbox(q, z_b, z_r):
    """Decoder queries attend to detections: keys Z_b, values Z_r."""
    return _box_attention(q, z_b, z_r)


def broadcast_rows_cols(tokens, row_out=None, col_out=None):
    """Add row outputs across each row's pixels and column outputs down each column.

    ``tokens`` is (B, h, w, d'); ``row_out`` (B, h, d'); ``col_out`` (B, w, d').
    """
    out = tokens
    if row_out is not None:
        b, h, d = row_out.shape
        out = nx.add(out, nx.reshape(row_out, (b, h, 1, d)))
    if col_out is not None:
        b, w, d = col_out.shape
        out = nx.add(out, nx.reshape(col_out, (b, 1, w, d)))
    return out


def normalize_for_heatmap(weights):
    """Per-matrix min-max scaling to uint8."""
    w = np.asarray(weights, dtype=np.float64)
    lo, hi = w.min(), w.max()
    if hi - lo <= 0:
        return np.zeros(w.shape, dtype=np.uint8)
    return np.round((w - lo) / (hi - lo) * 255.0).astype(np.uint8)
