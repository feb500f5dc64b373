"""Position encodings and ROI-aligned feature sampling."""
import numpy as np

from ..errors import GeometryError, ShapeError
from .tensor import as_tensor, matmul, reshape


def sinusoidal_embedding(position, d_model):
    """Interleaved sin/cos encoding of one integer position.

    Entry ``2i`` is ``sin(p / 10000**(2i/d))`` and entry ``2i+1`` the matching cosine.
    """
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    if position < 0:
        raise ValueError(f"position must be >= 0, got {position}")
    return sinusoidal_table(position + 1, d_model)[position]


def sinusoidal_table(length, d_model):
    """Rows ``0..length-1`` of :func:`sinusoidal_embedding`, as a (length, d) array."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.empty((length, d_model))
    table[:, 0::2] = np.sin(pos / freq)
    table[:, 1::2] = np.cos(pos / freq)
    return table


def sinusoidal_grid(h, w, d_model):
    """2-D encoding for an h*w token grid: row code in the first half, column code in the second."""
    if d_model % 4:
        raise ValueError(f"2-D encoding needs d_model divisible by 4, got {d_model}")
    half = d_model // 2
    rows = sinusoidal_table(h, half)
    cols = sinusoidal_table(w, half)
    grid = np.concatenate(
        [np.repeat(rows[:, None, :], w, axis=1), np.repeat(cols[None, :, :], h, axis=0)], axis=-1
    )
    return grid.reshape(h * w, d_model)


def roi_sampling_matrix(box, feat_hw, out_size=3, image_size=None):
    """Bilinear weights mapping a flattened (h*w) feature map to ``out_size**2`` samples.

    ``box`` is (x1, y1, x2, y2) normalised to the image. The box is scaled to the
    feature grid (``w / W`` horizontally, ``h / H`` vertically; with normalised
    boxes this is just multiplication by the feature extents) and one sample is
    taken at the centre of each of the ``out_size x out_size`` bins. Feature cell
    ``(i, j)`` covers ``[j, j+1) x [i, i+1)`` so its centre is at ``(j+0.5, i+0.5)``.
    Sample coordinates are clamped to the map.
    """
    h, w = feat_hw
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (x2 > x1 and y2 > y1):
        raise GeometryError(f"degenerate box {box!r}")
    if out_size < 1:
        raise ValueError("out_size must be >= 1")
    if image_size is not None:
        ih, iw = image_size
        sx, sy = w / iw, h / ih
        x1, x2, y1, y2 = x1 * iw * sx, x2 * iw * sx, y1 * ih * sy, y2 * ih * sy
    else:
        x1, x2, y1, y2 = x1 * w, x2 * w, y1 * h, y2 * h
    frac = (np.arange(out_size) + 0.5) / out_size
    px = np.clip(x1 + frac * (x2 - x1) - 0.5, 0.0, w - 1)
    py = np.clip(y1 + frac * (y2 - y1) - 0.5, 0.0, h - 1)
    mat = np.zeros((out_size, out_size, h * w))
    x0 = np.floor(px).astype(int)
    y0 = np.floor(py).astype(int)
    xn = np.minimum(x0 + 1, w - 1)
    yn = np.minimum(y0 + 1, h - 1)
    ax = px - x0
    ay = py - y0
    for a in range(out_size):
        for b in range(out_size):
            for yy, wy in ((y0[a], 1 - ay[a]), (yn[a], ay[a])):
                for xx, wx in ((x0[b], 1 - ax[b]), (xn[b], ax[b])):
                    mat[a, b, yy * w + xx] += wy * wx
    return mat.reshape(out_size * out_size, h * w)


def roi_align(feature, box, out_size=3, image_size=None):
    """Sample an ``out_size x out_size x d`` patch from an (h, w, d) feature map.

    Linear in ``feature`` and differentiable with respect to it.
    """
    f = as_tensor(feature)
    if f.ndim != 3:
        raise ShapeError(f"roi_align expects (h, w, d) features, got {f.shape}")
    h, w, d = f.shape
    mat = roi_sampling_matrix(box, (h, w), out_size, image_size)
    out = matmul(mat, reshape(f, (h * w, d)))
    return reshape(out, (out_size, out_size, d))
