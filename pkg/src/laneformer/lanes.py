"""Lane representation on a fixed 72-row grid, and CULane / TuSimple text formats.

A lane is stored in normalised image coordinates: ``xs[k]`` is the x position
(0 = left edge, 1 = right edge) at grid row ``k`` whose y position is
``GRID_Y[k] = k / 71`` (0 = top, 1 = bottom). ``s`` and ``e`` bound the rows the
lane actually occupies; rows outside ``[s, e]`` hold a 0 placeholder and are
never read. Pixel coordinates are ``x * width`` and ``y * height``.
"""
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, GeometryError

N_ROWS = 72
GRID_Y = np.linspace(0.0, 1.0, N_ROWS)
_TOL = 1e-9

CULANE_SIZE = (590, 1640)
TUSIMPLE_SIZE = (720, 1280)


def valid_rows(s, e):
    """Boolean mask of grid rows inside ``[s, e]``."""
    return (GRID_Y >= s - _TOL) & (GRID_Y <= e + _TOL)


@dataclass
class Lane:
    xs: np.ndarray
    s: float
    e: float

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64).copy()
        self.s = float(self.s)
        self.e = float(self.e)
        if self.xs.shape != (N_ROWS,):
            raise GeometryError(f"lane needs {N_ROWS} x values, got shape {self.xs.shape}")
        if not (0.0 <= self.s <= self.e <= 1.0):
            raise GeometryError(f"lane extent must satisfy 0 <= s <= e <= 1, got s={self.s}, e={self.e}")
        if not np.isfinite(self.xs).all():
            raise GeometryError("lane x values must be finite")
        self.xs[~self.valid] = 0.0

    @property
    def valid(self):
        return valid_rows(self.s, self.e)

    @property
    def n_valid(self):
        return int(self.valid.sum())

    def polyline(self):
        """Normalised (x, y) vertices: every valid row plus the exact end points.

        End points that fall between grid rows are extrapolated linearly from the
        two nearest valid rows.
        """
        rows = np.flatnonzero(self.valid)
        if len(rows) == 0:
            return np.zeros((0, 2))
        xs, ys = list(self.xs[rows]), list(GRID_Y[rows])
        # rows admitted by the tolerance snap onto the exact extent
        ys[0] = max(ys[0], self.s)
        ys[-1] = min(ys[-1], self.e)
        if self.s < ys[0]:
            xs.insert(0, _extrapolate(self.xs, rows[:2], self.s))
            ys.insert(0, self.s)
        if self.e > ys[-1]:
            xs.append(_extrapolate(self.xs, rows[-2:][::-1], self.e))
            ys.append(self.e)
        return np.column_stack([xs, ys])

    def to_pixels(self, image_size):
        h, w = image_size
        pts = self.polyline()
        return pts * np.array([w, h], dtype=np.float64)

    def x_at(self, y):
        """x at normalised heights ``y``; NaN outside the lane's extent."""
        pts = self.polyline()
        y = np.asarray(y, dtype=np.float64)
        if len(pts) == 0:
            return np.full(y.shape, np.nan)
        if len(pts) == 1:
            out = np.where(np.abs(y - pts[0, 1]) <= _TOL, pts[0, 0], np.nan)
            return out
        out = np.interp(y, pts[:, 1], pts[:, 0])
        return np.where((y >= self.s - _TOL) & (y <= self.e + _TOL), out, np.nan)

    def same_geometry(self, other, atol):
        return (
            abs(self.s - other.s) <= atol
            and abs(self.e - other.e) <= atol
            and np.array_equal(self.valid, other.valid)
            and np.allclose(self.xs, other.xs, atol=atol, rtol=0)
        )


def _extrapolate(xs, rows, y):
    if len(rows) < 2:
        return float(xs[rows[0]])
    k0, k1 = rows
    slope = (xs[k1] - xs[k0]) / (GRID_Y[k1] - GRID_Y[k0])
    return float(xs[k0] + slope * (y - GRID_Y[k0]))


def resample_to_grid(polyline, image_size=None):
    """Linear interpolation of a polyline onto the 72 grid rows.

    ``polyline`` is a sequence of (x, y) points, in pixels when ``image_size``
    (height, width) is given, otherwise already normalised. The lane extent is
    the polyline's y-span, clipped to the image.
    """
    pts = np.asarray(polyline, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise GeometryError(f"polyline needs at least 2 points, got {len(pts)}")
    if image_size is not None:
        h, w = image_size
        pts = pts / np.array([w, h], dtype=np.float64)
    pts = pts[np.argsort(pts[:, 1], kind="stable")]
    ys = pts[:, 1]
    if ys[-1] - ys[0] <= 0:
        raise GeometryError("polyline has zero vertical span")
    if np.any(np.diff(ys) <= 0):
        raise GeometryError("polyline y values must be strictly monotonic")
    s = min(max(ys[0], 0.0), 1.0)
    e = min(max(ys[-1], 0.0), 1.0)
    xs = np.zeros(N_ROWS)
    mask = valid_rows(s, e)
    xs[mask] = np.interp(GRID_Y[mask], ys, pts[:, 0])
    return Lane(xs, s, e)


def _fmt(v):
    text = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


# --------------------------------------------------------------------- CULane


def parse_culane_lines(text, image_size=CULANE_SIZE):
    """One lane per non-empty line of space-separated ``x y`` pixel pairs."""
    lanes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        if len(tokens) % 2:
            raise FormatError(f"odd number of tokens ({len(tokens)})", line=lineno)
        try:
            vals = np.array([float(t) for t in tokens])
        except ValueError as exc:
            raise FormatError(f"non-numeric token: {exc}", line=lineno) from None
        try:
            lanes.append(resample_to_grid(vals.reshape(-1, 2), image_size))
        except GeometryError as exc:
            raise FormatError(str(exc), line=lineno) from None
    return lanes


def emit_culane_lines(lanes, image_size=CULANE_SIZE):
    """Inverse of :func:`parse_culane_lines`; points are written bottom to top."""
    out = []
    for lane in lanes:
        pts = lane.to_pixels(image_size)[::-1]
        if len(pts) < 2:
            continue
        out.append(" ".join(f"{_fmt(x)} {_fmt(y)}" for x, y in pts))
    return "".join(line + "\n" for line in out)


# ------------------------------------------------------------------- TuSimple


@dataclass
class TuSimpleFrame:
    raw_file: str
    h_samples: list
    lanes: list = field(default_factory=list)


def parse_tusimple_json(text, image_size=TUSIMPLE_SIZE):
    """Line-delimited TuSimple label records -> frames of resampled lanes.

    Negative x values (the format uses -2) mark absent samples and are dropped.
    Lanes with fewer than two present samples produce no Lane.
    """
    h, _ = image_size
    frames = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            h_samples = [float(v) for v in rec["h_samples"]]
            raw_lanes = rec["lanes"]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"bad TuSimple record: {exc}", line=lineno) from None
        lanes = []
        for xs in raw_lanes:
            if len(xs) != len(h_samples):
                raise FormatError(
                    f"lane has {len(xs)} samples but h_samples has {len(h_samples)}", line=lineno
                )
            pts = [(float(x), y) for x, y in zip(xs, h_samples) if x >= 0]
            if len(pts) < 2:
                continue
            lanes.append(resample_to_grid(pts, image_size))
        frames.append(TuSimpleFrame(rec.get("raw_file", ""), h_samples, lanes))
    return frames


def lane_to_tusimple(lane, h_samples, image_size=TUSIMPLE_SIZE):
    h, w = image_size
    xs = lane.x_at(np.asarray(h_samples, dtype=np.float64) / h) * w
    return [-2 if not np.isfinite(x) else round(float(x), 3) for x in xs]


def emit_tusimple_json(frames, image_size=TUSIMPLE_SIZE):
    lines = []
    for fr in frames:
        rec = {
            "lanes": [lane_to_tusimple(ln, fr.h_samples, image_size) for ln in fr.lanes],
            "h_samples": [int(v) if float(v).is_integer() else v for v in fr.h_samples],
            "raw_file": fr.raw_file,
        }
        lines.append(json.dumps(rec))
    return "".join(line + "\n" for line in lines)
