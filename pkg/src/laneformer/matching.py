"""Set-prediction matching: pairwise cost, optimal assignment and the training loss.

Ground truth is padded with non-lane slots to the number of predictions N. Slot
``n`` is matched to prediction ``sigma[n]``. Geometric terms only look at the
ground-truth lane's valid rows (those between its start and end).
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import numerics as nx
from .errors import GeometryError, NonFiniteError, ShapeError
from .lanes import N_ROWS, Lane

DEFAULT_WEIGHTS = (2.0, 10.0, 10.0, 10.0)
PROB_FLOOR = 1e-12
REG_DIM = N_ROWS + 2


@dataclass
class GroundTruthSlot:
    c: int
    lane: Lane | None = None

    def __post_init__(self):
        if self.c not in (0, 1) or (self.c == 1) != (self.lane is not None):
            raise ValueError("a slot carries a lane iff its class is 1")


@dataclass
class LanePrediction:
    probs: np.ndarray  # (2,): non-lane, lane
    xs: np.ndarray  # (72,)
    s: float
    e: float

    @classmethod
    def from_arrays(cls, probs, reg):
        reg = np.asarray(reg, dtype=np.float64)
        return cls(np.asarray(probs, dtype=np.float64), reg[:N_ROWS], float(reg[N_ROWS]), float(reg[N_ROWS + 1]))


@dataclass
class MatchAssignment:
    sigma: np.ndarray
    total_cost: float


def pad_ground_truth(lanes, n):
    if len(lanes) > n:
        raise ValueError(f"{len(lanes)} lanes exceed {n} prediction slots")
    return [GroundTruthSlot(1, ln) for ln in lanes] + [GroundTruthSlot(0)] * (n - len(lanes))


def location_cost(g, p, w2=10.0, w3=10.0, w4=10.0):
    """w2 * mean |X - X_hat| over g's valid rows + w3 |s - s_hat| + w4 |e - e_hat|."""
    valid = g.valid
    if not valid.any():
        raise GeometryError("ground-truth lane has no valid rows")
    l1 = np.abs(g.xs[valid] - p.xs[valid]).mean()
    return w2 * l1 + w3 * abs(g.s - p.s) + w4 * abs(g.e - p.e)


def _target_arrays(slots):
    n = len(slots)
    cls = np.array([s.c for s in slots], dtype=np.int64)
    xs = np.zeros((n, N_ROWS))
    wts = np.zeros((n, N_ROWS))
    se = np.zeros((n, 2))
    for i, slot in enumerate(slots):
        if slot.c == 1:
            valid = slot.lane.valid
            if not valid.any():
                raise GeometryError(f"ground-truth lane in slot {i} has no valid rows")
            xs[i] = slot.lane.xs
            wts[i] = valid / valid.sum()
            se[i] = (slot.lane.s, slot.lane.e)
    return cls, xs, wts, se


def cost_from_arrays(slots, probs, reg, weights=DEFAULT_WEIGHTS):
    """Vectorised pairwise cost from raw (N, 2) probabilities and (N, 74) regressions."""
    w1, w2, w3, w4 = weights
    probs = np.asarray(probs, dtype=np.float64)
    reg = np.asarray(reg, dtype=np.float64)
    if len(slots) != probs.shape[0] or reg.shape != (probs.shape[0], REG_DIM):
        raise ShapeError(f"{len(slots)} slots vs predictions {probs.shape}, {reg.shape}")
    cls, xs, wts, se = _target_arrays(slots)
    cost = -w1 * probs[:, cls].T  # (slot n, prediction m)
    lane = np.flatnonzero(cls == 1)
    if len(lane):
        dx = np.abs(xs[lane, None, :] - reg[None, :, :N_ROWS])
        loc = w2 * (dx * wts[lane, None, :]).sum(-1)
        loc += w3 * np.abs(se[lane, None, 0] - reg[None, :, N_ROWS])
        loc += w4 * np.abs(se[lane, None, 1] - reg[None, :, N_ROWS + 1])
        cost[lane] += loc
    return cost


def pairwise_cost(slots, preds, weights=DEFAULT_WEIGHTS):
    """Cost matrix D[n, m] = -w1 p_m(c_n) + [c_n = 1] location_cost(g_n, p_m)."""
    if len(slots) != len(preds):
        raise ShapeError(f"{len(slots)} ground-truth slots vs {len(preds)} predictions")
    probs = np.stack([p.probs for p in preds])
    reg = np.stack([np.concatenate([p.xs, [p.s, p.e]]) for p in preds])
    return cost_from_arrays(slots, probs, reg, weights)


def hungarian(cost):
    """Minimum-cost assignment; among optimal ones, the lexicographically smallest sigma.

    The potentials from the solver give an optimal dual; every optimal
    assignment uses only zero-reduced-cost edges, and every perfect matching on
    those edges is optimal. The lexicographic pick runs on that edge set.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ShapeError(f"cost matrix must be square, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise NonFiniteError("cost matrix contains non-finite entries")
    n = cost.shape[0]
    if n == 0:
        return MatchAssignment(np.zeros(0, dtype=np.int64), 0.0)
    sigma, u, v = kernels.solve_lap(cost)
    tol = 1e-12 * max(1.0, float(np.abs(cost).max())) * n
    tight = cost - u[:, None] - v[None, :] <= tol
    tight[np.arange(n), sigma] = True
    lex = kernels.lexmin_matching(tight, sigma)
    total = _ordered_sum(cost, lex)
    if total > _ordered_sum(cost, sigma) + tol * n:
        lex = sigma
        total = _ordered_sum(cost, sigma)
    return MatchAssignment(np.asarray(lex, dtype=np.int64), total)


def _ordered_sum(cost, sigma):
    total = 0.0
    for i, j in enumerate(sigma):
        total += cost[i, j]
    return total


def match_frame_predictions(slots, probs, reg, weights=DEFAULT_WEIGHTS):
    return hungarian(cost_from_arrays(slots, probs, reg, weights))


def loss_targets(slots, sigma):
    """Constant arrays that turn the matched loss into masked elementwise sums.

    Returns class targets per prediction (N,), and per-prediction x targets,
    x weights (1/n_valid on valid rows) and start/end targets with a lane mask.
    """
    cls, xs, wts, se = _target_arrays(slots)
    n = len(slots)
    pcls = np.zeros(n, dtype=np.int64)
    pxs = np.zeros((n, N_ROWS))
    pw = np.zeros((n, N_ROWS))
    pse = np.zeros((n, 2))
    plane = np.zeros(n)
    sigma = np.asarray(sigma)
    pcls[sigma] = cls
    pxs[sigma] = xs
    pw[sigma] = wts
    pse[sigma] = se
    plane[sigma] = cls
    return pcls, pxs, pw, pse, plane


def total_loss(slots, probs, reg, sigma, weights=DEFAULT_WEIGHTS):
    """sum_n -w1 log p_sigma(n)(c_n) + [c_n = 1] location_cost, differentiable.

    ``probs`` (N, 2) and ``reg`` (N, 74) are Tensors (or arrays); the
    assignment is a constant. Probabilities are clamped at 1e-12 before the log.
    """
    probs, reg = nx.as_tensor(probs), nx.as_tensor(reg)
    return batch_loss([slots], nx.reshape(probs, (1, *probs.shape)),
                      nx.reshape(reg, (1, *reg.shape)), [sigma], weights)


def batch_loss(slot_lists, probs, reg, sigmas, weights=DEFAULT_WEIGHTS, reduce="sum"):
    """Sum (or mean, ``reduce="mean"``) over frames of :func:`total_loss`.

    ``probs`` is (B, N, 2), ``reg`` (B, N, 74).
    """
    w1, w2, w3, w4 = weights
    b, n = probs.shape[:2]
    onehot = np.zeros((b, n, 2))
    xt = np.zeros((b, n, N_ROWS))
    xw = np.zeros((b, n, N_ROWS))
    set_ = np.zeros((b, n, 2))
    sew = np.zeros((b, n, 2))
    for i, (slots, sigma) in enumerate(zip(slot_lists, sigmas)):
        pcls, pxs, pw, pse, plane = loss_targets(slots, sigma)
        onehot[i, np.arange(n), pcls] = 1.0
        xt[i], xw[i], set_[i] = pxs, pw, pse
        sew[i] = plane[:, None] * np.array([w3, w4])
    logp = nx.log(nx.clamp_min(probs, PROB_FLOOR))
    cls_term = nx.scale(nx.tsum(nx.mul(logp, onehot)), -w1)
    dx = nx.tabs(nx.sub(nx.index(reg, (Ellipsis, slice(0, N_ROWS))), xt))
    x_term = nx.scale(nx.tsum(nx.mul(dx, xw)), w2)
    dse = nx.tabs(nx.sub(nx.index(reg, (Ellipsis, slice(N_ROWS, N_ROWS + 2))), set_))
    se_term = nx.tsum(nx.mul(dse, sew))
    total = nx.add(nx.add(cls_term, x_term), se_term)
    if reduce == "mean":
        total = nx.scale(total, 1.0 / b)
    return total


def loss_terms(slot_lists, probs, reg, sigmas, weights=DEFAULT_WEIGHTS):
    """Plain-array breakdown of :func:`batch_loss` (sum over frames): classification, x, start/end."""
    w1, w2, w3, w4 = weights
    cls_t = x_t = se_t = 0.0
    for i, (slots, sigma) in enumerate(zip(slot_lists, sigmas)):
        pcls, pxs, pw, pse, plane = loss_targets(slots, sigma)
        n = len(slots)
        p = np.maximum(probs[i][np.arange(n), pcls], PROB_FLOOR)
        cls_t += -w1 * np.log(p).sum()
        x_t += w2 * (np.abs(reg[i][:, :N_ROWS] - pxs) * pw).sum()
        dse = np.abs(reg[i][:, N_ROWS:] - pse) * plane[:, None]
        se_t += w3 * dse[:, 0].sum() + w4 * dse[:, 1].sum()
    return {"cls": float(cls_t), "x": float(x_t), "se": float(se_t)}
