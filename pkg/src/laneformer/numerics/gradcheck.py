import numpy as np

from ..errors import NonFiniteError


def grad_check(f, params, eps=1e-6, floor=1e-3, max_coords=None, rng=None):
    """Worst relative error between tape gradients and central differences.

    ``f`` takes no arguments, reads ``params`` (Tensors, mutated in place during
    probing and restored afterwards) and returns a scalar Tensor. The relative
    error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    near-zero gradients from dividing by round-off.

    ``max_coords`` caps the number of probed coordinates per parameter (picked
    with ``rng``), for large parameter sets.
    """
    for p in params:
        p.grad = None
    out = f()
    if out.data.size != 1 or not np.isfinite(out.data).all():
        raise NonFiniteError("grad_check needs a finite scalar objective")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        ga = a.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"objective not finite near coordinate {i}")
            num = (fp - fm) / (2 * eps)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
