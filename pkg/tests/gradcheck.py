"""Central finite-difference gradient checking.

Each layer is wrapped in a scalar probe ``L = sum(r * f(x, params))`` with a
fixed random ``r``; the analytic vector-Jacobian product is compared against
``(L(t + h) - L(t - h)) / 2h`` at 100 sampled coordinates, h = 1e-3.

The probe weights are standard normal, so gradients are O(1).  The
relative error's denominator is floored at ``FLOOR``: below that, a
binary32 forward pass cannot resolve the difference quotient (rounding of
an O(1) output is ~1e-7, i.e. ~1e-4 after dividing by 2h).
"""

import numpy as np

H = 1e-3
COORDS = 100
TOL = {np.float32: 1e-2, np.float64: 1e-5}
FLOOR = 0.1


def rel_err(a, n, floor=FLOOR):
    return abs(a - n) / max(abs(a), abs(n), floor)


def fd_check(fwd, bwd, tensors, dtype, seed=0, valid=None):
    """``fwd(*tensors) -> y``; ``bwd(*tensors, dy) -> grads`` (one per tensor).

    ``valid(k, idx)`` may veto coordinates that sit near a kink.
    Returns the worst relative error over the sampled coordinates.
    """
    rng = np.random.default_rng(seed)
    tensors = [t.astype(dtype) for t in tensors]
    r = rng.normal(size=fwd(*tensors).shape).astype(dtype)
    grads = bwd(*tensors, r)

    def probe():
        return float(np.sum(r.astype(np.float64) * fwd(*tensors).astype(np.float64)))

    sizes = [t.size for t in tensors]
    worst, checked, tries = 0.0, 0, 0
    while checked < COORDS:
        tries += 1
        assert tries < 50 * COORDS, "could not find enough non-kink coordinates"
        k = rng.choice(len(tensors), p=np.array(sizes) / sum(sizes))
        idx = np.unravel_index(rng.integers(tensors[k].size), tensors[k].shape)
        if valid is not None and not valid(k, idx):
            continue
        t = tensors[k]
        old = t[idx]
        t[idx] = old + dtype(H)
        up = probe()
        t[idx] = old - dtype(H)
        down = probe()
        t[idx] = old
        # divide by the step actually taken in this precision
        step = float(dtype(old + dtype(H))) - float(dtype(old - dtype(H)))
        worst = max(worst, rel_err(float(grads[k][idx]), (up - down) / step))
        checked += 1
    return worst
