"""Central-difference gradient verification utilities.

Used by the test suite and by the `gradcheck` CLI command. The convention for
relative error is |fd - analytic| / max(|fd|, |analytic|, floor); the floor
absorbs coordinates where both sides are ~0 and the quotient would be noise.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def central_diff(f: Callable[[np.ndarray], float], x: np.ndarray, idx, h: float) -> float:
    """d f / d x[idx] by central differences on a copy of x."""
    xp = x.copy()
    xp[idx] = x[idx] + h
    fp = f(xp)
    xm = x.copy()
    xm[idx] = x[idx] - h
    fm = f(xm)
    return (fp - fm) / (2.0 * h)


def rel_error(fd: float, an: float, floor: float) -> float:
    return abs(fd - an) / max(abs(fd), abs(an), floor)


def compare_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic: np.ndarray,
    h: float = 1e-5,
    floor: float = 1e-6,
    coords: Sequence | None = None,
    rng: np.random.Generator | None = None,
    max_coords: int | None = None,
) -> float:
    """Worst relative error between analytic grad and central differences.

    `coords` selects flat indices to probe; by default all coordinates, or a
    random subset of `max_coords` when given.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic)
    flat = x.reshape(-1)
    n = flat.size
    if coords is None:
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
    worst = 0.0
    for c in coords:
        c = int(c)
        idx = np.unravel_index(c, x.shape)
        fd = central_diff(lambda xx: f(xx), x, idx, h)
        an = float(analytic.reshape(-1)[c])
        worst = max(worst, rel_error(fd, an, floor))
    return worst


def random_upstream(rng: np.random.Generator, shape) -> np.ndarray:
    """O(1)-scaled random upstream cotangent for scalarizing a map."""
    return rng.standard_normal(shape)
