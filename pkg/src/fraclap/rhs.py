"""Design functions (tracking targets) evaluated on the grid in canonical form.

Every tag has a documented closed form on the unit square/cube with grid
points x_i = (i+1) * h, h = 1/(n+1):

    gaussian-bump     prod_l exp(-(x_l - c)^2 / (2 w^2)), c = 0.5, w = 0.1
    two-bumps         bump(0.3, 0.08) + bump(0.7, 0.08), both separable
    box-indicator     1 on [0.25, 0.75]^d, 0 elsewhere
    custom-separable  prod_l f_l(x_l) for user-supplied per-mode profiles

All of them are exactly separable, so the canonical rank is 1 or 2 before
the final cleanup truncation at eps_rhs.
"""

from __future__ import annotations

import numpy as np

from .decomp import TruncationSpec, trunc
from .tensor import CpTensor, cp_normalize

__all__ = ["DesignFunction", "DESIGN_TAGS", "random_smooth"]

DESIGN_TAGS = ("gaussian-bump", "two-bumps", "box-indicator", "custom-separable")


def _grid(n):
    return (np.arange(n) + 1.0) / (n + 1.0)


def _bump(x, center, width):
    return np.exp(-((x - center) ** 2) / (2.0 * width**2))


class DesignFunction:
    """A named target function, evaluated to a low-rank canonical tensor."""

    def __init__(self, tag, center=0.5, width=0.1, profiles=None):
        if tag not in DESIGN_TAGS:
            raise ValueError("unknown design function tag %r" % (tag,))
        if tag == "custom-separable" and profiles is None:
            raise ValueError("custom-separable needs one profile callable per mode")
        self.tag = tag
        self.center = float(center)
        self.width = float(width)
        self.profiles = profiles

    def evaluate(self, dims, eps_rhs=1e-10, max_rank=None):
        """Canonical tensor of the tag's values on the dims grid."""
        d = len(dims)
        if not 2 <= d <= 3:
            raise ValueError("dims must have 2 or 3 modes")
        xs = [_grid(int(n)) for n in dims]
        if self.tag == "gaussian-bump":
            t = CpTensor.from_rank_one([_bump(x, self.center, self.width) for x in xs])
        elif self.tag == "two-bumps":
            a = CpTensor.from_rank_one([_bump(x, 0.3, 0.08) for x in xs])
            b = CpTensor.from_rank_one([_bump(x, 0.7, 0.08) for x in xs])
            t = CpTensor(np.concatenate([a.weights, b.weights]),
                         [np.hstack([ua, ub]) for ua, ub in zip(a.factors, b.factors)])
        elif self.tag == "box-indicator":
            t = CpTensor.from_rank_one(
                [((x >= 0.25) & (x <= 0.75)).astype(float) for x in xs])
        else:
            if len(self.profiles) != d:
                raise ValueError("need %d profiles, got %d" % (d, len(self.profiles)))
            t = CpTensor.from_rank_one(
                [np.asarray(f(x), dtype=float) for f, x in zip(self.profiles, xs)])
        t = cp_normalize(t)
        if t.rank > 1:
            t = trunc(t, TruncationSpec(tolerance=float(eps_rhs), max_rank=max_rank))
        return t


def random_smooth(dims, rank=2, seed=0):
    """Seeded random low-rank tensor built from low-frequency sine profiles.

    Used by the benchmark harness as a reproducible right-hand side; each
    factor column mixes the first eight sine modes with 1/k damping.
    """
    rng = np.random.default_rng([131, int(seed)] + [int(n) for n in dims])
    factors = []
    for n in dims:
        x = _grid(int(n))
        basis = np.column_stack([np.sin((k + 1) * np.pi * x) / (k + 1.0)
                                 for k in range(8)])
        factors.append(basis @ rng.standard_normal((8, int(rank))))
    return cp_normalize(CpTensor(np.ones(int(rank)), factors))
