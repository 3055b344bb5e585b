"""Rank-reduction engines for canonical and Tucker tensors.

Implements the truncated SVD (matrix case), HOSVD and Tucker ALS for
dense tensors, a multigrid Tucker driver over dyadically refined grids,
the reduced HOSVD (RHOSVD) of canonical tensors, the canonical-to-Tucker
and Tucker-to-canonical transforms, and the `trunc` procedure applied
after every tensor operation inside the iterative solver.

All routines are deterministic: singular vectors carry a fixed sign
convention (largest-magnitude entry positive), and no randomized
initializations are used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    DENSE_CAP,
    CpTensor,
    ResourceLimitError,
    TuckerTensor,
    _mode_apply,
    cp_norm,
    cp_normalize,
)

__all__ = [
    "TruncationSpec",
    "svd_truncate",
    "matricize",
    "hosvd",
    "tucker_als",
    "multigrid_tucker",
    "level_sizes",
    "rhosvd",
    "c2t",
    "t2c",
    "trunc",
]


@dataclass(frozen=True)
class TruncationSpec:
    """How aggressively to cut ranks.

    tolerance-driven: discard the smallest singular-value tail whose
    Frobenius mass stays below tolerance * input norm; max_rank is an
    optional hard cap on top.  fixed-rank: keep exactly max_rank terms
    (fewer only when the input has fewer nonzero singular values).
    """

    tolerance: float = 0.0
    max_rank: int | None = None
    mode: str = "tolerance-driven"

    def __post_init__(self):
        if self.mode not in ("tolerance-driven", "fixed-rank"):
            raise ValueError("unknown truncation mode %r" % (self.mode,))
        if self.max_rank is not None and int(self.max_rank) < 1:
            raise ValueError("max_rank must be at least 1")
        tol = float(self.tolerance)
        if not np.isfinite(tol) or tol < 0.0:
            raise ValueError("tolerance must be a finite nonnegative real")
        if self.mode == "fixed-rank" and self.max_rank is None:
            raise ValueError("fixed-rank mode needs max_rank")


def _kept_rank(sigma, spec):
    """Number of leading singular values to keep under the given spec."""
    sigma = np.asarray(sigma, dtype=float)
    nnz = int(np.count_nonzero(sigma > 0.0))
    if spec.mode == "fixed-rank":
        return min(int(spec.max_rank), nnz)
    total = float(np.sum(sigma * sigma))
    if total == 0.0:
        return 0
    budget = float(spec.tolerance) ** 2 * total
    # tail[k] = mass of everything from position k on; tail[len] = 0
    tail = np.concatenate([np.cumsum((sigma * sigma)[::-1])[::-1], [0.0]])
    keep = int(np.argmax(tail <= budget))
    keep = min(keep, nnz)
    if spec.max_rank is not None:
        keep = min(keep, int(spec.max_rank))
    return keep


def _fix_signs(U, Vt=None):
    """Largest-magnitude entry of every column of U made positive."""
    U = np.array(U, copy=True)
    if U.size:
        pick = np.argmax(np.abs(U), axis=0)
        flip = U[pick, np.arange(U.shape[1])] < 0.0
        U[:, flip] *= -1.0
        if Vt is not None:
            Vt = np.array(Vt, copy=True)
            Vt[flip, :] *= -1.0
    return (U, Vt) if Vt is not None else U


def _sine_profile(n, k):
    # smooth orthogonal-ish fill-in column, vanishing at the boundary
    x = (np.arange(n) + 1.0) / (n + 1.0)
    return np.sin((k + 1) * np.pi * x)


def _complete_columns(U, r):
    """Extend U to r orthonormal columns, dropping dependent ones first.

    Candidates after the input columns are sine profiles of increasing
    frequency, so the completion stays deterministic and smooth.
    """
    n = U.shape[0]
    if r > n:
        raise ValueError("cannot build %d orthonormal columns of length %d" % (r, n))
    cols = []
    k = 0
    cands = list(U.T)
    while len(cols) < r:
        if cands:
            c = np.array(cands.pop(0), dtype=float)
        else:
            c = _sine_profile(n, k)
            k += 1
            if k > 2 * n + 4:
                raise RuntimeError("column completion failed to make progress")
        for q in cols:  # two rounds of Gram-Schmidt for stability
            c -= q * (q @ c)
        for q in cols:
            c -= q * (q @ c)
        nrm = np.linalg.norm(c)
        if nrm > 1e-10:
            cols.append(c / nrm)
    return np.column_stack(cols) if cols else np.zeros((n, 0))


def matricize(t, axis):
    """Mode unfolding: rows indexed by the chosen axis, columns by the rest."""
    t = np.asarray(t)
    return np.moveaxis(t, axis, 0).reshape(t.shape[axis], -1)


def svd_truncate(m, spec):
    """Truncated SVD of a dense matrix, returned as an order-2 CpTensor.

    Keeps the smallest rank whose discarded tail meets the truncation
    settings; weights are the kept singular values.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError("svd_truncate expects a matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    U, s, Vt = np.linalg.svd(m, full_matrices=False)
    k = _kept_rank(s, spec)
    U, Vt = _fix_signs(U[:, :k], Vt[:k])
    return CpTensor(s[:k], [U, Vt.T])


def _project_core(t, sides):
    core = np.asarray(t, dtype=float)
    for axis, V in enumerate(sides):
        core = _mode_apply(V.T, core, axis)
    return core


def _as_ranks(ranks, d):
    if np.isscalar(ranks):
        ranks = (int(ranks),) * d
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != d:
        raise ValueError("need one rank per mode")
    return ranks


def hosvd(t, ranks):
    """Tucker approximation from per-mode unfolding SVDs."""
    t = np.asarray(t, dtype=float)
    d = t.ndim
    if not 2 <= d <= 3:
        raise ValueError("only order 2 or 3 tensors are supported")
    ranks = _as_ranks(ranks, d)
    for r, n in zip(ranks, t.shape):
        if r < 1 or r > n:
            raise ValueError("rank %d out of range for mode size %d" % (r, n))
    sides = []
    for axis in range(d):
        U, _, _ = np.linalg.svd(matricize(t, axis), full_matrices=False)
        sides.append(_complete_columns(_fix_signs(U[:, : ranks[axis]]), ranks[axis]))
    return TuckerTensor(_project_core(t, sides), sides)


def tucker_als(t, ranks, init=None, max_sweeps=30, stall_tol=1e-9):
    """Alternating optimization of Tucker side matrices on a dense tensor.

    Each mode update replaces one side matrix with the leading singular
    vectors of the tensor contracted over all other sides, which never
    decreases the captured Frobenius mass.  Stops after max_sweeps or when
    the fit improves by less than stall_tol.
    """
    t = np.asarray(t, dtype=float)
    d = t.ndim
    ranks = _as_ranks(ranks, d)
    if init is None:
        init = hosvd(t, ranks)
    sides = [np.asarray(V, dtype=float) for V in init.sides]
    for axis, V in enumerate(sides):
        if V.shape != (t.shape[axis], ranks[axis]):
            raise ValueError("init side %d has shape %r, expected %r"
                             % (axis, V.shape, (t.shape[axis], ranks[axis])))
    norm_t = float(np.linalg.norm(t))
    if norm_t == 0.0:
        return TuckerTensor(np.zeros(ranks), sides)
    fit_prev = -1.0
    core = None
    for _ in range(int(max_sweeps)):
        for axis in range(d):
            w = t
            for other in range(d):
                if other != axis:
                    w = _mode_apply(sides[other].T, w, other)
            U, _, _ = np.linalg.svd(matricize(w, axis), full_matrices=False)
            sides[axis] = _complete_columns(_fix_signs(U[:, : ranks[axis]]), ranks[axis])
        core = _project_core(t, sides)
        fit = float(np.linalg.norm(core)) / norm_t
        if fit - fit_prev < stall_tol:
            break
        fit_prev = fit
    if core is None:
        core = _project_core(t, sides)
    return TuckerTensor(core, sides)


def level_sizes(n0, m_levels):
    """Dyadic grid ladder: odd sizes refine to 2n+1, even sizes to 2n.

    Odd sizes keep the grids nested on the unit interval (63 -> 127),
    even sizes double plainly (8 -> 16).
    """
    n0 = int(n0)
    if n0 < 1 or int(m_levels) < 1:
        raise ValueError("need a positive coarse size and at least one level")
    sizes = [n0]
    for _ in range(int(m_levels) - 1):
        n = sizes[-1]
        sizes.append(2 * n + 1 if n % 2 == 1 else 2 * n)
    return sizes


def _interp_columns(V, n_to):
    """Linear interpolation of grid-function columns onto a finer grid.

    Columns represent values at x_i = (i+1)/(n+1) and are extended by
    zero at the interval ends before interpolating.
    """
    n_from = V.shape[0]
    xp = np.concatenate([[0.0], (np.arange(n_from) + 1.0) / (n_from + 1.0), [1.0]])
    xf = (np.arange(n_to) + 1.0) / (n_to + 1.0)
    out = np.empty((n_to, V.shape[1]))
    for j in range(V.shape[1]):
        fp = np.concatenate([[0.0], V[:, j], [0.0]])
        out[:, j] = np.interp(xf, xp, fp)
    return out


def _check_dense_budget(dims):
    total = int(np.prod([int(n) for n in dims], dtype=np.int64))
    if total > DENSE_CAP:
        raise ResourceLimitError(
            "dense level tensor with %d entries exceeds the cap of %d" % (total, DENSE_CAP)
        )


def _sample_level(sampler, n, d, level):
    idx = np.meshgrid(*(np.arange(n),) * d, indexing="ij", sparse=True)
    t = np.asarray(sampler(*idx, level), dtype=float)
    if t.shape != (n,) * d:
        t = np.broadcast_to(t, (n,) * d).astype(float)
    return t


def multigrid_tucker(sampler, n0, m_levels, ranks, als_sweeps=6, stall_tol=1e-10):
    """Tucker approximation refined across a ladder of dyadic grids.

    Args:
        sampler: callable (i_1..i_d, level) -> values; receives 0-based
            integer index arrays (broadcastable) and the 1-based level.
        n0: coarsest univariate grid size.
        m_levels: number of levels; sizes follow level_sizes(n0, m_levels).
        ranks: per-mode Tucker ranks, fixed across levels (d = len(ranks)).

    The only full HOSVD runs on the coarsest grid; every finer level starts
    from the previous side matrices interpolated onto the refined grid and
    re-orthonormalized, then polished by a few ALS sweeps.
    """
    if np.isscalar(ranks):
        raise ValueError("ranks must be a tuple, one entry per mode")
    ranks = tuple(int(r) for r in ranks)
    d = len(ranks)
    if not 2 <= d <= 3:
        raise ValueError("only 2 or 3 modes are supported")
    sizes = level_sizes(n0, m_levels)
    if any(r < 1 for r in ranks) or max(ranks) > sizes[0]:
        raise ValueError("ranks must fit within the coarsest grid")
    tt = None
    for level, n in enumerate(sizes, start=1):
        _check_dense_budget((n,) * d)
        t = _sample_level(sampler, n, d, level)
        if tt is None:
            init = hosvd(t, ranks)
        else:
            sides = [_complete_columns(_interp_columns(V, n), r)
                     for V, r in zip(tt.sides, ranks)]
            init = TuckerTensor(_project_core(t, sides), sides)
        tt = tucker_als(t, ranks, init, max_sweeps=als_sweeps, stall_tol=stall_tol)
    return tt


def rhosvd(a, ranks):
    """Reduced HOSVD of a canonical tensor.

    Side matrices come from truncated SVDs of the CP factor matrices
    (weights folded into mode 1); the core is formed by contraction, so
    the dense tensor is never materialized.  Requires r_l <= min(n_l, R).
    """
    if not isinstance(a, CpTensor):
        raise ValueError("rhosvd expects a CpTensor")
    if a.rank == 0:
        return TuckerTensor.zero(a.dims)
    an = cp_normalize(a)
    d = an.ndim
    ranks = _as_ranks(ranks, d)
    for r, n in zip(ranks, an.dims):
        if r < 1 or r > min(n, an.rank):
            raise ValueError(
                "rank %d incompatible with mode size %d and canonical rank %d"
                % (r, n, an.rank)
            )
    sides = []
    for axis in range(d):
        B = an.factors[axis] * an.weights if axis == 0 else an.factors[axis]
        U, _, _ = np.linalg.svd(B, full_matrices=False)
        sides.append(_complete_columns(_fix_signs(U[:, : ranks[axis]]), ranks[axis]))
    return TuckerTensor(_cp_project_core(an, sides), sides)


def _cp_project_core(a, sides):
    P = [V.T @ U for V, U in zip(sides, a.factors)]
    if a.ndim == 2:
        return np.einsum("ar,br,r->ab", P[0], P[1], a.weights, optimize=True)
    return np.einsum("ar,br,cr,r->abc", P[0], P[1], P[2], a.weights, optimize=True)


def _factored_svd_2d(a):
    """QR-compressed SVD of an order-2 CpTensor; never forms the n1 x n2 matrix."""
    Q1, R1 = np.linalg.qr(a.factors[0] * a.weights)
    Q2, R2 = np.linalg.qr(a.factors[1])
    u, s, vt = np.linalg.svd(R1 @ R2.T, full_matrices=False)
    u, vt = _fix_signs(Q1 @ u, vt)
    return u, s, Q2 @ vt.T


def _pick_ranks(a, spec):
    """Tolerance-driven per-mode rank guess from weighted factor SVD tails."""
    d = a.ndim
    per_mode_tol = float(spec.tolerance) / (2.0 * np.sqrt(d))
    cap = spec.max_rank
    ranks = []
    for axis in range(d):
        B = a.factors[axis] * a.weights
        s = np.linalg.svd(B, compute_uv=False)
        guess = _kept_rank(s, TruncationSpec(tolerance=per_mode_tol))
        hi = min(a.dims[axis], a.rank)
        if cap is not None:
            hi = min(hi, int(cap))
        ranks.append(int(np.clip(guess, 1, hi)))
    return tuple(ranks), tuple(min(a.dims[axis], a.rank) if cap is None
                               else min(a.dims[axis], a.rank, int(cap))
                               for axis in range(d))


def _c2t_at_ranks(an, ranks, als_sweeps):
    sides = list(rhosvd(an, ranks).sides)
    U = an.factors
    xi = an.weights
    for _ in range(int(als_sweeps)):
        for axis in range(3):
            others = [j for j in range(3) if j != axis]
            Pa = sides[others[0]].T @ U[others[0]]
            Pb = sides[others[1]].T @ U[others[1]]
            K = (Pa[:, None, :] * Pb[None, :, :]).reshape(-1, an.rank) * xi
            M = U[axis] @ K.T
            Us, _, _ = np.linalg.svd(M, full_matrices=False)
            sides[axis] = _complete_columns(
                _fix_signs(Us[:, : ranks[axis]]), ranks[axis]
            )
    return TuckerTensor(_cp_project_core(an, sides), sides)


def c2t(a, spec, als_sweeps=2):
    """Canonical-to-Tucker compression without dense assembly.

    Order 2 reduces to an exact factored SVD.  Order 3 starts from the
    RHOSVD projection and runs ALS sweeps expressed through contractions
    of the CP representation; in tolerance-driven mode the target ranks
    are grown and the pass repeated until the captured mass meets the
    tolerance (the fit is exact since the sides stay orthonormal).
    """
    if not isinstance(a, CpTensor):
        raise ValueError("c2t expects a CpTensor")
    if a.rank == 0:
        return TuckerTensor.zero(a.dims)
    an = cp_normalize(a)
    nrm = cp_norm(an)
    if nrm == 0.0:
        return TuckerTensor.zero(a.dims)
    if an.ndim == 2:
        u, s, v = _factored_svd_2d(an)
        k = _kept_rank(s, spec)
        k = max(k, 1) if spec.mode == "tolerance-driven" else k
        return TuckerTensor(np.diag(s[:k]), [u[:, :k], v[:, :k]])
    if spec.mode == "fixed-rank":
        ranks = tuple(min(int(spec.max_rank), n, an.rank) for n in an.dims)
        return _c2t_at_ranks(an, ranks, als_sweeps)
    ranks, caps = _pick_ranks(an, spec)
    tt = None
    for _ in range(3):
        tt = _c2t_at_ranks(an, ranks, als_sweeps)
        err2 = max(nrm * nrm - float(np.sum(tt.core * tt.core)), 0.0)
        if np.sqrt(err2) <= spec.tolerance * nrm:
            break
        grown = tuple(min(c, max(r + 2, (3 * r) // 2)) for r, c in zip(ranks, caps))
        if grown == ranks:
            break
        ranks = grown
    return tt


def _core_cp_als(core, factors, weights, sweeps=25):
    """Dense CP-ALS on a small order-3 core, warm-started from given factors.

    Pure least-squares sweeps; the core is tiny (Tucker ranks), so cost is
    negligible next to anything touching full-length mode vectors.
    """
    dims = core.shape
    A = [np.asarray(f, dtype=float).copy() for f in factors]
    A[0] = A[0] * weights
    R = A[0].shape[1]
    for _ in range(sweeps):
        for ell in range(3):
            others = [A[m] for m in range(3) if m != ell]
            G = (others[0].T @ others[0]) * (others[1].T @ others[1])
            K = np.einsum("ar,br->abr", others[0], others[1]).reshape(-1, R)
            M = np.moveaxis(core, ell, 0).reshape(dims[ell], -1)
            A[ell] = np.linalg.lstsq(G.T, (M @ K).T, rcond=None)[0].T
    w = np.ones(R)
    for ell in range(3):
        nrm = np.linalg.norm(A[ell], axis=0)
        safe = np.where(nrm == 0.0, 1.0, nrm)
        A[ell] = A[ell] / safe
        w = w * nrm
    order = np.argsort(-np.abs(w), kind="stable")
    return w[order], [a[:, order] for a in A]


def t2c(t, spec):
    """Tucker-to-canonical re-expansion via SVDs of the small core.

    Order 2 is a plain core SVD.  Order 3 SVD-decomposes every slice of
    the core along the last mode; slice terms are mutually orthogonal, so
    one global sort of their singular values gives exact Frobenius control
    of the discarded tail.  Canonical rank is bounded by r^2 for order 3.
    In fixed-rank mode the kept terms seed ALS sweeps on the core, which
    squeezes noticeably more accuracy out of the same rank budget.
    """
    if not isinstance(t, TuckerTensor):
        raise ValueError("t2c expects a TuckerTensor")
    if min(t.ranks, default=0) == 0:
        return CpTensor.zero(t.dims)
    core = t.core
    if t.ndim == 2:
        u, s, vt = np.linalg.svd(core, full_matrices=False)
        k = _kept_rank(s, spec)
        u, vt = _fix_signs(u[:, :k], vt[:k])
        return CpTensor(s[:k], [t.sides[0] @ u, t.sides[1] @ vt.T])
    terms_w = []
    terms_u = []
    terms_v = []
    terms_slice = []
    for c in range(core.shape[2]):
        u, s, vt = np.linalg.svd(core[:, :, c], full_matrices=False)
        u, vt = _fix_signs(u, vt)
        keep = int(np.count_nonzero(s > 0.0))
        for i in range(keep):
            terms_w.append(s[i])
            terms_u.append(u[:, i])
            terms_v.append(vt[i, :])
            terms_slice.append(c)
    if not terms_w:
        return CpTensor.zero(t.dims)
    w = np.asarray(terms_w)
    order = np.argsort(-w, kind="stable")
    k = _kept_rank(w[order], spec)
    keep_idx = order[:k]
    if k == 0:
        return CpTensor.zero(t.dims)
    cw = w[keep_idx]
    cu = np.column_stack([terms_u[i] for i in keep_idx])
    cv = np.column_stack([terms_v[i] for i in keep_idx])
    eye3 = np.eye(core.shape[2])
    cs = eye3[:, [terms_slice[i] for i in keep_idx]]
    if spec.mode == "fixed-rank" and k < len(terms_w):
        cw, (cu, cv, cs) = _core_cp_als(core, (cu, cv, cs), cw)
    A = t.sides[0] @ cu
    B = t.sides[1] @ cv
    C = t.sides[2] @ cs
    return CpTensor(cw, [A, B, C])


def _halved(spec):
    if spec.mode == "fixed-rank":
        return spec, spec
    half = TruncationSpec(tolerance=spec.tolerance / 2.0,
                          max_rank=spec.max_rank, mode=spec.mode)
    return half, half


def trunc(x, spec):
    """Rank truncation of a canonical tensor.

    Order 2 goes through the factored QR + small-SVD route; order 3 goes
    canonical -> Tucker -> canonical with the tolerance split evenly
    between the two stages.  Never increases rank: a candidate larger than
    the input is discarded and the input returned unchanged.  At equal or
    smaller rank the rebuilt representation wins because its weights are
    singular values of an orthogonalized form, so norms read off the
    result do not suffer the cancellation that plagues raw canonical sums.
    """
    if not isinstance(x, CpTensor):
        raise ValueError("trunc expects a CpTensor")
    if x.rank <= 1:
        return cp_normalize(x)
    if x.ndim == 2:
        u, s, v = _factored_svd_2d(cp_normalize(x))
        k = _kept_rank(s, spec)
        return CpTensor(s[:k], [u[:, :k], v[:, :k]])
    x = _merge_collinear(x)
    if x.rank <= 1:
        return cp_normalize(x)
    spec_a, spec_b = _halved(spec)
    cand = t2c(c2t(x, spec_a), spec_b)
    if cand.rank > x.rank:
        return x
    return cand


def _merge_collinear(a):
    """Sum canonical terms that point along the same rank-1 direction.

    Two terms are merged only when the product of their per-mode cosines
    is within 1e-13 of +-1, i.e. they are effectively the same separable
    tensor; duplicated representations collapse exactly, everything else
    passes through untouched (orthogonalized factors never trigger this).
    """
    if a.rank <= 1:
        return a
    an = cp_normalize(a)
    C = np.ones((an.rank, an.rank))
    for U in an.factors:
        C *= U.T @ U
    w = an.weights.copy()
    alive = np.ones(an.rank, dtype=bool)
    changed = False
    for i in range(an.rank):
        if not alive[i]:
            continue
        for j in range(i + 1, an.rank):
            if alive[j] and abs(C[i, j]) >= 1.0 - 1e-13:
                w[i] += w[j] * np.sign(C[i, j])
                alive[j] = False
                changed = True
    if not changed:
        return a
    keep = np.flatnonzero(alive & (w != 0.0))
    if keep.size == 0:
        return CpTensor.zero(an.dims)
    return CpTensor(w[keep], [U[:, keep] for U in an.factors])
