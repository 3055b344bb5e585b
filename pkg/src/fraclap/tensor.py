"""Canonical (CP) and Tucker tensor containers with rank-structured arithmetic.

A canonical tensor of rank R stores one weight per term plus d factor
matrices of shape (n_l, R) whose k-th columns form the k-th separable
term.  A Tucker tensor stores a small dense core contracted with
orthonormal side matrices.  Both are immutable value types: every
operation returns a new tensor, so values can be shared freely between
threads.

Dense reconstruction is meant for test oracles and is gated behind an
entry cap so it cannot exhaust memory by accident.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DENSE_CAP",
    "ResourceLimitError",
    "CpTensor",
    "TuckerTensor",
    "cp_add",
    "cp_scale",
    "cp_inner",
    "cp_norm",
    "cp_normalize",
    "cp_hadamard_rank1",
    "cp_to_dense",
    "cp_entries",
    "tucker_to_dense",
    "storage_size",
    "save_tensor",
    "load_tensor",
]

# cap on entries of any dense reconstruction (2**24 doubles = 128 MiB)
DENSE_CAP = 2**24

_MAGIC = b"LRT1"
_TAG_CP = 0
_TAG_TUCKER = 1


class ResourceLimitError(RuntimeError):
    """Raised when an operation would exceed a configured size cap."""


def _check_dims(a, b, what):
    if a.dims != b.dims:
        raise ValueError("%s requires equal dims, got %r and %r" % (what, a.dims, b.dims))


class CpTensor:
    """Rank-R canonical tensor: sum of R weighted separable terms."""

    __slots__ = ("weights", "factors")

    def __init__(self, weights, factors):
        weights = np.ascontiguousarray(weights, dtype=float)
        factors = tuple(np.ascontiguousarray(U, dtype=float) for U in factors)
        if weights.ndim != 1:
            raise ValueError("weights must be a 1D array")
        if not 2 <= len(factors) <= 3:
            raise ValueError("only tensors of order 2 or 3 are supported")
        R = weights.shape[0]
        for U in factors:
            if U.ndim != 2:
                raise ValueError("factor matrices must be 2D")
            if U.shape[1] != R:
                raise ValueError("every factor matrix needs one column per weight")
        self.weights = weights
        self.factors = factors

    @property
    def dims(self):
        return tuple(U.shape[0] for U in self.factors)

    @property
    def ndim(self):
        return len(self.factors)

    @property
    def rank(self):
        return self.weights.shape[0]

    @staticmethod
    def zero(dims):
        """The canonical zero element: rank 0."""
        return CpTensor(np.zeros(0), [np.zeros((int(n), 0)) for n in dims])

    @staticmethod
    def from_rank_one(vectors, weight=1.0):
        """Single separable term weight * v_1 x ... x v_d."""
        cols = [np.asarray(v, dtype=float).reshape(-1, 1) for v in vectors]
        return CpTensor(np.array([float(weight)]), cols)

    def __repr__(self):
        return "CpTensor(dims=%r, rank=%d)" % (self.dims, self.rank)


class TuckerTensor:
    """Tucker tensor: dense core contracted with orthonormal side matrices."""

    __slots__ = ("core", "sides")

    def __init__(self, core, sides):
        core = np.ascontiguousarray(core, dtype=float)
        sides = tuple(np.ascontiguousarray(V, dtype=float) for V in sides)
        if not 2 <= len(sides) <= 3:
            raise ValueError("only tensors of order 2 or 3 are supported")
        if core.ndim != len(sides):
            raise ValueError("core order must equal the number of side matrices")
        for l, V in enumerate(sides):
            if V.ndim != 2 or V.shape[1] != core.shape[l]:
                raise ValueError("side matrix %d does not match the core shape" % l)
            if V.shape[1] > V.shape[0]:
                raise ValueError("Tucker rank cannot exceed the mode size")
        self.core = core
        self.sides = sides

    @property
    def dims(self):
        return tuple(V.shape[0] for V in self.sides)

    @property
    def ranks(self):
        return self.core.shape

    @property
    def ndim(self):
        return len(self.sides)

    @staticmethod
    def zero(dims):
        d = len(dims)
        return TuckerTensor(np.zeros((0,) * d), [np.zeros((int(n), 0)) for n in dims])

    def __repr__(self):
        return "TuckerTensor(dims=%r, ranks=%r)" % (self.dims, self.ranks)


def cp_add(a, b):
    """Exact sum of two canonical tensors (ranks add, no truncation)."""
    _check_dims(a, b, "cp_add")
    weights = np.concatenate([a.weights, b.weights])
    factors = [np.hstack([Ua, Ub]) for Ua, Ub in zip(a.factors, b.factors)]
    return CpTensor(weights, factors)


def cp_scale(a, s):
    """Scalar multiple of a canonical tensor."""
    return CpTensor(a.weights * float(s), a.factors)


def cp_inner(a, b):
    """Frobenius inner product of two canonical tensors.

    Computed from the per-mode Gram matrices in O(R_a * R_b * d * n).
    """
    _check_dims(a, b, "cp_inner")
    if a.rank == 0 or b.rank == 0:
        return 0.0
    H = a.factors[0].T @ b.factors[0]
    for Ua, Ub in zip(a.factors[1:], b.factors[1:]):
        H *= Ua.T @ Ub
    return float(a.weights @ H @ b.weights)


def cp_norm(a):
    """Frobenius norm; the inner product is clipped at zero against round-off.

    Computed through Gram matrices, so for a representation whose terms
    nearly cancel the result is only reliable down to about 1e-8 of the
    term magnitudes; re-orthogonalize (trunc) first when that matters.
    """
    return float(np.sqrt(max(cp_inner(a, a), 0.0)))


def cp_normalize(a):
    """Rescale all factor columns to unit norm, weights absorb the magnitudes.

    Zero columns yield a zero weight and a unit placeholder column, so the
    reconstruction is unchanged.
    """
    weights = a.weights.copy()
    factors = []
    for U in a.factors:
        nrm = np.linalg.norm(U, axis=0)
        zero = nrm == 0.0
        V = U / np.where(zero, 1.0, nrm)
        if np.any(zero):
            V = V.copy()
            V[0, zero] = 1.0
        weights *= np.where(zero, 0.0, nrm)
        factors.append(V)
    return CpTensor(weights, factors)


def cp_hadamard_rank1(a, vectors, weight=1.0):
    """Entrywise product of a canonical tensor with one separable term."""
    vecs = [np.asarray(v, dtype=float) for v in vectors]
    if len(vecs) != a.ndim or any(v.shape != (n,) for v, n in zip(vecs, a.dims)):
        raise ValueError("rank-1 term does not match the tensor dims")
    factors = [U * v[:, None] for U, v in zip(a.factors, vecs)]
    return CpTensor(a.weights * float(weight), factors)


def _check_cap(dims):
    total = int(np.prod([int(n) for n in dims], dtype=np.int64))
    if total > DENSE_CAP:
        raise ResourceLimitError(
            "dense reconstruction of %r entries exceeds the cap of %d" % (dims, DENSE_CAP)
        )


def cp_to_dense(a):
    """Dense array of the canonical tensor; gated by the entry cap."""
    _check_cap(a.dims)
    if a.ndim == 2:
        return (a.factors[0] * a.weights) @ a.factors[1].T
    return np.einsum(
        "ik,jk,lk,k->ijl", a.factors[0], a.factors[1], a.factors[2], a.weights,
        optimize=True,
    )


def cp_entries(a, indices):
    """Entries of the canonical tensor at the given index tuples.

    Args:
        a: CpTensor.
        indices: tuple of d integer arrays of equal length, one per mode.

    Returns:
        1D array of entry values.
    """
    if len(indices) != a.ndim:
        raise ValueError("need one index array per mode")
    idx = [np.asarray(ix, dtype=np.intp) for ix in indices]
    if a.rank == 0:
        return np.zeros(idx[0].shape)
    E = a.factors[0][idx[0], :]
    for U, ix in zip(a.factors[1:], idx[1:]):
        E = E * U[ix, :]
    return E @ a.weights


def _mode_apply(M, x, axis):
    y = np.tensordot(M, x, axes=(1, axis))
    return np.moveaxis(y, 0, axis)


def tucker_to_dense(t):
    """Dense array of the Tucker tensor; gated by the entry cap."""
    _check_cap(t.dims)
    x = t.core
    for axis, V in enumerate(t.sides):
        x = _mode_apply(V, x, axis)
    return x


def storage_size(x):
    """Number of stored floating-point values of a CP or Tucker tensor."""
    if isinstance(x, CpTensor):
        return int(x.weights.size + sum(U.size for U in x.factors))
    if isinstance(x, TuckerTensor):
        return int(x.core.size + sum(V.size for V in x.sides))
    raise ValueError("expected a CpTensor or TuckerTensor")


# ---------------------------------------------------------------------------
# binary dump format
#
#   magic "LRT1" | uint8 d | uint8 tag (0=CP, 1=Tucker) | dims as d uint64
#   CP:     rank uint64, weights (R float64), factor matrices column-major
#   Tucker: ranks as d uint64, core column-major, side matrices column-major
#
# all integers and floats little-endian.
# ---------------------------------------------------------------------------


def pack_tensor(x):
    """Serialize a CP or Tucker tensor to bytes (see the module format note)."""
    parts = [_MAGIC]
    if isinstance(x, CpTensor):
        parts.append(bytes([x.ndim, _TAG_CP]))
        parts.append(np.asarray(x.dims, dtype="<u8").tobytes())
        parts.append(np.asarray([x.rank], dtype="<u8").tobytes())
        parts.append(x.weights.astype("<f8").tobytes())
        for U in x.factors:
            parts.append(U.astype("<f8").tobytes(order="F"))
    elif isinstance(x, TuckerTensor):
        parts.append(bytes([x.ndim, _TAG_TUCKER]))
        parts.append(np.asarray(x.dims, dtype="<u8").tobytes())
        parts.append(np.asarray(x.ranks, dtype="<u8").tobytes())
        parts.append(x.core.astype("<f8").tobytes(order="F"))
        for V in x.sides:
            parts.append(V.astype("<f8").tobytes(order="F"))
    else:
        raise ValueError("expected a CpTensor or TuckerTensor")
    return b"".join(parts)


class _Reader:
    def __init__(self, buf, offset=0):
        self.buf = buf
        self.pos = offset

    def take(self, nbytes):
        if self.pos + nbytes > len(self.buf):
            raise ValueError("truncated tensor dump")
        out = self.buf[self.pos : self.pos + nbytes]
        self.pos += nbytes
        return out

    def ints(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<u8").astype(int)

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)

    def matrix(self, rows, cols):
        flat = self.floats(rows * cols)
        return flat.reshape((rows, cols), order="F")


def unpack_tensor(buf, offset=0):
    """Parse a tensor dump from bytes; returns (tensor, bytes consumed)."""
    r = _Reader(buf, offset)
    if r.take(4) != _MAGIC:
        raise ValueError("not a tensor dump (bad magic)")
    d, tag = r.take(2)
    if not 2 <= d <= 3:
        raise ValueError("unsupported tensor order %d" % d)
    dims = r.ints(d)
    if tag == _TAG_CP:
        rank = int(r.ints(1)[0])
        weights = r.floats(rank)
        factors = [r.matrix(int(n), rank) for n in dims]
        return CpTensor(weights, factors), r.pos - offset
    if tag == _TAG_TUCKER:
        ranks = r.ints(d)
        core = r.floats(int(np.prod(ranks))).reshape(tuple(ranks), order="F")
        sides = [r.matrix(int(n), int(rk)) for n, rk in zip(dims, ranks)]
        return TuckerTensor(core, sides), r.pos - offset
    raise ValueError("unknown tensor format tag %d" % tag)


def save_tensor(path, x):
    """Write a CP or Tucker tensor dump to a file."""
    with open(path, "wb") as f:
        f.write(pack_tensor(x))


def load_tensor(path):
    """Read a tensor dump written by save_tensor."""
    with open(path, "rb") as f:
        buf = f.read()
    x, used = unpack_tensor(buf)
    if used != len(buf):
        raise ValueError("trailing bytes after tensor dump")
    return x
