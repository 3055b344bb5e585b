"""Per-mode spectra of univariate elliptic operators and their diagonalizing transforms.

A separable operator on the unit square or cube is assembled from d
univariate operators, one per coordinate direction.  Each direction is
summarized by a :class:`Mode1D`: grid size, mesh width, the eigenvalues of
the univariate operator in ascending order, and the orthonormal transform
that maps nodal values to spectral coefficients.

For the Dirichlet Laplacian on a uniform mesh the transform is the
orthonormal type-I discrete sine transform and the eigenvalues are known in
closed form, so no dense eigendecomposition is ever needed and the
transform costs O(n log n).  For a general symmetric positive definite
stiffness matrix the orthonormal eigenvector matrix is stored densely
instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.linalg

__all__ = [
    "Mode1D",
    "EigenSpectrum",
    "laplacian_mode",
    "laplacian_spectrum",
    "generalized_mode",
    "dense_laplacian_1d",
    "dst_apply",
]


@dataclass(frozen=True, eq=False)
class Mode1D:
    """One coordinate direction of a separable operator.

    Attributes:
        n: number of interior grid points.
        h: mesh width, 1/(n+1) on the unit interval.
        eigenvalues: the n eigenvalues, positive and ascending.
        basis: orthonormal eigenvector matrix (columns are eigenvectors),
            or None when the mode is diagonalized by the sine transform.
    """

    n: int
    h: float
    eigenvalues: np.ndarray
    basis: np.ndarray | None = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be a positive integer")
        object.__setattr__(self, "n", int(self.n))
        lam = np.ascontiguousarray(self.eigenvalues, dtype=float)
        if lam.shape != (self.n,):
            raise ValueError("eigenvalues must be a length-n vector")
        if not np.all(np.isfinite(lam)) or lam[0] <= 0.0:
            raise ValueError("eigenvalues must be finite and positive")
        if np.any(np.diff(lam) < 0.0):
            raise ValueError("eigenvalues must be in ascending order")
        object.__setattr__(self, "eigenvalues", lam)
        if self.basis is not None:
            Q = np.ascontiguousarray(self.basis, dtype=float)
            if Q.shape != (self.n, self.n):
                raise ValueError("basis must be an n-by-n matrix")
            object.__setattr__(self, "basis", Q)

    @property
    def transform(self):
        """Tag of the diagonalizing transform."""
        return "analytic-dst" if self.basis is None else "dense-eigenbasis"


@dataclass(frozen=True, eq=False)
class EigenSpectrum:
    """The d per-mode spectra of a separable operator on (0,1)^d."""

    modes: tuple[Mode1D, ...]

    def __post_init__(self):
        modes = tuple(self.modes)
        if not 2 <= len(modes) <= 3:
            raise ValueError("a spectrum needs 2 or 3 modes")
        if not all(isinstance(m, Mode1D) for m in modes):
            raise ValueError("modes must be Mode1D values")
        object.__setattr__(self, "modes", modes)

    @property
    def d(self):
        return len(self.modes)

    @property
    def mode_sizes(self):
        return tuple(m.n for m in self.modes)


def laplacian_mode(n):
    """Spectrum of the 1D Dirichlet Laplacian on n interior points.

    The operator is (1/h^2)*tridiag(-1, 2, -1) with h = 1/(n+1); its
    eigenvalues are lambda_k = (4/h^2) sin^2(pi k h / 2) for k = 1..n,
    and it is diagonalized by the orthonormal sine transform.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    h = 1.0 / (n + 1)
    k = np.arange(1, n + 1)
    lam = (4.0 / h**2) * np.sin(0.5 * np.pi * k * h) ** 2
    return Mode1D(n=n, h=h, eigenvalues=lam)


def laplacian_spectrum(n, d):
    """EigenSpectrum of the d-dimensional Dirichlet Laplacian, n points per mode."""
    mode = laplacian_mode(n)
    return EigenSpectrum((mode,) * int(d))


def generalized_mode(stiffness):
    """Spectrum of a general symmetric positive definite 1D operator.

    Args:
        stiffness: dense symmetric positive definite matrix.

    Returns:
        Mode1D with eigenvalues ascending and the orthonormal eigenvector
        matrix stored as the transform.  Among equal eigenvalues the order
        is whatever the eigensolver produces.
    """
    K = np.asarray(stiffness, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] < 1:
        raise ValueError("stiffness must be a square matrix")
    if not np.all(np.isfinite(K)):
        raise ValueError("stiffness must have finite entries")
    scale = max(1.0, np.abs(K).max())
    if np.abs(K - K.T).max() > 1e-10 * scale:
        raise ValueError("stiffness must be symmetric to 1e-10")
    lam, Q = scipy.linalg.eigh(K)
    if lam[0] <= 0.0:
        raise ValueError("stiffness must be positive definite")
    # deterministic eigenvector signs: first nonzero component positive
    for j in range(Q.shape[1]):
        nz = np.flatnonzero(Q[:, j])
        if nz.size and Q[nz[0], j] < 0.0:
            Q[:, j] = -Q[:, j]
    n = K.shape[0]
    return Mode1D(n=n, h=1.0 / (n + 1), eigenvalues=lam, basis=Q)


def dense_laplacian_1d(n):
    """Dense (1/h^2)*tridiag(-1, 2, -1) with h = 1/(n+1); test oracle only."""
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    h = 1.0 / (n + 1)
    A = 2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
    return A / h**2


def dst_apply(mode, x, direction="forward"):
    """Apply the mode's orthonormal diagonalizing transform.

    Args:
        mode: Mode1D.
        x: array of shape (n,) or (n, k); the transform acts along axis 0.
        direction: "forward" maps nodal values to spectral coefficients,
            "inverse" maps spectral coefficients back to nodal values.

    Returns:
        Transformed array of the same shape.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[0] != mode.n:
        raise ValueError("input length does not match the mode size")
    if mode.basis is None:
        # the orthonormal DST-I is symmetric and involutive, so both
        # directions are the same fast transform
        return scipy.fft.dst(x, type=1, norm="ortho", axis=0)
    if direction == "forward":
        return mode.basis.T @ x
    return mode.basis @ x
