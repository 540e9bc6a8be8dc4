"""Dense symmetric-matrix utilities: definiteness tests, null-space bases,
symmetric parts, block assembly, and ellipsoid geometry.

All matrices are plain ``numpy.ndarray`` values in row-major layout.  Every
function is pure; nothing here keeps global state, so concurrent use is
unrestricted.  The routines target small dense problems (dimensions up to a
few hundred); sparse formats and complex arithmetic are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "Ellipsoid",
    "as_matrix",
    "as_symmetric",
    "block",
    "ellipsoid_contains",
    "he",
    "inv_sqrtm_psd",
    "is_pd",
    "is_psd",
    "max_eig",
    "min_eig",
    "null_space_basis",
    "spectral_norm",
    "sqrtm_psd",
]

# Asymmetry beyond this (relative to the largest entry) is treated as a caller
# error rather than round-off and is rejected instead of silently fixed.
SYMMETRY_TOL = 1e-8

# Singular values at or below RANK_TOL * sigma_max count as zero.  Matches the
# double-precision SVD noise floor for the <= 10-state problems targeted here.
RANK_TOL = 1e-9


class DimensionError(ValueError):
    """Raised when matrix shapes do not conform."""


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce ``m`` to a 2-d float array (scalars/1-d input are rejected)."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {a.shape}")
    return a


def as_symmetric(m, tol: float = SYMMETRY_TOL, name: str = "matrix") -> np.ndarray:
    """Validate that ``m`` is square and symmetric up to round-off and return
    its symmetrized copy ``(M + M^T) / 2``.

    Asymmetry larger than ``tol * (1 + max|entry|)`` raises ``ValueError``.
    """
    a = as_matrix(m, name)
    r, c = a.shape
    if r != c:
        raise DimensionError(f"{name} must be square, got shape {a.shape}")
    if r == 0:
        return a.copy()
    asym = float(np.max(np.abs(a - a.T)))
    scale = 1.0 + float(np.max(np.abs(a)))
    if asym > tol * scale:
        raise ValueError(
            f"{name} is not symmetric: max |M - M^T| = {asym:.3e} "
            f"exceeds {tol:.1e} * (1 + max|entry|)"
        )
    return (a + a.T) / 2.0


def he(m) -> np.ndarray:
    """Symmetric part doubler: ``he(M) = M + M^T`` (square input only)."""
    a = as_matrix(m, "he() argument")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"he() needs a square matrix, got shape {a.shape}")
    return a + a.T


def min_eig(m) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    a = as_symmetric(m)
    if a.shape[0] == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(a)[0])


def max_eig(m) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    a = as_symmetric(m)
    if a.shape[0] == 0:
        return float("-inf")
    return float(np.linalg.eigvalsh(a)[-1])


def is_psd(m, tol: float = 0.0) -> bool:
    """True when ``min_eig(M) >= -tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return min_eig(m) >= -tol


def is_pd(m, tol: float = 0.0) -> bool:
    """True when ``min_eig(M) >= tol`` (note the sign: strict by margin)."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return min_eig(m) >= tol


def null_space_basis(m, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the (right) null space of ``m``.

    Returns a ``(cols, cols - rank)`` array whose columns are orthonormal and
    satisfy ``max |M @ W| <= tol * ||M||``.  Singular values above
    ``tol * sigma_max`` are counted toward the rank.  A full-rank wide or
    square matrix yields a zero-column result.
    """
    a = as_matrix(m, "null_space_basis() argument")
    rows, cols = a.shape
    if cols == 0:
        return np.zeros((0, 0))
    if rows == 0:
        return np.eye(cols)
    _, s, vt = np.linalg.svd(a, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > tol * s[0]))
    return vt[rank:].T.copy()


def block(rows) -> np.ndarray:
    """Assemble a block matrix from a grid of conforming blocks.

    ``rows`` is a sequence of sequences of 2-d array-likes.  Row heights are
    taken from the first block of each row and column widths from the first
    row; any block that disagrees raises ``DimensionError`` naming its grid
    position.  Zero-sized blocks are allowed.
    """
    grid = [[as_matrix(b, f"block ({i},{j})") for j, b in enumerate(r)]
            for i, r in enumerate(rows)]
    if not grid or not grid[0]:
        return np.zeros((0, 0))
    ncols = len(grid[0])
    for i, r in enumerate(grid):
        if len(r) != ncols:
            raise DimensionError(
                f"block row {i} has {len(r)} blocks, expected {ncols}")
    heights = [r[0].shape[0] for r in grid]
    widths = [b.shape[1] for b in grid[0]]
    for i, r in enumerate(grid):
        for j, b in enumerate(r):
            if b.shape != (heights[i], widths[j]):
                raise DimensionError(
                    f"block ({i},{j}) has shape {b.shape}, expected "
                    f"({heights[i]}, {widths[j]})")
    out = np.zeros((sum(heights), sum(widths)))
    r0 = 0
    for i, r in enumerate(grid):
        c0 = 0
        for j, b in enumerate(r):
            out[r0:r0 + heights[i], c0:c0 + widths[j]] = b
            c0 += widths[j]
        r0 += heights[i]
    return out


def block_sym(upper) -> np.ndarray:
    """Assemble a symmetric block matrix from its upper triangle.

    ``upper[i]`` holds the blocks of row ``i`` for columns ``i..n-1`` (the
    diagonal block first); the lower triangle is filled with transposes.
    """
    nrows = len(upper)
    grid = [[None] * nrows for _ in range(nrows)]
    for i, row in enumerate(upper):
        if len(row) != nrows - i:
            raise DimensionError(
                f"upper-triangle row {i} has {len(row)} blocks, expected "
                f"{nrows - i}")
        for k, b in enumerate(row):
            j = i + k
            grid[i][j] = as_matrix(b, f"block ({i},{j})")
    for i in range(nrows):
        for j in range(i):
            grid[i][j] = grid[j][i].T
    return block(grid)


def spectral_norm(m) -> float:
    """Largest singular value (2-norm); 0.0 for empty matrices."""
    a = as_matrix(m, "spectral_norm() argument")
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def sqrtm_psd(m, tol: float = 1e-10) -> np.ndarray:
    """Symmetric square root of a PSD matrix (tiny negative eigs clipped)."""
    a = as_symmetric(m)
    w, v = np.linalg.eigh(a)
    scale = max(1.0, float(abs(w[-1])) if w.size else 1.0)
    if w.size and w[0] < -tol * scale:
        raise ValueError(f"matrix is not PSD (min eig {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def inv_sqrtm_psd(m, tol: float = 1e-10) -> np.ndarray:
    """Inverse symmetric square root of a PD matrix."""
    a = as_symmetric(m)
    w, v = np.linalg.eigh(a)
    if w.size == 0:
        return a.copy()
    if w[0] <= tol * max(1.0, abs(float(w[-1]))):
        raise ValueError(f"matrix is not PD (min eig {w[0]:.3e})")
    return (v / np.sqrt(w)) @ v.T


@dataclass(frozen=True)
class Ellipsoid:
    """The set ``{x : (x - c)^T S (x - c) <= 1}`` with PSD shape ``S``."""

    shape: np.ndarray
    center: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        s = as_symmetric(self.shape, name="ellipsoid shape")
        c = (np.zeros(s.shape[0]) if self.center is None
             else np.asarray(self.center, dtype=float).reshape(-1))
        if c.shape[0] != s.shape[0]:
            raise DimensionError(
                f"center has length {c.shape[0]}, shape is {s.shape[0]}-dim")
        object.__setattr__(self, "shape", s)
        object.__setattr__(self, "center", c)

    @property
    def dim(self) -> int:
        return self.shape.shape[0]

    def quadratic(self, x) -> float:
        """Value of ``(x - c)^T S (x - c)`` at a single point."""
        d = np.asarray(x, dtype=float).reshape(-1) - self.center
        return float(d @ self.shape @ d)

    def contains_point(self, x, tol: float = 0.0) -> bool:
        return self.quadratic(x) <= 1.0 + tol


def ellipsoid_contains(inner, outer, tol: float = 0.0) -> bool:
    """True when the centered ellipsoid of shape ``inner`` lies inside the one
    of shape ``outer``, i.e. ``outer <= inner`` in the PSD order.

    ``inner`` is the shape of the candidate inner ellipsoid (larger shape
    matrix means smaller set).  Implemented as ``is_psd(inner - outer, tol)``.
    """
    a = as_symmetric(inner, name="inner shape")
    b = as_symmetric(outer, name="outer shape")
    if a.shape != b.shape:
        raise DimensionError(
            f"shape dimensions differ: {a.shape} vs {b.shape}")
    return is_psd(a - b, tol)
