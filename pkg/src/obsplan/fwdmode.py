"""Forward-mode directional derivatives over numpy arrays.

A ``DArr`` carries a value array together with tangents along ``D`` seed
directions (leading axis of ``tan``).  All pipeline code is written against
plain numpy operators plus the small generic helpers below, so the same code
path produces values (ndarray inputs) or values-with-derivatives (DArr
inputs).  Matrix factorizations that are not smooth ring operations (SVD
nullspace, symmetric eigenvalues) get dedicated rules at the bottom.
"""

from __future__ import annotations

import numpy as np


def _fix_tan(tan, val):
    """Broadcast a tangent block to (D,) + val.shape."""
    target = (tan.shape[0],) + np.shape(val)
    if tan.shape != target:
        tan = np.broadcast_to(_pad_tan(tan, len(np.shape(val))), target)
    return tan


def _pad_tan(tan, val_ndim):
    """Insert singleton axes after the direction axis so broadcasting aligns."""
    need = val_ndim - (tan.ndim - 1)
    if need > 0:
        tan = tan.reshape(tan.shape[:1] + (1,) * need + tan.shape[1:])
    return tan


class DArr:
    """Array value plus tangents along D directions (tan shape = (D,) + val.shape)."""

    __slots__ = ("val", "tan")
    __array_priority__ = 100.0  # keep numpy from absorbing us in mixed ops

    def __init__(self, val, tan):
        self.val = np.asarray(val, dtype=float)
        self.tan = _fix_tan(np.asarray(tan, dtype=float), self.val)

    @property
    def ndirs(self):
        return self.tan.shape[0]

    @property
    def shape(self):
        return self.val.shape

    def __repr__(self):
        return f"DArr(shape={self.val.shape}, ndirs={self.ndirs})"

    # -- elementwise ring ops -------------------------------------------------

    def __add__(self, other):
        if isinstance(other, DArr):
            v = self.val + other.val
            return DArr(v, _fix_tan(self.tan, v) + _fix_tan(other.tan, v))
        v = self.val + other
        return DArr(v, _fix_tan(self.tan, v))

    __radd__ = __add__

    def __neg__(self):
        return DArr(-self.val, -self.tan)

    def __sub__(self, other):
        return self + (-other if isinstance(other, DArr) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, DArr):
            v = self.val * other.val
            t1 = _pad_tan(self.tan, v.ndim) * other.val
            t2 = _pad_tan(other.tan, v.ndim) * self.val
            return DArr(v, _fix_tan(t1, v) + _fix_tan(t2, v))
        ov = np.asarray(other)
        v = self.val * ov
        return DArr(v, _fix_tan(_pad_tan(self.tan, v.ndim) * ov, v))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DArr):
            return self * other._reciprocal()
        ov = np.asarray(other)
        v = self.val / ov
        return DArr(v, _fix_tan(_pad_tan(self.tan, v.ndim) / ov, v))

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _reciprocal(self):
        inv = 1.0 / self.val
        return DArr(inv, -self.tan * inv * inv)

    def __pow__(self, p):
        if p == 2:
            return self * self
        v = self.val ** p
        return DArr(v, _fix_tan(p * self.val ** (p - 1) * self.tan, v))

    # -- matmul ---------------------------------------------------------------

    def __matmul__(self, other):
        if isinstance(other, DArr):
            v = self.val @ other.val
            t1 = _pad_tan(self.tan, v.ndim) @ other.val
            t2 = self.val @ _pad_tan(other.tan, v.ndim)
            return DArr(v, _fix_tan(t1, v) + _fix_tan(t2, v))
        ov = np.asarray(other)
        v = self.val @ ov
        return DArr(v, _fix_tan(_pad_tan(self.tan, v.ndim) @ ov, v))

    def __rmatmul__(self, other):
        ov = np.asarray(other)
        v = ov @ self.val
        return DArr(v, _fix_tan(ov @ _pad_tan(self.tan, v.ndim), v))

    # -- structure ------------------------------------------------------------

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return DArr(self.val[idx], self.tan[(slice(None),) + idx])

    @property
    def T(self):
        return DArr(np.swapaxes(self.val, -1, -2), np.swapaxes(self.tan, -1, -2))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return DArr(self.val.reshape(shape), self.tan.reshape((self.ndirs,) + tuple(shape)))


# -- generic helpers (ndarray | DArr) ----------------------------------------


def value(x):
    return x.val if isinstance(x, DArr) else np.asarray(x, dtype=float)


def seed(val, tan):
    """Wrap a value with explicit tangents (tan shape (D,) + val.shape)."""
    return DArr(val, tan)


def seed_identity(val):
    """Seed a flat vector with one direction per coordinate."""
    val = np.asarray(val, dtype=float)
    n = val.size
    return DArr(val, np.eye(n).reshape((n,) + val.shape))


def extract(x, ndirs=None):
    """Return (value, tangent); zero tangent for plain arrays."""
    if isinstance(x, DArr):
        return x.val, x.tan
    v = np.asarray(x, dtype=float)
    if ndirs is None:
        raise ValueError("ndirs required for plain arrays")
    return v, np.zeros((ndirs,) + v.shape)


def is_dual(*xs):
    return any(isinstance(x, DArr) for x in xs)


def ndirs_of(*xs):
    for x in xs:
        if isinstance(x, DArr):
            return x.ndirs
    return None


def promote(x, ndirs):
    """Lift a plain array to a DArr with zero tangent."""
    if isinstance(x, DArr):
        return x
    v = np.asarray(x, dtype=float)
    return DArr(v, np.zeros((ndirs,) + v.shape))


def _unary(fn, dfn, x):
    if isinstance(x, DArr):
        v = fn(x.val)
        return DArr(v, _fix_tan(dfn(x.val) * x.tan, v))
    return fn(np.asarray(x, dtype=float))


def sin(x):
    return _unary(np.sin, np.cos, x)


def cos(x):
    return _unary(np.cos, lambda v: -np.sin(v), x)


def sqrt(x):
    return _unary(np.sqrt, lambda v: 0.5 / np.sqrt(v), x)


def arccos(x):
    return _unary(np.arccos, lambda v: -1.0 / np.sqrt(1.0 - v * v), x)


def clip(x, lo, hi):
    if isinstance(x, DArr):
        v = np.clip(x.val, lo, hi)
        active = (v == x.val).astype(float)
        return DArr(v, x.tan * active)
    return np.clip(np.asarray(x, dtype=float), lo, hi)


def transpose(x):
    return x.T if isinstance(x, DArr) else np.swapaxes(np.asarray(x, dtype=float), -1, -2)


def asum(x, axis):
    """Sum along an axis of the value (negative axes only, to stay generic)."""
    if axis >= 0:
        raise ValueError("use negative axes")
    if isinstance(x, DArr):
        return DArr(np.sum(x.val, axis=axis), np.sum(x.tan, axis=axis))
    return np.sum(np.asarray(x, dtype=float), axis=axis)


def dot(a, b):
    """Inner product over the trailing axis."""
    return asum(a * b, axis=-1)


def norm(x):
    return sqrt(dot(x, x))


def stack(xs, axis=0):
    if axis < 0:
        raise ValueError("use non-negative axes")
    if is_dual(*xs):
        D = ndirs_of(*xs)
        xs = [promote(x, D) for x in xs]
        return DArr(np.stack([x.val for x in xs], axis=axis),
                    np.stack([x.tan for x in xs], axis=axis + 1))
    return np.stack([np.asarray(x, dtype=float) for x in xs], axis=axis)


def concat(xs, axis):
    if axis >= 0:
        raise ValueError("use negative axes")
    if is_dual(*xs):
        D = ndirs_of(*xs)
        xs = [promote(x, D) for x in xs]
        return DArr(np.concatenate([x.val for x in xs], axis=axis),
                    np.concatenate([x.tan for x in xs], axis=axis))
    return np.concatenate([np.asarray(x, dtype=float) for x in xs], axis=axis)


def moveaxis(x, src, dst):
    """Move a value axis (non-negative indices refer to value axes)."""
    if isinstance(x, DArr):
        s = src + 1 if src >= 0 else src
        d = dst + 1 if dst >= 0 else dst
        return DArr(np.moveaxis(x.val, src, dst), np.moveaxis(x.tan, s, d))
    return np.moveaxis(np.asarray(x, dtype=float), src, dst)


def broadcast_to(x, shape):
    if isinstance(x, DArr):
        return DArr(np.broadcast_to(x.val, shape),
                    np.broadcast_to(_pad_tan(x.tan, len(shape)), (x.ndirs,) + tuple(shape)))
    return np.broadcast_to(np.asarray(x, dtype=float), shape)


def zeros_like_block(shape, like):
    """Zero block matching the dual-ness of ``like``."""
    if isinstance(like, DArr):
        return DArr(np.zeros(shape), np.zeros((like.ndirs,) + tuple(shape)))
    return np.zeros(shape)


def block(rows):
    """Assemble a block matrix from a nested list (generic)."""
    return concat([concat(r, axis=-1) for r in rows], axis=-2)


def _skew_np(w):
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def skew(w):
    """3-vector -> 3x3 cross-product matrix (generic over the last axis)."""
    if isinstance(w, DArr):
        return DArr(_skew_np(w.val), _skew_np(w.tan))
    return _skew_np(w)


def matvec(A, x):
    """(..., m, n) @ (..., n) -> (..., m), generic."""
    xc = x[..., None] if isinstance(x, DArr) else np.asarray(x, dtype=float)[..., None]
    return (A @ xc)[..., 0]


def solve(A, B):
    """Solve A X = B with forward-mode rule d X = A^{-1} (dB - dA X)."""
    if not is_dual(A, B):
        return np.linalg.solve(A, B)
    D = ndirs_of(A, B)
    A = promote(A, D)
    B = promote(B, D)
    X = np.linalg.solve(A.val, B.val)
    rhs = B.tan - A.tan @ X
    return DArr(X, np.linalg.solve(A.val, rhs))


def inv(A):
    if not isinstance(A, DArr):
        return np.linalg.inv(A)
    Ai = np.linalg.inv(A.val)
    return DArr(Ai, -Ai @ A.tan @ Ai)


def trace(A):
    if isinstance(A, DArr):
        return DArr(np.trace(A.val), np.trace(A.tan, axis1=-2, axis2=-1))
    return np.trace(A)


# -- non-smooth factorization junctions --------------------------------------


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when a nullspace gradient is requested at rank-deficient input."""


def nullspace_differential(L, dL, svd_factors):
    """Directional derivative of the left-nullspace basis Q of L.

    ``svd_factors`` is (U, s, Vt, rank) from a full SVD of L; Q = U[:, rank:].
    dQ satisfies dQ^T L + Q^T dL = 0 and dQ^T Q + Q^T dQ = 0, with the
    remaining gauge freedom fixed to zero.  ``dL`` may carry a leading batch
    axis of directions.
    """
    U, s, Vt, rank = svd_factors
    Q = U[:, rank:]
    dLT = np.swapaxes(np.asarray(dL, dtype=float), -1, -2)
    Z1 = -(1.0 / s[:rank])[:, None] * (Vt[:rank] @ dLT @ Q)
    return U[:, :rank] @ Z1


def nullspace(L, rtol=1e-10, require_full_rank_grad=True):
    """Orthonormal basis Q of the left-nullspace of L (m x n, m > rank).

    Deterministic (single SVD pipeline).  For DArr input, tangents follow the
    differentiated orthogonality/annihilation constraints.
    """
    Lv = value(L)
    m, n = Lv.shape
    U, s, Vt = np.linalg.svd(Lv, full_matrices=True)
    rank = 0 if (s.size == 0 or s[0] == 0.0) else int(np.sum(s > rtol * s[0]))
    Q = U[:, rank:]
    if not isinstance(L, DArr):
        return Q
    if rank < min(m, n) and require_full_rank_grad:
        raise RankDeficientError(
            f"nullspace gradient at rank-deficient input (rank {rank} < {min(m, n)})")
    dQ = nullspace_differential(Lv, L.tan, (U, s, Vt, rank))
    return DArr(Q, dQ)


def smallest_eigval(A, multiplicity_tol=1e-8):
    """Smallest eigenvalue of a symmetric matrix; dual rule via its eigenvector.

    Returns (lam, simple) where ``simple`` is False if the eigenvalue is
    within ``multiplicity_tol`` of the next one (gradient unreliable).
    """
    Av = value(A)
    w, V = np.linalg.eigh(Av)
    lam = w[0]
    simple = (w.size < 2) or (w[1] - w[0] > multiplicity_tol)
    if not isinstance(A, DArr):
        return lam, simple
    v = V[:, 0]
    dlam = v @ A.tan @ v
    return DArr(np.asarray(lam), dlam), simple


def sym_sqrt_psd(A, clip=0.0):
    """Symmetric PSD square root via eigendecomposition (value-only)."""
    w, V = np.linalg.eigh(np.asarray(A, dtype=float))
    w = np.clip(w, clip, None)
    return (V * np.sqrt(w)) @ V.T
