"""Forward-mode dual arrays: arithmetic, linear algebra, and matrix-calculus
rules checked against central finite differences."""

import numpy as np
import pytest

from conftest import rel_err
from obsplan import fwdmode as fm
from obsplan.fwdmode import (DArr, RankDeficientError, nullspace,
                             seed, seed_identity, smallest_eigval,
                             sym_sqrt_psd, value)

FD = 1e-6


def fd_dirderiv(f, x, d, h=FD):
    return (f(x + h * d) - f(x - h * d)) / (2 * h)


def check_grad(f, x, rng, tol=1e-6, n_dirs=3):
    """Compare the seeded forward derivative of f with finite differences."""
    x = np.asarray(x, dtype=float)
    for _ in range(n_dirs):
        d = rng.normal(size=x.shape)
        out = f(seed(x, d[None]))
        an = np.asarray(out.tan[0])
        num = fd_dirderiv(lambda xv: np.asarray(value(f(xv))), x, d)
        assert rel_err(an, num) < tol, (an, num)


def test_elementwise_chain(rng):
    x = rng.uniform(0.2, 0.8, size=5)
    check_grad(lambda v: fm.sin(v) * fm.cos(v) + fm.sqrt(v), x, rng)
    check_grad(lambda v: fm.arccos(fm.clip(v, -0.9, 0.9)), x, rng)


def test_matmul_and_solve(rng):
    A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
    B = rng.normal(size=(4, 3))

    def f(a_flat):
        Ad = a_flat.reshape(4, 4) if not isinstance(a_flat, DArr) \
            else a_flat.reshape((4, 4))
        return fm.trace(fm.transpose(fm.solve(Ad, B)) @ (Ad @ B))

    check_grad(f, A.ravel(), rng)


def test_inv_consistent_with_solve(rng):
    A = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    dA = rng.normal(size=(5, 5))
    Ad = seed(A, dA[None])
    left = fm.inv(Ad)
    right = fm.solve(Ad, np.eye(5))
    assert rel_err(value(left), value(right)) < 1e-12
    assert rel_err(left.tan, right.tan) < 1e-10


def test_matmul_batched_operands(rng):
    """Tangent broadcasting when one matmul operand carries batch axes."""
    A = seed(rng.normal(size=(6, 3, 3)), rng.normal(size=(2, 6, 3, 3)))
    B = seed(rng.normal(size=(3, 4)), rng.normal(size=(2, 3, 4)))
    out = A @ B
    assert value(out).shape == (6, 3, 4)
    assert out.tan.shape == (2, 6, 3, 4)
    # direction 0 against finite differences
    h = 1e-7
    Ap = value(A) + h * A.tan[0]
    Bp = value(B) + h * B.tan[0]
    Am = value(A) - h * A.tan[0]
    Bm = value(B) - h * B.tan[0]
    num = (Ap @ Bp - Am @ Bm) / (2 * h)
    assert rel_err(out.tan[0], num) < 1e-6


def test_skew_matches_cross_product(rng):
    w = rng.normal(size=3)
    x = rng.normal(size=3)
    assert np.allclose(fm.skew(w) @ x, np.cross(w, x))
    wb = rng.normal(size=(4, 3))
    S = fm.skew(wb)
    assert S.shape == (4, 3, 3)
    for i in range(4):
        assert np.allclose(S[i] @ x, np.cross(wb[i], x))


def test_seed_identity_shape(rng):
    x = rng.normal(size=7)
    xd = seed_identity(x)
    assert xd.tan.shape == (7, 7)
    assert np.allclose(xd.tan, np.eye(7))


def test_nullspace_spans_left_nullspace(rng):
    L = rng.normal(size=(8, 3))
    Q = nullspace(L)
    Qv = value(Q)
    assert Qv.shape == (8, 5)
    assert np.max(np.abs(Qv.T @ L)) < 1e-12
    assert rel_err(Qv.T @ Qv, np.eye(5)) < 1e-12


def test_nullspace_differential_identities(rng):
    """The derivative of the nullspace basis must keep Q^T L = 0 and
    Q^T Q = I to first order."""
    for _ in range(10):
        L = rng.normal(size=(10, 4))
        dL = rng.normal(size=(10, 4))
        Q = nullspace(seed(L, dL[None]))
        Qv, dQ = value(Q), Q.tan[0]
        res_orth = dQ.T @ L + Qv.T @ dL
        res_unit = dQ.T @ Qv + Qv.T @ dQ
        assert np.max(np.abs(res_orth)) < 1e-9
        assert np.max(np.abs(res_unit)) < 1e-9


def test_nullspace_derivative_matches_fd(rng):
    """Projector QQ^T is basis-independent; compare its derivative to FD."""
    L = rng.normal(size=(7, 3))
    dL = rng.normal(size=(7, 3))

    def proj(Lv):
        Qv = value(nullspace(Lv))
        return Qv @ Qv.T

    Q = nullspace(seed(L, dL[None]))
    dP = Q.tan[0] @ value(Q).T + value(Q) @ Q.tan[0].T
    num = fd_dirderiv(proj, L, dL)
    assert rel_err(dP, num) < 1e-6


def test_nullspace_rank_deficient_raises(rng):
    L = np.zeros((6, 3))
    L[:, 0] = rng.normal(size=6)  # rank 1
    with pytest.raises(RankDeficientError):
        nullspace(seed(L, rng.normal(size=(1, 6, 3))))
    # value-only calls succeed and return the larger nullspace
    Q = nullspace(L)
    assert value(Q).shape == (6, 5)


def test_smallest_eigval_simple(rng):
    A = rng.normal(size=(5, 5))
    A = A @ A.T + np.diag([0.0, 1, 2, 3, 4])
    dA = rng.normal(size=(5, 5))
    dA = dA + dA.T
    lam, simple = smallest_eigval(seed(A, dA[None]))
    assert simple
    num = fd_dirderiv(lambda M: np.linalg.eigvalsh(0.5 * (M + M.T))[0], A, dA)
    assert abs(lam.tan[0] - num) < 1e-6


def test_smallest_eigval_flags_multiplicity():
    _, simple = smallest_eigval(np.eye(4))
    assert not simple


def test_sym_sqrt_psd(rng):
    A = rng.normal(size=(6, 6))
    A = A @ A.T
    S = sym_sqrt_psd(A)
    assert rel_err(S @ S, A) < 1e-10
    assert rel_err(S, S.T) < 1e-12
