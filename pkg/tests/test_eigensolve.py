"""Jacobi eigensolver against numpy's LAPACK-backed oracle and analytic
cases."""

import numpy as np
import pytest

from kernelnet.eigensolve import min_eigenvalue, symmetric_eigenvalues


def test_identity():
    vals = symmetric_eigenvalues(np.eye(4))
    assert np.allclose(vals, np.ones(4), atol=1e-14)
    assert min_eigenvalue(np.eye(4)) == pytest.approx(1.0, abs=1e-14)


def test_diagonal_is_its_entries():
    d = np.array([3.0, -1.5, 0.25, 7.0])
    vals = symmetric_eigenvalues(np.diag(d))
    assert np.allclose(vals, np.sort(d), atol=1e-14)


def test_two_by_two_analytic():
    a = np.array([[2.0, 1.0], [1.0, 2.0]])
    vals = symmetric_eigenvalues(a)
    assert np.allclose(vals, [1.0, 3.0], atol=1e-12)


@pytest.mark.parametrize("m", [3, 8, 16, 48])
@pytest.mark.parametrize("seed", [0, 1])
def test_against_lapack_oracle(m, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((m, m))
    a = 0.5 * (x + x.T)
    ours = symmetric_eigenvalues(a)
    ref = np.linalg.eigvalsh(a)
    assert np.allclose(ours, ref, atol=1e-10 * max(1.0, np.abs(ref).max()))


def test_gram_style_psd_matrix():
    rng = np.random.default_rng(5)
    f = rng.standard_normal((12, 30))
    g = f @ f.T / 30
    assert min_eigenvalue(g) >= -1e-12


def test_rejects_nonsquare_and_asymmetric():
    with pytest.raises(ValueError):
        symmetric_eigenvalues(np.zeros((2, 3)))
    bad = np.array([[0.0, 1.0], [5.0, 0.0]])
    with pytest.raises(ValueError):
        symmetric_eigenvalues(bad)
