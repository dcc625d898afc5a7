"""Dense symmetric eigenvalue solver (cyclic Jacobi rotations).

Matrices in this package are small (<= 64x64 Gram matrices), where Jacobi is
simple, numerically robust, and plenty fast. Eigenvalues only; no vectors
are needed by any caller.
"""

from __future__ import annotations

import numpy as np


class EigenConvergenceError(RuntimeError):
    """Jacobi sweeps failed to reduce the off-diagonal mass."""


def symmetric_eigenvalues(a, max_sweeps=None):
    """All eigenvalues of a symmetric matrix, ascending.

    Runs cyclic Jacobi sweeps until the off-diagonal Frobenius mass falls
    below machine-level tolerance. Raises after 100*m sweeps without
    convergence.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"need a square matrix, got {a.shape}")
    m = a.shape[0]
    if not np.allclose(a, a.T, atol=1e-9 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    if m == 1:
        return a.reshape(1).copy()
    if max_sweeps is None:
        max_sweeps = 100 * m
    scale = np.sqrt(np.sum(a * a)) or 1.0
    # roundoff floor of the off-diagonal mass grows with m; quadratic
    # convergence makes the last sweeps essentially free
    tol = 1e-13 * scale * np.sqrt(m)
    od = np.empty_like(a)
    for _ in range(max_sweeps):
        # measure off-diagonal mass entrywise (subtracting the diagonal from
        # the full Frobenius mass cancels catastrophically near convergence)
        np.copyto(od, a)
        np.fill_diagonal(od, 0.0)
        off = np.sqrt(np.sum(od * od))
        if off <= tol:
            return np.sort(np.diag(a))
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                # smaller-root tangent keeps rotations well conditioned
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) \
                    if theta != 0.0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
    raise EigenConvergenceError(
        f"Jacobi failed to converge in {max_sweeps} sweeps (m={m})")


def min_eigenvalue(a, max_sweeps=None):
    return float(symmetric_eigenvalues(a, max_sweeps=max_sweeps)[0])
