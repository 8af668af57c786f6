"""Symmetric / SPD matrix utilities.

Two routes to the matrix square root live here. ``newton_schulz_sqrt`` is the
trainable one: a coupled iteration built from tape-recorded products, so the
backward pass simply unrolls it. ``jacobi_eigen`` is the oracle: a plain
cyclic-Jacobi eigensolver on numpy arrays, accurate to near machine precision
for the small matrices used in this library but deliberately outside the tape.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, IterationLimitError, NumericError
from .tensor import Tensor, add, eye, matmul, power, scale, scale_by, sub, trace, transpose

JACOBI_SWEEP_CAP = 100
# Off-diagonal Frobenius mass threshold, relative to max(1, ||A||_F) so the
# stopping rule is scale invariant.
JACOBI_TOL = 1e-12

DEFAULT_NEWTON_SCHULZ_ITERATIONS = 5


class EigenDecomposition:
    """Eigenvalues (descending) and matching orthonormal eigenvector columns."""

    __slots__ = ("eigenvalues", "eigenvectors")

    def __init__(self, eigenvalues, eigenvectors):
        self.eigenvalues = eigenvalues
        self.eigenvectors = eigenvectors

    def reconstruct(self):
        """U diag(lambda) U^T for the decomposed matrix."""
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T

    def sqrt(self):
        """U diag(sqrt(lambda)) U^T; eigenvalues must be non-negative."""
        lam = np.clip(self.eigenvalues, 0.0, None)
        u = self.eigenvectors
        return (u * np.sqrt(lam)) @ u.T


def jacobi_eigen(a, tol=JACOBI_TOL, sweep_cap=JACOBI_SWEEP_CAP):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations sweep the upper triangle in row order until the off-diagonal
    Frobenius mass drops below ``tol * max(1, ||a||_F)``. Not differentiable;
    use it to verify, not to train.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"jacobi_eigen needs a square matrix, got {a.shape}")
    if not np.isfinite(a).all():
        raise NumericError("jacobi_eigen input has non-finite entries")
    if np.max(np.abs(a - a.T)) > 1e-10:
        raise ContractError("jacobi_eigen input is not symmetric within 1e-10")

    n = a.shape[0]
    d = a.copy()
    u = np.eye(n)
    if n == 1:
        return EigenDecomposition(d[0].copy(), u)

    threshold = tol * max(1.0, float(np.linalg.norm(a)))
    off_mask = ~np.eye(n, dtype=bool)
    for sweep in range(sweep_cap + 1):
        off = float(np.linalg.norm(d[off_mask]))
        if off <= threshold:
            break
        if sweep == sweep_cap:
            raise IterationLimitError(
                f"Jacobi sweeps did not converge within {sweep_cap} sweeps"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                if d[p, q] == 0.0:
                    continue
                # Classic two-sided rotation zeroing d[p, q]; the tiny-pivot
                # branch avoids overflow in theta**2.
                diff = d[q, q] - d[p, p]
                if abs(d[p, q]) < 1e-36 * abs(diff):
                    t = d[p, q] / diff
                else:
                    theta = diff / (2.0 * d[p, q])
                    t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * d[:, p] - s * d[:, q]
                rot_q = s * d[:, p] + c * d[:, q]
                d[:, p], d[:, q] = rot_p, rot_q
                rot_p = c * d[p, :] - s * d[q, :]
                rot_q = s * d[p, :] + c * d[q, :]
                d[p, :], d[q, :] = rot_p, rot_q
                rot_p = c * u[:, p] - s * u[:, q]
                rot_q = s * u[:, p] + c * u[:, q]
                u[:, p], u[:, q] = rot_p, rot_q

    eigenvalues = np.diag(d).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return EigenDecomposition(eigenvalues[order], np.ascontiguousarray(u[:, order]))


def ridge_symmetrize(a, epsilon=0.0):
    """(A + A^T) / 2 + epsilon * I on plain arrays."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"ridge_symmetrize needs a square matrix, got {a.shape}")
    if not np.isfinite(a).all():
        raise NumericError("ridge_symmetrize input has non-finite entries")
    if epsilon < 0.0:
        raise ContractError("epsilon must be non-negative")
    out = 0.5 * (a + a.T)
    if epsilon:
        out = out + epsilon * np.eye(a.shape[0])
    return out


class NewtonSchulzState:
    """One step of the coupled iteration, for inspection and tests."""

    __slots__ = ("y", "z", "iteration", "trace_scale")

    def __init__(self, y, z, iteration, trace_scale):
        self.y = y
        self.z = z
        self.iteration = iteration
        self.trace_scale = trace_scale


def newton_schulz_states(sigma, iterations):
    """Yield the NewtonSchulzState after each plain-numpy iteration.

    Mirrors the tape version arithmetic exactly (same products, same order)
    but without recording, so tests can watch Y_k and Z_k converge.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    tr = float(np.trace(sigma))
    identity = np.eye(sigma.shape[0])
    y, z = sigma * (tr**-1.0), identity
    yield NewtonSchulzState(y, z, 0, tr)
    for k in range(1, iterations + 1):
        t = 0.5 * (3.0 * identity - z @ y)
        y = y @ t
        z = t @ z
        yield NewtonSchulzState(y, z, k, tr)


def newton_schulz_sqrt(
    sigma: Tensor,
    iterations: int = DEFAULT_NEWTON_SCHULZ_ITERATIONS,
    symmetrize_output: bool = True,
):
    """Differentiable matrix square root of an SPD matrix.

    The input is pre-normalized by its trace so the coupled iteration

        Y_k = 0.5 * Y_{k-1} (3I - Z_{k-1} Y_{k-1})
        Z_k = 0.5 * (3I - Z_{k-1} Y_{k-1}) Z_{k-1}

    starts from Y_0 = sigma / tr(sigma), Z_0 = I, where convergence is
    guaranteed for SPD input; the result is post-compensated by sqrt(tr) so
    that the output squares back to sigma. Every product is recorded on the
    active tape, so the backward pass flows through the unrolled iterations.

    ``symmetrize_output=False`` skips the final symmetrization (used by tests
    that measure the raw iteration's asymmetry).
    """
    if sigma.rows != sigma.cols:
        raise ContractError(f"square root needs a square matrix, got {sigma.shape}")
    if iterations < 1:
        raise ContractError("iterations must be >= 1")
    if not np.isfinite(sigma.data).all():
        raise NumericError("newton_schulz_sqrt input has non-finite entries")

    tr = trace(sigma)
    if tr.data[0, 0] <= 0.0:
        raise ContractError(
            f"newton_schulz_sqrt needs positive trace, got {tr.data[0, 0]}"
        )

    f = sigma.rows
    identity = eye(f)
    three_eye = Tensor._wrap(3.0 * np.eye(f), False)

    y = scale_by(sigma, power(tr, -1.0))
    z = identity
    for _ in range(iterations):
        t = scale(sub(three_eye, matmul(z, y)), 0.5)
        y = matmul(y, t)
        z = matmul(t, z)

    out = scale_by(y, power(tr, 0.5))
    if symmetrize_output:
        out = scale(add(out, transpose(out)), 0.5)
    return out
