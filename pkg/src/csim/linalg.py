"""Eigenvalue kernels for the small dense matrices that show up here (n <= ~10).

``jacobi_eigh`` handles symmetric matrices by cyclic Jacobi rotations.
``eigvals`` handles general real matrices: Householder reduction to upper
Hessenberg form followed by Francis double-shift QR iteration.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import EigenSolverError


def jacobi_eigh(S, tol: float = 1e-15, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix.

    Returns ``(w, V)`` with ascending eigenvalues ``w`` and orthonormal
    eigenvectors in the columns of ``V``.
    """
    A = np.array(S, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("jacobi_eigh needs a square matrix")
    V = np.eye(n)
    if n == 1:
        return A.diagonal().copy(), V
    A = 0.5 * (A + A.T)
    scale = np.abs(A).max()
    if scale == 0:
        return np.zeros(n), V
    A /= scale
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.triu(A, 1) ** 2))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                Ap = A[:, p].copy()
                Aq = A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap = A[p, :].copy()
                Aq = A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp = V[:, p].copy()
                V[:, p] = c * Vp - s * V[:, q]
                V[:, q] = s * Vp + c * V[:, q]
    else:
        raise EigenSolverError("Jacobi rotations did not converge")
    w = scale * A.diagonal()
    order = np.argsort(w)
    return w[order], V[:, order]


def symmetric_eigvals(S) -> np.ndarray:
    return jacobi_eigh(S)[0]


def _norm(x) -> float:
    """Euclidean norm without underflow for tiny entries."""
    s = float(np.abs(x).max()) if x.size else 0.0
    return 0.0 if s == 0.0 else s * float(np.linalg.norm(x / s))


def hessenberg(A) -> np.ndarray:
    """Upper Hessenberg matrix orthogonally similar to ``A`` (Householder)."""
    H = np.array(A, dtype=float)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1:, k].copy()
        alpha = _norm(x)
        if alpha == 0.0:
            continue
        v = x
        v[0] += math.copysign(alpha, x[0])
        v /= _norm(v)
        H[k + 1:, k:] -= 2.0 * np.outer(v, v @ H[k + 1:, k:])
        H[:, k + 1:] -= 2.0 * np.outer(H[:, k + 1:] @ v, v)
        H[k + 2:, k] = 0.0
    return H


def _hqr(a: np.ndarray, max_iter: int = 60):
    """Eigenvalues of an upper Hessenberg matrix (destroys ``a``)."""
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = np.abs(a).sum()
    nn = n - 1
    t = 0.0
    x = y = z = w = p = q = r = s = 0.0
    while nn >= 0:
        its = 0
        while True:
            # smallest l with a negligible subdiagonal below it
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = z
                    wi[nn] = -z
                nn -= 2
                break
            if its == max_iter:
                raise EigenSolverError("QR iteration did not converge")
            if its in (10, 20, 30, 40, 50):
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = nn if nn < k + 3 else k + 3
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return wr + 1j * wi


def eigvals(A) -> np.ndarray:
    """Eigenvalues of a real square matrix, sorted by (real part, imaginary part)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("eigvals needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise EigenSolverError("matrix has non-finite entries")
    if n == 0:
        return np.zeros(0, dtype=complex)
    if n == 1:
        return A[0].astype(complex)
    scale = float(np.abs(A).max())
    if scale == 0.0:
        return np.zeros(n, dtype=complex)
    # unit scale keeps the deflation tests away from underflow
    ev = scale * _hqr(hessenberg(A / scale))
    # snap conjugate pairs so the spectrum is closed under conjugation exactly
    ev = np.where(np.abs(ev.imag) == 0.0, ev.real + 0j, ev)
    return ev[np.lexsort((ev.imag, ev.real))]


def spectral_norm(M) -> float:
    """Largest singular value, via the top eigenvalue of M^T M."""
    M = np.asarray(M, dtype=float)
    scale = float(np.abs(M).max()) if M.size else 0.0
    if scale == 0.0:
        return 0.0
    M = M / scale
    top = jacobi_eigh(M.T @ M)[0][-1]
    return scale * math.sqrt(max(top, 0.0))
