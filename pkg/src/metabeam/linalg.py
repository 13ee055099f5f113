"""Complex linear algebra helpers for small dense systems.

All routines work on numpy complex128 arrays. Channel vectors are 1-D of
length N; beamformer matrices are (N, K) with one column per user.
"""

import numpy as np

from .errors import DegenerateInputError, SingularMatrixError

# Relative pivot threshold for declaring a factorization singular.
PIVOT_RTOL = 1e-12


def hermitian_rank1_sum(coeffs, vectors, n=None):
    """Sum of rank-one terms c_k * h_k h_k^H.

    coeffs: real nonnegative, length K. vectors: K vectors of length N
    (any iterable of 1-D arrays, or an array of shape (K, N)). n is required
    when the sum is empty and fixes the output size.

    Returns an (N, N) Hermitian PSD complex matrix; the construction makes the
    result exactly equal to its own conjugate transpose.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    vectors = [np.asarray(v, dtype=np.complex128) for v in vectors]
    if coeffs.ndim != 1 or len(vectors) != coeffs.shape[0]:
        raise ValueError(
            f"need one coefficient per vector, got {coeffs.shape[0]} coeffs "
            f"and {len(vectors)} vectors"
        )
    if np.any(coeffs < 0):
        raise ValueError("coefficients must be nonnegative")
    if not vectors:
        if n is None:
            raise ValueError("empty sum needs an explicit size n")
        return np.zeros((n, n), dtype=np.complex128)
    n_dim = vectors[0].shape[0]
    out = np.zeros((n_dim, n_dim), dtype=np.complex128)
    for c, h in zip(coeffs, vectors):
        if h.shape != (n_dim,):
            raise ValueError("all vectors must share the same length")
        out += c * np.outer(h, h.conj())
    # Mirrored entries of (S + S^H)/2 evaluate the same expression, so the
    # result equals its conjugate transpose to the bit (outer() alone does
    # not guarantee that under fused-multiply-add contraction).
    return 0.5 * (out + out.conj().T)


def hpd_solve(a, mu, b):
    """Solve (A + mu I) x = b for Hermitian positive definite A + mu I.

    a: (N, N) Hermitian. mu: real >= 0 shift. b: (N,) or (N, K) right-hand
    side. Uses a Cholesky factorization; raises SingularMatrixError when the
    factorization fails or a pivot falls below PIVOT_RTOL * trace(A + mu I).
    """
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"A must be square, got {a.shape}")
    if b.shape[0] != n:
        raise ValueError(f"rhs length {b.shape[0]} does not match A size {n}")
    s = a + mu * np.eye(n)
    try:
        chol = np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"A + {mu} I is not positive definite") from exc
    pivots = np.real(np.diag(chol)) ** 2
    threshold = PIVOT_RTOL * max(np.real(np.trace(s)), np.finfo(np.float64).tiny)
    if np.min(pivots) <= threshold:
        raise SingularMatrixError(
            f"pivot {np.min(pivots):.3e} below threshold {threshold:.3e}"
        )
    # Two triangular solves: L y = b, then L^H x = y.
    y = np.linalg.solve(chol, b)
    return np.linalg.solve(chol.conj().T, y)


def total_power(v):
    """Total transmit power ||V||_F^2 = sum_k ||v_k||^2 of a beamformer."""
    v = np.asarray(v)
    return float(np.sum(np.abs(v) ** 2))


def normalize_to_power(v, p):
    """Scale V so that total_power(V) == p exactly (up to float rounding).

    Raises DegenerateInputError for an all-zero V; p must be positive.
    """
    if p <= 0:
        raise ValueError(f"target power must be positive, got {p}")
    v = np.asarray(v, dtype=np.complex128)
    pw = total_power(v)
    if pw == 0.0:
        raise DegenerateInputError("cannot normalize an all-zero beamformer")
    return v * np.sqrt(p / pw)
