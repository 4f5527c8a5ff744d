r"""Gaussian moments against Hermite functions.

Everything here serves integrals of the form

    I_alpha = int d^d y  [prod_k H_{alpha_k}(y_k)]  exp(-1/2 y^T Q' y + l^T y)

with H_n the physicists' Hermite polynomials and Q' a complex symmetric
matrix with positive-definite real part.  Writing the generating function
of the product of Hermite polynomials and completing the square gives

    I_alpha = (2 pi)^(d/2) det(Q')^(-1/2) exp(1/2 l^T Q'^-1 l) T_alpha

where the T coefficients obey a d-dimensional recursion in the multi-index
alpha with

    b = 2 Q'^-1 l,      Qt = 4 Q'^-1 - 2 I,
    T_0 = 1,
    T_alpha = b_i T_{alpha - e_i} + sum_j Qt_{ij} (alpha - e_i)_j
              T_{alpha - e_i - e_j}

for any axis i with alpha_i > 0.  The recursion is evaluated here for a
whole batch of (Q', l) pairs at once; the batch axis is typically a chunk
of the time grid.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["hermite_coefficients", "hermite_poly_values", "fock_norm"]


def hermite_coefficients(q_inv, ell, caps):
    """T_alpha tensor for a batch of Gaussian forms.

    Parameters
    ----------
    q_inv : ndarray, shape (B, d, d)
        Inverses of the complex symmetric forms Q'.
    ell : ndarray, shape (B, d)
        Linear coefficients l.
    caps : sequence of int, length d
        Maximum index per axis (inclusive).

    Returns
    -------
    ndarray, shape (B, caps[0]+1, ..., caps[d-1]+1), complex
    """
    q_inv = np.asarray(q_inv)
    ell = np.asarray(ell)
    batch = q_inv.shape[0]
    d = q_inv.shape[-1]
    caps = tuple(int(c) for c in caps)
    if len(caps) != d:
        raise ValueError("caps length must match dimension of Q'")

    b = 2.0 * np.einsum("bij,bj->bi", q_inv, ell)
    qt = 4.0 * q_inv - 2.0 * np.eye(d)

    shape = tuple(c + 1 for c in caps)
    out = np.zeros((batch,) + shape, dtype=complex)
    out[(slice(None),) + (0,) * d] = 1.0

    for alpha in np.ndindex(*shape):
        if sum(alpha) == 0:
            continue
        i = next(ax for ax, a in enumerate(alpha) if a > 0)
        prev = list(alpha)
        prev[i] -= 1
        acc = b[:, i] * out[(slice(None),) + tuple(prev)]
        for j in range(d):
            nj = prev[j]
            if nj > 0:
                prev2 = list(prev)
                prev2[j] -= 1
                acc = acc + qt[:, i, j] * nj * out[(slice(None),) + tuple(prev2)]
        out[(slice(None),) + alpha] = acc
    return out


def hermite_poly_values(nmax, y):
    """Physicists' Hermite polynomial values H_0..H_nmax at points y.

    Returns an array of shape (nmax+1,) + y.shape.  Plain H_{n+1} =
    2 y H_n - 2 n H_{n-1}; magnitudes are left unnormalized, callers fold
    1/sqrt(2^n n! sqrt(pi)) into their own prefactors.
    """
    y = np.asarray(y, dtype=float)
    out = np.empty((nmax + 1,) + y.shape, dtype=float)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = 2.0 * y
    for n in range(1, nmax):
        out[n + 1] = 2.0 * y * out[n] - 2.0 * n * out[n - 1]
    return out


def fock_norm(n):
    """Normalization pi^(-1/4)/sqrt(2^n n!) of the n-th oscillator state."""
    return math.pi ** -0.25 / math.sqrt(2.0 ** n * math.factorial(n))
