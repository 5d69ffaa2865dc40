"""Small dense symmetric helpers."""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_triangular


def min_eig(S: NDArray[np.float64]) -> float:
    """Smallest eigenvalue of the symmetric part of ``S``.

    Positive-definite matrices with widely graded diagonals (e.g. a Lyapunov
    block scaled by 1e10 next to an O(1) block) lose their small eigenvalues
    to roundoff in a plain eigensolver. For those we equilibrate the diagonal,
    factor by Cholesky and return 1 / lambda_max(S^-1), which keeps high
    relative accuracy. Indefinite input falls back to ``eigvalsh``.
    """
    S = 0.5 * (S + S.T)
    d = np.diag(S)
    if S.size and np.all(d > 0):
        s = 1.0 / np.sqrt(d)
        try:
            L = np.linalg.cholesky(S * np.outer(s, s))
        except np.linalg.LinAlgError:
            pass
        else:
            Linv = solve_triangular(L, np.eye(L.shape[0]), lower=True) * s
            top = float(np.linalg.eigvalsh(Linv.T @ Linv)[-1])
            if np.isfinite(top) and top > 0:
                return 1.0 / top
    return float(np.linalg.eigvalsh(S)[0])
