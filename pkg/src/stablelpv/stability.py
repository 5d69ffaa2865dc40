"""Quadratic-stability checks, LTI stability triangle and coefficient-set geometry."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import minimize

from ._io import atomic_open
from ._linalg import min_eig
from .model import MaxStateSpace, shift_matrices
from .stabparam import RiccatiSolution, XwFactor, k_from_m

__all__ = [
    "QsCertificate",
    "CoeffSetEllipse",
    "min_eig",
    "qs_grid_check",
    "qs_full_check",
    "lti_triangle_contains",
    "TRIANGLE_VERTICES",
    "frozen_roots",
    "frozen_roots_stable",
    "coeff_set_boundary",
    "qs_certificate_search",
    "write_stability_csv",
    "read_stability_csv",
]

KSource = Union[Callable[[NDArray[np.float64]], ArrayLike], ArrayLike]

TRIANGLE_VERTICES = np.array([[2.0, 1.0], [-2.0, 1.0], [0.0, -1.0]])


@dataclass
class QsCertificate:
    """Outcome of a grid-based quadratic-stability check.

    ``min_margin`` is the smallest eigenvalue of P - A(rho)' P A(rho) over the
    grid; the certificate is valid only when it and P itself are positive.
    """

    P: NDArray[np.float64]
    grid: NDArray[np.float64]
    min_margin: float
    p_min_eig: float
    message: str = ""
    feasible: bool = True  # False when a search gave up, whatever the margins say

    @property
    def valid(self) -> bool:
        return self.feasible and self.min_margin > 0 and self.p_min_eig > 0

    def __bool__(self) -> bool:
        return self.valid


@dataclass
class CoeffSetEllipse:
    center: NDArray[np.float64]
    boundary: NDArray[np.float64]
    x_q: float
    X_W: NDArray[np.float64]
    tag: str = "ellipse"

    def shrunk(self, factor: float) -> NDArray[np.float64]:
        return self.center + factor * (self.boundary - self.center)


def _grid(grid: ArrayLike) -> NDArray[np.float64]:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim <= 1:
        g = g.reshape(-1, 1)
    if g.shape[0] == 0:
        raise ValueError("scheduling grid is empty")
    return g


def _k_values(K: KSource, grid: NDArray[np.float64]) -> NDArray[np.float64]:
    if callable(K):
        return np.array([np.asarray(K(r), dtype=np.float64).reshape(-1) for r in grid])
    vals = np.atleast_2d(np.asarray(K, dtype=np.float64))
    if vals.shape[0] == 1:
        vals = np.repeat(vals, grid.shape[0], axis=0)
    if vals.shape[0] != grid.shape[0]:
        raise ValueError("K samples do not match the grid")
    return vals


def qs_grid_check(K: KSource, P: ArrayLike, grid: ArrayLike) -> QsCertificate:
    """Check P - (F - G K)' P (F - G K) > 0 at every grid point.

    ``K`` is either a callable rho -> K(rho) or an array of K values (one row
    per grid point, or a single row for constant K).
    """
    g = _grid(grid)
    P = np.asarray(P, dtype=np.float64)
    Ks = _k_values(K, g)
    F, G = shift_matrices(P.shape[0])
    margin = np.inf
    for Kr in Ks:
        Acl = F - np.outer(G, Kr)
        margin = min(margin, min_eig(P - Acl.T @ P @ Acl))
    p_eig = min_eig(P)
    msg = "certificate" if margin > 0 and p_eig > 0 else "no certificate"
    return QsCertificate(P, g, float(margin), p_eig, msg)


def qs_full_check(ss: MaxStateSpace, P: ArrayLike, grid: ArrayLike) -> QsCertificate:
    """Check P - A(rho)' P A(rho) > 0 on the full realization."""
    g = _grid(grid)
    P = np.asarray(P, dtype=np.float64)
    if P.shape != (ss.n_states, ss.n_states):
        raise ValueError(f"P must be {ss.n_states}x{ss.n_states}")
    margin = np.inf
    for r in g:
        A = ss.A(r)
        margin = min(margin, min_eig(P - A.T @ P @ A))
    p_eig = min_eig(P)
    msg = "certificate" if margin > 0 and p_eig > 0 else "no certificate"
    return QsCertificate(P, g, float(margin), p_eig, msg)


def lti_triangle_contains(a1: float, a2: float) -> bool:
    """Schur stability of z^2 + a1 z + a2."""
    return abs(a2) < 1.0 and abs(a1) < 1.0 + a2


def frozen_roots(a: ArrayLike) -> NDArray[np.complex128]:
    """Roots of z^n + a_1 z^{n-1} + ... + a_n."""
    return np.roots(np.concatenate([[1.0], np.asarray(a, dtype=np.float64).reshape(-1)]))


def frozen_roots_stable(a: ArrayLike) -> bool:
    """Schur-Cohn step-down test: all roots of z^n + a_1 z^{n-1} + ... + a_n inside |z| < 1.

    Avoids root finding, whose error grows like eps^(1/m) at m-fold roots.
    """
    c = np.asarray(a, dtype=np.float64).reshape(-1)
    while c.size:
        k = c[-1]
        if not abs(k) < 1.0:
            return False
        c = (c[:-1] - k * c[-2::-1]) / (1.0 - k * k)
    return True


def coeff_set_boundary(sol: RiccatiSolution, xw: XwFactor, n_points: int = 200) -> CoeffSetEllipse:
    """Boundary of {center + (1/x_q) m X_W : |m| <= 1} in the (a1, a2) plane."""
    if xw.n_a != 2:
        raise ValueError("coefficient-set boundary is only defined for n_a = 2")
    if n_points < 4:
        raise ValueError("need at least 4 boundary points")
    theta = 2 * np.pi * np.arange(n_points) / n_points
    m = np.column_stack([np.cos(theta), np.sin(theta)])
    return CoeffSetEllipse(
        center=np.asarray(sol.center, dtype=np.float64),
        boundary=k_from_m(m, sol, xw),
        x_q=sol.x_q,
        X_W=xw.matrix(),
    )


def qs_certificate_search(
    K: KSource,
    grid: ArrayLike,
    seed: int = 0,
    n_starts: int = 8,
    eps: float = 1e-6,
    max_iter: int = 4000,
) -> QsCertificate:
    """Derivative-free search for a common Lyapunov matrix of F - G K(rho).

    P = R R' / trace(R R') with R lower triangular; Nelder-Mead minimizes
    max over the grid of lambda_max(A' P A - P) + eps. Success iff the
    objective drops below zero. Failure is inconclusive, not a proof of
    instability.
    """
    g = _grid(grid)
    Ks = _k_values(K, g)
    n = Ks.shape[1]
    F, G = shift_matrices(n)
    Acls = np.array([F - np.outer(G, Kr) for Kr in Ks])

    tril = np.tril_indices(n)

    def to_P(v: NDArray[np.float64]) -> NDArray[np.float64]:
        R = np.zeros((n, n))
        R[tril] = v
        S = R @ R.T
        tr = np.trace(S)
        return S / tr if tr > 0 else np.eye(n) / n

    class _Found(Exception):
        pass

    def objective(v: NDArray[np.float64]) -> float:
        P = to_P(v)
        D = np.einsum("gji,jk,gkl->gil", Acls, P, Acls) - P
        return float(np.linalg.eigvalsh(D)[:, -1].max() + eps)

    def searched(v: NDArray[np.float64]) -> float:
        f = objective(v)
        if f < 0:
            raise _Found(v.copy())
        return f

    rng = np.random.default_rng(seed)
    starts = []
    warm = _lyapunov_start(Acls)
    if warm is not None:
        starts.append(warm)
    starts.append(np.eye(n)[tril])
    while len(starts) < n_starts:
        R = np.tril(rng.normal(size=(n, n)))
        R[np.diag_indices(n)] = np.abs(R[np.diag_indices(n)]) + 0.1
        starts.append(R[tril])

    best_v, best_f = starts[0], np.inf
    for v0 in starts[:n_starts]:
        f0 = objective(v0)
        if f0 < best_f:
            best_v, best_f = v0, f0
        if best_f < 0:
            break
        try:
            res = minimize(searched, v0, method="Nelder-Mead",
                           options={"maxiter": max_iter, "xatol": 1e-9, "fatol": 1e-9})
            v, f = res.x, res.fun
        except _Found as found:
            v = found.args[0]
            f = objective(v)
        if f < best_f:
            best_v, best_f = v, f
        if best_f < 0:
            break

    P = to_P(best_v)
    cert = qs_grid_check(Ks, P, g)
    if best_f >= 0:
        # A degenerate P can show roundoff-level positive margins; trust f only.
        cert.feasible = False
        cert.message = "search inconclusive: no certificate found"
    return cert


def _lyapunov_start(Acls: NDArray[np.float64]) -> NDArray[np.float64] | None:
    """Cholesky factor of the Lyapunov solution for the grid-average closed loop."""
    Abar = Acls.mean(axis=0)
    if np.max(np.abs(np.linalg.eigvals(Abar))) >= 1:
        return None
    n = Abar.shape[0]
    P = solve_discrete_lyapunov(Abar.T, np.eye(n))
    try:
        R = np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError:
        return None
    return R[np.tril_indices(n)]


def write_stability_csv(
    path: str | Path,
    ellipses: Iterable[CoeffSetEllipse],
    include_triangle: bool = True,
    extra: Sequence[tuple[str, ArrayLike]] = (),
) -> None:
    """CSV with columns a1, a2, tag. Triangle vertices are tagged ``triangle``."""
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["a1", "a2", "tag"])
        for e in ellipses:
            for a1, a2 in e.boundary:
                w.writerow([repr(float(a1)), repr(float(a2)), e.tag])
            w.writerow([repr(float(e.center[0])), repr(float(e.center[1])), f"{e.tag}_center"])
        if include_triangle:
            for a1, a2 in TRIANGLE_VERTICES:
                w.writerow([repr(float(a1)), repr(float(a2)), "triangle"])
        for tag, pts in extra:
            for a1, a2 in np.asarray(pts, dtype=np.float64).reshape(-1, 2):
                w.writerow([repr(float(a1)), repr(float(a2)), tag])


def read_stability_csv(path: str | Path) -> dict[str, NDArray[np.float64]]:
    out: dict[str, list[list[float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["a1", "a2", "tag"]:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        for row in reader:
            out.setdefault(row["tag"], []).append([float(row["a1"]), float(row["a2"])])
    return {k: np.array(v) for k, v in out.items()}
