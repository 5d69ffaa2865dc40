"""Unconstrained parameterization of quadratically stable LPV-IO models.

Free parameters are an upper-triangular factor ``X_W`` (stored as a
log-diagonal and strict upper entries) and a coefficient function producing
``(raw_x_m, z_m, l, b0)`` per scheduling point. The map

    W = X_W^T X_W  ->  P  (structured Riccati equation)
    (x_m, z_m)     ->  M  (Cayley transform, |M| < 1)
    K = (G^T P G)^{-1} G^T P F + (1 / x_q) M X_W

yields autoregressive coefficients ``a = K`` for which ``P`` is a common
Lyapunov matrix of ``F - G K(rho)`` at every scheduling point.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._linalg import min_eig
from .coeff import CoefficientFunction, as_rho_matrix, coeff_from_dict
from .model import (
    CoefficientVector,
    LpvIoStructure,
    SchedulingPoint,
    shift_matrices,
)

__all__ = [
    "RiccatiError",
    "CertificateError",
    "StaleCertificateError",
    "XwFactor",
    "RiccatiSolution",
    "solve_structured_riccati",
    "riccati_closed_form_2x2",
    "riccati_residual",
    "cayley_row",
    "cayley_rows",
    "k_from_m",
    "m_from_k",
    "StableLpvIoModel",
    "eval_stable_coeffs",
    "refresh_certificate",
    "full_lyapunov",
]


class RiccatiError(RuntimeError):
    pass


class CertificateError(RuntimeError):
    pass


class StaleCertificateError(RuntimeError):
    pass


@dataclass
class XwFactor:
    """Upper-triangular factor with diagonal ``exp(d)`` and strict upper entries ``off``.

    ``off`` is ordered row by row: (0,1), (0,2), ..., (1,2), ...
    """

    d: NDArray[np.float64]
    off: NDArray[np.float64]

    def __post_init__(self) -> None:
        self.d = np.asarray(self.d, dtype=np.float64).reshape(-1)
        self.off = np.asarray(self.off, dtype=np.float64).reshape(-1)
        n = self.d.size
        if self.off.size != n * (n - 1) // 2:
            raise ValueError(f"need {n * (n - 1) // 2} off-diagonal entries, got {self.off.size}")

    @classmethod
    def identity(cls, n_a: int) -> "XwFactor":
        return cls(np.zeros(n_a), np.zeros(n_a * (n_a - 1) // 2))

    @classmethod
    def from_vector(cls, v: ArrayLike, n_a: int) -> "XwFactor":
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        return cls(v[:n_a], v[n_a:])

    @property
    def n_a(self) -> int:
        return self.d.size

    @property
    def n_params(self) -> int:
        return self.d.size + self.off.size

    def to_vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.d, self.off])

    def matrix(self) -> NDArray[np.float64]:
        n = self.n_a
        X = np.diag(np.exp(self.d))
        X[np.triu_indices(n, k=1)] = self.off
        return X

    def W(self) -> NDArray[np.float64]:
        X = self.matrix()
        return X.T @ X


@dataclass
class RiccatiSolution:
    P: NDArray[np.float64]
    q: float
    x_q: float
    center: NDArray[np.float64]
    residual_norm: float
    iterations: int = 0


def riccati_residual(P: NDArray[np.float64], W: NDArray[np.float64]) -> float:
    """Frobenius norm of P - F'PF + F'PG (G'PG)^{-1} G'PF - W."""
    F, G = shift_matrices(P.shape[0])
    PG = P @ G
    R = P - F.T @ P @ F + np.outer(F.T @ PG, F.T @ PG) / (G @ PG) - W
    return float(np.linalg.norm(R))


def _check_pd(W: NDArray[np.float64]) -> None:
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    if not np.allclose(W, W.T, rtol=0, atol=1e-12 * (1 + np.abs(W).max())):
        raise ValueError("W must be symmetric")
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError as exc:
        raise ValueError("W is not positive definite") from exc


def solve_structured_riccati(
    W: ArrayLike, tol: float = 1e-14, max_iter: int = 10_000
) -> RiccatiSolution:
    """Unique P > 0 of P - F'PF + F'PG (G'PG)^{-1} G'PF = W for the delay chain (F, G).

    Fixed-point iteration P <- F'PF - F'PG (G'PG)^{-1} G'PF + W from P = W.
    """
    W = np.asarray(W, dtype=np.float64)
    _check_pd(W)
    W = 0.5 * (W + W.T)
    n = W.shape[0]
    F, G = shift_matrices(n)
    scale = np.linalg.norm(W)
    P = W.copy()
    it = 0
    for it in range(1, max_iter + 1):
        # F'PF shifts P up-left; F'PG is the first column of P shifted up.
        FtPF = np.zeros_like(P)
        FtPF[:-1, :-1] = P[1:, 1:]
        v = np.zeros(n)
        v[:-1] = P[1:, 0]
        P_new = FtPF - np.outer(v, v) / P[0, 0] + W
        diff = np.abs(P_new - P).max()
        P = P_new
        if diff <= tol * scale:
            break
    P = 0.5 * (P + P.T)
    res = riccati_residual(P, W)
    if res >= 1e-10 * (1 + scale):
        raise RiccatiError(
            f"structured Riccati iteration did not converge after {it} iterations "
            f"(residual {res:.3e})"
        )
    if np.linalg.eigvalsh(P).min() <= 0:
        raise RiccatiError("Riccati solution is not positive definite")
    q = float(P[0, 0])
    center = (G @ P @ F) / q
    return RiccatiSolution(P=P, q=q, x_q=float(np.sqrt(q)), center=center,
                           residual_norm=res, iterations=it)


def riccati_closed_form_2x2(W: ArrayLike) -> NDArray[np.float64]:
    """Exact solution for n_a = 2: P_12 = W_12, P_22 = W_22, P_11 the positive root."""
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (2, 2):
        raise ValueError("closed form is for 2x2 W only")
    s = W[0, 0] + W[1, 1]
    disc = s * s - 4.0 * W[0, 1] ** 2
    if disc < 0:
        raise ValueError("W is not positive definite")
    p11 = 0.5 * (s + np.sqrt(disc))
    return np.array([[p11, W[0, 1]], [W[0, 1], W[1, 1]]])


def cayley_row(x_m: float, z_m: ArrayLike) -> NDArray[np.float64]:
    """M = [(1-N)/(1+N), -2 z_m/(1+N)] with N = x_m^2 + |z_m|^2; always |M| < 1."""
    if x_m == 0:
        raise ValueError("x_m must be nonzero")
    z = np.asarray(z_m, dtype=np.float64).reshape(-1)
    N = x_m * x_m + z @ z
    return np.concatenate([[(1.0 - N) / (1.0 + N)], -2.0 * z / (1.0 + N)])


def cayley_rows(x_m: NDArray[np.float64], z_m: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row-wise ``cayley_row`` for x_m (B,) and z_m (B, n_a-1)."""
    N = x_m * x_m + np.einsum("bi,bi->b", z_m, z_m)
    denom = 1.0 + N
    return np.column_stack([(1.0 - N) / denom, -2.0 * z_m / denom[:, None]])


def k_from_m(M: ArrayLike, sol: RiccatiSolution, xw: XwFactor) -> NDArray[np.float64]:
    """K = center + (1/x_q) M X_W. Works row-wise for a stack of M rows."""
    return sol.center + (np.asarray(M, dtype=np.float64) @ xw.matrix()) / sol.x_q


def m_from_k(K: ArrayLike, sol: RiccatiSolution, xw: XwFactor) -> NDArray[np.float64]:
    """Inverse map M = x_q (K - center) X_W^{-1}."""
    D = (np.asarray(K, dtype=np.float64) - sol.center) * sol.x_q
    # Row vectors: M X_W = D  <=>  X_W^T M^T = D^T.
    return np.linalg.solve(xw.matrix().T, np.atleast_2d(D).T).T.reshape(np.shape(D))


class StableLpvIoModel:
    """LPV-IO model that is quadratically stable for every parameter value.

    ``net`` maps rho to ``n_a + n_b`` outputs ordered as
    ``(raw_x_m, z_m[0:n_a-1], l[0:n_b-1], b0)`` with ``x_m = exp(raw_x_m)``.
    Flat parameters are the net parameters followed by ``xw.d`` and ``xw.off``.

    The Cayley output is scaled by ``M_RADIUS`` before mapping to K. In exact
    arithmetic |M| < 1 already, but for |raw_x_m| beyond about 17 the rounded
    M lands on the unit sphere and the certificate margin vanishes.
    """

    M_RADIUS = 1.0 - 1e-8

    def __init__(self, structure: LpvIoStructure, net: CoefficientFunction,
                 xw: XwFactor | None = None):
        if structure.n_a < 1:
            raise ValueError("stable parameterization needs n_a >= 1")
        if net.m_out != structure.n_coeffs:
            raise ValueError(
                f"net has {net.m_out} outputs, expected n_a + n_b = {structure.n_coeffs}"
            )
        self.structure = structure
        self.net = net
        self.xw = XwFactor.identity(structure.n_a) if xw is None else xw
        if self.xw.n_a != structure.n_a:
            raise ValueError("X_W factor size does not match n_a")
        self.cached: RiccatiSolution
        self._cached_key: bytes = b""
        self.refresh_certificate()

    @property
    def n_rho(self) -> int:
        return self.net.n_in

    @property
    def n_params(self) -> int:
        return self.net.n_params + self.xw.n_params

    def get_params(self) -> NDArray[np.float64]:
        return np.concatenate([self.net.get_params(), self.xw.to_vector()])

    def set_params(self, phi: ArrayLike) -> None:
        phi = np.asarray(phi, dtype=np.float64).reshape(-1)
        if phi.size != self.n_params:
            raise ValueError(f"parameter vector has length {phi.size}, expected {self.n_params}")
        k = self.net.n_params
        self.net.set_params(phi[:k])
        self.xw = XwFactor.from_vector(phi[k:], self.structure.n_a)
        self.refresh_certificate()

    def refresh_certificate(self) -> RiccatiSolution:
        self.cached = solve_structured_riccati(self.xw.W())
        self._cached_key = self.xw.to_vector().tobytes()
        return self.cached

    @property
    def P(self) -> NDArray[np.float64]:
        return self.cached.P

    def _check_fresh(self) -> None:
        if self._cached_key != self.xw.to_vector().tobytes():
            raise StaleCertificateError("X_W changed without refreshing the certificate")

    def coefficient_table(self, rhos: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Coefficients over a scheduling sequence: a (N, n_a) and b (N, n_b)."""
        self._check_fresh()
        n_a = self.structure.n_a
        g = self.net.forward_batch(rhos)
        x_m = np.exp(g[:, 0])
        z_m = g[:, 1:n_a]
        M = self.M_RADIUS * cayley_rows(x_m, z_m)
        a = k_from_m(M, self.cached, self.xw)
        # b = (b0, l_1, ..., l_{n_b-1})
        b = np.column_stack([g[:, -1], g[:, n_a:-1]])
        return a, b

    def coefficients(self, rho: ArrayLike | SchedulingPoint) -> CoefficientVector:
        if isinstance(rho, SchedulingPoint):
            rho = rho.rho
        a, b = self.coefficient_table(as_rho_matrix(rho, self.n_rho).reshape(1, -1))
        return CoefficientVector(a[0], b[0])

    def transformed(self, rho: ArrayLike) -> tuple[float, NDArray, NDArray, float]:
        """(x_m, z_m, l, b0) at one scheduling point."""
        g = self.net.forward(rho)
        n_a = self.structure.n_a
        return float(np.exp(g[0])), g[1:n_a], g[n_a:-1], float(g[-1])

    def copy(self) -> "StableLpvIoModel":
        return copy.deepcopy(self)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "stable_lpv_io",
            "structure": {"n_a": self.structure.n_a, "n_b": self.structure.n_b},
            "xw": {"d": self.xw.d.tolist(), "off": self.xw.off.tolist()},
            "net": self.net.to_dict(),
            "certificate": {
                "P": self.cached.P.tolist(),
                "residual_norm": self.cached.residual_norm,
            },
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "StableLpvIoModel":
        try:
            s = doc["structure"]
            structure = LpvIoStructure(int(s["n_a"]), int(s["n_b"]))
            xw = XwFactor(doc["xw"]["d"], doc["xw"]["off"])
            net = coeff_from_dict(doc["net"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed stable model document: {exc}") from exc
        return cls(structure, net, xw)


def eval_stable_coeffs(m: StableLpvIoModel, rho: ArrayLike | SchedulingPoint) -> CoefficientVector:
    return m.coefficients(rho)


def refresh_certificate(m: StableLpvIoModel) -> RiccatiSolution:
    return m.refresh_certificate()


def full_lyapunov(
    P: ArrayLike,
    k_samples: ArrayLike,
    l_samples: ArrayLike,
    safety: float = 1.01,
) -> NDArray[np.float64]:
    """Block-diagonal Lyapunov matrix for the full realization including the input buffer.

    ``k_samples`` (G, n_a) and ``l_samples`` (G, n_b-1) are K(rho) and L(rho)
    over a scheduling grid on which ``P`` already certifies ``F - G K``. The
    input-buffer block is ``alpha * diag(n_b-1, ..., 1)`` so that its
    delay-chain decrease equals ``alpha I``.
    """
    P = np.asarray(P, dtype=np.float64)
    Ks = np.atleast_2d(np.asarray(k_samples, dtype=np.float64))
    Ls = np.asarray(l_samples, dtype=np.float64)
    n_a = P.shape[0]
    Ls = Ls.reshape(Ks.shape[0], -1)
    nb1 = Ls.shape[1]
    if nb1 == 0:
        return P.copy()
    F, G = shift_matrices(n_a)
    F_b, _ = shift_matrices(nb1)

    kappa = lam = 0.0
    nu = np.inf  # smallest eigenvalue of Q11 over the grid
    for K, L in zip(Ks, Ls):
        Acl = F - np.outer(G, K)
        Q11 = P - Acl.T @ P @ Acl
        Q12 = -Acl.T @ P @ np.outer(G, L)
        kappa = max(kappa, np.linalg.norm(Q12, 2))
        lam = max(lam, P[0, 0] * float(L @ L))
        nu = min(nu, min_eig(Q11))
    if nu <= 0:
        raise CertificateError("P does not certify F - G K(rho) on the grid")

    chain = np.arange(nb1, 0, -1, dtype=np.float64)
    alpha = safety * (lam + kappa ** 2 / nu)
    for attempt in range(2):
        Pfull = np.zeros((n_a + nb1, n_a + nb1))
        Pfull[:n_a, :n_a] = P
        Pfull[n_a:, n_a:] = np.diag(alpha * chain)
        if _full_margin(Pfull, F, G, F_b, Ks, Ls) > 0:
            return Pfull
        alpha *= 10.0
    raise CertificateError("full Lyapunov construction failed on the grid")


def _full_margin(Pfull, F, G, F_b, Ks, Ls) -> float:
    n_a, nb1 = F.shape[0], F_b.shape[0]
    worst = np.inf
    A = np.zeros((n_a + nb1, n_a + nb1))
    A[n_a:, n_a:] = F_b
    for K, L in zip(Ks, Ls):
        A[:n_a, :n_a] = F - np.outer(G, K)
        A[:n_a, n_a:] = np.outer(G, L)
        worst = min(worst, min_eig(Pfull - A.T @ Pfull @ A))
    return float(worst)
