"""LPV input-output difference-equation models and their maximum state-space form.

The model is

    y_k = -sum_{i=1}^{n_a} a_i(rho_k) y_{k-i} + sum_{i=0}^{n_b-1} b_i(rho_k) u_{k-i}

with coefficient functions stacked as ``(a_1, ..., a_{n_a}, b_0, ..., b_{n_b-1})``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .coeff import CoefficientFunction, as_rho_matrix, coeff_from_dict

__all__ = [
    "OVERFLOW_LIMIT",
    "SimulationError",
    "SchedulingPoint",
    "LpvIoStructure",
    "CoefficientVector",
    "LpvIoModel",
    "SignalSequence",
    "MaxStateSpace",
    "shift_matrices",
    "simulate_io",
    "simulate_recurrence",
    "simulate_recurrence_batch",
    "build_max_ss",
    "simulate_ss",
    "frozen_response",
]

log = logging.getLogger(__name__)

OVERFLOW_LIMIT = 1e12


class SimulationError(RuntimeError):
    """Raised when a simulated output diverges or is not finite."""


@dataclass(frozen=True)
class SchedulingPoint:
    """A point of the box-shaped scheduling domain."""

    rho: NDArray[np.float64]
    bounds: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self) -> None:
        rho = np.atleast_1d(np.asarray(self.rho, dtype=np.float64))
        object.__setattr__(self, "rho", rho)
        if self.bounds is not None:
            if len(self.bounds) != rho.size:
                raise ValueError("bounds do not match scheduling dimension")
            for r, (lo, hi) in zip(rho, self.bounds):
                if not lo <= r <= hi:
                    raise ValueError(f"scheduling value {r} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class LpvIoStructure:
    n_a: int
    n_b: int

    def __post_init__(self) -> None:
        if self.n_a < 0 or self.n_b < 1:
            raise ValueError(f"need n_a >= 0 and n_b >= 1, got ({self.n_a}, {self.n_b})")

    @property
    def n_coeffs(self) -> int:
        return self.n_a + self.n_b

    @property
    def n_states(self) -> int:
        return self.n_a + self.n_b - 1


@dataclass(frozen=True)
class CoefficientVector:
    """Coefficient values at one scheduling instant: a_1..a_{n_a} and b_0..b_{n_b-1}."""

    a: NDArray[np.float64]
    b: NDArray[np.float64]

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=np.float64).reshape(-1)
        b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def K(self) -> NDArray[np.float64]:
        return self.a

    @property
    def L(self) -> NDArray[np.float64]:
        return self.b[1:]

    @property
    def b0(self) -> float:
        return float(self.b[0])


@dataclass
class SignalSequence:
    samples: NDArray[np.float64]
    t_s: float = 1.0

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("signal samples must be finite")

    def __len__(self) -> int:
        return self.samples.size


class LpvIoModel:
    """An LPV-IO model whose coefficients come from a ``CoefficientFunction``."""

    def __init__(self, structure: LpvIoStructure, coeffs: CoefficientFunction):
        if coeffs.m_out != structure.n_coeffs:
            raise ValueError(
                f"coefficient function has {coeffs.m_out} outputs, "
                f"model needs n_a + n_b = {structure.n_coeffs}"
            )
        self.structure = structure
        self.coeffs = coeffs

    @property
    def n_rho(self) -> int:
        return self.coeffs.n_in

    def coefficient_table(self, rhos: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Coefficients over a scheduling sequence as arrays (N, n_a) and (N, n_b)."""
        g = self.coeffs.forward_batch(rhos)
        n_a = self.structure.n_a
        return g[:, :n_a], g[:, n_a:]

    def coefficients(self, rho: ArrayLike | SchedulingPoint) -> CoefficientVector:
        if isinstance(rho, SchedulingPoint):
            rho = rho.rho
        a, b = self.coefficient_table(as_rho_matrix(rho, self.n_rho).reshape(1, -1))
        return CoefficientVector(a[0], b[0])

    @property
    def n_params(self) -> int:
        return self.coeffs.n_params

    def get_params(self) -> NDArray[np.float64]:
        return self.coeffs.get_params()

    def set_params(self, phi: ArrayLike) -> None:
        self.coeffs.set_params(phi)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "lpv_io",
            "structure": {"n_a": self.structure.n_a, "n_b": self.structure.n_b},
            "coeffs": self.coeffs.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "LpvIoModel":
        try:
            s = doc["structure"]
            structure = LpvIoStructure(int(s["n_a"]), int(s["n_b"]))
            coeffs = coeff_from_dict(doc["coeffs"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed model document: {exc}") from exc
        return cls(structure, coeffs)


def _samples(u: SignalSequence | ArrayLike) -> tuple[NDArray[np.float64], float]:
    if isinstance(u, SignalSequence):
        return u.samples, u.t_s
    return np.asarray(u, dtype=np.float64).reshape(-1), 1.0


def simulate_recurrence(
    a: NDArray[np.float64],
    b: NDArray[np.float64],
    u: NDArray[np.float64],
    y_init: ArrayLike | None = None,
    u_init: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Run the difference equation for precomputed coefficient rows.

    ``a`` is (N, n_a), ``b`` is (N, n_b). ``y_init`` holds (y_{-1}, ..., y_{-n_a})
    and ``u_init`` holds (u_{-1}, ..., u_{-n_b+1}); both default to zero.
    """
    N = u.size
    n_a, n_b = a.shape[1], b.shape[1]
    if a.shape[0] != N or b.shape[0] != N:
        raise ValueError("coefficient table length does not match input length")
    y_init = np.zeros(n_a) if y_init is None else np.asarray(y_init, dtype=np.float64).reshape(-1)
    u_init = np.zeros(n_b - 1) if u_init is None else np.asarray(u_init, dtype=np.float64).reshape(-1)
    if y_init.size != n_a or u_init.size != n_b - 1:
        raise ValueError(f"initial buffers must have lengths {n_a} and {n_b - 1}")

    # Buffers stored oldest-first followed by the simulated samples.
    ybuf = np.concatenate([y_init[::-1], np.zeros(N)]).tolist()
    ubuf = np.concatenate([u_init[::-1], u]).tolist()
    a_rows = (-a[:, ::-1]).tolist()  # -a_{n_a}, ..., -a_1
    b_rows = b[:, ::-1].tolist()  # b_{n_b-1}, ..., b_0
    for k in range(N):
        acc = 0.0
        for coef, yv in zip(a_rows[k], ybuf[k:k + n_a]):
            acc += coef * yv
        for coef, uv in zip(b_rows[k], ubuf[k:k + n_b]):
            acc += coef * uv
        if not abs(acc) <= OVERFLOW_LIMIT:
            raise SimulationError(f"output diverged at step {k} (|y| = {abs(acc):.3g})")
        ybuf[k + n_a] = acc
    return np.asarray(ybuf[n_a:])


def simulate_recurrence_batch(
    a: NDArray[np.float64], b: NDArray[np.float64], u: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Zero-initialized recurrence for B coefficient tables at once.

    ``a`` is (B, N, n_a), ``b`` is (B, N, n_b), ``u`` is (N,). Returns (B, N).
    """
    n_batch, N, n_a = a.shape
    n_b = b.shape[2]
    # Regressor of past inputs is shared across the batch: X_u[k, i] = u_{k-i}.
    upad = np.concatenate([np.zeros(n_b - 1), u])
    Xu = np.stack([upad[n_b - 1 - i:n_b - 1 - i + N] for i in range(n_b)], axis=1)
    forced = np.einsum("bni,ni->bn", b, Xu)
    y = np.zeros((n_batch, N + n_a))
    neg_a = -a
    for k in range(N):
        acc = forced[:, k].copy()
        for i in range(n_a):
            acc += neg_a[:, k, i] * y[:, k + n_a - 1 - i]
        y[:, k + n_a] = acc
    out = y[:, n_a:]
    if not np.all(np.abs(out) <= OVERFLOW_LIMIT):
        raise SimulationError("output diverged in batch simulation")
    return out


def simulate_io(
    model: LpvIoModel,
    u: SignalSequence | ArrayLike,
    rho: ArrayLike,
    y_init: ArrayLike | None = None,
    u_init: ArrayLike | None = None,
) -> SignalSequence:
    """Simulate the difference equation over an input and scheduling sequence."""
    samples, t_s = _samples(u)
    R = as_rho_matrix(rho, model.n_rho)
    if R.shape[0] != samples.size:
        raise ValueError(f"input has {samples.size} samples but scheduling has {R.shape[0]}")
    a, b = model.coefficient_table(R)
    return SignalSequence(simulate_recurrence(a, b, samples, y_init, u_init), t_s)


def shift_matrices(n: int) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Delay-chain pair (F, G): ones on the first sub-diagonal and the first unit vector."""
    F = np.eye(n, k=-1)
    G = np.zeros(n)
    if n:
        G[0] = 1.0
    return F, G


@dataclass
class MaxStateSpace:
    """Non-minimal realization with state (y_{k-1..k-n_a}, u_{k-1..k-n_b+1})."""

    structure: LpvIoStructure
    coeff_fn: Callable[[NDArray[np.float64]], CoefficientVector]
    n_rho: int = 1
    F: NDArray[np.float64] = field(init=False)
    G: NDArray[np.float64] = field(init=False)
    F_b: NDArray[np.float64] = field(init=False)
    G_b: NDArray[np.float64] = field(init=False)

    def __post_init__(self) -> None:
        self.F, self.G = shift_matrices(self.structure.n_a)
        self.F_b, self.G_b = shift_matrices(self.structure.n_b - 1)

    @property
    def n_states(self) -> int:
        return self.structure.n_states

    def K(self, rho: ArrayLike) -> NDArray[np.float64]:
        return self.coeff_fn(rho).K

    def L(self, rho: ArrayLike) -> NDArray[np.float64]:
        return self.coeff_fn(rho).L

    def matrices(self, rho: ArrayLike) -> tuple[NDArray, NDArray, NDArray, float]:
        """(A, B, C, D) at one scheduling point."""
        cv = self.coeff_fn(rho)
        n_a, nb1 = self.structure.n_a, self.structure.n_b - 1
        n = n_a + nb1
        A = np.zeros((n, n))
        A[:n_a, :n_a] = self.F - np.outer(self.G, cv.K)
        A[:n_a, n_a:] = np.outer(self.G, cv.L)
        A[n_a:, n_a:] = self.F_b
        B = np.concatenate([self.G * cv.b0, self.G_b])
        C = np.concatenate([-cv.K, cv.L])
        return A, B, C, cv.b0

    def A(self, rho: ArrayLike) -> NDArray[np.float64]:
        return self.matrices(rho)[0]

    def B(self, rho: ArrayLike) -> NDArray[np.float64]:
        return self.matrices(rho)[1]

    def C(self, rho: ArrayLike) -> NDArray[np.float64]:
        return self.matrices(rho)[2]

    def D(self, rho: ArrayLike) -> float:
        return self.matrices(rho)[3]

    def pack_state(self, y_init: ArrayLike, u_init: ArrayLike) -> NDArray[np.float64]:
        """State vector from initial buffers ordered most-recent first."""
        return np.concatenate([np.asarray(y_init, dtype=np.float64).reshape(-1),
                               np.asarray(u_init, dtype=np.float64).reshape(-1)])


def build_max_ss(model: LpvIoModel) -> MaxStateSpace:
    if model.structure.n_a == 0:
        raise ValueError("maximum state-space form needs n_a >= 1 (no autoregressive state)")
    return MaxStateSpace(model.structure, model.coefficients, model.n_rho)


def simulate_ss(
    ss: MaxStateSpace,
    u: SignalSequence | ArrayLike,
    rho: ArrayLike,
    x0: ArrayLike | None = None,
) -> SignalSequence:
    samples, t_s = _samples(u)
    R = as_rho_matrix(rho, ss.n_rho)
    if R.shape[0] != samples.size:
        raise ValueError(f"input has {samples.size} samples but scheduling has {R.shape[0]}")
    x = np.zeros(ss.n_states) if x0 is None else np.asarray(x0, dtype=np.float64).reshape(-1)
    if x.size != ss.n_states:
        raise ValueError(f"state vector has length {x.size}, expected {ss.n_states}")
    y = np.empty(samples.size)
    for k, (uk, rk) in enumerate(zip(samples, R)):
        A, B, C, D = ss.matrices(rk)
        y[k] = C @ x + D * uk
        x = A @ x + B * uk
    return SignalSequence(y, t_s)


def frozen_response(
    model: LpvIoModel,
    rho: ArrayLike | SchedulingPoint,
    freqs_hz: ArrayLike,
    t_s: float = 1.0,
) -> NDArray[np.float64]:
    """Frozen transfer function b(z)/a(z) at fixed rho.

    Returns an array of shape (n_freqs, 2) holding (magnitude in dB, phase in
    degrees). Frequencies where a(z) vanishes get magnitude ``inf`` and phase
    ``nan``.
    """
    f = np.asarray(freqs_hz, dtype=np.float64).reshape(-1)
    if np.any(f <= 0) or np.any(f > 0.5 / t_s):
        raise ValueError("frequencies must lie in (0, Nyquist]")
    cv = model.coefficients(rho)
    zinv = np.exp(-2j * np.pi * f * t_s)
    den = 1.0 + sum(ai * zinv ** (i + 1) for i, ai in enumerate(cv.a))
    num = sum(bi * zinv ** i for i, bi in enumerate(cv.b))
    out = np.empty((f.size, 2))
    pole = np.abs(den) < 1e-14
    if np.any(pole):
        log.warning("frozen response evaluated at %d zero(s) of a(z)", int(pole.sum()))
    H = np.where(pole, np.nan, num / np.where(pole, 1.0, den))
    out[:, 0] = np.where(pole, np.inf, 20 * np.log10(np.abs(H)))
    out[:, 1] = np.where(pole, np.nan, np.degrees(np.angle(H)))
    return out

