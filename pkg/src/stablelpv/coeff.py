"""Parameterized coefficient functions g(rho) with flat parameter access.

Every family maps a scheduling point of dimension ``n_in`` to ``m_out``
coefficient-like outputs and exposes its free parameters as one flat vector
so that optimizers can treat it as a black box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "CoefficientFunction",
    "Affine",
    "Polynomial",
    "Mlp",
    "MlpSpec",
    "FunctionCoefficients",
    "init_params",
    "coeff_from_dict",
]


def as_rho_matrix(rhos: ArrayLike, n_in: int) -> NDArray[np.float64]:
    """Coerce a scheduling sequence to shape (N, n_in)."""
    arr = np.asarray(rhos, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if n_in == 1 else arr.reshape(1, -1)
    if arr.shape[1] != n_in:
        raise ValueError(f"scheduling dimension {arr.shape[1]} != {n_in}")
    return arr


class CoefficientFunction:
    """Base class. Subclasses implement ``forward_batch`` and parameter I/O."""

    variant: str = ""
    n_in: int
    m_out: int

    @property
    def n_params(self) -> int:
        return self.get_params().size

    def forward(self, rho: ArrayLike) -> NDArray[np.float64]:
        return self.forward_batch(as_rho_matrix(rho, self.n_in).reshape(1, -1))[0]

    def forward_batch(self, rhos: ArrayLike) -> NDArray[np.float64]:
        raise NotImplementedError

    def get_params(self) -> NDArray[np.float64]:
        raise NotImplementedError

    def set_params(self, phi: ArrayLike) -> None:
        raise NotImplementedError

    def _check_len(self, phi: NDArray[np.float64]) -> None:
        if phi.ndim != 1 or phi.size != self.n_params:
            raise ValueError(
                f"parameter vector has length {phi.size}, expected {self.n_params}"
            )

    def spec_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        return {
            "variant": self.variant,
            "spec": self.spec_dict(),
            "phi": self.get_params().tolist(),
        }


class Affine(CoefficientFunction):
    """g(rho) = E rho + c. Flattening: E row-major, then c."""

    variant = "affine"

    def __init__(self, E: ArrayLike, c: ArrayLike):
        self.E = np.atleast_2d(np.asarray(E, dtype=np.float64)).copy()
        self.c = np.asarray(c, dtype=np.float64).reshape(-1).copy()
        self.m_out, self.n_in = self.E.shape
        if self.c.size != self.m_out:
            raise ValueError("bias length does not match E rows")

    @classmethod
    def zeros(cls, n_in: int, m_out: int) -> "Affine":
        return cls(np.zeros((m_out, n_in)), np.zeros(m_out))

    def forward_batch(self, rhos: ArrayLike) -> NDArray[np.float64]:
        R = as_rho_matrix(rhos, self.n_in)
        return R @ self.E.T + self.c

    def get_params(self) -> NDArray[np.float64]:
        return np.concatenate([self.E.ravel(), self.c])

    def set_params(self, phi: ArrayLike) -> None:
        phi = np.asarray(phi, dtype=np.float64)
        self._check_len(phi)
        k = self.E.size
        self.E = phi[:k].reshape(self.E.shape).copy()
        self.c = phi[k:].copy()

    def spec_dict(self) -> dict[str, Any]:
        return {"n_in": self.n_in, "m_out": self.m_out}


class Polynomial(CoefficientFunction):
    """g(rho) = c + E_1 rho + E_2 rho**2 + ... + E_d rho**d.

    Powers are taken elementwise per scheduling coordinate. Flattening is
    E_1, ..., E_d (each row-major), then c.
    """

    variant = "polynomial"

    def __init__(self, Es: Sequence[ArrayLike], c: ArrayLike):
        if len(Es) < 1:
            raise ValueError("polynomial needs degree >= 1")
        self.Es = [np.atleast_2d(np.asarray(E, dtype=np.float64)).copy() for E in Es]
        self.c = np.asarray(c, dtype=np.float64).reshape(-1).copy()
        self.m_out, self.n_in = self.Es[0].shape
        if any(E.shape != (self.m_out, self.n_in) for E in self.Es):
            raise ValueError("all E_i must share one shape")
        if self.c.size != self.m_out:
            raise ValueError("bias length does not match E rows")

    @property
    def degree(self) -> int:
        return len(self.Es)

    @classmethod
    def zeros(cls, n_in: int, m_out: int, degree: int) -> "Polynomial":
        return cls([np.zeros((m_out, n_in)) for _ in range(degree)], np.zeros(m_out))

    def forward_batch(self, rhos: ArrayLike) -> NDArray[np.float64]:
        R = as_rho_matrix(rhos, self.n_in)
        out = np.broadcast_to(self.c, (R.shape[0], self.m_out)).copy()
        power = np.ones_like(R)
        for E in self.Es:
            power = power * R
            out += power @ E.T
        return out

    def get_params(self) -> NDArray[np.float64]:
        return np.concatenate([E.ravel() for E in self.Es] + [self.c])

    def set_params(self, phi: ArrayLike) -> None:
        phi = np.asarray(phi, dtype=np.float64)
        self._check_len(phi)
        k = self.m_out * self.n_in
        for i in range(self.degree):
            self.Es[i] = phi[i * k:(i + 1) * k].reshape(self.m_out, self.n_in).copy()
        self.c = phi[self.degree * k:].copy()

    def spec_dict(self) -> dict[str, Any]:
        return {"n_in": self.n_in, "m_out": self.m_out, "degree": self.degree}


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``(n_in, hidden..., m_out)`` of a tanh network."""

    widths: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or any(int(w) < 1 for w in self.widths):
            raise ValueError(f"invalid layer widths {self.widths}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    @property
    def n_params(self) -> int:
        w = self.widths
        return sum(w[i] * w[i - 1] + w[i] for i in range(1, len(w)))


class Mlp(CoefficientFunction):
    """Feed-forward tanh network with a linear output layer.

    ``E_L tanh(... tanh(E_0 rho + c_0) ...) + c_L``; parameters are flattened
    layer by layer, each weight matrix row-major followed by its bias.
    """

    variant = "mlp"

    def __init__(self, spec: MlpSpec | Sequence[int], phi: ArrayLike | None = None):
        self.spec = spec if isinstance(spec, MlpSpec) else MlpSpec(tuple(spec))
        w = self.spec.widths
        self.n_in, self.m_out = w[0], w[-1]
        self.weights = [np.zeros((w[i], w[i - 1])) for i in range(1, len(w))]
        self.biases = [np.zeros(w[i]) for i in range(1, len(w))]
        if phi is not None:
            self.set_params(phi)

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def forward_batch(self, rhos: ArrayLike) -> NDArray[np.float64]:
        h = as_rho_matrix(rhos, self.n_in)
        last = len(self.weights) - 1
        for i, (E, c) in enumerate(zip(self.weights, self.biases)):
            h = h @ E.T + c
            if i < last:
                h = np.tanh(h)
        return h

    def get_params(self) -> NDArray[np.float64]:
        parts: list[NDArray[np.float64]] = []
        for E, c in zip(self.weights, self.biases):
            parts.append(E.ravel())
            parts.append(c)
        return np.concatenate(parts)

    def set_params(self, phi: ArrayLike) -> None:
        phi = np.asarray(phi, dtype=np.float64)
        self._check_len(phi)
        pos = 0
        for i, E in enumerate(self.weights):
            k = E.size
            self.weights[i] = phi[pos:pos + k].reshape(E.shape).copy()
            pos += k
            k = self.biases[i].size
            self.biases[i] = phi[pos:pos + k].copy()
            pos += k

    def spec_dict(self) -> dict[str, Any]:
        return {"widths": list(self.spec.widths)}


class FunctionCoefficients(CoefficientFunction):
    """Wraps a fixed vectorized callable ``rhos (N, n_in) -> (N, m_out)``.

    Has no free parameters; used for ground-truth systems and tests.
    """

    variant = "function"

    def __init__(self, fn: Callable[[NDArray[np.float64]], ArrayLike], n_in: int, m_out: int):
        self.fn = fn
        self.n_in = n_in
        self.m_out = m_out

    @classmethod
    def constant(cls, values: ArrayLike, n_in: int = 1) -> "FunctionCoefficients":
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(lambda R: np.broadcast_to(v, (R.shape[0], v.size)), n_in, v.size)

    def forward_batch(self, rhos: ArrayLike) -> NDArray[np.float64]:
        R = as_rho_matrix(rhos, self.n_in)
        out = np.asarray(self.fn(R), dtype=np.float64)
        return out.reshape(R.shape[0], self.m_out)

    def get_params(self) -> NDArray[np.float64]:
        return np.zeros(0)

    def set_params(self, phi: ArrayLike) -> None:
        self._check_len(np.asarray(phi, dtype=np.float64).reshape(-1))

    def to_dict(self) -> dict[str, Any]:
        raise TypeError("function-backed coefficients are not serializable")


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, int]) -> NDArray[np.float64]:
    s = 1.0 / np.sqrt(shape[1])
    return rng.uniform(-s, s, size=shape)


def init_params(spec: MlpSpec | CoefficientFunction | Sequence[int], seed: int) -> NDArray[np.float64]:
    """Seeded initial parameters: weights U[-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases."""
    rng = np.random.default_rng(seed)
    if isinstance(spec, Mlp):
        spec = spec.spec
    if not isinstance(spec, (MlpSpec, CoefficientFunction)):
        spec = MlpSpec(tuple(spec))
    if isinstance(spec, MlpSpec):
        w = spec.widths
        parts = []
        for i in range(1, len(w)):
            parts.append(_fan_in_uniform(rng, (w[i], w[i - 1])).ravel())
            parts.append(np.zeros(w[i]))
        return np.concatenate(parts)
    if isinstance(spec, Affine):
        return np.concatenate([_fan_in_uniform(rng, spec.E.shape).ravel(), np.zeros(spec.m_out)])
    if isinstance(spec, Polynomial):
        Es = [_fan_in_uniform(rng, (spec.m_out, spec.n_in)).ravel() for _ in range(spec.degree)]
        return np.concatenate(Es + [np.zeros(spec.m_out)])
    return np.zeros(spec.n_params)


def coeff_from_dict(doc: dict[str, Any]) -> CoefficientFunction:
    """Inverse of ``CoefficientFunction.to_dict``."""
    try:
        variant = doc["variant"]
        spec = doc["spec"]
        phi = np.asarray(doc["phi"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed coefficient document: {exc}") from exc
    f: CoefficientFunction
    if variant == "affine":
        f = Affine.zeros(int(spec["n_in"]), int(spec["m_out"]))
    elif variant == "polynomial":
        f = Polynomial.zeros(int(spec["n_in"]), int(spec["m_out"]), int(spec["degree"]))
    elif variant == "mlp":
        f = Mlp(MlpSpec(tuple(spec["widths"])))
    else:
        raise ValueError(f"unknown coefficient variant {variant!r}")
    f.set_params(phi)
    return f
