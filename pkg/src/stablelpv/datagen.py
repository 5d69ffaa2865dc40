"""Ground-truth mass-damper-spring LPV system and dataset generation/persistence."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._io import atomic_write_text
from .coeff import FunctionCoefficients
from .model import (
    CoefficientVector,
    LpvIoModel,
    LpvIoStructure,
    SignalSequence,
    simulate_recurrence,
)

__all__ = [
    "MdsParams",
    "Dataset",
    "DatasetFormatError",
    "mds_coefficients",
    "mds_coefficient_table",
    "mds_model",
    "multisine",
    "linear_scheduling",
    "generate_dataset",
    "generate_validation_dataset",
    "snr_db",
    "save_dataset",
    "load_dataset",
    "CSV_HEADER",
]

CSV_HEADER = ["k", "u", "y", "y_clean", "v", "rho"]
DEFAULT_SIGMA_V = float(np.sqrt(0.1))


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MdsParams:
    """Mass, damping, sigmoid stiffness k(rho) = 1 - 1/(1 + exp(-steep*rho + steep))."""

    m: float = 1.0
    c: float = 0.1
    steep: float = 7.0
    t_s: float = 1.0

    def stiffness(self, rho: ArrayLike) -> NDArray[np.float64]:
        r = np.asarray(rho, dtype=np.float64)
        return 1.0 - 1.0 / (1.0 + np.exp(-self.steep * r + self.steep))


def mds_coefficient_table(p: MdsParams, rho: ArrayLike) -> NDArray[np.float64]:
    """Rows (a_1, a_2, b_0) of the backward-Euler discretization, shape (N, 3).

    Expanding u = m d^2 y + c d y + k y with d = (1 - q^-1)/T_s and solving for y_k.
    """
    r = np.asarray(rho, dtype=np.float64).reshape(-1)
    if np.any(r < 0) or np.any(r > 1):
        raise ValueError("scheduling must lie in [0, 1]")
    ts = p.t_s
    mm, cc = p.m / ts ** 2, p.c / ts
    den = mm + cc + p.stiffness(r)
    if np.any(den <= 0):
        raise ValueError("non-positive leading coefficient in the discretized plant")
    return np.column_stack([-(2 * mm + cc) / den, mm / den, 1.0 / den])


def mds_coefficients(p: MdsParams, rho: float) -> CoefficientVector:
    row = mds_coefficient_table(p, [rho])[0]
    return CoefficientVector(row[:2], row[2:])


def mds_model(p: MdsParams = MdsParams()) -> LpvIoModel:
    """The true system as an LpvIoModel (n_a = 2, n_b = 1)."""
    return LpvIoModel(
        LpvIoStructure(2, 1),
        FunctionCoefficients(lambda R: mds_coefficient_table(p, R[:, 0]), n_in=1, m_out=3),
    )


def multisine(
    N: int,
    f_low: float = 0.01,
    f_high: float = 0.1,
    n_components: int = 10,
    t_s: float = 1.0,
    phases: ArrayLike | None = None,
) -> SignalSequence:
    """u_k = sum_i sin(2 pi f_i k / t_s + phase_i), k = 1..N, f_i linearly spaced."""
    if N < 1:
        raise ValueError("N must be positive")
    if n_components == 1:
        freqs = np.array([f_low])
    else:
        freqs = np.linspace(f_low, f_high, n_components)
    ph = np.zeros(n_components) if phases is None else np.asarray(phases, dtype=np.float64)
    k = np.arange(1, N + 1)
    u = np.sin(2 * np.pi * np.outer(k, freqs) / t_s + ph).sum(axis=1)
    return SignalSequence(u, t_s)


def linear_scheduling(N: int) -> NDArray[np.float64]:
    """rho_k = 1 - k/N for k = 1..N."""
    if N < 1:
        raise ValueError("N must be positive")
    return 1.0 - np.arange(1, N + 1) / N


@dataclass
class Dataset:
    u: NDArray[np.float64]
    y: NDArray[np.float64]
    y_clean: NDArray[np.float64]
    v: NDArray[np.float64]
    rho: NDArray[np.float64]
    t_s: float = 1.0
    seed: int | None = None
    sigma_v: float = 0.0

    def __post_init__(self) -> None:
        for name in ("u", "y", "y_clean", "v", "rho"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        n = self.u.size
        if any(getattr(self, f).size != n for f in ("y", "y_clean", "v", "rho")):
            raise ValueError("dataset sequences must have equal length")

    def __len__(self) -> int:
        return self.u.size

    @property
    def N(self) -> int:
        return self.u.size


def generate_dataset(
    p: MdsParams = MdsParams(),
    N: int = 1000,
    sigma_v: float = DEFAULT_SIGMA_V,
    seed: int = 0,
    phases: ArrayLike | None = None,
) -> Dataset:
    """Simulate the true system from rest and add seeded white Gaussian noise.

    Noise comes from ``numpy.random.default_rng(seed).standard_normal`` (PCG64
    bit generator, ziggurat sampler), so the seed fixes the dataset.
    """
    u = multisine(N, t_s=p.t_s, phases=phases).samples
    rho = linear_scheduling(N)
    table = mds_coefficient_table(p, rho)
    y_clean = simulate_recurrence(table[:, :2], table[:, 2:], u)
    v = sigma_v * np.random.default_rng(seed).standard_normal(N)
    return Dataset(u=u, y=y_clean + v, y_clean=y_clean, v=v, rho=rho,
                   t_s=p.t_s, seed=seed, sigma_v=sigma_v)


def generate_validation_dataset(
    p: MdsParams = MdsParams(),
    N: int = 1000,
    sigma_v: float = DEFAULT_SIGMA_V,
    seed: int = 1,
    n_components: int = 10,
) -> Dataset:
    """Same construction with fresh noise and uniformly random multisine phases."""
    rng = np.random.default_rng([seed, 0x5EED])
    phases = rng.uniform(0.0, 2 * np.pi, size=n_components)
    return generate_dataset(p, N, sigma_v, seed, phases=phases)


def snr_db(ds: Dataset) -> float:
    return float(10 * np.log10((ds.y_clean @ ds.y_clean) / (ds.v @ ds.v)))


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write ``path`` (CSV) and its JSON metadata sidecar (same stem, .json)."""
    path = Path(path)
    rows = [",".join(CSV_HEADER)]
    for k in range(ds.N):
        vals = (ds.u[k], ds.y[k], ds.y_clean[k], ds.v[k], ds.rho[k])
        rows.append(",".join([str(k + 1)] + [repr(float(x)) for x in vals]))
    atomic_write_text(path, "\n".join(rows) + "\n")
    meta = {"N": ds.N, "t_s": ds.t_s, "sigma_v": ds.sigma_v, "seed": ds.seed}
    atomic_write_text(_meta_path(path), json.dumps(meta, indent=2) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path} is empty") from None
        if header != CSV_HEADER:
            raise DatasetFormatError(f"{path}: header {header} != {CSV_HEADER}")
        try:
            data = np.array([[float(x) for x in row] for row in reader if row], dtype=np.float64)
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        raise DatasetFormatError(f"{path} has no samples")
    if data.ndim != 2 or data.shape[1] != len(CSV_HEADER):
        raise DatasetFormatError(f"{path}: rows must have {len(CSV_HEADER)} fields")
    meta: dict[str, Any] = {}
    mp = _meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
    return Dataset(
        u=data[:, 1], y=data[:, 2], y_clean=data[:, 3], v=data[:, 4], rho=data[:, 5],
        t_s=float(meta.get("t_s", 1.0)), seed=meta.get("seed"),
        sigma_v=float(meta.get("sigma_v", 0.0)),
    )
