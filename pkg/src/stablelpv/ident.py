"""Output-error identification by Levenberg-Marquardt with finite-difference Jacobians."""

from __future__ import annotations

import copy
import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ._io import atomic_open
from .datagen import Dataset
from .model import LpvIoModel, simulate_recurrence, simulate_recurrence_batch
from .stabparam import StableLpvIoModel, XwFactor

__all__ = [
    "IdentProblem",
    "LmOptions",
    "IdentResult",
    "OptimizerError",
    "residuals",
    "loss",
    "fd_jacobian",
    "lm_fit",
    "lm_fit_multistart",
    "validate",
    "default_threads",
]

log = logging.getLogger(__name__)

Model = Union[StableLpvIoModel, LpvIoModel]


class OptimizerError(RuntimeError):
    pass


def default_threads() -> int:
    """Worker cap from STABLE_LPV_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("STABLE_LPV_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class IdentProblem:
    dataset: Dataset
    model: Model

    def __post_init__(self) -> None:
        if self.dataset.N < 1:
            raise ValueError("dataset must contain at least one sample")


@dataclass
class LmOptions:
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e12
    max_iters: int = 200
    fd_step: float = 1e-6
    grad_tol: float = 1e-8
    step_tol: float = 1e-10
    loss_tol: float = 1e-12
    seed: int = 0
    threads: int = 1
    damping: str = "levenberg"

    def __post_init__(self) -> None:
        if self.damping not in ("marquardt", "levenberg"):
            raise ValueError(f"unknown damping {self.damping!r}")
        for name, val in asdict(self).items():
            if name in ("seed", "damping"):
                continue
            if not val > 0:
                raise ValueError(f"LM option {name} must be positive")


@dataclass
class IdentResult:
    phi_star: NDArray[np.float64]
    v_n: float
    initial_loss: float
    loss_trace: list[float] = field(default_factory=list)
    lambda_trace: list[float] = field(default_factory=list)
    xw_trace: list[XwFactor | None] = field(default_factory=list)
    iterations: int = 0
    termination: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "phi_star": self.phi_star.tolist(),
            "v_n": self.v_n,
            "initial_loss": self.initial_loss,
            "loss_trace": list(self.loss_trace),
            "lambda_trace": list(self.lambda_trace),
            "xw_trace": [None if x is None else {"d": x.d.tolist(), "off": x.off.tolist()}
                         for x in self.xw_trace],
            "iterations": self.iterations,
            "termination": self.termination,
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "IdentResult":
        return cls(
            phi_star=np.asarray(doc["phi_star"], dtype=np.float64),
            v_n=float(doc["v_n"]),
            initial_loss=float(doc["initial_loss"]),
            loss_trace=[float(x) for x in doc["loss_trace"]],
            lambda_trace=[float(x) for x in doc.get("lambda_trace", [])],
            xw_trace=[None if x is None else XwFactor(x["d"], x["off"]) for x in doc["xw_trace"]],
            iterations=int(doc["iterations"]),
            termination=str(doc["termination"]),
        )

    def write_loss_csv(self, path: str | Path) -> None:
        with atomic_open(path) as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "lambda"])
            w.writerow([0, repr(self.initial_loss), ""])
            for i, v in enumerate(self.loss_trace):
                lam = self.lambda_trace[i] if i < len(self.lambda_trace) else ""
                w.writerow([i + 1, repr(v), repr(lam) if lam != "" else ""])


def _simulate(model: Model, ds: Dataset) -> NDArray[np.float64]:
    a, b = model.coefficient_table(ds.rho)
    return simulate_recurrence(a, b, ds.u)


def residuals(problem: IdentProblem, phi: ArrayLike | None = None) -> NDArray[np.float64]:
    """y - y_hat for the simulated model response from zero initial conditions.

    Setting ``phi`` updates the model in place (and its stability certificate).
    """
    if phi is not None:
        problem.model.set_params(phi)
    return problem.dataset.y - _simulate(problem.model, problem.dataset)


def rms(r: NDArray[np.float64]) -> float:
    return float(np.sqrt(np.mean(r * r)))


def loss(problem: IdentProblem, phi: ArrayLike | None = None) -> float:
    """Root-mean-square prediction error."""
    return rms(residuals(problem, phi))


def _column_block(
    model: Model, ds: Dataset, phi: NDArray[np.float64], cols: NDArray[np.int64],
    steps: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Central-difference columns ``cols`` of the residual Jacobian."""
    n_a = model.structure.n_a
    n_b = model.structure.n_b
    A = np.empty((2 * cols.size, ds.N, n_a))
    B = np.empty((2 * cols.size, ds.N, n_b))
    for i, j in enumerate(cols):
        for s, sign in enumerate((1.0, -1.0)):
            p = phi.copy()
            p[j] += sign * steps[j]
            model.set_params(p)
            a, b = model.coefficient_table(ds.rho)
            A[2 * i + s] = a
            B[2 * i + s] = b
    yhat = simulate_recurrence_batch(A, B, ds.u)
    # r = y - yhat, so dr = -(yhat_plus - yhat_minus)
    return -(yhat[0::2] - yhat[1::2]).T / (2 * steps[cols])


def fd_jacobian(
    problem: IdentProblem, phi: ArrayLike | None = None, fd_step: float = 1e-6,
    threads: int = 1,
) -> NDArray[np.float64]:
    """Residual Jacobian (N x n_phi) by central differences.

    Step for parameter j is ``fd_step * (1 + |phi_j|)``. Columns are split into
    blocks evaluated on cloned models; the problem's model is left at ``phi``.
    """
    model = problem.model
    phi = model.get_params() if phi is None else np.asarray(phi, dtype=np.float64).copy()
    steps = fd_step * (1.0 + np.abs(phi))
    n = phi.size
    ds = problem.dataset
    if n == 0:
        return np.zeros((ds.N, 0))
    blocks = np.array_split(np.arange(n), min(max(1, threads), n))
    try:
        if len(blocks) == 1:
            J = _column_block(copy.deepcopy(model), ds, phi, blocks[0], steps)
        else:
            with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
                parts = list(pool.map(
                    lambda blk: _column_block(copy.deepcopy(model), ds, phi, blk, steps), blocks))
            J = np.hstack(parts)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        raise OptimizerError(f"finite-difference Jacobian failed: {exc}") from exc
    model.set_params(phi)
    return J


def lm_fit(
    problem: IdentProblem, options: LmOptions | None = None, phi0: ArrayLike | None = None,
) -> IdentResult:
    """Levenberg-Marquardt on 0.5 |r|^2.

    Damping is ``lam * mean(diag(J'J)) * I`` by default (``damping="levenberg"``)
    or ``lam * diag(J'J)`` with ``damping="marquardt"``.

    Each iteration computes one Jacobian and raises the damping by
    ``lambda_up`` until a step decreases the loss; accepted steps divide the
    damping by ``lambda_down``.
    """
    opt = options or LmOptions()
    model = problem.model
    phi = model.get_params() if phi0 is None else np.asarray(phi0, dtype=np.float64).copy()
    r = residuals(problem, phi)
    v = rms(r)
    result = IdentResult(phi_star=phi.copy(), v_n=v, initial_loss=v)
    lam = opt.lambda0
    stable = isinstance(model, StableLpvIoModel)
    termination = "max_iters"

    for it in range(1, opt.max_iters + 1):
        J = fd_jacobian(problem, phi, opt.fd_step, opt.threads)
        g = J.T @ r
        if np.max(np.abs(g)) < opt.grad_tol:
            termination = "gradient"
            break
        H = J.T @ J
        diag = np.diag(H).copy()
        if opt.damping == "levenberg":
            diag = np.full_like(diag, diag.mean())
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))

        accepted = False
        while lam <= opt.lambda_max:
            try:
                delta = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= opt.lambda_up
                continue
            phi_new = phi + delta
            try:
                r_new = residuals(problem, phi_new)
                v_new = rms(r_new)
            except (ArithmeticError, RuntimeError, ValueError):
                v_new = np.inf
            if np.isfinite(v_new) and v_new < v:
                accepted = True
                break
            lam *= opt.lambda_up
        if not accepted:
            model.set_params(phi)
            termination = "damping_limit"
            break

        step_norm = float(np.linalg.norm(delta))
        decrease = v - v_new
        phi, r, v = phi_new, r_new, v_new
        lam = max(lam / opt.lambda_down, 1e-15)
        result.loss_trace.append(v)
        result.lambda_trace.append(lam)
        result.xw_trace.append(copy.deepcopy(model.xw) if stable else None)
        result.iterations = it
        log.debug("iter %d loss %.6g lambda %.3g", it, v, lam)
        if step_norm < opt.step_tol * (1.0 + np.linalg.norm(phi)):
            termination = "step"
            break
        if decrease < opt.loss_tol * max(v, 1e-300):
            termination = "loss"
            break

    model.set_params(phi)
    result.phi_star = phi.copy()
    result.v_n = v
    result.termination = termination
    return result


def lm_fit_multistart(
    problem: IdentProblem,
    starts: list[NDArray[np.float64]],
    options: LmOptions | None = None,
    screen_iters: int = 30,
) -> IdentResult:
    """Short LM runs from each start, then continue the best one.

    The returned traces are those of the winning start, screening included,
    and the total iteration count never exceeds ``options.max_iters``.
    """
    opt = options or LmOptions()
    if not starts:
        raise ValueError("need at least one start")
    if len(starts) == 1:
        return lm_fit(problem, opt, starts[0])
    screen = replace(opt, max_iters=max(1, min(screen_iters, opt.max_iters)))
    best: IdentResult | None = None
    for i, phi0 in enumerate(starts):
        try:
            res = lm_fit(problem, screen, phi0)
        except OptimizerError as exc:
            log.info("start %d failed during screening: %s", i, exc)
            continue
        log.info("start %d: loss %.6g after %d iterations", i, res.v_n, res.iterations)
        if best is None or res.v_n < best.v_n:
            best = res
    if best is None:
        raise OptimizerError("every start failed")
    remaining = opt.max_iters - best.iterations
    if remaining <= 0 or best.termination not in ("max_iters",):
        problem.model.set_params(best.phi_star)
        return best
    tail = lm_fit(problem, replace(opt, max_iters=remaining), best.phi_star)
    best.loss_trace += tail.loss_trace
    best.lambda_trace += tail.lambda_trace
    best.xw_trace += tail.xw_trace
    best.iterations += tail.iterations
    best.phi_star, best.v_n, best.termination = tail.phi_star, tail.v_n, tail.termination
    return best


def validate(model: Model, phi_star: ArrayLike | None, dataset: Dataset) -> float:
    """Loss on a held-out dataset without refitting."""
    if dataset.N < 1:
        raise ValueError("validation dataset is empty")
    if phi_star is not None:
        model.set_params(phi_star)
    return rms(dataset.y - _simulate(model, dataset))
