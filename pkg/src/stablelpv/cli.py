"""Command-line front end: ``stable-lpv <subcommand>``.

Configuration precedence: built-in defaults < ``--config`` JSON < flags.
Exit codes: 0 success, 1 usage/config error, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ._io import atomic_open, atomic_write_text
from .coeff import Mlp, MlpSpec, init_params
from .datagen import (
    DEFAULT_SIGMA_V,
    Dataset,
    DatasetFormatError,
    MdsParams,
    generate_dataset,
    generate_validation_dataset,
    load_dataset,
    mds_coefficient_table,
    mds_model,
    save_dataset,
)
from .ident import (
    IdentProblem,
    IdentResult,
    LmOptions,
    OptimizerError,
    default_threads,
    lm_fit_multistart,
    residuals,
    validate,
)
from .model import (
    LpvIoModel,
    LpvIoStructure,
    SimulationError,
    build_max_ss,
    frozen_response,
    simulate_recurrence,
)
from .stability import (
    coeff_set_boundary,
    frozen_roots,
    qs_full_check,
    qs_grid_check,
    write_stability_csv,
)
from .stabparam import (
    CertificateError,
    RiccatiError,
    StableLpvIoModel,
    XwFactor,
    full_lyapunov,
    solve_structured_riccati,
)

log = logging.getLogger("stablelpv")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    n_a: int = 2
    n_b: int = 1
    hidden: list[int] = field(default_factory=lambda: [5, 5])
    N: int = 1000
    sigma_v: float = DEFAULT_SIGMA_V
    seed: int = 0
    validation_seed: int = 1
    n_starts: int = 4
    screen_iters: int = 30
    max_iters: int = 200
    lambda0: float = 1e-3
    fd_step: float = 1e-6
    damping: str = "levenberg"
    grid_points: int = 101
    rho_min: float = 0.0
    rho_max: float = 1.0
    out: str = "out"
    stability_iterations: list[int] = field(default_factory=lambda: [1, 10, 100])
    bode_rho: list[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    bode_points: int = 200
    bode_f_min: float = 1e-3
    bode_f_max: float = 0.5

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def lm_options(self) -> LmOptions:
        return LmOptions(lambda0=self.lambda0, max_iters=self.max_iters, fd_step=self.fd_step,
                         seed=self.seed, threads=default_threads(), damping=self.damping)

    def grid(self) -> np.ndarray:
        return np.linspace(self.rho_min, self.rho_max, self.grid_points)


# --- model documents -------------------------------------------------------------

def load_model(path: str | Path) -> StableLpvIoModel | LpvIoModel:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"model file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"model file {path} does not hold a JSON object")
    doc = doc.get("model", doc)
    kind = doc.get("kind")
    if kind == "stable_lpv_io":
        return StableLpvIoModel.from_dict(doc)
    if kind == "lpv_io":
        return LpvIoModel.from_dict(doc)
    raise ValueError(f"model file {path} has unknown kind {kind!r}")


def new_stable_model(cfg: ExperimentConfig, seed: int) -> StableLpvIoModel:
    spec = MlpSpec((1, *cfg.hidden, cfg.n_a + cfg.n_b))
    net = Mlp(spec, init_params(spec, seed))
    return StableLpvIoModel(LpvIoStructure(cfg.n_a, cfg.n_b), net)


def certificate_audit(model: StableLpvIoModel, grid: np.ndarray) -> dict[str, Any]:
    a, b = model.coefficient_table(grid)
    check = qs_grid_check(a, model.P, grid)
    roots = max((float(np.abs(frozen_roots(row)).max()) for row in a), default=0.0)
    audit: dict[str, Any] = {
        "P": model.P.tolist(),
        "riccati_residual": model.cached.residual_norm,
        "grid": {"lo": float(grid[0]), "hi": float(grid[-1]), "points": int(grid.size)},
        "reduced_margin": check.min_margin,
        "max_frozen_root_modulus": roots,
        "valid": check.valid,
    }
    if model.structure.n_b >= 2:
        # Bounds for the input-buffer block are taken on at least 201 points.
        fine = np.linspace(grid[0], grid[-1], max(201, grid.size))
        a_f, b_f = model.coefficient_table(fine)
        Pfull = full_lyapunov(model.P, a_f, b_f[:, 1:])
        full = qs_full_check(build_max_ss(model), Pfull, fine)  # type: ignore[arg-type]
        audit["P_full"] = Pfull.tolist()
        audit["full_margin"] = full.min_margin
        audit["valid"] = audit["valid"] and full.valid
    return audit


def _write_json(path: Path, doc: Any) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


# --- subcommands -----------------------------------------------------------------

def cmd_generate_data(cfg: ExperimentConfig, out: Path) -> tuple[Dataset, Dataset]:
    train = generate_dataset(MdsParams(), cfg.N, cfg.sigma_v, cfg.seed)
    val = generate_validation_dataset(MdsParams(), cfg.N, cfg.sigma_v, cfg.validation_seed)
    save_dataset(train, out / "train.csv")
    save_dataset(val, out / "validation.csv")
    print(f"wrote {out / 'train.csv'} and {out / 'validation.csv'} ({cfg.N} samples each)")
    return train, val


def cmd_identify(cfg: ExperimentConfig, dataset_path: Path, out: Path) -> IdentResult:
    ds = load_dataset(dataset_path)
    model = new_stable_model(cfg, cfg.seed)
    starts = [model.get_params()] + [
        new_stable_model(cfg, cfg.seed + i).get_params() for i in range(1, cfg.n_starts)
    ]
    problem = IdentProblem(ds, model)
    result = lm_fit_multistart(problem, starts, cfg.lm_options(), cfg.screen_iters)

    doc = model.to_dict()
    doc["phi"] = result.phi_star.tolist()
    _write_json(out / "model.json", doc)
    _write_json(out / "ident_result.json", result.to_dict())
    result.write_loss_csv(out / "loss_trace.csv")
    _write_json(out / "certificate.json", certificate_audit(model, cfg.grid()))
    r = residuals(problem)
    with atomic_open(out / "residuals.csv") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "residual", "noise"])
        for k in range(ds.N):
            w.writerow([k + 1, repr(float(r[k])), repr(float(ds.v[k]))])
    print(f"train V_N = {result.v_n:.6f} after {result.iterations} iterations "
          f"({result.termination})")
    return result


def cmd_validate(model_path: Path, dataset_path: Path) -> float:
    model = load_model(model_path)
    ds = load_dataset(dataset_path)
    v = validate(model, None, ds)
    print(f"V_N = {v:.6f}")
    return v


def cmd_stability_set(
    cfg: ExperimentConfig, source: Path, out: Path, n_points: int = 200,
    include_truth: bool = True,
) -> Path:
    doc = json.loads(source.read_text())
    snapshots: list[tuple[str, XwFactor]] = []
    if "xw_trace" in doc:
        trace = doc["xw_trace"]
        for it in cfg.stability_iterations:
            if 1 <= it <= len(trace) and trace[it - 1] is not None:
                snap = trace[it - 1]
                snapshots.append((f"iter_{it}", XwFactor(snap["d"], snap["off"])))
        if not snapshots:
            raise UsageError("no requested iteration is present in the trace")
    else:
        model = load_model(source)
        if not isinstance(model, StableLpvIoModel):
            raise UsageError("stability sets need a stable model document")
        snapshots.append(("model", model.xw))
    ellipses = []
    for tag, xw in snapshots:
        if xw.n_a != 2:
            raise UsageError("stability sets are only defined for n_a = 2")
        e = coeff_set_boundary(solve_structured_riccati(xw.W()), xw, n_points)
        e.tag = tag
        ellipses.append(e)
    extra = []
    if include_truth:
        extra.append(("truth", mds_coefficient_table(MdsParams(), cfg.grid())[:, :2]))
    path = out / "stability_set.csv"
    write_stability_csv(path, ellipses, include_triangle=True, extra=extra)
    print(f"wrote {path} ({len(ellipses)} coefficient set(s))")
    return path


def cmd_bode(
    cfg: ExperimentConfig, out: Path, model_path: Path | None = None, truth: bool = False,
) -> Path:
    if truth == (model_path is not None):
        raise UsageError("give exactly one of --truth or --model")
    model = mds_model() if truth else load_model(model_path)  # type: ignore[arg-type]
    freqs = np.geomspace(cfg.bode_f_min, cfg.bode_f_max, cfg.bode_points)
    path = out / "bode.csv"
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["freq", "mag_db", "phase_deg", "rho"])
        for rho in cfg.bode_rho:
            resp = frozen_response(model, rho, freqs, 1.0)
            for f, (mag, ph) in zip(freqs, resp):
                w.writerow([repr(float(f)), repr(float(mag)), repr(float(ph)), repr(float(rho))])
    print(f"wrote {path}")
    return path


def read_input_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"u", "rho"} <= set(reader.fieldnames):
            raise DatasetFormatError(f"{path}: need columns u and rho")
        u, rho = [], []
        for row in reader:
            try:
                u.append(float(row["u"]))
                rho.append(float(row["rho"]))
            except (TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{path}: mismatched or malformed row {row}") from exc
    if not u:
        raise DatasetFormatError(f"{path} has no samples")
    return np.array(u), np.array(rho)


def cmd_simulate(model_path: Path, input_path: Path, out: Path) -> Path:
    model = load_model(model_path)
    u, rho = read_input_csv(input_path)
    a, b = model.coefficient_table(rho)
    y = simulate_recurrence(a, b, u)
    path = out / "simulation.csv"
    with atomic_open(path) as fh:
        w = csv.writer(fh)
        w.writerow(["k", "u", "rho", "y"])
        for k in range(u.size):
            w.writerow([k + 1, repr(float(u[k])), repr(float(rho[k])), repr(float(y[k]))])
    print(f"wrote {path}")
    return path


# --- argument parsing ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config JSON")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--sigma-v", type=float, dest="sigma_v")
    common.add_argument("--max-iters", type=int, dest="max_iters")
    common.add_argument("--grid-points", type=int, dest="grid_points")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="stable-lpv", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("generate-data", parents=[common], help="write train/validation CSVs")

    s = sub.add_parser("identify", parents=[common], help="fit a stable LPV-IO model")
    s.add_argument("--data", type=Path, help="training CSV (default OUT/train.csv)")

    s = sub.add_parser("validate", parents=[common], help="loss of a model on a dataset")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--data", type=Path, required=True)

    s = sub.add_parser("stability-set", parents=[common], help="coefficient-set boundaries")
    s.add_argument("--model", type=Path, help="model.json or ident_result.json")
    s.add_argument("--iterations", type=str, help="comma-separated iterations, e.g. 1,10,100")
    s.add_argument("--points", type=int, default=200, help="boundary points per set")
    s.add_argument("--no-truth", action="store_true")

    s = sub.add_parser("bode", parents=[common], help="frozen frequency responses")
    s.add_argument("--model", type=Path)
    s.add_argument("--truth", action="store_true")
    s.add_argument("--rho", type=str, help="comma-separated scheduling values")

    s = sub.add_parser("simulate", parents=[common], help="simulate a model on an input CSV")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--input", type=Path, required=True)
    return p


def _config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    for name in ("seed", "sigma_v", "max_iters", "grid_points"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if args.out is not None:
        cfg.out = str(args.out)
    if cfg.sigma_v < 0 or cfg.max_iters < 1 or cfg.grid_points < 2 or cfg.N < 1:
        raise UsageError("invalid configuration values")
    return cfg


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse list {text!r}") from exc


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(cfg.out)
        if args.command == "generate-data":
            cmd_generate_data(cfg, out)
        elif args.command == "identify":
            cmd_identify(cfg, args.data or out / "train.csv", out)
        elif args.command == "validate":
            cmd_validate(args.model, args.data)
        elif args.command == "stability-set":
            if args.iterations:
                cfg.stability_iterations = [int(x) for x in _floats(args.iterations)]
            src = args.model or out / "ident_result.json"
            cmd_stability_set(cfg, src, out, args.points, not args.no_truth)
        elif args.command == "bode":
            if args.rho:
                cfg.bode_rho = _floats(args.rho)
            cmd_bode(cfg, out, args.model, args.truth)
        elif args.command == "simulate":
            cmd_simulate(args.model, args.input, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RiccatiError, CertificateError, OptimizerError, SimulationError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DatasetFormatError, ValueError, KeyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
