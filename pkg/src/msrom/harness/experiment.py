"""Run one configured experiment: fine reference, reduced model, reports."""

from __future__ import annotations

import csv
import json
import logging
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..deim import DeimError, DeimModel, build_deim, collect_snapshots
from ..fem import FineDiscretization
from ..field import FieldFormatError, PermeabilityField, constant_field, generate_channelized, load_field, save_field
from ..grid import CoarseMesh, ConfigurationError, FineMesh, build_coarse_mesh, build_fine_mesh
from ..msbasis import MultiscaleBuilder, SpectralError
from ..online import Enricher, EnrichmentPolicy
from ..rom import ReducedOperator
from ..stepper import AllenCahn, NonlinearSolveError, PicardWarning, StepperConfig, Trajectory, fine_trajectory, run
from .config import INITIAL_CONDITIONS, ExperimentConfig
from .svg import line_plot

log = logging.getLogger(__name__)

ERROR_COLUMNS = ("n", "t", "e_a", "e_2", "dof", "picard_iters")
ENRICHMENT_COLUMNS = ("n", "level", "neighborhood", "residual_norm", "added", "dof_after")


class ExperimentError(RuntimeError):
    """A numerical failure inside one component of an experiment."""

    def __init__(self, module: str, message: str):
        super().__init__(f"[{module}] {message}")
        self.module = module


@contextmanager
def _stage(module: str):
    try:
        yield
    except (ConfigurationError, ExperimentError):
        raise
    except FieldFormatError as exc:
        raise ConfigurationError(str(exc)) from exc
    except (np.linalg.LinAlgError, SpectralError, DeimError, NonlinearSolveError, FloatingPointError,
            ArithmeticError, ValueError, RuntimeError) as exc:
        raise ExperimentError(module, f"{type(exc).__name__}: {exc}") from exc


@dataclass
class ErrorEntry:
    n: int
    t: float
    e_a: float
    e_2: float
    dof: int
    picard_iters: int = 0


@dataclass
class ErrorReport:
    entries: list[ErrorEntry]
    wall_time: float = 0.0
    error_norm: str = "unweighted"
    timestamps: list[float] = field(default_factory=list)

    @property
    def final(self) -> ErrorEntry:
        return self.entries[-1]

    def at(self, t: float) -> ErrorEntry:
        for e in self.entries:
            if abs(e.t - t) <= 1e-9 * max(1.0, abs(t)):
                return e
        raise KeyError(f"no entry at t={t}")

    def requested(self) -> list[ErrorEntry]:
        return [self.at(t) for t in self.timestamps]

    def column(self, name: str) -> list:
        return [getattr(e, name) for e in self.entries]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ERROR_COLUMNS)
            for e in self.entries:
                w.writerow([e.n, repr(e.t), repr(e.e_a), repr(e.e_2), e.dof, e.picard_iters])

    @classmethod
    def read_csv(cls, path) -> "ErrorReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no rows")
        missing = {"n", "t", "e_a", "e_2", "dof"} - set(rows[0])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return cls([ErrorEntry(int(r["n"]), float(r["t"]), float(r["e_a"]), float(r["e_2"]), int(r["dof"]),
                               int(r.get("picard_iters") or 0)) for r in rows])


@dataclass
class Problem:
    fine: FineMesh
    coarse: CoarseMesh
    kappa: PermeabilityField
    disc: FineDiscretization
    f: AllenCahn
    stepper: StepperConfig
    u0: np.ndarray

    @property
    def A(self):
        return self.disc.A_in

    @property
    def M(self):
        return self.disc.M_in


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: ErrorReport
    trajectory: Trajectory
    reference: dict[int, np.ndarray]
    problem: Problem
    offline_dim: int
    deim: DeimModel | None = None
    directory: Path | None = None


def make_field(cfg: ExperimentConfig, fine: FineMesh, *, contrast=None, seed=None) -> PermeabilityField:
    if contrast is not None or seed is not None or cfg.field_kind == "generate":
        return generate_channelized(fine, cfg.contrast if contrast is None else contrast,
                                    cfg.seed if seed is None else seed)
    if cfg.field_kind == "constant":
        return constant_field(fine, 1.0)
    kappa = load_field(cfg.field_path)
    if not kappa.matches(fine):
        raise ConfigurationError(f"field {cfg.field_path} is {kappa.nx}x{kappa.ny}, mesh is {fine.nx}x{fine.ny}")
    return kappa


def build_problem(cfg: ExperimentConfig, *, kappa=None, eps=None, initial_condition=None, T=None) -> Problem:
    fine = build_fine_mesh(cfg.nx, cfg.ny)
    coarse = build_coarse_mesh(fine, cfg.coarse_nx, cfg.coarse_ny)
    kappa = make_field(cfg, fine) if kappa is None else kappa
    disc = FineDiscretization(fine, kappa)
    f = AllenCahn(cfg.eps if eps is None else eps, cfg.sign)
    stepper = StepperConfig(cfg.scheme, cfg.dt, cfg.T if T is None else T, cfg.picard_tol, cfg.picard_max,
                            cfg.nonlinear_solver)
    u0 = disc.interpolate(INITIAL_CONDITIONS[initial_condition or cfg.initial_condition])
    return Problem(fine, coarse, kappa, disc, f, stepper, u0)


def offline_operator(cfg: ExperimentConfig, prob: Problem) -> ReducedOperator:
    space = MultiscaleBuilder(prob.coarse, prob.kappa, l_max=cfg.l).offline_space(cfg.l)
    return ReducedOperator(space.basis, prob.A, prob.M)


def build_deim_model(cfg: ExperimentConfig, prob: Problem, ops: ReducedOperator) -> DeimModel:
    """Snapshots of the nonlinear vector from an offline-only source run."""
    src = cfg.deim_source
    note = ""
    if src == "different_field":
        kappa = make_field(cfg, prob.fine, contrast=cfg.source_contrast, seed=cfg.source_seed)
        sprob = build_problem(cfg, kappa=kappa)
        with _stage("msbasis"):
            sops = offline_operator(cfg, sprob)
        note = f"field contrast {cfg.source_contrast:g} seed {cfg.source_seed}"
    else:
        kw = {}
        if src == "different_epsilon":
            kw["eps"] = cfg.source_eps
            note = f"eps {cfg.source_eps:g}"
        elif src == "different_ic":
            kw["initial_condition"] = cfg.source_initial_condition
            note = f"initial condition {cfg.source_initial_condition}"
        elif src == "earlier_time_window":
            kw["T"] = cfg.window
            note = f"t < {cfg.window:g}"
        sprob = build_problem(cfg, kappa=prob.kappa, **kw) if kw else prob
        sops = ops
    with _stage("stepper"):
        traj = run(sops, sprob.A, sprob.M, sprob.f, sprob.stepper, sprob.u0, keep_states=[],
                   record_nonlinear=True)
    t_max = cfg.window - cfg.dt / 2 if src == "earlier_time_window" else None
    with _stage("deim"):
        snaps = collect_snapshots(traj, src, t_max=t_max, dt=cfg.dt, every=cfg.snapshot_every, note=note)
        return build_deim(snaps, cfg.energy_cutoff, cfg.deim_m, cfg.normalize_snapshots)


def _steps(cfg: ExperimentConfig) -> list[int]:
    ts = cfg.timestamps or [cfg.T]
    return sorted({int(round(t / cfg.dt)) for t in ts})


def run_experiment(cfg: ExperimentConfig, directory=None, write: bool = True) -> ExperimentResult:
    """Fine reference and reduced trajectory for ``cfg``; artifacts go to ``directory``."""
    t_start = time.perf_counter()
    with _stage("field"):
        prob = build_problem(cfg)
    with _stage("msbasis"):
        ops = offline_operator(cfg, prob)
    deim = build_deim_model(cfg, prob, ops) if cfg.deim else None

    capture = _steps(cfg)
    reference: dict[int, np.ndarray] = {}

    def ref_iter():
        for n, (u, _) in enumerate(fine_trajectory(prob.A, prob.M, prob.f, prob.stepper, prob.u0)):
            if n in capture:
                reference[n] = u.copy()
            yield u

    enricher = None
    if cfg.online_mode != "none":
        policy = EnrichmentPolicy(cfg.online_mode, cfg.online_tol, cfg.max_levels, cfg.theta, cfg.dof_budget)
        enricher = Enricher(prob.A, prob.M, prob.coarse, prob.f, prob.stepper, policy)
    norm = prob.disc.A1_in if cfg.error_norm == "unweighted" else prob.disc.A_in
    with _stage("stepper"), warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PicardWarning)
        traj = run(ops, prob.A, prob.M, prob.f, prob.stepper, prob.u0, enricher=enricher, deim=deim,
                   deim_start=cfg.deim_start, reference=ref_iter(), error_norm=norm, keep_states=capture)
    n_warn = sum(issubclass(w.category, PicardWarning) for w in caught)
    if n_warn:
        log.warning("%d time steps ended without nonlinear convergence", n_warn)
    entries = [ErrorEntry(r.n, r.t, r.e_a, r.e_2, r.dof, r.iterations) for r in traj.records]
    if not all(np.isfinite([e.e_a for e in entries] + [e.e_2 for e in entries])):
        raise ExperimentError("stepper", "non-finite error values; the reduced trajectory diverged")
    report = ErrorReport(entries, time.perf_counter() - t_start, cfg.error_norm,
                         [n * cfg.dt for n in capture])
    result = ExperimentResult(cfg, report, traj, reference, prob, ops.rank, deim)
    if write:
        result.directory = write_artifacts(result, Path(directory or cfg.directory), n_warn)
    return result


# -- artifacts ----------------------------------------------------------------

def save_nodal(path, mesh: FineMesh, u_full: np.ndarray) -> None:
    """Nodal values in the field-file layout: ``nx+1 ny+1`` then one row per node row."""
    lines = [f"{mesh.nx + 1} {mesh.ny + 1}"]
    for row in np.asarray(u_full, dtype=float).reshape(mesh.ny + 1, mesh.nx + 1):
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_nodal(path) -> np.ndarray:
    text = Path(path).read_text().split("\n")
    nx1, ny1 = (int(t) for t in text[0].split())
    vals = np.array([float(t) for line in text[1:] for t in line.split()])
    if vals.size != nx1 * ny1:
        raise ValueError(f"{path}: expected {nx1 * ny1} values, got {vals.size}")
    return vals


def write_artifacts(res: ExperimentResult, out: Path, picard_warnings: int = 0) -> Path:
    cfg, prob, report = res.config, res.problem, res.report
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.ini")
    report.write_csv(out / "errors.csv")
    with open(out / "enrichment.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENRICHMENT_COLUMNS)
        for n, level, i, nrm, added, dof in res.trajectory.enrichment_log:
            w.writerow([n, level, i, repr(nrm), added, dof])
    if cfg.save_fields:
        fdir = out / "fields"
        fdir.mkdir(exist_ok=True)
        save_field(prob.kappa, fdir / "kappa.txt")
        for n, u in sorted(res.reference.items()):
            save_nodal(fdir / f"fine_n{n:06d}.txt", prob.fine, prob.disc.extend(u))
        for n, u in sorted(res.trajectory.states.items()):
            save_nodal(fdir / f"reduced_n{n:06d}.txt", prob.fine, prob.disc.extend(u))
    if cfg.plots:
        pdir = out / "plots"
        pdir.mkdir(exist_ok=True)
        t = report.column("t")
        line_plot({"e_a": (t, report.column("e_a")), "e_2": (t, report.column("e_2"))}, pdir / "errors.svg",
                  title="relative errors", xlabel="t", ylabel="error", logy=True)
        line_plot({"DOF": (t, report.column("dof"))}, pdir / "dof.svg", title="reduced dimension",
                  xlabel="t", ylabel="DOF")
    summary = {
        "wall_time_s": report.wall_time,
        "error_norm": cfg.error_norm,
        "error_norm_note": "e_a uses the unweighted gradient norm" if cfg.error_norm == "unweighted"
        else "e_a uses the kappa-weighted energy norm",
        "initial_dof": cfg.initial_dof,
        "offline_dim": res.offline_dim,
        "requested": [vars(e) for e in report.requested()],
        "picard_warnings": picard_warnings,
        "etd_clamped_exponents": res.trajectory.clamped,
    }
    if res.deim is not None:
        summary["deim"] = {"m": res.deim.m, "condition": res.deim.condition, "provenance": res.deim.provenance,
                           "start": cfg.deim_start}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return out


def recompute_errors(directory, n: int, error_norm: str = "unweighted") -> tuple[float, float]:
    """e_a, e_2 at step n from the saved field files of a finished run."""
    d = Path(directory)
    cfg = ExperimentConfig.load(d / "config.ini")
    kappa = load_field(d / "fields" / "kappa.txt")
    fine = build_fine_mesh(cfg.nx, cfg.ny)
    disc = FineDiscretization(fine, kappa)
    uf = disc.restrict(load_nodal(d / "fields" / f"fine_n{n:06d}.txt"))
    ur = disc.restrict(load_nodal(d / "fields" / f"reduced_n{n:06d}.txt"))
    A = disc.A1_in if error_norm == "unweighted" else disc.A_in
    diff = uf - ur
    ea = np.sqrt(diff @ (A @ diff)) / np.sqrt(uf @ (A @ uf))
    e2 = np.sqrt(diff @ (disc.M_in @ diff)) / np.sqrt(uf @ (disc.M_in @ uf))
    return float(ea), float(e2)


def compare_runs(a, b, out=None, labels=("a", "b")) -> list[dict]:
    """Pair two error reports (objects or CSV paths) on their time stamps."""
    ra = a if isinstance(a, ErrorReport) else ErrorReport.read_csv(a)
    rb = b if isinstance(b, ErrorReport) else ErrorReport.read_csv(b)
    ta, tb = ra.column("t"), rb.column("t")
    if len(ta) != len(tb) or not np.allclose(ta, tb, rtol=1e-9, atol=1e-12):
        raise ValueError(f"time stamps differ: {len(ta)} vs {len(tb)} rows"
                         + ("" if len(ta) != len(tb) else f", first mismatch at row "
                            f"{int(np.argmax(~np.isclose(ta, tb, rtol=1e-9, atol=1e-12)))}"))
    la, lb = labels
    rows = []
    for ea, eb in zip(ra.entries, rb.entries):
        rows.append({"n": ea.n, "t": ea.t, f"e_a_{la}": ea.e_a, f"e_a_{lb}": eb.e_a, f"e_2_{la}": ea.e_2,
                     f"e_2_{lb}": eb.e_2, f"dof_{la}": ea.dof, f"dof_{lb}": eb.dof,
                     "d_e_a": eb.e_a - ea.e_a, "d_e_2": eb.e_2 - ea.e_2})
    if out is not None:
        with open(out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return rows
