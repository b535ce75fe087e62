"""Time integration for  u_t - div(kappa grad u) = S(u)  with u = 0 on the boundary.

Two schemes are provided for both the fine system and a Galerkin-reduced one:

``implicit_euler``
    (M/dt + A) u^n = M (u^{n-1}/dt + S(u^n)), solved by Picard iteration
    (or Newton on request).  S is evaluated nodewise and integrated with M.
``etd``
    (M + dt A) u^n = M w,  w = exp(dt * S(u^{n-1}) / u^{n-1}) * u^{n-1},
    the first-order exponential (integrating factor) scheme.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import SPDSolver
from .rom import ReducedOperator

EXPONENT_CLAMP = 500.0
SCHEMES = ("implicit_euler", "etd")


class PicardWarning(RuntimeWarning):
    pass


class NonlinearSolveError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(f"{msg}; update norms: {', '.join(f'{x:.2e}' for x in trace)}")
        self.trace = trace


class Nonlinearity:
    """Pointwise reaction term S(u).

    ``ratio`` must return S(u)/u with the removable singularity at u = 0
    resolved.  Without an analytic ratio a guarded quotient is used: nodes
    with |u| < 1e-12 get the derivative S'(0) instead.
    """

    def __init__(self, source: Callable, ratio: Callable | None = None, derivative: Callable | None = None):
        self._source = source
        self._ratio = ratio
        self._derivative = derivative

    def __call__(self, u):
        return self._source(u)

    def derivative(self, u):
        if self._derivative is not None:
            return self._derivative(u)
        d = 1e-7 * np.maximum(1.0, np.abs(u))
        return (self._source(u + d) - self._source(u - d)) / (2 * d)

    def ratio(self, u):
        if self._ratio is not None:
            return self._ratio(u)
        u = np.asarray(u, dtype=float)
        small = np.abs(u) < 1e-12
        safe = np.where(small, 1.0, u)
        q = self._source(safe) / safe
        if np.any(small):
            q = np.where(small, self.derivative(np.zeros_like(u)), q)
        return q


class AllenCahn(Nonlinearity):
    """S(u) = sign * (u^3 - u) / eps^2.

    ``sign=+1`` puts (u^3 - u)/eps^2 on the right-hand side exactly as the
    model problem of the multiscale examples is written; ``sign=-1`` is the
    usual Allen-Cahn reaction (u - u^3)/eps^2 with stable states u = +-1.
    """

    def __init__(self, eps: float, sign: float = 1.0):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if sign not in (1.0, -1.0):
            raise ValueError("sign must be +1 or -1")
        self.eps = float(eps)
        self.sign = float(sign)
        c = self.sign / self.eps**2
        super().__init__(
            source=lambda u: c * (u**3 - u),
            ratio=lambda u: c * (u**2 - 1.0),
            derivative=lambda u: c * (3.0 * u**2 - 1.0),
        )

    def __repr__(self):
        return f"AllenCahn(eps={self.eps}, sign={self.sign:+.0f})"


def linear(c: float) -> Nonlinearity:
    return Nonlinearity(lambda u: c * u, lambda u: np.full_like(np.asarray(u, dtype=float), c),
                        lambda u: np.full_like(np.asarray(u, dtype=float), c))


def zero() -> Nonlinearity:
    return linear(0.0)


@dataclass
class StepperConfig:
    scheme: str = "implicit_euler"
    dt: float = 1e-3
    T: float = 0.1
    picard_tol: float = 1e-8
    picard_max: int = 50
    nonlinear_solver: str = "picard"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0 or (self.T > 0 and self.dt > self.T * (1 + 1e-12)):
            raise ValueError("need 0 <= T and dt <= T")
        if self.picard_max < 1:
            raise ValueError("picard_max must be >= 1")
        if self.nonlinear_solver not in ("picard", "newton"):
            raise ValueError("nonlinear_solver must be 'picard' or 'newton'")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"T={self.T} is not a whole number of steps dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class StepResult:
    value: np.ndarray  # fine vector, or reduced coefficients for reduced steps
    iterations: int = 1
    converged: bool = True
    clamped: int = 0
    trace: list = field(default_factory=list)


def etd_weight(u, nonlinearity: Nonlinearity, dt: float):
    """Nodewise exp(dt * S(u)/u) * u and the number of clamped exponents."""
    expo = dt * nonlinearity.ratio(u)
    clamped = int(np.count_nonzero(np.abs(expo) > EXPONENT_CLAMP))
    return np.exp(np.clip(expo, -EXPONENT_CLAMP, EXPONENT_CLAMP)) * u, clamped


def _report(trace, tol):
    warnings.warn(
        f"nonlinear iteration did not reach tol={tol:g} in {len(trace)} iterations; "
        f"update norms: {', '.join(f'{x:.2e}' for x in trace[-5:])}",
        PicardWarning,
        stacklevel=3,
    )


def _mnorm(M, v):
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


class FineIntegrator:
    """One-step map on the Dirichlet-eliminated fine system."""

    def __init__(self, A, M, nonlinearity: Nonlinearity, config: StepperConfig):
        self.A, self.M = A, M
        self.f = nonlinearity
        self.config = config
        dt = config.dt
        if config.scheme == "implicit_euler":
            self.K = M / dt + A
        else:
            self.K = M + dt * A
        self.solve_K = SPDSolver(self.K)

    def step(self, u_prev, load=None) -> StepResult:
        if self.config.scheme == "etd":
            w, clamped = etd_weight(u_prev, self.f, self.config.dt)
            return StepResult(self.solve_K(self.M @ w), clamped=clamped)
        return self._implicit(u_prev, load)

    def _implicit(self, u_prev, load):
        cfg, M, dt = self.config, self.M, self.config.dt
        const = u_prev / dt + (0.0 if load is None else load)
        u, trace = np.asarray(u_prev, dtype=float), []
        for k in range(1, cfg.picard_max + 1):
            if cfg.nonlinear_solver == "newton":
                res = self.K @ u - M @ (const + self.f(u))
                J = self.K - M @ sp.diags(self.f.derivative(u))
                u_new = u - spla.spsolve(sp.csc_matrix(J), res)
            else:
                u_new = self.solve_K(M @ (const + self.f(u)))
            if not np.all(np.isfinite(u_new)):
                raise NonlinearSolveError(f"fine nonlinear iteration diverged at iteration {k}", trace)
            upd = _mnorm(M, u_new - u)
            scale = max(_mnorm(M, u_new), np.finfo(float).tiny)
            trace.append(upd / scale)
            u = u_new
            if upd <= cfg.picard_tol * scale:
                return StepResult(u, k, True, trace=trace)
        if cfg.picard_max > 1:
            _report(trace, cfg.picard_tol)
        return StepResult(u, cfg.picard_max, cfg.picard_max == 1, trace=trace)


def step_implicit_euler_fine(u_prev, A, M, f: Nonlinearity, dt: float, *, picard_tol=1e-8,
                             picard_max=50, nonlinear_solver="picard", load=None) -> StepResult:
    cfg = StepperConfig("implicit_euler", dt, dt, picard_tol, picard_max, nonlinear_solver)
    return FineIntegrator(A, M, f, cfg).step(u_prev, load)


def step_etd(u_prev, A, M, f: Nonlinearity, dt: float) -> StepResult:
    return FineIntegrator(A, M, f, StepperConfig("etd", dt, dt)).step(u_prev)


class ReducedIntegrator:
    """One-step map in span(V).

    States enter as fine vectors (the previous step may live in a different
    basis after enrichment) and leave as coefficients.  With a DEIM model
    attached and ``use_deim`` set, nonlinear terms are sampled at the DEIM
    indices only.
    """

    def __init__(self, ops: ReducedOperator, nonlinearity: Nonlinearity, config: StepperConfig, deim=None):
        self.f = nonlinearity
        self.config = config
        self.deim = deim
        self.use_deim = deim is not None
        self.set_operator(ops)

    def set_operator(self, ops: ReducedOperator):
        self.ops = ops
        dt = self.config.dt
        K = ops.M_r / dt + ops.A_r if self.config.scheme == "implicit_euler" else ops.M_r + dt * ops.A_r
        self.K = K
        self._cho = sla.cho_factor(K) if ops.rank else None
        if self.deim is not None:
            self.deim.register_test_basis(ops.V, ops.M)
            self._Vp = ops.V[self.deim.indices].toarray()

    def _solve(self, b):
        return sla.cho_solve(self._cho, b) if self._cho is not None else np.zeros(0)

    def _nonlinear_load(self, c=None, u=None):
        """Projected S evaluated at V c (or at the fine vector u)."""
        if self.use_deim:
            up = self._Vp @ c if c is not None else u[self.deim.indices]
            return self.deim.apply_projected(self.f(up))
        return self.ops.load(self.f(self.ops.V @ c if c is not None else u))

    def step(self, u_prev, load=None) -> StepResult:
        ops, cfg, dt = self.ops, self.config, self.config.dt
        if cfg.scheme == "etd":
            if self.use_deim:
                up = u_prev[self.deim.indices]
                wp, clamped = etd_weight(up, self.f, dt)
                b = self.deim.apply_projected(wp)
            else:
                w, clamped = etd_weight(u_prev, self.f, dt)
                b = ops.load(w)
            return StepResult(self._solve(b), clamped=clamped)

        b_prev = ops.load(u_prev)
        const = b_prev / dt + (0.0 if load is None else ops.load(load))
        uu = float(u_prev @ (ops.M @ u_prev))
        c, trace = None, []
        for k in range(1, cfg.picard_max + 1):
            if cfg.nonlinear_solver == "newton" and c is not None:
                res = self.K @ c - const - self._nonlinear_load(c=c)
                c_new = c - np.linalg.solve(self.K - self._nonlinear_jacobian(c), res)
            else:
                c_new = self._solve(const + self._nonlinear_load(c=c, u=u_prev if c is None else None))
            if not np.all(np.isfinite(c_new)):
                raise NonlinearSolveError(f"reduced nonlinear iteration diverged at iteration {k}", trace)
            nn = float(c_new @ ops.M_r @ c_new)
            if c is None:
                d = c_new @ ops.M_r @ c_new - 2 * c_new @ b_prev + uu
            else:
                dc = c_new - c
                d = dc @ ops.M_r @ dc
            upd, scale = np.sqrt(max(d, 0.0)), max(np.sqrt(max(nn, 0.0)), np.finfo(float).tiny)
            trace.append(upd / scale)
            c = c_new
            if upd <= cfg.picard_tol * scale:
                return StepResult(c, k, True, trace=trace)
        if cfg.picard_max > 1:
            _report(trace, cfg.picard_tol)
        return StepResult(c, cfg.picard_max, cfg.picard_max == 1, trace=trace)

    def _nonlinear_jacobian(self, c):
        if self.use_deim:
            up = self._Vp @ c
            return self.deim.apply_projected(self.f.derivative(up)[:, None] * self._Vp)
        V = self.ops.V
        d = self.f.derivative(V @ c)
        return np.asarray((V.T @ (self.ops.M @ (sp.diags(d) @ V))).todense())


def step_implicit_euler_reduced(u_prev, ops: ReducedOperator, f: Nonlinearity, dt: float, *,
                                picard_tol=1e-8, picard_max=50, nonlinear_solver="picard",
                                deim=None) -> StepResult:
    cfg = StepperConfig("implicit_euler", dt, dt, picard_tol, picard_max, nonlinear_solver)
    return ReducedIntegrator(ops, f, cfg, deim).step(u_prev)


def step_etd_reduced(u_prev, ops: ReducedOperator, f: Nonlinearity, dt: float, deim=None) -> StepResult:
    return ReducedIntegrator(ops, f, StepperConfig("etd", dt, dt), deim).step(u_prev)


def nonlinear_vector(u, f: Nonlinearity, config: StepperConfig):
    """The nodewise vector the scheme projects: S(u) or the ETD weight."""
    if config.scheme == "etd":
        return etd_weight(u, f, config.dt)[0]
    return f(u)


def fine_trajectory(A, M, f: Nonlinearity, config: StepperConfig, u0,
                    forcing: Callable | None = None) -> Iterator[tuple[np.ndarray, StepResult | None]]:
    """Yield (u^n, step info) for n = 0..N; the step info is None for n = 0."""
    integ = FineIntegrator(A, M, f, config)
    u = np.asarray(u0, dtype=float)
    yield u, None
    for n in range(1, config.n_steps + 1):
        res = integ.step(u, None if forcing is None else forcing(n * config.dt))
        u = res.value
        yield u, res


@dataclass
class StepRecord:
    n: int
    t: float
    dof: int
    iterations: int = 0
    levels: int = 0
    e_a: float = float("nan")
    e_2: float = float("nan")
    residual: float = float("nan")


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)
    states: dict[int, np.ndarray] = field(default_factory=dict)
    nonlinear: list[tuple[int, np.ndarray]] = field(default_factory=list)
    enrichment_log: list = field(default_factory=list)
    clamped: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[max(self.states)]


def relative_errors(u_ref, u, A1, M):
    d = u_ref - u
    ea = _mnorm(A1, d) / max(_mnorm(A1, u_ref), np.finfo(float).tiny)
    e2 = _mnorm(M, d) / max(_mnorm(M, u_ref), np.finfo(float).tiny)
    return ea, e2


def run(
    ops: ReducedOperator | None,
    A,
    M,
    f: Nonlinearity,
    config: StepperConfig,
    u0,
    *,
    enricher=None,
    deim=None,
    deim_start: float = 0.0,
    reference: Iterable | None = None,
    error_norm=None,
    keep_states: Iterable[int] | str = "all",
    record_nonlinear: bool = False,
    forcing: Callable | None = None,
) -> Trajectory:
    """Time loop for a reduced (``ops``) or fine (``ops is None``) model.

    ``enricher`` (an :class:`msrom.online.Enricher`) adds online basis
    functions after each reduced solve; ``deim`` replaces the projected
    nonlinear term for t > ``deim_start``.  ``reference`` is an iterable of
    fine states u_f^0, u_f^1, ... consumed in lockstep to record errors,
    measured in the energy norm of ``error_norm`` (defaults to ``A``) and the
    ``M`` norm.
    """
    traj = Trajectory()
    dt = config.dt
    A1 = A if error_norm is None else error_norm
    keep = None if keep_states == "all" else set(keep_states)
    ref_iter = iter(reference) if reference is not None else None

    def _keep(n, u):
        if keep is None or n in keep:
            traj.states[n] = u.copy()

    def _errors(rec, u):
        if ref_iter is None:
            return
        ref = next(ref_iter)
        ref = ref[0] if isinstance(ref, tuple) else ref
        rec.e_a, rec.e_2 = relative_errors(ref, u, A1, M)

    if ops is None:
        integ = FineIntegrator(A, M, f, config)
        u = np.asarray(u0, dtype=float)
        rec = StepRecord(0, 0.0, len(u))
        _errors(rec, u)
        traj.records.append(rec)
        _keep(0, u)
        for n in range(1, config.n_steps + 1):
            t = n * dt
            res = integ.step(u, None if forcing is None else forcing(t))
            if record_nonlinear:
                traj.nonlinear.append((n, nonlinear_vector(u if config.scheme == "etd" else res.value, f, config)))
            u = res.value
            traj.clamped += res.clamped
            rec = StepRecord(n, t, len(u), res.iterations)
            _errors(rec, u)
            traj.records.append(rec)
            _keep(n, u)
        return traj

    base_rank = ops.rank
    integ = ReducedIntegrator(ops, f, config, deim)
    integ.use_deim = deim is not None and deim_start <= 0.0
    c0 = ops.l2_projection(u0).coefficients
    u = ops.reconstruct(c0)
    rec = StepRecord(0, 0.0, ops.rank)
    _errors(rec, u)
    traj.records.append(rec)
    _keep(0, u)
    for n in range(1, config.n_steps + 1):
        t = n * dt
        if deim is not None:
            integ.use_deim = t > deim_start + 1e-12 * dt
        load = None if forcing is None else forcing(t)
        res = integ.step(u, load)
        iters, levels, resid = res.iterations, 0, float("nan")
        if enricher is not None:
            res, levels, resid, extra = enricher.enrich(integ, u, res, n, load=load)
            iters += extra
        if record_nonlinear:
            traj.nonlinear.append(
                (n, nonlinear_vector(u if config.scheme == "etd" else integ.ops.reconstruct(res.value), f, config))
            )
        u_new = integ.ops.reconstruct(res.value)
        traj.clamped += res.clamped
        rec = StepRecord(n, t, integ.ops.rank, iters, levels, residual=resid)
        _errors(rec, u_new)
        traj.records.append(rec)
        _keep(n, u_new)
        u = u_new
        if enricher is not None:
            new_ops = enricher.carryover(integ.ops, base_rank)
            if new_ops is not integ.ops:
                integ.set_operator(new_ops)
    if enricher is not None:
        traj.enrichment_log = enricher.log
    return traj
