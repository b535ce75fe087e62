"""Experiment configuration: an INI file with fixed sections and keys.

Every key is optional in a file (missing keys take the defaults below), but
unknown sections or keys are rejected so that typos cannot silently change
an experiment.  ``to_ini``/``from_ini`` round-trip exactly.

Schema (section: key = default):

    [mesh]     nx = 64, ny = 64, coarse_nx = 8, coarse_ny = 8
    [field]    kind = generate | load | constant, contrast = 1e4, seed = 4, path =
    [problem]  eps = 0.1, sign = 1, initial_condition = saddle
    [time]     scheme = implicit_euler | etd, dt = 1e-3, T = 0.1,
               picard_tol = 1e-8, picard_max = 50, nonlinear_solver = picard | newton
    [offline]  l = 2
    [online]   mode = none | uniform | adaptive1 | adaptive2, tol = 1e-3,
               max_levels = 1, theta = 0.7, dof_budget =
    [deim]     enabled = false, source = same_equation, energy_cutoff = 0.99999999,
               m =, every = 1, normalize = true, source_eps = 0.09,
               source_initial_condition = checker, source_contrast = 1e5,
               source_seed = 7, window = 0.05
    [output]   directory = out, timestamps =, save_fields = true, plots = true,
               error_norm = unweighted | kappa
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..deim import SNAPSHOT_SOURCES
from ..grid import ConfigurationError
from ..online import MODES
from ..stepper import SCHEMES


def _saddle(x, y):
    return 4.0 * (0.5 - x) * (0.5 - y)


def _bump(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _checker(x, y):
    return np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


INITIAL_CONDITIONS = {"saddle": _saddle, "bump": _bump, "checker": _checker}
FIELD_KINDS = ("generate", "load", "constant")
ONLINE_MODES = ("none",) + MODES
ERROR_NORMS = ("unweighted", "kappa")


@dataclass
class ExperimentConfig:
    # mesh
    nx: int = 64
    ny: int = 64
    coarse_nx: int = 8
    coarse_ny: int = 8
    # field
    field_kind: str = "generate"
    contrast: float = 1e4
    seed: int = 4
    field_path: str = ""
    # problem
    eps: float = 0.1
    sign: int = 1
    initial_condition: str = "saddle"
    # time
    scheme: str = "implicit_euler"
    dt: float = 1e-3
    T: float = 0.1
    picard_tol: float = 1e-8
    picard_max: int = 50
    nonlinear_solver: str = "picard"
    # offline
    l: int = 2
    # online
    online_mode: str = "none"
    online_tol: float = 1e-3
    max_levels: int = 1
    theta: float = 0.7
    dof_budget: int | None = None
    # deim
    deim: bool = False
    deim_source: str = "same_equation"
    energy_cutoff: float = 1 - 1e-8
    deim_m: int | None = None
    snapshot_every: int = 1
    normalize_snapshots: bool = True
    source_eps: float = 0.09
    source_initial_condition: str = "checker"
    source_contrast: float = 1e5
    source_seed: int = 7
    window: float = 0.05
    # output
    directory: str = "out"
    timestamps: list[float] = field(default_factory=list)
    save_fields: bool = True
    plots: bool = True
    error_norm: str = "unweighted"

    def __post_init__(self):
        self.validate()

    @property
    def initial_dof(self) -> int:
        return (self.coarse_nx - 1) * (self.coarse_ny - 1) * self.l

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def deim_start(self) -> float:
        return self.window if self.deim and self.deim_source == "earlier_time_window" else 0.0

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        for name in ("nx", "ny", "coarse_nx", "coarse_ny"):
            need(getattr(self, name) >= 1, f"{name} must be a positive integer")
        need(self.nx >= 2 and self.ny >= 2, "fine mesh needs at least 2 cells per direction")
        need(self.coarse_nx >= 2 and self.coarse_ny >= 2, "coarse mesh needs at least 2 cells per direction "
             "(otherwise there is no interior coarse node)")
        need(self.nx % self.coarse_nx == 0 and self.ny % self.coarse_ny == 0,
             f"coarse mesh {self.coarse_nx}x{self.coarse_ny} does not divide fine mesh {self.nx}x{self.ny}")
        need(self.field_kind in FIELD_KINDS, f"field kind must be one of {FIELD_KINDS}")
        need(self.field_kind != "load" or self.field_path, "field kind 'load' needs a path")
        need(self.contrast >= 1, "contrast must be >= 1")
        need(self.eps > 0, "eps must be positive")
        need(self.sign in (1, -1), "sign must be 1 or -1")
        need(self.initial_condition in INITIAL_CONDITIONS,
             f"initial_condition must be one of {sorted(INITIAL_CONDITIONS)}")
        need(self.scheme in SCHEMES, f"scheme must be one of {SCHEMES}")
        need(self.dt > 0 and self.T > 0, "dt and T must be positive")
        n = self.T / self.dt
        need(abs(n - round(n)) <= 1e-6 * max(1.0, n) and round(n) >= 1,
             f"T={self.T} is not a positive whole number of steps of dt={self.dt}")
        need(self.picard_tol > 0 and self.picard_max >= 1, "picard_tol > 0 and picard_max >= 1 required")
        need(self.nonlinear_solver in ("picard", "newton"), "nonlinear_solver must be picard or newton")
        need(self.l >= 1, "l must be >= 1")
        need(self.online_mode in ONLINE_MODES, f"online mode must be one of {ONLINE_MODES}")
        need(self.online_tol >= 0, "online tol must be >= 0")
        need(self.max_levels >= 0, "max_levels must be >= 0")
        need(0 < self.theta <= 1, "theta must lie in (0, 1]")
        need(self.dof_budget is None or self.dof_budget >= 0, "dof_budget must be >= 0")
        need(self.deim_source in SNAPSHOT_SOURCES, f"deim source must be one of {SNAPSHOT_SOURCES}")
        need(0 < self.energy_cutoff <= 1, "energy_cutoff must lie in (0, 1]")
        need(self.deim_m is None or self.deim_m >= 1, "deim m must be >= 1")
        need(self.snapshot_every >= 1, "snapshot every must be >= 1")
        need(self.source_eps > 0, "source_eps must be positive")
        need(self.source_initial_condition in INITIAL_CONDITIONS,
             f"source_initial_condition must be one of {sorted(INITIAL_CONDITIONS)}")
        need(self.source_contrast >= 1, "source_contrast must be >= 1")
        need(not (self.deim and self.deim_source == "earlier_time_window") or 0 < self.window < self.T,
             "earlier_time_window needs 0 < window < T")
        need(self.error_norm in ERROR_NORMS, f"error_norm must be one of {ERROR_NORMS}")
        need(all(0 <= t <= self.T * (1 + 1e-12) for t in self.timestamps), "timestamps must lie in [0, T]")

    # -- serialization ---------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in SCHEMA.items():
            cp[section] = {key: _format(getattr(self, attr)) for key, (attr, _) in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config: {exc}") from None
        values = {}
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigurationError(f"unknown section [{section}]; expected one of {list(SCHEMA)}")
            for key, raw in cp[section].items():
                if key not in SCHEMA[section]:
                    raise ConfigurationError(f"unknown key '{key}' in [{section}]; "
                                             f"expected one of {list(SCHEMA[section])}")
                attr, parse = SCHEMA[section][key]
                try:
                    values[attr] = parse(raw.strip())
                except ValueError as exc:
                    raise ConfigurationError(f"[{section}] {key} = {raw!r}: {exc}") from None
        return cls(**values)

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None
        return cls.from_ini(text)


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _int(s):
    return int(s)


def _opt_int(s):
    return None if s == "" else int(s)


def _float(s):
    return float(s)


def _str(s):
    return s


def _bool(s):
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def _floats(s):
    return [float(t) for t in s.replace(",", " ").split()]


SCHEMA = {
    "mesh": {"nx": ("nx", _int), "ny": ("ny", _int), "coarse_nx": ("coarse_nx", _int),
             "coarse_ny": ("coarse_ny", _int)},
    "field": {"kind": ("field_kind", _str), "contrast": ("contrast", _float), "seed": ("seed", _int),
              "path": ("field_path", _str)},
    "problem": {"eps": ("eps", _float), "sign": ("sign", _int),
                "initial_condition": ("initial_condition", _str)},
    "time": {"scheme": ("scheme", _str), "dt": ("dt", _float), "t": ("T", _float),
             "picard_tol": ("picard_tol", _float), "picard_max": ("picard_max", _int),
             "nonlinear_solver": ("nonlinear_solver", _str)},
    "offline": {"l": ("l", _int)},
    "online": {"mode": ("online_mode", _str), "tol": ("online_tol", _float), "max_levels": ("max_levels", _int),
               "theta": ("theta", _float), "dof_budget": ("dof_budget", _opt_int)},
    "deim": {"enabled": ("deim", _bool), "source": ("deim_source", _str),
             "energy_cutoff": ("energy_cutoff", _float), "m": ("deim_m", _opt_int),
             "every": ("snapshot_every", _int), "normalize": ("normalize_snapshots", _bool),
             "source_eps": ("source_eps", _float), "source_initial_condition": ("source_initial_condition", _str),
             "source_contrast": ("source_contrast", _float), "source_seed": ("source_seed", _int),
             "window": ("window", _float)},
    "output": {"directory": ("directory", _str), "timestamps": ("timestamps", _floats),
               "save_fields": ("save_fields", _bool), "plots": ("plots", _bool),
               "error_norm": ("error_norm", _str)},
}


# -- presets ------------------------------------------------------------------

def _solver_for(eps, dt):
    # Picard contracts only while dt * |S'| stays below the mass term.
    return "newton" if dt / eps**2 >= 1.0 else "picard"


def _desk(**kw):
    return ExperimentConfig(**kw)


def _ex21(eps=0.01, **kw):
    base = dict(nx=256, ny=256, coarse_nx=16, coarse_ny=16, eps=eps, dt=1e-3, T=0.1, l=1,
                online_mode="adaptive1", online_tol=0.0, max_levels=2, directory="out/ex21")
    base.update(kw)
    base.setdefault("nonlinear_solver", _solver_for(base["eps"], base["dt"]))
    return ExperimentConfig(**base)


def _ex22(eps=0.01, **kw):
    base = dict(nx=256, ny=256, coarse_nx=16, coarse_ny=16, eps=eps, dt=1e-4 if eps == 0.01 else 1e-3,
                T=0.1, l=2, online_mode="adaptive1", online_tol=1e-3, max_levels=5, directory="out/ex22")
    base.update(kw)
    base.setdefault("nonlinear_solver", _solver_for(base["eps"], base["dt"]))
    return ExperimentConfig(**base)


def _ex33(source="same_equation", **kw):
    base = dict(online_mode="none", deim=True, deim_source=source, directory=f"out/ex33-{source}")
    if source == "different_epsilon":
        base.update(eps=0.1, source_eps=0.09)
    if source == "earlier_time_window":
        base.update(T=0.06, window=0.05)
    base.update(kw)
    return _ex22(**base)


PRESETS = {"desk": _desk, "ex21": _ex21, "ex22": _ex22, "ex33": _ex33}


def preset(name: str, **overrides) -> ExperimentConfig:
    """Named configuration; keyword overrides are applied before validation.

    ``ex21`` and ``ex22`` accept ``eps``; ``ex33`` accepts ``source``.
    """
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    try:
        return PRESETS[name](**overrides)
    except TypeError as exc:
        raise ConfigurationError(f"bad override for preset {name!r}: {exc}") from None


def tolerance_sweep(cfg: ExperimentConfig, tolerances=(1e-2, 1e-3, 1e-4)) -> list[ExperimentConfig]:
    """One configuration per online tolerance, with separate output directories."""
    return [cfg.replace(online_tol=t, directory=f"{cfg.directory}-tol{t:g}") for t in tolerances]
