"""Run configuration: TOML parsing, validation and the resolved dump."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["ConfigError", "ProblemConfig", "SpectrumConfig", "ScanConfig", "VerifyConfig",
           "RunConfig", "load_config", "config_hash"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration (exit code 2)."""


@dataclass
class ProblemConfig:
    preset: str = "constant"
    forcing: str = "cos_sin_affine"
    epsilon: float = 1e-3
    omega: float = 2.5
    rho: str | None = None
    p: str | None = None
    m: str | None = None
    alpha1: float | None = None
    beta1: float | None = None
    alpha2: float | None = None
    beta2: float | None = None

    def build(self):
        from .coefficients import COEFFICIENT_PRESETS, FORCING_PRESETS, CoefficientSet, Forcing

        if self.preset not in COEFFICIENT_PRESETS:
            raise ConfigError(f"unknown coefficient preset {self.preset!r}; "
                              f"choose from {sorted(COEFFICIENT_PRESETS)}")
        base = dict(COEFFICIENT_PRESETS[self.preset])
        for k in ("rho", "p", "m", "alpha1", "beta1", "alpha2", "beta2"):
            v = getattr(self, k)
            if v is not None:
                base[k] = v
        ftext = FORCING_PRESETS.get(self.forcing, self.forcing)
        try:
            return CoefficientSet(forcing=Forcing(ftext), epsilon=self.epsilon, omega=self.omega,
                                  name=self.preset, **base)
        except (ValueError, TypeError, SyntaxError) as exc:
            raise ConfigError(f"problem section: {exc}") from exc


@dataclass
class SpectrumConfig:
    n_modes: int = 41
    grid_size: int = 4096
    n_min: int = 10
    n_max: int = 40


@dataclass
class ScanConfig:
    eps_range: tuple = (0.0005, 0.002)
    omega_range: tuple = (2.2, 3.2)
    gammas: tuple = (0.02, 0.04, 0.08)
    grid: tuple = (200, 400)
    tau: float = 1.5
    l_max: int = 32
    gamma1: float = 0.5


@dataclass
class VerifyConfig:
    tolerance_scale: float = 1.0
    samples: int = 200
    gamma: float = 0.1
    tau: float = 1.5


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: dict = field(default_factory=dict)
    spectrum: SpectrumConfig = field(default_factory=SpectrumConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: dict = field(default_factory=lambda: {"dir": "out"})

    def params(self):
        from .nash_moser import NashMoserParams

        kw = dict(self.solver)
        if "collocation" in kw:
            kw["collocation"] = tuple(kw["collocation"])
        try:
            return NashMoserParams(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"solver section: {exc}") from exc

    def resolved(self) -> dict:
        """Canonical dict of every setting, with derived ``sigma`` and ``beta`` echoed back."""
        d = {"problem": asdict(self.problem), "solver": self.params().to_dict(),
             "spectrum": asdict(self.spectrum), "scan": _listify(asdict(self.scan)),
             "verify": asdict(self.verify), "output": dict(self.output)}
        return d


def _listify(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"[{name}] has unknown keys {sorted(extra)}")
    defaults = cls()
    kw = {}
    for k, v in raw.items():
        ref = getattr(defaults, k)
        if isinstance(ref, bool) or ref is None:
            kw[k] = v
        elif isinstance(ref, (int, float)):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"[{name}] {k} must be a number, got {v!r}")
            if isinstance(ref, int) and not float(v).is_integer():
                raise ConfigError(f"[{name}] {k} must be an integer, got {v!r}")
            kw[k] = type(ref)(v)
        elif isinstance(ref, tuple):
            if not isinstance(v, list) or not all(isinstance(e, (int, float)) for e in v):
                raise ConfigError(f"[{name}] {k} must be a list of numbers")
            kw[k] = tuple(v)
        elif isinstance(ref, str) and not isinstance(v, str):
            raise ConfigError(f"[{name}] {k} must be a string")
        else:
            kw[k] = v
    return cls(**kw)


def _check(cfg: RunConfig):
    s = cfg.scan
    if len(s.eps_range) != 2 or len(s.omega_range) != 2 or len(s.grid) != 2:
        raise ConfigError("scan ranges and grid need two entries")
    if not (s.eps_range[1] > s.eps_range[0] and s.omega_range[1] > s.omega_range[0]):
        raise ConfigError("scan rectangle is empty")
    if min(s.grid) < 1 or not s.gammas or min(s.gammas) < 0:
        raise ConfigError("scan grid must be positive and gammas non-negative")
    if not 0 < s.gamma1 <= 1:
        raise ConfigError("scan.gamma1 must lie in (0, 1]")
    if cfg.spectrum.n_modes < cfg.spectrum.n_max + 1:
        raise ConfigError("spectrum.n_modes must exceed spectrum.n_max")
    if cfg.problem.omega <= 0:
        raise ConfigError("omega must be positive")
    if cfg.problem.omega < cfg.params().omega_min:
        raise ConfigError(f"omega={cfg.problem.omega} is below solver.omega_min")


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML file (or defaults when ``path`` is None) into a validated :class:`RunConfig`."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error: {exc}") from exc
    for k, v in (overrides or {}).items():
        raw.setdefault(k, {}).update(v)
    unknown = set(raw) - {"problem", "solver", "spectrum", "scan", "verify", "output"}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    try:
        cfg = RunConfig(problem=_section(ProblemConfig, raw.get("problem"), "problem"),
                        solver=dict(raw.get("solver", {})),
                        spectrum=_section(SpectrumConfig, raw.get("spectrum"), "spectrum"),
                        scan=_section(ScanConfig, raw.get("scan"), "scan"),
                        verify=_section(VerifyConfig, raw.get("verify"), "verify"),
                        output=dict(raw.get("output", {"dir": "out"})))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _check(cfg)
    return cfg


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.resolved(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
