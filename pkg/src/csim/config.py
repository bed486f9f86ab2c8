"""Run configuration: one JSON document describing the system, integrator and command parameters.

Unknown keys are rejected with their dotted path, and every numeric field is
range-checked, so a config that loads is a config that runs.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import CsimError
from .flow import IntegratorConfig
from .sysmodel import CompetitiveSystem, LotkaVolterraSystem, MayLeonardSystem, weak_coupling_lv

SYSTEM_KINDS = ("lotka_volterra", "may_leonard", "builtin_demo")
BUILTIN_DEMOS = ("weak_coupling", "may_leonard")


class ConfigError(CsimError, ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    b: tuple | None = None
    a: tuple | None = None
    alpha: float | None = None
    beta: float | None = None
    name: str | None = None       # builtin_demo: which demo; otherwise a free label

    def build(self) -> CompetitiveSystem:
        if self.kind == "lotka_volterra":
            return LotkaVolterraSystem(np.array(self.b, float), np.array(self.a, float), name=self.name or "lotka_volterra")
        if self.kind == "may_leonard":
            return MayLeonardSystem(self.alpha, self.beta)
        if self.name == "weak_coupling":
            return weak_coupling_lv()
        return MayLeonardSystem(1.4 if self.alpha is None else self.alpha, 0.9 if self.beta is None else self.beta)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key in ("b", "a", "alpha", "beta", "name"):
            v = getattr(self, key)
            if v is not None:
                out[key] = [list(row) for row in v] if key == "a" else (list(v) if key == "b" else v)
        return out


@dataclass(frozen=True)
class CommandParams:
    # simplex
    m: int = 20
    T_sweep: float = 200.0
    tol_hausdorff: float = 1e-6
    dt_sweep: float = 1.0
    dt_probe: float = 0.1
    polish: bool = True
    # exponents / certify
    k: int = 1
    eta: float = 1e-3
    T_exponents: float = 200.0
    n_starts: int = 8
    T_transient: float = 200.0
    T_sample: float = 50.0
    # permanence
    permanence_starts: int = 100
    permanence_T: float = 500.0
    permanence_floor: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    system: SystemSpec
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    command: CommandParams = field(default_factory=CommandParams)
    seed: int = 0
    out: str = "."

    def to_dict(self) -> dict:
        return {
            "system": self.system.to_dict(),
            "integrator": asdict(self.integrator),
            "command": asdict(self.command),
            "seed": self.seed,
            "out": self.out,
        }


# ------------------------------------------------------------------ parsing

def _number(path, v, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {type(v).__name__}")
    if integer and isinstance(v, int):
        return v
    if not math.isfinite(v):
        raise ConfigError(path, "must be finite")
    if integer:
        if float(v) != int(v):
            raise ConfigError(path, "expected an integer")
        return int(v)
    return float(v)


def _check_keys(path, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}", "unknown key")


def _parse_system(d) -> SystemSpec:
    _check_keys("system", d, ("kind", "b", "a", "alpha", "beta", "name"))
    kind = d.get("kind")
    if kind not in SYSTEM_KINDS:
        raise ConfigError("system.kind", f"must be one of {', '.join(SYSTEM_KINDS)}")
    name = d.get("name")
    if name is not None and not isinstance(name, str):
        raise ConfigError("system.name", "expected a string")
    if kind == "lotka_volterra":
        for key in ("alpha", "beta"):
            if key in d:
                raise ConfigError(f"system.{key}", "only valid for May-Leonard systems")
        if "b" not in d:
            raise ConfigError("system.b", "required for a Lotka-Volterra system")
        if "a" not in d:
            raise ConfigError("system.a", "required for a Lotka-Volterra system")
        if not isinstance(d["b"], list) or not d["b"]:
            raise ConfigError("system.b", "expected a non-empty list")
        b = tuple(_number(f"system.b[{i}]", v) for i, v in enumerate(d["b"]))
        if not isinstance(d["a"], list) or not all(isinstance(r, list) for r in d["a"]):
            raise ConfigError("system.a", "expected a list of rows")
        a = tuple(tuple(_number(f"system.a[{i}][{j}]", v) for j, v in enumerate(row)) for i, row in enumerate(d["a"]))
        n = len(b)
        if len(a) != n or any(len(row) != n for row in a):
            raise ConfigError("system.b", f"length {n} does not match the {len(a)}-row interaction matrix a")
        for i, v in enumerate(b):
            if v <= 0:
                raise ConfigError(f"system.b[{i}]", "must be positive")
        for i, row in enumerate(a):
            for j, v in enumerate(row):
                if v <= 0:
                    raise ConfigError(f"system.a[{i}][{j}]", "must be positive (strong competition)")
        return SystemSpec(kind, b, a, None, None, name)
    if kind == "may_leonard":
        for key in ("b", "a"):
            if key in d:
                raise ConfigError(f"system.{key}", "not used by May-Leonard systems")
        for key in ("alpha", "beta"):
            if key not in d:
                raise ConfigError(f"system.{key}", "required for a May-Leonard system")
        alpha = _number("system.alpha", d["alpha"])
        beta = _number("system.beta", d["beta"])
        _check_may_leonard("system", alpha, beta)
        return SystemSpec(kind, None, None, alpha, beta, name)
    if name not in BUILTIN_DEMOS:
        raise ConfigError("system.name", f"builtin demo must be one of {', '.join(BUILTIN_DEMOS)}")
    alpha = _number("system.alpha", d["alpha"]) if "alpha" in d else None
    beta = _number("system.beta", d["beta"]) if "beta" in d else None
    if name == "may_leonard":
        _check_may_leonard("system", 1.4 if alpha is None else alpha, 0.9 if beta is None else beta)
    elif alpha is not None or beta is not None:
        raise ConfigError("system.alpha", "only valid for the may_leonard demo")
    return SystemSpec(kind, None, None, alpha, beta, name)


def _check_may_leonard(path, alpha, beta):
    if not alpha > 1:
        raise ConfigError(f"{path}.alpha", f"must satisfy alpha > 1 (got {alpha})")
    if not 0 < beta < 1:
        raise ConfigError(f"{path}.beta", f"must satisfy 0 < beta < 1 (got {beta})")
    if not alpha + beta > 2:
        raise ConfigError(f"{path}.alpha", f"must satisfy alpha + beta > 2 (got {alpha + beta})")


_POSITIVE = {"T_sweep", "tol_hausdorff", "dt_sweep", "dt_probe", "T_exponents", "T_transient", "T_sample",
             "permanence_T", "permanence_floor"}


def _parse_command(d) -> CommandParams:
    allowed = {f.name: f for f in fields(CommandParams)}
    _check_keys("command", d, allowed)
    kw = {}
    for key, v in d.items():
        path = f"command.{key}"
        default = getattr(CommandParams, key)
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(path, "expected true or false")
            kw[key] = v
        elif isinstance(default, int):
            kw[key] = _number(path, v, integer=True)
        else:
            kw[key] = _number(path, v)
    out = CommandParams(**kw)
    if out.m < 1:
        raise ConfigError("command.m", "must be >= 1")
    if out.k < 0:
        raise ConfigError("command.k", "must be >= 0")
    if out.eta < 0:
        raise ConfigError("command.eta", "must be >= 0")
    for key in ("n_starts", "permanence_starts"):
        if getattr(out, key) < 1:
            raise ConfigError(f"command.{key}", "must be >= 1")
    for key in _POSITIVE:
        if not getattr(out, key) > 0:
            raise ConfigError(f"command.{key}", "must be positive")
    return out


def _parse_integrator(d) -> IntegratorConfig:
    allowed = [f.name for f in fields(IntegratorConfig)]
    _check_keys("integrator", d, allowed)
    kw = {}
    for key, v in d.items():
        if key == "method":
            if v not in ("rk45", "rk4"):
                raise ConfigError("integrator.method", "must be 'rk45' or 'rk4'")
            kw[key] = v
        else:
            kw[key] = _number(f"integrator.{key}", v)
            if not kw[key] > 0:
                raise ConfigError(f"integrator.{key}", "must be positive")
    return IntegratorConfig(**kw)


def parse_config(d) -> RunConfig:
    _check_keys("config", d, ("system", "integrator", "command", "seed", "out"))
    if "system" not in d:
        raise ConfigError("config.system", "required")
    seed = _number("config.seed", d.get("seed", 0), integer=True)
    if not 0 <= seed < 2**64:
        raise ConfigError("config.seed", "must be an unsigned 64-bit integer")
    out = d.get("out", ".")
    if not isinstance(out, str):
        raise ConfigError("config.out", "expected a path string")
    return RunConfig(_parse_system(d["system"]), _parse_integrator(d.get("integrator", {})),
                     _parse_command(d.get("command", {})), seed, out)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_config(data)
