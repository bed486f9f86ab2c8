"""Time integration of the flow and of its variational (tangent) flow.

Two explicit integrators are provided: classical fixed-step RK4 and the
adaptive Dormand-Prince 5(4) pair.  States may carry leading batch axes;
the adaptive step is shared across the batch.

Orthant coordinates are kept in C exactly: a coordinate that starts at 0
stays bit-exactly 0 (F_i = x_i f_i vanishes there), and rounding undershoot
in (-1e-13, 0) is clamped to 0.  A larger undershoot rejects the step.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidStateError, OverflowGuardError, StepSizeUnderflowError
from .sysmodel import CompetitiveSystem, NEGATIVE_TOL, as_face

CLAMP_TOL = 1e-13


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"          # "rk45" (adaptive) or "rk4" (fixed step)
    step: float = 0.01            # rk4 step
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_step: float = 0.1
    min_step: float = 1e-12
    overflow_guard: float = 1e6

    def __post_init__(self):
        if self.method not in ("rk45", "rk4"):
            raise ValueError(f"unknown integrator method {self.method!r}")
        for name in ("step", "abs_tol", "rel_tol", "max_step", "min_step", "overflow_guard"):
            if not getattr(self, name) > 0:
                raise ValueError(f"integrator.{name} must be positive")

    def with_(self, **kw) -> "IntegratorConfig":
        return replace(self, **kw)


DEFAULT_CONFIG = IntegratorConfig()


@dataclass
class Trajectory:
    times: np.ndarray     # (S,)
    states: np.ndarray    # (S, ..., n)

    def __len__(self):
        return self.times.size

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class _Integrator:
    """Integrates y' = rhs(y) where y[..., :n_orth] are orthant coordinates."""

    def __init__(self, rhs, n_orth: int, cfg: IntegratorConfig):
        self.rhs = rhs
        self.n_orth = n_orth
        self.cfg = cfg
        self.h = None   # carried between calls so sampled trajectories do not restart the controller

    def _guard(self, y):
        x = y[..., : self.n_orth]
        if not np.all(np.isfinite(y)):
            raise OverflowGuardError("integration produced non-finite values")
        if np.max(np.abs(x), initial=0.0) > self.cfg.overflow_guard:
            raise OverflowGuardError(
                f"state norm exceeded overflow guard {self.cfg.overflow_guard:g}; system may not be dissipative"
            )

    def _clamp(self, y):
        """Clamp rounding undershoot; return None if the undershoot is too large."""
        x = y[..., : self.n_orth]
        if np.any(x < 0):
            if np.any(x < -CLAMP_TOL):
                return None
            y = y.copy()
            y[..., : self.n_orth] = np.maximum(x, 0.0)
        return y

    def run(self, y, T: float):
        if T == 0:
            return y
        if self.cfg.method == "rk4":
            return self._run_rk4(y, T)
        return self._run_rk45(y, T)

    # fixed step ---------------------------------------------------------
    def _rk4_step(self, y, h, depth=0):
        f = self.rhs
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        y_new = self._clamp(y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        if y_new is None:
            if depth >= 12:
                raise StepSizeUnderflowError("rk4 step kept leaving the orthant after 12 halvings")
            y_half = self._rk4_step(y, 0.5 * h, depth + 1)
            return self._rk4_step(y_half, 0.5 * h, depth + 1)
        return y_new

    def _run_rk4(self, y, T):
        n_steps = max(1, int(np.ceil(abs(T) / self.cfg.step - 1e-12)))
        h = T / n_steps
        for _ in range(n_steps):
            y = self._rk4_step(y, h)
            self._guard(y)
        return y

    # adaptive -----------------------------------------------------------
    def _run_rk45(self, y, T):
        cfg = self.cfg
        sign = 1.0 if T > 0 else -1.0
        t, T_abs = 0.0, abs(T)
        h = min(self.h or cfg.max_step, cfg.max_step, T_abs)
        k1 = self.rhs(y)
        k = [None] * 7
        while t < T_abs:
            remaining = T_abs - t
            last = h >= remaining * (1 - 1e-12)
            if last:
                h_try = remaining
            else:
                h_try = h
            k[0] = k1
            for s in range(1, 7):
                acc = y + (sign * h_try) * sum(c * k[j] for j, c in enumerate(_A[s]) if c != 0.0)
                k[s] = self.rhs(acc)
            y_new = acc  # the 7th stage is evaluated at the 5th-order solution
            err_vec = (sign * h_try) * sum(c * k[j] for j, c in enumerate(_E) if c != 0.0)
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
            err = np.max(np.abs(err_vec) / scale) if err_vec.size else 0.0
            if not np.isfinite(err):
                err = np.inf
            clamped = self._clamp(y_new) if err <= 1.0 else None
            if err <= 1.0 and clamped is not None:
                t = T_abs if last else t + h_try
                if clamped is y_new:
                    k1 = k[6]
                else:
                    k1 = self.rhs(clamped)
                y = clamped
                self._guard(y)
                factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                if not last or factor < 1.0:
                    h = min(cfg.max_step, h_try * factor)
            else:
                if err <= 1.0:
                    factor = 0.5   # undershoot across a face: retry with a smaller step
                else:
                    factor = max(0.1, 0.9 * err ** -0.25) if np.isfinite(err) else 0.1
                h = h_try * factor
                if h < cfg.min_step:
                    raise StepSizeUnderflowError(f"step size {h:.3e} below minimum {cfg.min_step:.1e}")
        self.h = h
        return y


def _check_state(system: CompetitiveSystem, x0) -> np.ndarray:
    x0 = np.array(x0, dtype=float)
    if x0.shape[-1:] != (system.n,):
        raise InvalidStateError(f"expected state dimension {system.n}, got shape {x0.shape}")
    if np.any(x0 < -NEGATIVE_TOL):
        raise InvalidStateError("initial state has negative coordinates")
    return np.maximum(x0, 0.0)


def flow(system: CompetitiveSystem, x0, T: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """phi_T(x0).  ``x0`` may be a single point or a batch of shape (..., n)."""
    x0 = _check_state(system, x0)
    return _Integrator(system.vector_field, system.n, cfg).run(x0, float(T))


def trajectory(system: CompetitiveSystem, x0, T: float, dt_sample: float,
               cfg: IntegratorConfig = DEFAULT_CONFIG) -> Trajectory:
    """States at 0, dt, 2 dt, ..., T by continued integration (T is included)."""
    if not dt_sample > 0:
        raise ValueError("dt_sample must be positive")
    x = _check_state(system, x0)
    n_full = int(np.floor(T / dt_sample + 1e-9))
    times = list(dt_sample * np.arange(n_full + 1))
    if T - times[-1] > 1e-9 * max(1.0, T):
        times.append(float(T))
    times = np.array(times)
    states = np.empty((times.size,) + x.shape)
    states[0] = x
    integ = _Integrator(system.vector_field, system.n, cfg)
    for s in range(1, times.size):
        x = integ.run(x, times[s] - times[s - 1])
        states[s] = x
    return Trajectory(times, states)


def _variational_rhs(system: CompetitiveSystem, k: int):
    n = system.n

    def rhs(y):
        x = y[..., :n]
        V = y[..., n:].reshape(y.shape[:-1] + (n, k))
        dV = system.jacobian(x) @ V
        return np.concatenate([system.vector_field(x), dV.reshape(y.shape[:-1] + (n * k,))], axis=-1)

    return rhs


class VariationalIntegrator:
    """Stateful base+tangent integrator; keeps the step controller warm across windows."""

    def __init__(self, system: CompetitiveSystem, k: int, cfg: IntegratorConfig = DEFAULT_CONFIG):
        self.system = system
        self.k = k
        self._integ = _Integrator(_variational_rhs(system, k), system.n, cfg)

    def run(self, x, V, T):
        n = self.system.n
        y = np.concatenate([x, V.reshape(x.shape[:-1] + (n * self.k,))], axis=-1)
        y = self._integ.run(y, float(T))
        return y[..., :n], y[..., n:].reshape(x.shape[:-1] + (n, self.k))


def variational_flow(system: CompetitiveSystem, x0, frame, T: float,
                     cfg: IntegratorConfig = DEFAULT_CONFIG):
    """(phi_T x0, Dphi_T(x0) frame), integrating base and tangent jointly.

    ``frame`` is an (n, k) array whose columns are tangent vectors at x0
    (a 1-D vector is treated as a single column and returned as such).
    """
    x0 = _check_state(system, x0)
    frame = np.asarray(frame, dtype=float)
    squeeze = frame.ndim == x0.ndim
    if squeeze:
        frame = frame[..., None]
    if frame.shape[-2] != system.n:
        raise InvalidStateError("tangent frame rows must match the system dimension")
    x, V = VariationalIntegrator(system, frame.shape[-1], cfg).run(x0, frame, T)
    return x, (V[..., 0] if squeeze else V)


def face_preserved(traj: Trajectory, I) -> bool:
    """True if every state keeps coordinates in I exactly zero."""
    face = list(as_face(I, traj.states.shape[-1]))
    return bool(np.all(traj.states[..., face] == 0.0))
