"""Rest points, Lyapunov exponents (internal/external), gap and permanence checks.

Ergodic measures are represented by samples: Dirac measures at located rest
points and empirical measures along long trajectory tails on a face.  Every
result computed from such samples is labelled "sample-based".
"""
from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidStateError, NumericalFailure
from .flow import DEFAULT_CONFIG, IntegratorConfig, VariationalIntegrator, trajectory
from .linalg import eigvals
from .sysmodel import (
    CompetitiveSystem,
    LotkaVolterraSystem,
    all_faces,
    as_face,
    axial_rest_points,
    complement,
    halton_points,
    zero_pattern,
)

log = logging.getLogger(__name__)

REST_RESIDUAL_TOL = 1e-10
DEDUP_TOL = 1e-8
DELTA_FACE = 1e-6
NONNEG_SLACK = 1e-6


class FaceExitWarning(UserWarning):
    """An orbit meant to stay inside a face interior came within delta_face of its boundary."""


@dataclass
class RestPoint:
    location: np.ndarray
    face: tuple[int, ...]
    eigenvalues: np.ndarray
    residual: float

    def as_dict(self) -> dict:
        return {
            "location": self.location.tolist(),
            "face": list(self.face),
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "residual": self.residual,
        }


def make_rest_point(system: CompetitiveSystem, x) -> RestPoint:
    x = np.asarray(x, dtype=float)
    return RestPoint(
        location=x,
        face=zero_pattern(x),
        eigenvalues=eigvals(system.jacobian(x)),
        residual=float(np.linalg.norm(system.vector_field(x))),
    )


def _newton_face(system, keep, z0, tol=1e-13, max_iter=50):
    """Newton on f_keep(z) = 0 for the surviving coordinates; returns z or None."""
    n = system.n
    x = np.zeros(n)
    z = z0.copy()
    for _ in range(max_iter):
        x[keep] = z
        g = system.growth(x)[keep]
        if np.max(np.abs(g)) < tol:
            return z
        J = system.growth_jacobian(x)[np.ix_(keep, keep)]
        try:
            dz = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError:
            return None
        # damp to stay in the open face
        lam = 1.0
        while np.any(z + lam * dz <= 0) and lam > 1e-4:
            lam *= 0.5
        z = z + lam * dz
        if np.any(z <= 0) or not np.all(np.isfinite(z)):
            return None
    x[keep] = z
    return z if np.max(np.abs(system.growth(x)[keep])) < 1e-10 else None


def find_rest_points(system: CompetitiveSystem, seeds_per_axis: int = 5) -> list[RestPoint]:
    """All rest points, one search per face.

    Lotka-Volterra faces are solved directly from a_{I'I'} x = b_{I'};
    general systems use Newton from a seed grid on each face.  The origin and
    the axial points are always included.
    """
    key = ("rest_points", seeds_per_axis)
    if key in system.cache:
        return list(system.cache[key])
    n = system.n
    found: list[np.ndarray] = [np.zeros(n)]
    axial = axial_rest_points(system)
    found.extend(axial)
    box = 1.5 * axial.max()
    for face in all_faces(n, max_size=n - 2):
        keep = list(complement(face, n))
        if isinstance(system, LotkaVolterraSystem):
            A = system.a[np.ix_(keep, keep)]
            try:
                if np.linalg.cond(A) > 1e12:
                    raise np.linalg.LinAlgError
                z = np.linalg.solve(A, system.b[keep])
            except np.linalg.LinAlgError:
                log.info("face %s: no isolated interior face equilibrium (singular matrix)", face)
                continue
            candidates = [z] if np.all(z > 0) else []
        else:
            grid = np.linspace(box / (seeds_per_axis + 1), box, seeds_per_axis)
            candidates = []
            for seed in itertools.product(grid, repeat=len(keep)):
                z = _newton_face(system, keep, np.array(seed))
                if z is None:
                    log.debug("face %s: Newton did not converge from seed %s", face, seed)
                    continue
                candidates.append(z)
        for z in candidates:
            x = np.zeros(n)
            x[keep] = z
            if all(np.max(np.abs(x - y)) > DEDUP_TOL for y in found):
                found.append(x)
    points = [make_rest_point(system, x) for x in found]
    points.sort(key=lambda p: (-len(p.face), tuple(-p.location)))
    system.cache[key] = points
    return list(points)


# ----------------------------------------------------------------- exponents

@dataclass
class ExponentReport:
    face: tuple[int, ...]
    internal: np.ndarray                 # ascending, length |I'|
    external: dict[int, float]           # species i in I -> lambda^(i)
    methods: dict[str, str] = field(default_factory=dict)
    kind: str = "dirac"

    def all_exponents(self) -> np.ndarray:
        """Internal and external exponents merged, ascending with multiplicity."""
        return np.sort(np.concatenate([self.internal, list(self.external.values())]))

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "face": list(self.face),
            "internal": [float(v) for v in self.internal],
            "external": {str(i): float(v) for i, v in self.external.items()},
            "methods": self.methods,
        }


def exponents_at_rest_point(system: CompetitiveSystem, p: RestPoint) -> ExponentReport:
    """Lyapunov exponents of the Dirac measure at a rest point.

    Rows of DF for species on the face reduce to f_i(p) e_i, so those values
    are the external exponents; the internal ones are the real parts of the
    eigenvalues of the surviving block.
    """
    if p.residual >= REST_RESIDUAL_TOL:
        raise InvalidStateError(f"not a rest point: residual {p.residual:.2e}")
    keep = list(complement(p.face, system.n))
    DF = system.jacobian(p.location)
    internal = np.sort(eigvals(DF[np.ix_(keep, keep)]).real) if keep else np.zeros(0)
    f = system.growth(p.location)
    external = {i: float(f[i]) for i in p.face}
    return ExponentReport(p.face, internal, external,
                          {"internal": "eigenvalues", "external": "closed-form"}, "dirac")


def _check_face_interior(x0, face, n):
    keep = list(complement(face, n))
    x0 = np.asarray(x0, dtype=float)
    if face and np.any(x0[list(face)] != 0):
        raise InvalidStateError(f"start point is not on face {list(face)}")
    if np.any(x0[keep] <= 0):
        raise InvalidStateError(f"start point is not interior to face {list(face)}")
    return x0, keep


def external_exponent_birkhoff(system: CompetitiveSystem, I, i: int, x0, T: float,
                               cfg: IntegratorConfig = DEFAULT_CONFIG, transient: float | None = None,
                               dt_sample: float = 0.02, delta_face: float = DELTA_FACE) -> float:
    """Time average of f_i along the orbit of x0 over [T0, T] (trapezoid rule).

    For i in I the i-th tangent coordinate obeys eta' = f_i(phi_t x) eta, so
    this average is the i-th external exponent of the orbit's measure.
    """
    face = as_face(I, system.n)
    if i not in face:
        raise InvalidStateError(f"species {i} is not on the face {list(face)}")
    x0, keep = _check_face_interior(x0, face, system.n)
    T0 = 0.5 * T if transient is None else transient
    traj = trajectory(system, x0, T, dt_sample, cfg)
    tail = traj.times >= T0 - 1e-12
    states = traj.states[tail]
    if np.min(states[:, keep]) < delta_face:
        warnings.warn(f"orbit on face {list(face)} came within {delta_face:g} of the face boundary",
                      FaceExitWarning, stacklevel=2)
    vals = system.growth(states)[:, i]
    times = traj.times[tail]
    return float(np.trapezoid(vals, times) / (times[-1] - times[0]))


def external_exponent_tangent(system: CompetitiveSystem, I, i: int, x0, T: float,
                              cfg: IntegratorConfig = DEFAULT_CONFIG, transient: float | None = None,
                              tau: float = 1.0) -> float:
    """Log-growth rate over [T0, T] of the i-th coordinate of Dphi_t e_i.

    The vector is renormalized every ``tau`` so long runs do not overflow.
    """
    face = as_face(I, system.n)
    if i not in face:
        raise InvalidStateError(f"species {i} is not on the face {list(face)}")
    x, _ = _check_face_interior(x0, face, system.n)
    T0 = 0.5 * T if transient is None else transient
    integ = VariationalIntegrator(system, 1, cfg)
    V = np.zeros((system.n, 1))
    V[i, 0] = 1.0
    t, log_growth = 0.0, 0.0
    for t_end in _window_edges(T0, T, tau):
        x, V = integ.run(x, V, t_end - t)
        if t_end > T0 + 1e-12:
            log_growth += np.log(abs(V[i, 0]))
        scale = abs(V[i, 0])
        if scale == 0:
            raise NumericalFailure("tangent coordinate collapsed to zero")
        V = V / scale
        t = t_end
    return float(log_growth / (T - T0))


def _window_edges(T0, T, tau):
    """Window end times covering [0, T] with a boundary exactly at T0."""
    edges = []
    for a, b in ((0.0, T0), (T0, T)):
        if b - a <= 0:
            continue
        k = max(1, int(np.ceil((b - a) / tau - 1e-9)))
        edges.extend(a + (b - a) * np.arange(1, k + 1) / k)
    return edges


def internal_exponents_qr(system: CompetitiveSystem, I, x0, k: int | None = None, T: float = 200.0,
                          cfg: IntegratorConfig = DEFAULT_CONFIG, tau: float = 1.0,
                          transient: float | None = None) -> np.ndarray:
    """Top-k internal exponents by discrete QR (Benettin) along the orbit of x0.

    An orthonormal k-frame in V_I is evolved by the variational flow over
    windows of length ``tau`` and re-orthonormalized; log |R_jj| is averaged
    over [transient, T] (default transient T/10, for frame alignment).
    Returned ascending.
    """
    transient = 0.1 * T if transient is None else float(transient)
    face = as_face(I, system.n)
    x, keep = _check_face_interior(x0, face, system.n)
    k = len(keep) if k is None else int(k)
    if not 1 <= k <= len(keep):
        raise ValueError(f"k must be in [1, {len(keep)}]")
    n = system.n
    V = np.zeros((n, k))
    V[keep[:k], np.arange(k)] = 1.0
    if k < len(keep):
        # a generic frame so the top-k directions are reached
        rng = np.random.default_rng(12345)
        V[keep, :] = np.linalg.qr(rng.normal(size=(len(keep), k)))[0]
    integ = VariationalIntegrator(system, k, cfg)
    sums = np.zeros(k)
    t = 0.0
    for w, t_end in enumerate(_window_edges(transient, T, tau)):
        x, V = integ.run(x, V, t_end - t)
        Q, R = np.linalg.qr(V[keep, :])
        d = np.abs(np.diag(R))
        if np.any(d < 1e-300):
            raise NumericalFailure(f"tangent frame degenerated in window {w}")
        signs = np.sign(np.diag(R))
        signs[signs == 0] = 1
        V = np.zeros((n, k))
        V[keep, :] = Q * signs
        if t_end > transient + 1e-12:
            sums += np.log(d)
        t = t_end
    return np.sort(sums / (T - transient))


# --------------------------------------------------------- ergodic samples

@dataclass
class ErgodicSample:
    kind: str                              # "dirac" or "empirical"
    face: tuple[int, ...]
    rest_point: RestPoint | None = None
    start: np.ndarray | None = None        # first tail state (empirical)
    tail: np.ndarray | None = None         # tail states (empirical)
    duration: float = 0.0
    valid: bool = True

    @property
    def label(self) -> str:
        if self.kind == "dirac":
            return f"dirac@{np.round(self.rest_point.location, 6).tolist()}"
        return f"empirical@face{list(self.face)}"


def dirac_samples(system: CompetitiveSystem, include_origin: bool = False) -> list[ErgodicSample]:
    out = []
    for p in find_rest_points(system):
        if not include_origin and not np.any(p.location > 0):
            continue
        out.append(ErgodicSample("dirac", p.face, rest_point=p))
    return out


def empirical_sample(system: CompetitiveSystem, I, x0, T_transient: float, T_tail: float,
                     cfg: IntegratorConfig = DEFAULT_CONFIG, dt_sample: float = 0.5,
                     delta_face: float = DELTA_FACE) -> ErgodicSample:
    face = as_face(I, system.n)
    x0, keep = _check_face_interior(x0, face, system.n)
    traj = trajectory(system, x0, T_transient + T_tail, dt_sample, cfg)
    tail = traj.states[traj.times >= T_transient - 1e-12]
    valid = bool(np.min(tail[:, keep]) >= delta_face)
    if not valid:
        warnings.warn(f"empirical tail on face {list(face)} touches the face boundary; sample invalid",
                      FaceExitWarning, stacklevel=2)
    return ErgodicSample("empirical", face, start=tail[0], tail=tail, duration=T_tail, valid=valid)


def face_start_point(system: CompetitiveSystem, I, seed: int = 0, index: int = 0) -> np.ndarray:
    """A deterministic quasi-random interior point of face I inside the join box."""
    face = as_face(I, system.n)
    keep = list(complement(face, system.n))
    hi = axial_rest_points(system).max(axis=0)[keep]
    z = halton_points(index + 1, 0.1 * hi, hi, seed)[index]
    x = np.zeros(system.n)
    x[keep] = z
    return x


def default_ergodic_samples(system: CompetitiveSystem, T: float = 200.0, seed: int = 0,
                            cfg: IntegratorConfig = DEFAULT_CONFIG, boundary_only: bool = False) -> list[ErgodicSample]:
    """Dirac measures at nonzero rest points plus one empirical tail per face with >= 2 species."""
    samples = dirac_samples(system)
    for face in all_faces(system.n, max_size=system.n - 2):
        if boundary_only and not face:
            continue
        x0 = face_start_point(system, face, seed)
        samples.append(empirical_sample(system, face, x0, 0.5 * T, 0.5 * T, cfg))
    if boundary_only:
        samples = [s for s in samples if s.face]
    return samples


def exponents_for_sample(system: CompetitiveSystem, sample: ErgodicSample,
                         cfg: IntegratorConfig = DEFAULT_CONFIG, tau: float = 1.0,
                         dt_sample: float = 0.02) -> ExponentReport:
    if sample.kind == "dirac":
        return exponents_at_rest_point(system, sample.rest_point)
    face = sample.face
    T = sample.duration
    internal = internal_exponents_qr(system, face, sample.start, None, T, cfg, tau)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FaceExitWarning)
        external = {i: external_exponent_birkhoff(system, face, i, sample.start, T, cfg, 0.0, dt_sample)
                    for i in face}
    return ExponentReport(face, internal, external,
                          {"internal": "qr", "external": "birkhoff", "provenance": "sample-based"},
                          "empirical")


# --------------------------------------------------------- verdict helpers

@dataclass
class GapCheck:
    margin: float
    holds: bool
    smallest: float
    second: float


def benaim_gap_check(report, k: int, eta: float = 1e-3) -> GapCheck:
    """Lambda_1 - (k+1) Lambda_2 < -eta over the merged exponents.

    Exponents are taken sorted with multiplicity, so a repeated smallest
    exponent gives Lambda_2 = Lambda_1.
    """
    values = report.all_exponents() if isinstance(report, ExponentReport) else np.sort(np.asarray(report, float))
    if values.size < 2:
        raise ValueError("gap check needs at least two exponents")
    l1, l2 = float(values[0]), float(values[1])
    margin = l1 - (k + 1) * l2
    return GapCheck(margin, bool(margin < -eta), l1, l2)


@dataclass
class NonnegativityResult:
    holds: bool
    min_external: float
    witness: str | None
    per_sample: list[tuple[str, float]]

    def as_dict(self) -> dict:
        return {
            "holds": self.holds,
            "min_external": self.min_external,
            "witness": self.witness,
            "per_sample": [{"measure": lab, "min_external": v} for lab, v in self.per_sample],
            "provenance": "sample-based",
        }


def external_nonnegativity_check(system: CompetitiveSystem, samples: list[ErgodicSample],
                                 cfg: IntegratorConfig = DEFAULT_CONFIG) -> NonnegativityResult:
    """All external exponents of the sampled boundary measures are >= -1e-6."""
    per = []
    for s in samples:
        if not s.face or not s.valid:
            continue
        rep = exponents_for_sample(system, s, cfg)
        per.append((s.label, min(rep.external.values())))
    if not per:
        return NonnegativityResult(True, float("inf"), None, [])
    lab, worst = min(per, key=lambda t: t[1])
    return NonnegativityResult(bool(worst >= -NONNEG_SLACK), float(worst), lab, per)


# --------------------------------------------------------------- permanence

@dataclass
class PermanenceResult:
    face: tuple[int, ...]
    per_start: np.ndarray
    starts: np.ndarray

    @property
    def summary(self) -> float:
        return float(self.per_start.min())

    def as_dict(self) -> dict:
        return {
            "face": list(self.face),
            "summary": self.summary,
            "per_start": [float(v) for v in self.per_start],
            "provenance": "sample-based",
        }


def permanence_probe(system: CompetitiveSystem, I=(), n_starts: int = 100, T: float = 500.0,
                     cfg: IntegratorConfig = DEFAULT_CONFIG, seed: int = 0,
                     dt_sample: float = 0.5, box_hi: float | None = None) -> PermanenceResult:
    """Min over t in [T/2, T] of the smallest surviving coordinate, per start.

    Starts are quasi-random in the face interior, at least 1e-4 from its boundary.
    """
    face = as_face(I, system.n)
    keep = list(complement(face, system.n))
    if not keep:
        raise InvalidStateError("face has no surviving species")
    hi = 2.0 * axial_rest_points(system).max() if box_hi is None else box_hi
    X0 = np.zeros((n_starts, system.n))
    X0[:, keep] = halton_points(n_starts, np.full(len(keep), 1e-4), np.full(len(keep), hi), seed)
    traj = trajectory(system, X0, T, dt_sample, cfg)
    late = traj.times >= 0.5 * T - 1e-12
    mins = traj.states[late][:, :, keep].min(axis=(0, 2))
    return PermanenceResult(face, mins, X0)

