"""Smoothness certificates for the carrying simplex, evaluated on sampled attractors.

For each face I with at least two surviving species the attractor A_I is
replaced by a finite sample (orbit tails plus the face's interior rest
points).  Over that sample we take

    lambda_I = max lambda(x),  lambda(x) = top eigenvalue of sym(-DF^I(x))
    d_I      = min d(x),       d(x)      = sqrt(min_{i != j} dF_i/dx_j * dF_j/dx_i)
    N_I      = max ||DF^I(x)||

and test  (C1) k N_I < 2(k+1) d_I  and  (C2) k lambda_I < 2(k+1) d_I.
Everything is sample-based; a report never claims more than that.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFaceError
from .flow import DEFAULT_CONFIG, IntegratorConfig, trajectory
from .linalg import jacobi_eigh, spectral_norm
from .spectrum import (
    DELTA_FACE,
    FaceExitWarning,
    GapCheck,
    benaim_gap_check,
    default_ergodic_samples,
    exponents_at_rest_point,
    exponents_for_sample,
    find_rest_points,
    permanence_probe,
)
from .sysmodel import (
    CompetitiveSystem,
    MayLeonardSystem,
    all_faces,
    as_face,
    axial_rest_points,
    check_hypothesis_A,
    complement,
    face_jacobian_block,
    halton_points,
)

SAMPLE_DEDUP = 1e-6
PERMANENCE_FLOOR = 1e-3


class SamplingWarning(UserWarning):
    """Attractor sample is unreliable (face subsystem does not look permanent)."""


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CSIM_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------ pointwise maps

def lambda_at(system: CompetitiveSystem, x, I=()) -> float:
    """Largest eigenvalue of the symmetric part of -DF^I(x)."""
    J = face_jacobian_block(system, x, I)
    return float(jacobi_eigh(-0.5 * (J + J.T))[0][-1])


def d_at(system: CompetitiveSystem, x, I=()) -> float:
    """Square root of the smallest product of paired cross partials of F on the face."""
    J = face_jacobian_block(system, x, I)
    k = J.shape[0]
    if k < 2:
        raise DegenerateFaceError("d(x) needs at least two surviving species")
    iu, ju = np.triu_indices(k, 1)
    prod = J[iu, ju] * J[ju, iu]
    worst = float(prod.min())
    if not worst > 0:
        pair = int(np.argmin(prod))
        raise DegenerateFaceError(
            f"cross-partial product {worst:.3e} <= 0 for surviving pair "
            f"{complement(as_face(I, system.n), system.n)[iu[pair]]},"
            f"{complement(as_face(I, system.n), system.n)[ju[pair]]}; point too close to the face boundary"
        )
    return math.sqrt(worst)


def spectral_norm_df(system: CompetitiveSystem, x, I=()) -> float:
    return spectral_norm(face_jacobian_block(system, x, I))


# ------------------------------------------------------------ attractor samples

@dataclass
class AttractorSample:
    face: tuple[int, ...]
    points: np.ndarray
    starts: np.ndarray
    transient: float
    duration: float
    dropped: int = 0
    reliable: bool = True
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "face": list(self.face),
            "n_points": int(len(self.points)),
            "transient": self.transient,
            "duration": self.duration,
            "dropped": self.dropped,
            "reliable": self.reliable,
            "warnings": list(self.warnings),
        }


def _dedup(P: np.ndarray, tol: float) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in P:
        if not kept or np.min(np.max(np.abs(np.array(kept) - p), axis=1)) > tol:
            kept.append(p)
    return np.array(kept).reshape(-1, P.shape[1])


def sample_attractor(system: CompetitiveSystem, I=(), n_starts: int = 8, T_transient: float = 200.0,
                     T_sample: float = 50.0, cfg: IntegratorConfig = DEFAULT_CONFIG, seed: int = 0,
                     dt_sample: float = 0.5, delta_face: float = DELTA_FACE,
                     check_permanence: bool = True) -> AttractorSample:
    """Orbit tails of quasi-random face starts plus the face's interior rest points."""
    n = system.n
    face = as_face(I, n)
    keep = list(complement(face, n))
    if len(keep) < 2:
        raise ValueError("attractor samples are taken on faces with at least two surviving species")
    notes = []
    hi = axial_rest_points(system).max(axis=0)[keep]
    X0 = np.zeros((n_starts, n))
    X0[:, keep] = halton_points(n_starts, 0.1 * hi, hi, seed)
    traj = trajectory(system, X0, T_transient + T_sample, dt_sample, cfg)
    tail = traj.states[traj.times >= T_transient - 1e-12].reshape(-1, n)
    rest = [p.location for p in find_rest_points(system) if p.face == face]
    P = np.vstack([tail] + [np.atleast_2d(r) for r in rest])
    inside = np.min(P[:, keep], axis=1) >= delta_face
    dropped = int((~inside).sum())
    if dropped:
        msg = f"face {list(face)}: {dropped} tail points within {delta_face:g} of the face boundary were dropped"
        notes.append(msg)
        warnings.warn(msg, FaceExitWarning, stacklevel=2)
    P = _dedup(P[inside], SAMPLE_DEDUP)
    reliable = True
    if check_permanence:
        probe = permanence_probe(system, face, n_starts=n_starts, T=T_transient + T_sample, cfg=cfg, seed=seed)
        if probe.summary < PERMANENCE_FLOOR:
            reliable = False
            msg = (f"face {list(face)}: subsystem does not look permanent "
                   f"(min surviving coordinate {probe.summary:.2e}); sample unreliable")
            notes.append(msg)
            warnings.warn(msg, SamplingWarning, stacklevel=2)
    if len(P) == 0:
        reliable = False
        notes.append(f"face {list(face)}: no sample points left")
    return AttractorSample(face, P, X0, T_transient, T_sample, dropped, reliable, notes)


# ------------------------------------------------------------ certificate

@dataclass
class FaceCertificate:
    face: tuple[int, ...]
    sup_norm_df: float
    lambda_I: float
    d_I: float
    c1_lhs: float
    c2_lhs: float
    rhs: float
    c1_holds: bool
    c2_holds: bool
    n_points: int
    reliable: bool
    gap: GapCheck | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def passes(self) -> bool:
        return self.c1_holds or self.c2_holds

    def as_dict(self) -> dict:
        out = {
            "face": list(self.face),
            "sup_norm_df": self.sup_norm_df,
            "lambda_I": self.lambda_I,
            "d_I": self.d_I,
            "c1": {"lhs": self.c1_lhs, "rhs": self.rhs, "holds": self.c1_holds},
            "c2": {"lhs": self.c2_lhs, "rhs": self.rhs, "holds": self.c2_holds},
            "n_points": self.n_points,
            "reliable": self.reliable,
            "notes": list(self.notes),
            "provenance": "sample-based",
        }
        if self.gap is not None:
            out["gap_route"] = {"margin": self.gap.margin, "holds": self.gap.holds,
                                "lambda_1": self.gap.smallest, "lambda_2": self.gap.second}
        return out


@dataclass
class CertificateReport:
    k: int
    eta: float
    hypothesis_A: bool
    hypothesis_A_margin: float
    faces: list[FaceCertificate]
    verdict: str            # "C1", "C<k+1>" or "none"
    gap_route_holds: bool | None
    caveats: list[str] = field(default_factory=list)

    @property
    def wording(self) -> str:
        if self.verdict == "none":
            return "no certificate"
        return f"{self.verdict} certificate holds on samples"

    def face(self, I) -> FaceCertificate:
        key = tuple(sorted(I))
        for rec in self.faces:
            if rec.face == key:
                return rec
        raise KeyError(key)

    def as_dict(self) -> dict:
        return {
            "k": self.k,
            "eta": self.eta,
            "hypothesis_A": {"holds": self.hypothesis_A, "min_margin": self.hypothesis_A_margin},
            "faces": [f.as_dict() for f in self.faces],
            "verdict": self.verdict,
            "wording": self.wording,
            "gap_route_holds": self.gap_route_holds,
            "caveats": list(self.caveats),
            "provenance": "sample-based",
        }


def face_certificate(system: CompetitiveSystem, sample: AttractorSample, k: int) -> FaceCertificate:
    face = sample.face
    notes = list(sample.warnings)
    norms, lams, ds = [], [], []
    for x in sample.points:
        norms.append(spectral_norm_df(system, x, face))
        lams.append(lambda_at(system, x, face))
        try:
            ds.append(d_at(system, x, face))
        except DegenerateFaceError as exc:
            notes.append(str(exc))
    reliable = sample.reliable and bool(ds)
    N = max(norms) if norms else float("nan")
    lam = max(lams) if lams else float("nan")
    d = min(ds) if ds else float("nan")
    rhs = 2.0 * (k + 1) * d
    return FaceCertificate(face, N, lam, d, k * N, k * lam, rhs,
                           bool(k * N < rhs), bool(k * lam < rhs), len(sample.points), reliable, None, notes)


def _gap_by_face(system, k, eta, T, seed, cfg) -> dict:
    """Worst (largest) gap margin over the sampled ergodic measures living on each face."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FaceExitWarning)
        samples = default_ergodic_samples(system, T=T, seed=seed, cfg=cfg)
    worst: dict = {}
    for s in samples:
        if not s.valid or len(complement(s.face, system.n)) < 2:
            continue
        g = benaim_gap_check(exponents_for_sample(system, s, cfg), k, eta)
        if s.face not in worst or g.margin > worst[s.face].margin:
            worst[s.face] = g
    return worst


def certify(system: CompetitiveSystem, k: int = 1, eta: float = 1e-3, n_starts: int = 8,
            T_transient: float = 200.0, T_sample: float = 50.0, seed: int = 0,
            cfg: IntegratorConfig = DEFAULT_CONFIG, gap_route: bool = True, T_gap: float = 200.0) -> CertificateReport:
    """Hypothesis (A) for k = 0; for k >= 1 also (C1)/(C2) on every face with two or more survivors.

    The gap route (smallest exponent minus k+1 times the second, per sampled
    ergodic measure) is reported beside the (C) test but does not change the
    verdict.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    A = check_hypothesis_A(system)
    caveats = ["estimates are extrema over finite attractor samples"]
    if k == 0:
        return CertificateReport(0, eta, A.holds, A.min_margin, [], "C1" if A.holds else "none", None, caveats)

    faces = all_faces(system.n, max_size=system.n - 2)

    def one(face):
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            sample = sample_attractor(system, face, n_starts, T_transient, T_sample, cfg, seed)
        return face_certificate(system, sample, k)

    records = _map(one, faces)
    gap_holds = None
    if gap_route:
        gaps = _gap_by_face(system, k, eta, T_gap, seed, cfg)
        for rec in records:
            rec.gap = gaps.get(rec.face)
        gap_holds = all(g.holds for g in gaps.values()) if gaps else None

    unreliable = [r.face for r in records if not r.reliable]
    for face in unreliable:
        caveats.append(f"face {list(face)} unreliable; certificate withheld")
    if A.holds and not unreliable and all(r.passes for r in records):
        verdict = f"C{k + 1}"
    elif A.holds and not unreliable:
        verdict = "C1"
    else:
        verdict = "none"
    return CertificateReport(k, eta, A.holds, A.min_margin, records, verdict, gap_holds, caveats)


# ------------------------------------------------------------ May-Leonard rule

def may_leonard_degree(alpha: float) -> int | None:
    """Largest l >= 1 with alpha < 1 + 1/l, or None when alpha >= 2."""
    alpha = float(alpha)
    if not alpha > 1.0:
        raise ValueError("May-Leonard degree needs alpha > 1")
    if alpha >= 2.0:
        return None
    l = max(1, math.ceil(1.0 / (alpha - 1.0)) - 1)
    while alpha < 1.0 + 1.0 / (l + 1):
        l += 1
    while l > 1 and not alpha < 1.0 + 1.0 / l:
        l -= 1
    return l


def may_leonard_gap_checks(alpha: float, beta: float, l: int | None = None, eta: float = 0.0) -> list[tuple[str, GapCheck]]:
    """Gap check with k + 1 = l at every nonzero rest point (Dirac measure) of the May-Leonard system."""
    if l is None:
        l = may_leonard_degree(alpha)
        if l is None:
            raise ValueError("alpha >= 2: no degree to check")
    system = MayLeonardSystem(alpha, beta)
    out = []
    for p in find_rest_points(system):
        if not np.any(p.location > 0):
            continue
        rep = exponents_at_rest_point(system, p)
        out.append((f"dirac@{np.round(p.location, 6).tolist()}", benaim_gap_check(rep, l - 1, eta)))
    return out
