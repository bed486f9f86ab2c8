"""Competitive systems x_i' = x_i f_i(x) on the nonnegative orthant.

Species are indexed from 0.  A *face* is the tuple ``I`` of species forced to
zero; its complement (the surviving species) is ``complement(I, n)``.  All
systems evaluate ``growth`` and ``growth_jacobian`` on arrays of shape
``(..., n)`` so whole point clouds can be pushed through at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import AssumptionViolation, InvalidStateError

NEGATIVE_TOL = 1e-12
FACE_TOL = 1e-12
HYPOTHESIS_A_SLACK = 1e-10
AXIAL_SCAN_LO = 1e-8
AXIAL_SCAN_HI = 1e3
AXIAL_NEWTON_TOL = 1e-12


# --------------------------------------------------------------------- faces

def as_face(I: Iterable[int], n: int) -> tuple[int, ...]:
    """Normalize a species index set to a sorted tuple, checking its range."""
    face = tuple(sorted({int(i) for i in I}))
    for i in face:
        if not 0 <= i < n:
            raise InvalidStateError(f"species index {i} out of range for n={n}")
    return face


def complement(I: Iterable[int], n: int) -> tuple[int, ...]:
    face = set(as_face(I, n))
    return tuple(j for j in range(n) if j not in face)


def zero_pattern(x, tol: float = 0.0) -> tuple[int, ...]:
    x = np.asarray(x, dtype=float)
    return tuple(int(i) for i in np.flatnonzero(x <= tol))


def all_faces(n: int, max_size: int | None = None) -> list[tuple[int, ...]]:
    """Every face with at least one surviving species, ordered by size then lexicographically."""
    from itertools import combinations

    top = n - 1 if max_size is None else min(max_size, n - 1)
    return [c for size in range(top + 1) for c in combinations(range(n), size)]


def halton_points(n_points: int, lo, hi, seed: int = 0) -> np.ndarray:
    """Deterministic scrambled Halton points in the box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = max(lo.size, hi.size)
    lo = np.broadcast_to(lo, (d,))
    hi = np.broadcast_to(hi, (d,))
    sampler = qmc.Halton(d=d, scramble=True, seed=seed)
    return lo + (hi - lo) * sampler.random(n_points)


# ------------------------------------------------------------------- systems

class CompetitiveSystem:
    """Base contract: subclasses provide ``n``, ``growth`` and ``growth_jacobian``."""

    n: int
    name: str = "system"

    def growth(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def growth_jacobian(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # Unchecked fast paths used inside the integrators.
    def vector_field(self, x: np.ndarray) -> np.ndarray:
        return x * self.growth(x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        f = self.growth(x)
        J = x[..., :, None] * self.growth_jacobian(x)
        idx = np.arange(self.n)
        J[..., idx, idx] += f
        return J

    def scaled(self, c: float) -> "CompetitiveSystem":
        """The system with f replaced by c*f (a time rescaling)."""
        return FunctionalSystem(
            self.n,
            lambda x: c * self.growth(x),
            lambda x: c * self.growth_jacobian(x),
            name=f"{c}*{self.name}",
        )

    @property
    def cache(self) -> dict:
        if "_cache" not in self.__dict__:
            self.__dict__["_cache"] = {}
        return self.__dict__["_cache"]


class FunctionalSystem(CompetitiveSystem):
    """A system given by user callables for f and its Jacobian.

    Both callables must accept arrays of shape ``(..., n)``.
    """

    def __init__(self, n: int, growth: Callable, growth_jacobian: Callable, name: str = "functional"):
        if n < 1:
            raise InvalidStateError("system dimension must be positive")
        self.n = int(n)
        self._growth = growth
        self._growth_jacobian = growth_jacobian
        self.name = name

    def growth(self, x):
        return np.asarray(self._growth(np.asarray(x, dtype=float)), dtype=float)

    def growth_jacobian(self, x):
        return np.asarray(self._growth_jacobian(np.asarray(x, dtype=float)), dtype=float)


class LotkaVolterraSystem(CompetitiveSystem):
    """x_i' = x_i (b_i - sum_j a_ij x_j) with b > 0 and a > 0 entrywise."""

    def __init__(self, b: Sequence[float], a, name: str = "lotka_volterra", validate: bool = True):
        b = np.array(b, dtype=float)
        a = np.array(a, dtype=float)
        if b.ndim != 1 or a.shape != (b.size, b.size):
            raise InvalidStateError(f"b has length {b.size} but a has shape {a.shape}")
        if validate:
            if np.any(b <= 0):
                raise InvalidStateError("Lotka-Volterra growth rates b must be positive")
            if np.any(a <= 0):
                raise InvalidStateError("Lotka-Volterra interaction matrix a must be positive")
        b.setflags(write=False)
        a.setflags(write=False)
        self.n = b.size
        self.b = b
        self.a = a
        self.name = name

    def growth(self, x):
        return self.b - np.asarray(x, dtype=float) @ self.a.T

    def growth_jacobian(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-self.a, x.shape[:-1] + self.a.shape).copy()

    def scaled(self, c):
        return LotkaVolterraSystem(c * self.b, c * self.a, name=f"{c}*{self.name}")

    def __repr__(self):
        return f"LotkaVolterraSystem(b={self.b.tolist()}, a={self.a.tolist()})"


class MayLeonardSystem(LotkaVolterraSystem):
    """Three species with cyclic interaction rows (1, alpha, beta)."""

    def __init__(self, alpha: float, beta: float, check: bool = True):
        if check and not (0 < beta < 1 < alpha and alpha + beta > 2):
            raise InvalidStateError(
                f"May-Leonard parameters need 0 < beta < 1 < alpha and alpha + beta > 2, "
                f"got alpha={alpha}, beta={beta}"
            )
        a = [[1.0, alpha, beta], [beta, 1.0, alpha], [alpha, beta, 1.0]]
        super().__init__(np.ones(3), a, name="may_leonard")
        self.alpha = float(alpha)
        self.beta = float(beta)

    def __repr__(self):
        return f"MayLeonardSystem(alpha={self.alpha}, beta={self.beta})"


def weak_coupling_lv(n: int = 3, coupling: float = 0.1) -> LotkaVolterraSystem:
    """b = 1, a = I + coupling*(J - I): the standard well-behaved benchmark."""
    a = np.full((n, n), coupling) + (1.0 - coupling) * np.eye(n)
    return LotkaVolterraSystem(np.ones(n), a, name="weak_coupling")


class RestrictedSystem(CompetitiveSystem):
    """Subsystem on the face C_I acting on the surviving coordinates only."""

    def __init__(self, parent: CompetitiveSystem, I):
        self.parent = parent
        self.face = as_face(I, parent.n)
        self.keep = np.array(complement(self.face, parent.n), dtype=int)
        if self.keep.size == 0:
            raise InvalidStateError("cannot restrict to a face with no surviving species")
        self.n = self.keep.size
        self.name = f"{parent.name}|I={list(self.face)}"

    def embed(self, z):
        z = np.asarray(z, dtype=float)
        x = np.zeros(z.shape[:-1] + (self.parent.n,))
        x[..., self.keep] = z
        return x

    def growth(self, z):
        return self.parent.growth(self.embed(z))[..., self.keep]

    def growth_jacobian(self, z):
        D = self.parent.growth_jacobian(self.embed(z))
        return D[..., self.keep[:, None], self.keep[None, :]]


def restrict_to_face(system: CompetitiveSystem, I) -> CompetitiveSystem:
    """The subsystem on C_I, with coordinates indexed by the surviving species.

    Restricting a Lotka-Volterra system deletes rows/columns and stays
    Lotka-Volterra.
    """
    face = as_face(I, system.n)
    keep = complement(face, system.n)
    if not keep:
        raise InvalidStateError("face has no surviving species")
    if not face:
        return system
    if isinstance(system, LotkaVolterraSystem):
        k = np.array(keep)
        return LotkaVolterraSystem(system.b[k], system.a[np.ix_(k, k)], name=f"{system.name}|I={list(face)}")
    if isinstance(system, RestrictedSystem):
        # compose restrictions so the parent chain stays one level deep
        parent_face = set(system.face) | {int(system.keep[i]) for i in face}
        return RestrictedSystem(system.parent, parent_face)
    return RestrictedSystem(system, face)


# --------------------------------------------------------------- evaluations

def _check_point(system: CompetitiveSystem, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (system.n,):
        raise InvalidStateError(f"expected points of dimension {system.n}, got shape {x.shape}")
    if np.any(x < -NEGATIVE_TOL):
        raise InvalidStateError(f"point has a negative coordinate: min {x.min():.3e}")
    return np.maximum(x, 0.0)


def eval_vector_field(system: CompetitiveSystem, x) -> np.ndarray:
    """F(x) with F_i = x_i f_i(x)."""
    return system.vector_field(_check_point(system, x))


def eval_jacobian(system: CompetitiveSystem, x) -> np.ndarray:
    """DF(x) = diag(f(x)) + diag(x) Df(x)."""
    return system.jacobian(_check_point(system, x))


def _check_on_face(x: np.ndarray, face: tuple[int, ...]):
    if face and np.any(np.abs(x[..., list(face)]) > FACE_TOL):
        raise InvalidStateError(f"point is not on the face I={list(face)}")


def face_jacobian_block(system: CompetitiveSystem, x, I) -> np.ndarray:
    """The I' x I' block of DF(x) for x on the face C_I."""
    x = _check_point(system, x)
    face = as_face(I, system.n)
    _check_on_face(x, face)
    keep = np.array(complement(face, system.n))
    return system.jacobian(x)[..., keep[:, None], keep[None, :]]


# ------------------------------------------------------- axial & join points

def axial_rest_point(system: CompetitiveSystem, i: int, r_scan: float = AXIAL_SCAN_HI) -> np.ndarray:
    """Locate x^(i): the positive root of t -> f_i(t e_i).

    The axis is scanned on a log grid over [1e-8, r_scan] for the first sign
    change, then refined by Newton's method kept inside the bracket.
    """
    key = ("axial", int(i), float(r_scan))
    if key in system.cache:
        return system.cache[key].copy()
    n = system.n
    if not 0 <= i < n:
        raise InvalidStateError(f"species index {i} out of range")
    e = np.zeros(n)
    e[i] = 1.0

    def g(t):
        return system.growth(np.multiply.outer(np.atleast_1d(t), e))[..., i]

    def dg(t):
        return system.growth_jacobian(t * e)[i, i]

    grid = np.geomspace(AXIAL_SCAN_LO, r_scan, 600)
    vals = g(grid)
    if vals[0] <= 0:
        raise AssumptionViolation(f"f_{i} is not positive near the origin along axis {i}")
    change = np.flatnonzero((vals[:-1] > 0) & (vals[1:] <= 0))
    if change.size == 0:
        raise AssumptionViolation(f"no root of f_{i} on axis {i} within [{AXIAL_SCAN_LO}, {r_scan}]")
    lo, hi = grid[change[0]], grid[change[0] + 1]
    if vals[change[0] + 1] == 0:
        t = hi
    else:
        t = 0.5 * (lo + hi)
        for _ in range(200):
            gt = g(t)[0]
            if abs(gt) < AXIAL_NEWTON_TOL:
                break
            if gt > 0:
                lo = t
            else:
                hi = t
            d = dg(t)
            step = t - gt / d if d != 0 else np.nan
            t = step if lo < step < hi else 0.5 * (lo + hi)
            if hi - lo <= 4 * np.finfo(float).eps * hi:
                break
        # a few plain Newton polishes; the bracket guarantees we are in the basin
        for _ in range(3):
            d = dg(t)
            gt = g(t)[0]
            if gt == 0 or d == 0:
                break
            t_new = t - gt / d
            if abs(g(t_new)[0]) >= abs(gt):
                break
            t = t_new
    point = t * e
    system.cache[key] = point
    return point.copy()


def axial_rest_points(system: CompetitiveSystem) -> np.ndarray:
    """Row i is x^(i)."""
    return np.array([axial_rest_point(system, i) for i in range(system.n)])


def join_point(system: CompetitiveSystem, I=()) -> np.ndarray:
    """Componentwise maximum x^[I] of the axial rest points of the surviving species."""
    face = as_face(I, system.n)
    if len(face) > system.n - 1:
        raise InvalidStateError("join point needs at least one surviving species")
    x = np.zeros(system.n)
    for j in complement(face, system.n):
        x[j] = axial_rest_point(system, j)[j]
    return x


# ----------------------------------------------------------- hypothesis (A)

@dataclass
class HypothesisAReport:
    margins: np.ndarray
    holds: bool
    slack: float = HYPOTHESIS_A_SLACK
    method: str = "general"

    @property
    def min_margin(self) -> float:
        return float(np.min(self.margins))

    @property
    def worst_index(self) -> int:
        return int(np.argmin(self.margins))

    def as_dict(self) -> dict:
        return {
            "margins": [float(m) for m in self.margins],
            "min_margin": self.min_margin,
            "holds": bool(self.holds),
            "slack": self.slack,
            "method": self.method,
        }


def check_hypothesis_A(system: CompetitiveSystem, slack: float = HYPOTHESIS_A_SLACK) -> HypothesisAReport:
    """Evaluate f_i at the join of all axial points except the i-th.

    x^[i] is read as x^[{i}], the join over j != i.  Equality is allowed, so the
    verdict tolerates ``slack`` of float noise.
    """
    margins = np.empty(system.n)
    for i in range(system.n):
        margins[i] = system.growth(join_point(system, (i,)))[i]
    return HypothesisAReport(margins, bool(margins.min() >= -slack), slack, "general")


def check_hypothesis_A_lv(lv: LotkaVolterraSystem, slack: float = HYPOTHESIS_A_SLACK) -> HypothesisAReport:
    """Closed form: b_i - sum_{j != i} a_ij b_j / a_jj."""
    ratio = lv.b / np.diag(lv.a)
    off = lv.a - np.diag(np.diag(lv.a))
    margins = lv.b - off @ ratio
    return HypothesisAReport(margins, bool(margins.min() >= -slack), slack, "lotka_volterra_closed_form")


# ---------------------------------------------------- strong competitiveness

@dataclass
class CompetitivenessReport:
    holds: bool
    worst_offdiagonal: float
    witness: tuple | None = None          # (x, i, j) maximizing df_i/dx_j, i != j
    rest_point_diagonals: list = field(default_factory=list)  # (location, diag of Df, all negative)

    @property
    def standing_assumption_2(self) -> bool:
        return all(ok for _, _, ok in self.rest_point_diagonals)


def verify_strong_competitiveness(system: CompetitiveSystem, box=None, samples: int = 256, seed: int = 0,
                                  rest_points: Sequence | None = None) -> CompetitivenessReport:
    """Sample df_i/dx_j (i != j) on a box in C and report the largest value.

    ``box`` is ``(lo, hi)``; the default is [0, 2 x^[0]] where x^[0] joins all
    axial points.  The diagonal of Df is also checked at the nonzero rest
    points (located with the spectrum module unless given).
    """
    n = system.n
    if box is None:
        lo, hi = np.zeros(n), 2.0 * join_point(system)
    else:
        lo, hi = box
    X = halton_points(samples, lo, hi, seed)
    D = system.growth_jacobian(X)
    off = ~np.eye(n, dtype=bool)
    vals = np.where(off, D, -np.inf)
    flat = np.argmax(vals.reshape(samples, -1), axis=1)
    per_point = vals.reshape(samples, -1)[np.arange(samples), flat]
    k = int(np.argmax(per_point))
    worst = float(per_point[k])
    i, j = divmod(int(flat[k]), n)
    witness = (X[k], i, j)

    if rest_points is None:
        from .spectrum import find_rest_points

        rest_points = [p.location for p in find_rest_points(system) if np.any(p.location > 0)]
    diagonals = []
    for loc in rest_points:
        d = np.diag(system.growth_jacobian(np.asarray(loc, dtype=float)))
        diagonals.append((np.asarray(loc, dtype=float), d, bool(np.all(d < 0))))
    return CompetitivenessReport(worst < 0, worst, witness, diagonals)
