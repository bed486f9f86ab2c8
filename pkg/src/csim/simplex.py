"""Carrying simplex reconstruction as a radial graph over the unit simplex.

Every ray from the origin through a direction u of the unit simplex meets the
carrying simplex once, at r(u) u.  ``reconstruct_sigma`` brackets r on every
mesh ray with an outer shell (flows inward by dissipativity) and an inner
shell (flows outward because 0 repels), re-projecting both shells onto the
mesh rays after every time increment.

Radii are measured in the l1 sense: the point on ray u at radius r is r*u,
so sum(r*u) = r.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import cKDTree

from .errors import InvalidStateError, ReconstructionError
from .flow import DEFAULT_CONFIG, IntegratorConfig, _Integrator, flow, trajectory
from .sysmodel import (
    CompetitiveSystem,
    all_faces,
    axial_rest_points,
    complement,
    halton_points,
    join_point,
    restrict_to_face,
)

log = logging.getLogger(__name__)

UNORDER_SLACK = 1e-9
FACE_BOUND_SLACK = 1e-9


# ---------------------------------------------------------------------- mesh

class BarycentricMesh:
    """Points k/m of the unit simplex with integer numerators k summing to m.

    Points are ordered lexicographically by their integer numerators.  Piecewise
    linear interpolation uses the Kuhn triangulation of the cumulative-sum
    coordinates c_j = k_1 + ... + k_j, which is simplicial on this lattice.
    """

    def __init__(self, n: int, m: int):
        if n < 1 or m < 1:
            raise ValueError("mesh needs n >= 1 and m >= 1")
        self.n, self.m = int(n), int(m)
        ints = []
        for bars in itertools.combinations(range(m + n - 1), n - 1):
            edges = (-1,) + bars + (m + n - 1,)
            ints.append([edges[j + 1] - edges[j] - 1 for j in range(n)])
        self.ints = np.array(ints, dtype=int).reshape(-1, n)
        self.points = self.ints / m
        self.index = {tuple(k): i for i, k in enumerate(self.ints.tolist())}
        self.supports = [tuple(np.flatnonzero(k).tolist()) for k in self.ints]
        if n > 1:
            self._lookup = np.full((m + 1,) * (n - 1), -1, dtype=int)
            cum = np.cumsum(self.ints, axis=1)[:, : n - 1]
            self._lookup[tuple(cum.T)] = np.arange(len(self.ints))
        self._neighbors = None

    def __len__(self):
        return len(self.ints)

    @property
    def neighbors(self) -> list[list[int]]:
        """Indices reachable by moving one unit between two coordinates."""
        if self._neighbors is None:
            nbrs = []
            for k in self.ints:
                row = []
                for i in range(self.n):
                    if k[i] == 0:
                        continue
                    for j in range(self.n):
                        if j != i:
                            q = k.copy()
                            q[i] -= 1
                            q[j] += 1
                            row.append(self.index[tuple(q.tolist())])
                nbrs.append(row)
            self._neighbors = nbrs
        return self._neighbors

    def face_members(self, support) -> np.ndarray:
        """Indices whose support is exactly ``support``."""
        support = tuple(support)
        return np.array([i for i, s in enumerate(self.supports) if s == support], dtype=int)

    def closure_members(self, support) -> np.ndarray:
        allowed = set(support)
        return np.array([i for i, s in enumerate(self.supports) if set(s) <= allowed], dtype=int)

    def cells(self) -> np.ndarray:
        """Vertex indices of the Kuhn simplices (one row per top-dimensional cell)."""
        m, d = self.m, self.n - 1
        if d == 0:
            return np.zeros((1, 1), dtype=int)
        cum = np.cumsum(self.ints, axis=1)[:, :d]
        out = []
        for perm in itertools.permutations(range(d)):
            V = [cum]
            for j in perm:
                nxt = V[-1].copy()
                nxt[:, j] += 1
                V.append(nxt)
            V = np.stack(V, axis=1)                               # (N, n, d)
            valid = (V.max(axis=(1, 2)) <= m) & np.all(np.diff(V, axis=2) >= 0, axis=(1, 2))
            V = V[valid]
            out.append(self._lookup[tuple(np.moveaxis(V, 2, 0))])
        return np.concatenate(out, axis=0)

    def locate(self, U):
        """Vertex indices and barycentric weights of the mesh simplices containing U."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        N, n, m = U.shape[0], self.n, self.m
        if n == 1:
            return np.zeros((N, 1), dtype=int), np.ones((N, 1))
        U = np.maximum(U, 0.0)
        U = U / U.sum(axis=1, keepdims=True)
        c = np.clip(m * np.cumsum(U, axis=1)[:, : n - 1], 0.0, m)
        base = np.minimum(np.floor(c), m - 1).astype(int)
        frac = c - base
        d = n - 1
        pos = np.broadcast_to(np.arange(d), frac.shape)
        order = np.lexsort((-pos, -frac), axis=-1)
        fs = np.take_along_axis(frac, order, axis=1)
        verts = np.empty((N, n, d), dtype=int)
        verts[:, 0] = base
        for j in range(1, n):
            verts[:, j] = verts[:, j - 1]
            verts[np.arange(N), j, order[:, j - 1]] += 1
        w = np.empty((N, n))
        w[:, 0] = 1.0 - fs[:, 0]
        w[:, 1:d] = fs[:, : d - 1] - fs[:, 1:]
        w[:, d] = fs[:, d - 1]
        idx = self._lookup[tuple(np.moveaxis(verts, 2, 0))]
        bad = idx < 0
        if np.any(bad):
            if np.any(w[bad] > 1e-12):
                raise InvalidStateError("direction outside the simplex mesh")
            idx = np.where(bad, idx[:, :1], idx)
        return idx, w


# --------------------------------------------------------------------- graph

def _mesh_node(mesh: BarycentricMesh, x, tol: float = 1e-12):
    """Index of the mesh ray through x, or None if x lies between rays."""
    u = np.asarray(x, dtype=float) / np.sum(x)
    k = np.rint(u * mesh.m)
    if np.max(np.abs(u * mesh.m - k)) > tol * mesh.m:
        return None
    return mesh.index.get(tuple(int(v) for v in k))


@dataclass
class RadialGraph:
    """Radii on the mesh rays, optionally refined by anchor points known to lie on the surface.

    Anchors (nonzero rest points, in state coordinates) that fall strictly
    between mesh rays are inserted into the interpolation by star-splitting
    the Kuhn cell that contains them; all other cells are unchanged.
    """
    mesh: BarycentricMesh
    radii: np.ndarray
    bracket_width: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)
    anchors: np.ndarray | None = None

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=float)
        if self.bracket_width is None:
            self.bracket_width = np.zeros_like(self.radii)
        A = np.zeros((0, self.mesh.n)) if self.anchors is None else np.atleast_2d(np.asarray(self.anchors, float))
        A = A.reshape(-1, self.mesh.n)
        self.anchors = A[[_mesh_node(self.mesh, a) is None for a in A]] if len(A) else A
        self._interp_cache = {}

    @classmethod
    def from_function(cls, mesh: BarycentricMesh, fn) -> "RadialGraph":
        return cls(mesh, np.array([fn(u) for u in mesh.points], dtype=float))

    @property
    def n(self) -> int:
        return self.mesh.n

    def points(self) -> np.ndarray:
        return self.radii[:, None] * self.mesh.points

    def nodes(self) -> np.ndarray:
        """Mesh points followed by the anchor points."""
        return np.vstack([self.points(), self.anchors])

    def _dirs(self) -> np.ndarray:
        D = np.vstack([self.mesh.points, self.anchors / self.anchors.sum(axis=1, keepdims=True)])
        return D[:, : self.n - 1]

    def _split_cells(self) -> dict:
        """Kuhn cells containing an anchor, mapped to their star-split pieces (node indices)."""
        if "split" in self._interp_cache:
            return self._interp_cache["split"]
        split = {}
        if len(self.anchors) and self.n >= 2:
            cells = self.mesh.cells()
            D = self._dirs()
            N = len(self.mesh)
            for j in range(len(self.anchors)):
                lam = _barycentric(D[cells], np.broadcast_to(D[N + j], (len(cells), self.n - 1)))
                for c in np.flatnonzero(np.all(lam >= -1e-12, axis=1)):
                    key = tuple(sorted(cells[c].tolist()))
                    pieces = split.get(key, [cells[c]])
                    out = []
                    for piece in pieces:
                        w = _barycentric(D[piece][None], D[N + j][None])[0]
                        if np.all(w >= -1e-12):
                            for v in np.flatnonzero(w > 1e-12):
                                q = piece.copy()
                                q[v] = N + j
                                out.append(q)
                        else:
                            out.append(piece)
                    split[key] = out
        self._interp_cache["split"] = split
        return split

    def radius_at(self, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        idx, w = self.mesh.locate(U)
        out = np.sum(w * self.radii[idx], axis=1)
        split = self._split_cells()
        if not split:
            return out
        D = self._dirs()
        vals = np.concatenate([self.radii, self.anchors.sum(axis=1)])
        Us = np.maximum(U, 0.0)
        Us = Us / Us.sum(axis=1, keepdims=True)
        for k, row in enumerate(idx):
            pieces = split.get(tuple(sorted(row.tolist())))
            if pieces is None:
                continue
            P = np.array(pieces)
            lam = _barycentric(D[P], np.broadcast_to(Us[k, : self.n - 1], (len(P), self.n - 1)))
            hit = int(np.argmax(lam.min(axis=1)))
            out[k] = lam[hit] @ vals[P[hit]]
        return out

    def surface_simplices(self) -> np.ndarray:
        """Vertex indices (into ``nodes()``) of the top-dimensional cells of the interpolated surface."""
        cells = self.mesh.cells()
        split = self._split_cells()
        if not split:
            return cells
        keep = [c for c in cells if tuple(sorted(c.tolist())) not in split]
        pieces = [q for qs in split.values() for q in qs]
        return np.array(keep + pieces, dtype=int)


def _barycentric(V: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of x[k] in the simplex V[k] (rows are vertices); NaN if degenerate."""
    K, nv, d = V.shape
    A = np.concatenate([np.swapaxes(V, 1, 2), np.ones((K, 1, nv))], axis=1)
    b = np.concatenate([x, np.ones((K, 1))], axis=1)
    out = np.full((K, nv), np.nan)
    ok = np.abs(np.linalg.det(A)) > 1e-300
    if np.any(ok):
        out[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]
    return out


def _point_simplex_distance(Q: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Euclidean distance from each Q[k] to the simplex with vertex rows V[k] (vectorized).

    The nearest point lies in the relative interior of some face; every face
    is tried by an unconstrained affine projection and the feasible ones kept.
    """
    K, nv, _ = V.shape
    best = np.full(K, np.inf)
    for size in range(1, nv + 1):
        for sub in itertools.combinations(range(nv), size):
            base = V[:, sub[0]]
            if size == 1:
                best = np.minimum(best, np.linalg.norm(Q - base, axis=1))
                continue
            E = V[:, list(sub[1:])] - base[:, None, :]            # (K, size-1, n)
            G = E @ np.swapaxes(E, 1, 2)
            rhs = np.einsum("kij,kj->ki", E, Q - base)
            det_ok = np.abs(np.linalg.det(G)) > 1e-24
            if not np.any(det_ok):
                continue
            lam = np.zeros((K, size - 1))
            lam[det_ok] = np.linalg.solve(G[det_ok], rhs[det_ok][..., None])[..., 0]
            feasible = det_ok & np.all(lam >= -1e-12, axis=1) & (lam.sum(axis=1) <= 1 + 1e-12)
            proj = base + np.einsum("ki,kij->kj", lam, E)
            d = np.linalg.norm(Q - proj, axis=1)
            best = np.where(feasible, np.minimum(best, d), best)
    return best


# ------------------------------------------------------------ reconstruction

def _reproject(mesh: BarycentricMesh, Y: np.ndarray, faces, anchors=None) -> tuple[np.ndarray, int]:
    """Radii on the mesh rays of the surface through the flowed cloud Y.

    ``anchors`` are fixed points known to lie on the surface; each one joins
    the cloud of every face whose closure contains it.
    """
    N = len(Y)
    if anchors is not None and len(anchors):
        Y = np.vstack([Y, anchors])
        anchor_support = [set(np.flatnonzero(a > 0).tolist()) for a in anchors]
    else:
        anchor_support = []
    s = Y.sum(axis=1)
    W = Y / s[:, None]
    r = np.empty(len(mesh))
    fallbacks = 0
    for support, interior, closure in faces:
        extra = [N + j for j, sup in enumerate(anchor_support) if sup <= set(support)]
        if extra:
            closure = np.concatenate([closure, extra])
        if len(support) == 1:
            r[interior] = s[interior]
        elif len(support) == 2:
            a = support[0]
            t = W[closure, a]
            order = np.argsort(t, kind="stable")
            r[interior] = np.interp(mesh.points[interior, a], t[order], s[closure][order])
        else:
            cols = list(support[:-1])
            interp = LinearNDInterpolator(W[np.ix_(closure, cols)], s[closure])
            vals = interp(mesh.points[np.ix_(interior, cols)])
            miss = ~np.isfinite(vals)
            if np.any(miss):
                fallbacks += int(miss.sum())
                near = NearestNDInterpolator(W[np.ix_(closure, cols)], s[closure])
                vals[miss] = near(mesh.points[np.ix_(interior[miss], cols)])
            r[interior] = vals
    return r, fallbacks


def _default_outer(system):
    return 2.0 * float(np.sum(join_point(system)))


def _validate_shell(system, U, radius, outward: bool, tries: int = 4) -> float:
    """Grow (outer) or shrink (inner) the shell until the l1 radial velocity has the right sign."""
    for _ in range(tries + 1):
        rate = system.vector_field(radius * U).sum(axis=1)
        if (np.all(rate < 0) and not outward) or (np.all(rate > 0) and outward):
            return radius
        radius = radius / 2.0 if outward else radius * 2.0
    kind = "inner" if outward else "outer"
    raise ReconstructionError(f"could not place the {kind} shell so the flow crosses it in the right direction")


def backward_side(system: CompetitiveSystem, Q, below: float, above: float, T_max: float = 300.0,
                  cfg: IntegratorConfig = DEFAULT_CONFIG, chunk: float = 2.0) -> np.ndarray:
    """Which side of the carrying simplex each point of Q lies on: -1 below, +1 above, 0 undecided.

    Below the surface the backward orbit falls into the origin's repelling
    neighbourhood (sum < ``below``); above it the backward orbit escapes
    (sum > ``above``).  The field is divided by 1 + sum(x), which keeps the
    orbits and removes the finite-time blow-up of escaping backward orbits.
    """
    X = np.array(Q, dtype=float)
    side = np.zeros(len(X), dtype=int)
    active = np.arange(len(X))

    def rhs(y):
        return -system.vector_field(y) / (1.0 + y.sum(axis=-1, keepdims=True))

    integ = _Integrator(rhs, system.n, cfg)
    t = 0.0
    while len(active) and t < T_max:
        X = integ.run(X, chunk)
        t += chunk
        s = X.sum(axis=1)
        lo, hi = s < below, s > above
        side[active[lo]] = -1
        side[active[hi]] = 1
        keep = ~(lo | hi)
        active, X = active[keep], X[keep]
    return side


def _polish_radii(system, U, r, free_rays, below, above, tol, cfg, probes: int = 7, max_rounds: int = 40):
    """Shrink a per-ray bracket [lo, hi] around the surface by backward-time classification."""
    lo = np.maximum(r * 0.95, below)
    hi = r * 1.05
    rays = np.asarray(free_rays, dtype=int)
    # confirm the initial bracket ends, widening where needed
    for _ in range(20):
        pts = np.concatenate([lo[rays, None], hi[rays, None]], axis=1)
        side = backward_side(system, (pts[..., None] * U[rays, None, :]).reshape(-1, U.shape[1]),
                             below, above, cfg=cfg).reshape(-1, 2)
        bad_lo, bad_hi = side[:, 0] != -1, side[:, 1] != 1
        if not (bad_lo.any() or bad_hi.any()):
            break
        lo[rays[bad_lo]] = np.maximum(below, lo[rays[bad_lo]] - 0.5 * (hi[rays[bad_lo]] - lo[rays[bad_lo]]))
        hi[rays[bad_hi]] = hi[rays[bad_hi]] + 0.5 * (hi[rays[bad_hi]] - lo[rays[bad_hi]])
    else:
        raise ReconstructionError("could not bracket the surface by backward classification",
                                  rays=rays[bad_lo | bad_hi].tolist())
    frac = np.arange(1, probes + 1) / (probes + 1)
    stalled = np.zeros(len(U), dtype=bool)
    for _ in range(max_rounds):
        work = rays[(hi[rays] - lo[rays] >= tol) & ~stalled[rays]]
        if len(work) == 0:
            break
        R = lo[work, None] + (hi[work] - lo[work])[:, None] * frac
        side = backward_side(system, (R[..., None] * U[work, None, :]).reshape(-1, U.shape[1]),
                             below, above, cfg=cfg).reshape(R.shape)
        for row, i in enumerate(work):
            b = np.flatnonzero(side[row] == -1)
            a = np.flatnonzero(side[row] == 1)
            if len(b):
                lo[i] = R[row, b[-1]]
            if len(a):
                hi[i] = R[row, a[0]]
            if len(a) == 0 and len(b) == 0:
                stalled[i] = True   # every probe within reach of the classification horizon
    return lo, hi


def reconstruct_sigma(system: CompetitiveSystem, m: int = 20, R_outer: float | None = None,
                      eps_inner: float | None = None, T_sweep: float = 200.0, tol_hausdorff: float = 1e-6,
                      cfg: IntegratorConfig = DEFAULT_CONFIG, dt_sweep: float = 1.0,
                      anchor_rest_points: bool = True, polish: bool = True) -> RadialGraph:
    """Two-sided radial shell sweep; returns the midpoint graph with per-ray bracket widths.

    With ``anchor_rest_points`` the nonzero rest points, which lie on the
    surface exactly, are held fixed: a rest point on a mesh ray pins that
    ray's radius, and one between rays is added to every re-projection cloud
    and to the returned graph's interpolation.  Near an interior node with
    close internal rates the surface can be only slightly better than C^1,
    and a piecewise-linear mesh alone then misses the node's radius by O(h).

    With ``polish`` every remaining ray is then refined by bisection on the
    backward-time side test (``backward_side``) until its bracket is narrower
    than ``tol_hausdorff``; the reported widths are those brackets.

    Zero coordinates stay exactly zero under the flow, so the rays on a face of
    the simplex evolve by that face's subsystem; re-projection is done face by
    face using only the cloud points of the face's closure.
    """
    n = system.n
    mesh = BarycentricMesh(n, m)
    U = mesh.points
    R = _validate_shell(system, U, R_outer if R_outer is not None else _default_outer(system), outward=False)
    eps = eps_inner if eps_inner is not None else 1e-2 * float(np.min(np.diag(axial_rest_points(system))))
    eps = _validate_shell(system, U, eps, outward=True)

    faces = []
    for face in all_faces(n):
        support = complement(face, n)
        faces.append((support, mesh.face_members(support), mesh.closure_members(support)))

    pinned, free = [], []
    if anchor_rest_points:
        from .spectrum import find_rest_points
        for rp in find_rest_points(system):
            if np.sum(rp.location) <= 0:
                continue
            node = _mesh_node(mesh, rp.location)
            (free.append(rp.location) if node is None else pinned.append((node, float(np.sum(rp.location)))))
    free = np.array(free).reshape(-1, n)
    pin_idx = np.array([i for i, _ in pinned], dtype=int)
    pin_r = np.array([r for _, r in pinned])

    outer = np.full(len(mesh), R)
    inner = np.full(len(mesh), eps)
    t, sweeps, fallbacks = 0.0, 0, 0
    history = []
    width = outer - inner
    while True:
        Y_out = flow(system, outer[:, None] * U, dt_sweep, cfg)
        Y_in = flow(system, inner[:, None] * U, dt_sweep, cfg)
        outer, fb1 = _reproject(mesh, Y_out, faces, free)
        inner, fb2 = _reproject(mesh, Y_in, faces, free)
        outer[pin_idx] = pin_r
        inner[pin_idx] = pin_r
        fallbacks += fb1 + fb2
        t += dt_sweep
        sweeps += 1
        width = outer - inner
        history.append(float(np.max(np.abs(width))))
        if np.any(width < -max(tol_hausdorff, 1e-12)):
            bad = np.flatnonzero(width < -tol_hausdorff).tolist()
            raise ReconstructionError(
                f"non-monotone bracket on {len(bad)} rays (inner above outer); tolerance too tight for m={m}",
                rays=bad,
            )
        if np.max(np.abs(width)) < tol_hausdorff:
            break
        if t >= T_sweep - 1e-12:
            bad = np.flatnonzero(np.abs(width) >= tol_hausdorff).tolist()
            graph = RadialGraph(mesh, 0.5 * (outer + inner), np.abs(width), anchors=free)
            raise ReconstructionError(
                f"brackets did not contract below {tol_hausdorff:g} on {len(bad)} rays within T_sweep={T_sweep}",
                graph=graph, rays=bad,
            )
    if fallbacks:
        log.warning("reprojection used nearest-neighbour fallback %d times", fallbacks)
    radii = 0.5 * (outer + inner)
    width = np.abs(outer - inner)
    sweep_shift = 0.0
    if polish:
        # the sweep converges to a fixed point of flow + interpolation, which near
        # points of low smoothness sits O(h) away from the surface; backward-time
        # classification on each ray removes that bias
        free_rays = np.setdiff1d(np.arange(len(mesh)), pin_idx)
        vertex = np.array([len(sp) == 1 for sp in mesh.supports])
        free_rays = free_rays[~vertex[free_rays]]
        lo, hi = _polish_radii(system, U, radii, free_rays, eps, R, tol_hausdorff, cfg)
        polished = radii.copy()
        polished[free_rays] = 0.5 * (lo[free_rays] + hi[free_rays])
        width[free_rays] = hi[free_rays] - lo[free_rays]
        sweep_shift = float(np.max(np.abs(polished - radii)))
        radii = polished
    meta = {
        "m": m, "R_outer": R, "eps_inner": eps, "T_sweep": T_sweep, "dt_sweep": dt_sweep,
        "tol_hausdorff": tol_hausdorff, "sweep_time": t, "sweeps": sweeps,
        "max_bracket_width": float(np.max(width)), "width_history": history,
        "polished": polish, "sweep_shift": sweep_shift,
        "interpolation_fallbacks": fallbacks, "pinned_rays": pin_idx.tolist(), "anchors": free.tolist(),
    }
    return RadialGraph(mesh, radii, width, meta, anchors=free)


# ------------------------------------------------------------------- checks

@dataclass
class InvarianceResidual:
    max: float
    per_point: np.ndarray


def radial_excess(graph: RadialGraph, Q) -> np.ndarray:
    """sum(q) - r(q/|q|): positive above the graph, negative below (0 maps to -inf)."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    s = Q.sum(axis=1)
    out = np.full(len(Q), -np.inf)
    nz = s > 0
    if np.any(nz):
        out[nz] = s[nz] - graph.radius_at(Q[nz] / s[nz, None])
    return out


def surface_distance(graph: RadialGraph, Q) -> np.ndarray:
    """Euclidean distance from each point of Q to the interpolated surface.

    The radial gap bounds the distance from above, so only cells with a
    vertex within that gap plus the longest cell edge are examined.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    nodes = graph.nodes()
    cells = graph.surface_simplices()
    edge = max(float(np.max(np.linalg.norm(nodes[cells[:, i]] - nodes[cells[:, j]], axis=1)))
               for i in range(cells.shape[1]) for j in range(i))
    if cells.shape[1] == 1:
        return np.linalg.norm(Q - nodes[cells[0]], axis=1)
    gap = np.abs(radial_excess(graph, Q))
    gap = np.where(np.isfinite(gap), gap, np.linalg.norm(Q, axis=1))
    incident = [[] for _ in range(len(nodes))]
    for c, row in enumerate(cells):
        for v in row:
            incident[v].append(c)
    tree = cKDTree(nodes)
    pairs_q, pairs_c = [], []
    for k, near in enumerate(tree.query_ball_point(Q, gap * 1.000001 + edge)):
        cand = {c for v in near for c in incident[v]}
        pairs_q.extend([k] * len(cand))
        pairs_c.extend(cand)
    pairs_q = np.array(pairs_q, dtype=int)
    d = _point_simplex_distance(Q[pairs_q], nodes[cells[np.array(pairs_c, dtype=int)]])
    out = np.full(len(Q), np.inf)
    np.minimum.at(out, pairs_q, d)
    return out


def invariance_residual(graph: RadialGraph, system: CompetitiveSystem, dt_probe: float = 0.1,
                        cfg: IntegratorConfig = DEFAULT_CONFIG) -> InvarianceResidual:
    """Euclidean distance from phi_dt(graph point) to the interpolated surface, per mesh point."""
    Y = flow(system, graph.points(), dt_probe, cfg)
    d = surface_distance(graph, Y)
    return InvarianceResidual(float(d.max()), d)


def unorderedness_check(graph: RadialGraph, slack: float = UNORDER_SLACK, chunk: int = 256) -> list[tuple[int, int]]:
    """Pairs (i, j) with x_i << x_j on the support of x_j (and x_i inside that face)."""
    P = graph.points()
    zero = graph.mesh.ints == 0
    N = len(P)
    pairs = []
    for start in range(0, N, chunk):
        J = np.arange(start, min(N, start + chunk))
        diff = P[J][:, None, :] - P[None, :, :]          # x_j - x_i
        on_support = ~zero[J][:, None, :]
        ok = np.where(on_support, diff > slack, zero[None, :, :])
        hit = np.all(ok, axis=2)
        jj, ii = np.nonzero(hit)
        pairs.extend((int(i), int(J[j])) for j, i in zip(jj, ii))
    return pairs


@dataclass
class FaceConsistency:
    face: tuple[int, ...]
    max_discrepancy: float
    face_bound_holds: bool | None
    face_bound_excess: float | None


def face_consistency_check(graph: RadialGraph, system: CompetitiveSystem, **reconstruct_kw) -> list[FaceConsistency]:
    """Compare each embedded face with an independent reconstruction of that face's subsystem.

    Also checks the face bound y <= x^[I] on the surviving coordinates for every
    graph point on the face C_I with 1 <= |I| <= n-2.
    """
    mesh = graph.mesh
    n, m = mesh.n, mesh.m
    kw = {k: v for k, v in graph.metadata.items() if k in ("T_sweep", "tol_hausdorff", "dt_sweep")}
    kw.update(reconstruct_kw)
    P = graph.points()
    out = []
    for face in all_faces(n):
        if not face:
            continue
        keep = list(complement(face, n))
        sub = restrict_to_face(system, face)
        closure = mesh.closure_members(keep)
        if len(keep) == 1:
            sub_r = np.array([axial_rest_points(sub)[0, 0]])
            sub_idx = np.zeros(len(closure), dtype=int)
        else:
            sub_graph = reconstruct_sigma(sub, m, **kw)
            sub_r = sub_graph.radii
            sub_idx = np.array([sub_graph.mesh.index[tuple(k)] for k in mesh.ints[closure][:, keep].tolist()])
        disc = float(np.max(np.abs(graph.radii[closure] - sub_r[sub_idx])))
        bound, excess = None, None
        if 1 <= len(face) <= n - 2:
            bound = join_point(system, face)[keep]
            exc = P[np.ix_(closure, keep)] - bound
            excess = float(exc.max())
            bound = bool(excess <= FACE_BOUND_SLACK)
        out.append(FaceConsistency(face, disc, bound, excess))
    return out


@dataclass
class HullCheck:
    holds: bool
    entered: int
    remained: int
    samples: int
    max_excess: float


def hull_check(graph: RadialGraph, system: CompetitiveSystem, samples: int = 100, T: float = 100.0,
               T_extra: float = 20.0, box: float | None = None, seed: int = 0, tol: float = 1e-3,
               cfg: IntegratorConfig = DEFAULT_CONFIG, dt_check: float = 1.0) -> HullCheck:
    """Random starts in [0, box]^n flowed for T must lie under the graph and stay there for T_extra.

    Membership is per ray: q is inside when sum(q) <= r(q/sum(q)) + tol.
    """
    n = system.n
    box = 3.0 * float(np.max(join_point(system))) if box is None else box
    X0 = halton_points(samples, np.zeros(n), np.full(n, box), seed)
    XT = flow(system, X0, T, cfg)
    entered = radial_excess(graph, XT) <= tol
    traj = trajectory(system, XT, T_extra, dt_check, cfg)
    ex = np.stack([radial_excess(graph, S) for S in traj.states])
    remained = np.all(ex <= tol, axis=0)
    max_ex = float(np.max(ex[np.isfinite(ex)], initial=-np.inf))
    return HullCheck(bool(np.all(entered & remained)), int(entered.sum()), int(remained.sum()), samples, max_ex)


# ------------------------------------------------------------ C1 diagnostic

@dataclass
class C1Report:
    max_angle: float
    normals: dict
    degenerate: list[int]


def c1_diagnostic(graph: RadialGraph) -> C1Report:
    """Least-squares tangent planes at interior mesh points; max angle between adjacent normals."""
    mesh = graph.mesh
    if mesh.m < 8:
        raise ValueError("c1_diagnostic needs mesh resolution m >= 8")
    P = graph.points()
    interior = [i for i, s in enumerate(mesh.supports) if len(s) == mesh.n]
    normals, degenerate = {}, []
    for i in interior:
        nb = P[[i] + mesh.neighbors[i]]
        X = nb - nb.mean(axis=0)
        _, sv, Vt = np.linalg.svd(X)
        if sv.size < mesh.n - 1 or sv[mesh.n - 2] <= 1e-12 * sv[0]:
            degenerate.append(i)
            continue
        nrm = Vt[-1]
        normals[i] = nrm if nrm.sum() >= 0 else -nrm
    worst = 0.0
    for i, nrm in normals.items():
        for j in mesh.neighbors[i]:
            if j > i and j in normals:
                chord = np.linalg.norm(nrm - normals[j])
                worst = max(worst, 2.0 * math.asin(min(1.0, 0.5 * chord)))
    return C1Report(worst, normals, degenerate)


def c1_refinement_sequence(system: CompetitiveSystem, resolutions=(10, 20, 40), **kw) -> list[float]:
    return [c1_diagnostic(reconstruct_sigma(system, m, **kw)).max_angle for m in resolutions]


# ------------------------------------------------------------------- CSV IO

def export_graph(graph: RadialGraph, destination) -> None:
    """CSV with header b1..bn,r,x1..xn,bracket_width in mesh (lexicographic) order."""
    path = Path(destination)
    n, m = graph.mesh.n, graph.mesh.m
    header = [f"b{j + 1}" for j in range(n)] + ["r"] + [f"x{j + 1}" for j in range(n)] + ["bracket_width"]
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, r, bw in zip(graph.mesh.ints.tolist(), graph.radii.tolist(), graph.bracket_width.tolist()):
                w.writerow(k + [repr(r)] + [repr(r * kj / m) for kj in k] + [repr(bw)])
    except OSError as exc:
        raise OSError(f"could not write simplex mesh to {path}: {exc}") from exc


def read_graph_csv(source) -> RadialGraph:
    path = Path(source)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n = sum(1 for h in header if h.startswith("b") and h[1:].isdigit())
    ints = np.array([[int(v) for v in row[:n]] for row in body], dtype=int)
    m = int(ints[0].sum())
    mesh = BarycentricMesh(n, m)
    if not np.array_equal(mesh.ints, ints):
        raise ValueError(f"{path}: rows are not the lexicographic mesh of n={n}, m={m}")
    radii = np.array([float(row[n]) for row in body])
    width = np.array([float(row[-1]) for row in body])
    return RadialGraph(mesh, radii, width, {"m": m, "source": str(path)})
