import itertools
import math

import numpy as np
import pytest
from conftest import random_lv
from hypothesis import given, settings
from hypothesis import strategies as st

from csim.certify import (
    SamplingWarning,
    certify,
    d_at,
    face_certificate,
    lambda_at,
    may_leonard_degree,
    may_leonard_gap_checks,
    sample_attractor,
    spectral_norm_df,
)
from csim.errors import DegenerateFaceError
from csim.spectrum import FaceExitWarning, exponents_at_rest_point, find_rest_points
from csim.sysmodel import (
    FunctionalSystem,
    LotkaVolterraSystem,
    MayLeonardSystem,
    face_jacobian_block,
)

seeds = st.integers(0, 2**32 - 1)


def pair_lv(c):
    return LotkaVolterraSystem([1.0, 1.0], [[1.0, c], [c, 1.0]])


# ----------------------------------------------------------- pointwise maps

def test_may_leonard_interior_values(ml):
    y = np.full(3, 1 / 3.3)
    assert lambda_at(ml, y) == pytest.approx(1.0, abs=1e-12)
    assert d_at(ml, y) == pytest.approx(0.331954, abs=1e-6)
    assert d_at(ml, y) == pytest.approx(math.sqrt(1.2) / 3.3, abs=1e-14)


def test_weak_lv_interior_values(wlv):
    y = np.full(3, 5 / 6)
    assert lambda_at(wlv, y) == pytest.approx(1.0, abs=1e-12)
    assert d_at(wlv, y) == pytest.approx(5 / 60, abs=1e-12)
    assert spectral_norm_df(wlv, y) == pytest.approx(1.0, abs=1e-12)


def test_degenerate_d(wlv):
    with pytest.raises(DegenerateFaceError):
        d_at(wlv, np.array([0.5, 0.0, 0.5]))
    with pytest.raises(DegenerateFaceError):
        d_at(wlv, np.array([0.5, 0.0, 0.0]), (1, 2))


def test_zero_field_norm():
    s = FunctionalSystem(3, lambda x: np.zeros_like(x), lambda x: np.zeros(x.shape + (3,)))
    assert spectral_norm_df(s, np.ones(3)) == 0.0


def _char_roots(M):
    return np.roots(np.poly(M)).real


def _random_case(rng):
    n = int(rng.integers(2, 4))
    s = random_lv(rng, n + int(rng.integers(0, 2)))
    faces = [f for r in range(s.n - n + 1) for f in itertools.combinations(range(s.n), r) if s.n - len(f) == n]
    face = faces[int(rng.integers(len(faces)))]
    x = rng.uniform(0.05, 2.0, s.n)
    x[list(face)] = 0.0
    return s, x, face


def test_brute_force_oracles():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        s, x, face = _random_case(rng)
        J = face_jacobian_block(s, x, face)
        lam = max(_char_roots(-0.5 * (J + J.T)))
        norm = math.sqrt(max(_char_roots(J.T @ J)))
        prods = [J[i, j] * J[j, i] for i in range(len(J)) for j in range(i + 1, len(J))]
        assert lambda_at(s, x, face) == pytest.approx(lam, abs=1e-9)
        assert spectral_norm_df(s, x, face) == pytest.approx(norm, abs=1e-9)
        assert d_at(s, x, face) == pytest.approx(math.sqrt(min(prods)), abs=1e-9)


@given(seeds)
def test_rayleigh_and_norm_bounds(seed):
    s, x, face = _random_case(np.random.default_rng(seed))
    J = face_jacobian_block(s, x, face)
    lam = lambda_at(s, x, face)
    assert lam >= np.max(-np.diag(J)) - 1e-12
    assert lam <= spectral_norm_df(s, x, face) + 1e-9


def test_symmetric_block_gives_minus_smallest_eigenvalue(wlv):
    x = np.full(3, 5 / 6)
    J = face_jacobian_block(wlv, x, ())
    assert lambda_at(wlv, x) == pytest.approx(-np.linalg.eigvalsh(J)[0], abs=1e-12)


@given(seeds, st.floats(0.1, 10))
def test_scale_coherence(seed, c):
    s, x, face = _random_case(np.random.default_rng(seed))
    t = s.scaled(c)
    assert lambda_at(t, x, face) == pytest.approx(c * lambda_at(s, x, face), rel=1e-9)
    assert d_at(t, x, face) == pytest.approx(c * d_at(s, x, face), rel=1e-9)
    assert spectral_norm_df(t, x, face) == pytest.approx(c * spectral_norm_df(s, x, face), rel=1e-9)


@settings(max_examples=10)
@given(st.floats(0.1, 0.95), st.floats(0.2, 5), st.integers(1, 3))
def test_verdicts_invariant_under_scaling(c, scale, k):
    s = pair_lv(c)
    a = face_certificate(s, sample_attractor(s, (), n_starts=2, T_transient=60, T_sample=5), k)
    b = face_certificate(s.scaled(scale), sample_attractor(s.scaled(scale), (), n_starts=2, T_transient=60, T_sample=5), k)
    assert (a.c1_holds, a.c2_holds) == (b.c1_holds, b.c2_holds)


# ----------------------------------------------------------- attractor samples

def test_sample_attractor_weak_lv(wlv):
    full = sample_attractor(wlv, ())
    np.testing.assert_allclose(full.points, [[5 / 6] * 3], atol=1e-6)
    assert full.reliable
    face = sample_attractor(wlv, (2,))
    np.testing.assert_allclose(face.points, [[1 / 1.1, 1 / 1.1, 0]], atol=1e-6)
    with pytest.raises(ValueError):
        sample_attractor(wlv, (0, 1))


def test_sample_attractor_may_leonard(ml):
    with pytest.warns(FaceExitWarning), pytest.warns(SamplingWarning):
        sample = sample_attractor(ml, (), T_transient=100, T_sample=50)
    assert not sample.reliable
    assert len(sample.points) > 20
    assert sample.points.min() < 0.05


# ----------------------------------------------------------- certify

def test_certify_k0(wlv, ml):
    rep = certify(wlv, 0)
    assert rep.verdict == "C1" and rep.wording == "C1 certificate holds on samples"
    rep = certify(ml, 0)
    assert rep.verdict == "none" and rep.wording == "no certificate"
    assert rep.hypothesis_A_margin == pytest.approx(-1.3)


def test_certify_weak_lv_k1(wlv):
    rep = certify(wlv, 1)
    rec = rep.face(())
    assert rec.c2_lhs == pytest.approx(1.0, abs=1e-4)
    assert rec.rhs == pytest.approx(1 / 3, abs=1e-4)
    assert not rec.c1_holds and not rec.c2_holds
    assert rec.gap.margin == pytest.approx(0.5, abs=1e-3) and not rec.gap.holds
    assert rep.verdict == "C1"
    assert rep.as_dict()["faces"][0]["provenance"] == "sample-based"


def test_certify_may_leonard_k1_withheld(ml):
    rep = certify(ml, 1, T_transient=100, T_sample=20, gap_route=False)
    assert rep.verdict == "none"
    assert not rep.face(()).reliable


def test_certify_two_species_grants_higher_degree():
    s = pair_lv(0.6)
    verdicts = [certify(s, k, n_starts=2, T_transient=60, T_sample=5, gap_route=False).verdict for k in (1, 2, 3)]
    assert verdicts == ["C2", "C3", "C1"]


@settings(max_examples=8)
@given(st.floats(0.05, 0.95))
def test_verdict_monotone_in_k(c):
    s = pair_lv(c)
    passes = [certify(s, k, n_starts=2, T_transient=60, T_sample=5, gap_route=False).verdict == f"C{k + 1}"
              for k in range(1, 5)]
    for k in range(1, len(passes)):
        if passes[k]:
            assert all(passes[:k])


def test_certify_rejects_negative_k(wlv):
    with pytest.raises(ValueError):
        certify(wlv, -1)


# ----------------------------------------------------------- May-Leonard rule

def test_degree_examples():
    assert may_leonard_degree(1.4) == 2
    assert may_leonard_degree(1.9) == 1
    assert may_leonard_degree(2.0) is None
    assert may_leonard_degree(1.5) == 1
    assert may_leonard_degree(1.2) == 4
    with pytest.raises(ValueError):
        may_leonard_degree(1.0)


@given(st.floats(1.0001, 1.9999))
def test_degree_is_largest(alpha):
    l = may_leonard_degree(alpha)
    assert alpha < 1 + 1 / l
    assert not alpha < 1 + 1 / (l + 1)


@settings(max_examples=20)
@given(st.floats(1.01, 1.99), st.floats(0.01, 0.99))
def test_degree_consistent_with_axial_gap(alpha, beta):
    if alpha + beta <= 2.001:
        beta = min(0.999, 2.01 - alpha)
    s = MayLeonardSystem(alpha, beta)
    l = may_leonard_degree(alpha)
    for p in find_rest_points(s):
        if np.count_nonzero(p.location) == 1:
            ext = exponents_at_rest_point(s, p).external
            assert -1 - l * min(ext.values()) < 0


def test_may_leonard_gap_checks():
    checks = may_leonard_gap_checks(1.4, 0.9)
    assert len(checks) == 4
    assert all(g.holds for _, g in checks)
    assert max(g.margin for _, g in checks) == pytest.approx(-0.2, abs=1e-9)
