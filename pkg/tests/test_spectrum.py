import warnings

import numpy as np
import pytest
from conftest import random_lv
from hypothesis import given, settings
from hypothesis import strategies as st

from csim.errors import InvalidStateError
from csim.linalg import eigvals
from csim.spectrum import (
    ExponentReport,
    FaceExitWarning,
    benaim_gap_check,
    default_ergodic_samples,
    dirac_samples,
    exponents_at_rest_point,
    external_exponent_birkhoff,
    external_exponent_tangent,
    external_nonnegativity_check,
    find_rest_points,
    internal_exponents_qr,
    permanence_probe,
)
from csim.sysmodel import FunctionalSystem, MayLeonardSystem, weak_coupling_lv

seeds = st.integers(0, 2**32 - 1)


def _by_location(points):
    return sorted(points, key=lambda p: tuple(p.location))


def test_may_leonard_five_rest_points(ml):
    rps = find_rest_points(ml)
    assert len(rps) == 5
    locs = np.array([p.location for p in rps])
    assert any(np.allclose(x, 1 / 3.3, atol=1e-10) for x in locs)
    assert sum(np.allclose(x, e) for x in locs for e in np.eye(3)) == 3
    assert np.allclose(locs[0], 0)


def test_weak_lv_eight_rest_points(wlv):
    rps = find_rest_points(wlv)
    assert len(rps) == 8
    sizes = sorted(int(np.count_nonzero(p.location)) for p in rps)
    assert sizes == [0, 1, 1, 1, 2, 2, 2, 3]
    for p in rps:
        nz = p.location[p.location > 0]
        expected = {0: None, 1: 1.0, 2: 1 / 1.1, 3: 5 / 6}[len(nz)]
        if expected is not None:
            np.testing.assert_allclose(nz, expected, atol=1e-12)
        assert p.residual < 1e-12


def test_face_restricted_rest_points(wlv):
    from csim.sysmodel import restrict_to_face

    sub = restrict_to_face(wlv, (0, 1))
    nonzero = [p.location for p in find_rest_points(sub) if np.any(p.location > 0)]
    assert len(nonzero) == 1 and nonzero[0] == pytest.approx([1.0])


def test_may_leonard_axial_exponents(ml):
    for p in find_rest_points(ml):
        if np.count_nonzero(p.location) != 1:
            continue
        rep = exponents_at_rest_point(ml, p)
        i = int(np.flatnonzero(p.location)[0])
        np.testing.assert_allclose(rep.internal, [-1.0], atol=1e-12)
        assert rep.external[(i + 1) % 3] == pytest.approx(0.2, abs=1e-12)
        assert rep.external[(i + 2) % 3] == pytest.approx(-0.5, abs=1e-12)


def test_may_leonard_interior_exponents(ml):
    y = [p for p in find_rest_points(ml) if not p.face][0]
    rep = exponents_at_rest_point(ml, y)
    np.testing.assert_allclose(rep.internal, [-1.0, 0.3 / 6.6, 0.3 / 6.6], atol=1e-10)
    assert rep.external == {}


def test_weak_lv_interior_exponents(wlv):
    y = [p for p in find_rest_points(wlv) if not p.face][0]
    np.testing.assert_allclose(exponents_at_rest_point(wlv, y).internal, [-1.0, -0.75, -0.75], atol=1e-12)


@given(seeds, st.sampled_from([2, 3, 4]))
def test_dirac_multiset_identity(seed, n):
    s = random_lv(np.random.default_rng(seed), n)
    for p in find_rest_points(s):
        rep = exponents_at_rest_point(s, p)
        full = np.sort(eigvals(s.jacobian(p.location)).real)
        np.testing.assert_allclose(rep.all_exponents(), full, atol=1e-9)
        J = s.jacobian(p.location)
        assert abs(p.eigenvalues.sum().real - np.trace(J)) < 1e-9
        assert p.residual < 1e-12


def test_rest_point_spectra_conjugate_closed(ml):
    for p in find_rest_points(ml):
        ev = p.eigenvalues
        np.testing.assert_allclose(np.sort_complex(ev), np.sort_complex(np.conj(ev)), atol=1e-12)


def test_birkhoff_weak_lv_face(wlv):
    val = external_exponent_birkhoff(wlv, (2,), 2, [0.3, 0.6, 0.0], 200.0)
    assert val == pytest.approx(1 - 0.2 / 1.1, abs=1e-3)


def test_birkhoff_may_leonard_face_limit(ml):
    # on face {0}, species 1 and 2 compete with a=[[1, alpha],[beta, 1]]; species 2 wins
    # species 1 dies out along the tail, so the face-exit warning is expected
    with pytest.warns(FaceExitWarning):
        val = external_exponent_birkhoff(ml, (0,), 0, [0.0, 0.4, 0.3], 400.0)
    assert val == pytest.approx(ml.growth(np.array([0.0, 0.0, 1.0]))[0], abs=1e-3)


def test_birkhoff_rejects_bad_input(wlv):
    with pytest.raises(InvalidStateError):
        external_exponent_birkhoff(wlv, (2,), 1, [0.3, 0.6, 0.0], 10.0)
    with pytest.raises(InvalidStateError):
        external_exponent_birkhoff(wlv, (2,), 2, [0.3, 0.6, 0.1], 10.0)


def test_birkhoff_warns_near_face_boundary(ml):
    with pytest.warns(FaceExitWarning):
        external_exponent_birkhoff(ml, (0,), 0, [0.0, 0.4, 0.3], 100.0)


@settings(max_examples=10)
@given(seeds)
def test_birkhoff_equals_tangent_growth(seed):
    rng = np.random.default_rng(seed)
    s = random_lv(rng, 3)
    face = (int(rng.integers(3)),)
    x0 = rng.uniform(0.1, 1.5, 3)
    x0[face[0]] = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FaceExitWarning)
        b = external_exponent_birkhoff(s, face, face[0], x0, 40.0, transient=0.0, dt_sample=0.01)
    t = external_exponent_tangent(s, face, face[0], x0, 40.0, transient=0.0)
    assert b == pytest.approx(t, abs=1e-3)


def test_qr_at_rest_point_matches_eigenvalues(ml, wlv):
    for s in (ml, wlv):
        for p in find_rest_points(s):
            keep = [i for i in range(3) if i not in p.face]
            if not keep:
                continue
            qr = internal_exponents_qr(s, p.face, p.location, T=200.0)
            ref = exponents_at_rest_point(s, p).internal
            np.testing.assert_allclose(qr, ref, atol=1e-3)


def test_qr_weak_lv_interior_orbit(wlv):
    np.testing.assert_allclose(internal_exponents_qr(wlv, (), [0.2, 0.9, 0.4], T=200.0), [-1, -0.75, -0.75], atol=1e-2)


def test_qr_zero_field():
    s = FunctionalSystem(3, lambda x: np.zeros_like(x), lambda x: np.zeros(x.shape + (3,)))
    np.testing.assert_allclose(internal_exponents_qr(s, (), [0.5, 0.5, 0.5], T=20.0), 0, atol=1e-12)


def test_qr_top_k_subset(wlv):
    top2 = internal_exponents_qr(wlv, (), [0.2, 0.9, 0.4], k=2, T=200.0)
    np.testing.assert_allclose(top2, [-0.75, -0.75], atol=1e-2)


def test_gap_check_examples():
    def axial(alpha, beta):
        s = MayLeonardSystem(alpha, beta)
        p = [p for p in find_rest_points(s) if np.count_nonzero(p.location) == 1][0]
        return exponents_at_rest_point(s, p)

    g = benaim_gap_check(axial(1.4, 0.9), 1, 0.05)
    assert g.margin == pytest.approx(-0.2, abs=1e-12) and g.holds
    g = benaim_gap_check(axial(1.5, 0.8), 1, 0.05)
    assert g.margin == pytest.approx(0.0, abs=1e-12) and not g.holds


def test_gap_check_multiplicity():
    g = benaim_gap_check([-1.0, -1.0, 0.5], 1, 0.0)
    assert g.second == -1.0 and g.margin == pytest.approx(1.0)
    with pytest.raises(ValueError):
        benaim_gap_check([-1.0], 1)


@given(st.floats(-5, -0.01), st.floats(0, 5), st.integers(0, 6))
def test_gap_check_nonnegative_second(l1, l2, k):
    rep = ExponentReport((), np.array([l1]), {0: l2})
    assert benaim_gap_check(rep, k, 0.5 * abs(l1)).holds


def test_external_nonnegativity(wlv, ml):
    res = external_nonnegativity_check(wlv, dirac_samples(wlv))
    assert res.holds and res.min_external == pytest.approx(1 - 0.2 / 1.1, abs=1e-12)
    res = external_nonnegativity_check(ml, dirac_samples(ml))
    assert not res.holds and res.min_external == pytest.approx(-0.5, abs=1e-12)
    assert res.witness.startswith("dirac@")


def test_default_samples_cover_faces(wlv):
    samples = default_ergodic_samples(wlv, T=100.0)
    assert sum(s.kind == "dirac" for s in samples) == 7
    assert sorted(s.face for s in samples if s.kind == "empirical") == [(), (0,), (1,), (2,)]
    assert all(s.valid for s in samples)


def test_permanence_examples(wlv, ml):
    assert permanence_probe(wlv, (), 20, 200.0).summary >= 0.5
    short = permanence_probe(ml, (), 10, 100.0).summary
    long = permanence_probe(ml, (), 10, 400.0).summary
    assert long < short and long < 1e-3
    one = permanence_probe(wlv, (0, 1), 10, 100.0)
    assert one.summary == pytest.approx(1.0, abs=1e-6)


def test_permanence_deterministic(wlv):
    a = permanence_probe(wlv, (), 10, 50.0, seed=3)
    b = permanence_probe(wlv, (), 10, 50.0, seed=3)
    assert np.array_equal(a.per_start, b.per_start)


@given(seeds, st.floats(0.2, 5))
def test_exponents_scale_with_field(seed, c):
    s = random_lv(np.random.default_rng(seed), 3)
    for p, q in zip(find_rest_points(s), find_rest_points(s.scaled(c))):
        np.testing.assert_allclose(q.location, p.location, atol=1e-10)
        np.testing.assert_allclose(
            exponents_at_rest_point(s.scaled(c), q).all_exponents(),
            c * exponents_at_rest_point(s, p).all_exponents(),
            atol=1e-9 * c,
        )


def test_weak_coupling_other_dimensions():
    s = weak_coupling_lv(4)
    y = [p for p in find_rest_points(s) if not p.face][0]
    np.testing.assert_allclose(y.location, 1 / 1.3, atol=1e-12)
