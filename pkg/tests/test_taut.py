from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focal_forge.errors import ConstructionError, DomainError, LookupFailure, PreconditionError
from focal_forge.focal import focal_records, morse_index
from focal_forge.foliation import concentric_circles, concentric_spheres, hopf_foliation, parallel_lines
from focal_forge.quaternion import hopf_map
from focal_forge.shooting import shoot_critical_points
from focal_forge.spaces import Euclidean, RoundSphere
from focal_forge.submanifolds import circle_patch, hopf_fiber_patch, hyperplane_patch, point_patch, sphere_patch
from focal_forge.taut import (
    BettiTable,
    MorseReport,
    betti_ids,
    build_saturated_preimage,
    fiber_integrability_probe,
    morse_bott_probe,
    morse_polynomial,
    perfectness_verdict,
    reference_betti,
    sphere_geodesic_oracle,
    taut_check,
)

NORTH2 = np.array([0.0, 0.0, 1.0])
Q1 = np.array([math.sin(1.0), 0.0, math.cos(1.0)])  # distance 1 from the north pole


@pytest.fixture(scope="module")
def s2_report():
    return taut_check(point_patch(RoundSphere(2), NORTH2), Q1, (4 * math.pi) ** 2, "omega-s2")


@pytest.fixture(scope="module")
def circle_report():
    return taut_check(circle_patch(), [0.5, 0.0], 9.0, "circle-plane")


# -- shooting --------------------------------------------------------------------


def test_s2_critical_points(s2_report):
    lengths = [c.length for c in s2_report.criticals]
    np.testing.assert_allclose(sorted(lengths), [1.0, 2 * math.pi - 1, 2 * math.pi + 1, 4 * math.pi - 1],
                               atol=1e-7)
    by_len = sorted(s2_report.criticals, key=lambda c: c.energy)
    assert [c.index for c in by_len] == [0, 1, 2, 3]
    assert all(c.residual < 1e-9 for c in by_len)


def test_oracle_matches_closed_form():
    assert [i for _, i in sphere_geodesic_oracle(2, 1.0, (4 * math.pi) ** 2)] == [0, 1, 2, 3]
    assert [i for _, i in sphere_geodesic_oracle(3, 1.0, (2 * math.pi + 1.5) ** 2)] == [0, 2, 4]


def test_hyperplane_single_critical_point():
    res = shoot_critical_points(hyperplane_patch(3), [0.3, -0.2, 1.5], 9.0)
    assert len(res) == 1
    assert res[0].index == 0 and res[0].length == pytest.approx(1.5, abs=1e-9)


def test_circle_critical_points(circle_report):
    pts = sorted(circle_report.criticals, key=lambda c: c.energy)
    np.testing.assert_allclose([c.length for c in pts], [0.5, 1.5], atol=1e-8)
    assert [c.index for c in pts] == [0, 1]


def test_target_at_point_source_rejected():
    with pytest.raises(DomainError):
        shoot_critical_points(point_patch(RoundSphere(2), NORTH2), NORTH2, 9.0)


def test_index_rederived_from_fresh_trace(s2_report):
    for c in s2_report.criticals:
        _, recs = focal_records(c.patch, c.param, c.vector, horizon=1.0, tol=1e-12)
        assert morse_index(recs, end=1.0) == c.index


# -- counting and reference data -------------------------------------------------------


def test_morse_polynomials(s2_report, circle_report):
    assert s2_report.count.coefficients == (1, 1, 1, 1)
    assert s2_report.count.as_text() == "1 + t + t^2 + t^3"
    assert circle_report.count.coefficients == (1, 1)
    res = shoot_critical_points(hyperplane_patch(3), [0.3, -0.2, 1.5], 9.0)
    assert morse_polynomial(res).coefficients == (1,)
    assert morse_polynomial([]).coefficients == ()


def test_reference_omega_spheres():
    assert reference_betti("omega-s2").ranks == {0: 1, 1: 1, 2: 1, 3: 1}
    s3 = reference_betti("omega-s3")
    assert [s3.rank(k) for k in range(5)] == [1, 0, 1, 0, 1]
    with pytest.raises(LookupFailure):
        s3.rank(5)
    assert reference_betti("omega-s2", 6).max_degree == 6


@pytest.mark.parametrize("p", [3, 5])
def test_lens_odd_p_mod_two(p):
    t = reference_betti(f"lens-p{p}-z2")
    assert t.rank(2) == 0 and t.rank(1) == 0 and t.rank(0) == t.rank(3) == 1
    assert t.field == "Z2"


def test_lens_other_rows():
    assert reference_betti("lens-p4-z2").ranks == {0: 1, 1: 1, 2: 1, 3: 1}
    assert reference_betti("lens-p3-z3").rank(2) == 1


@pytest.mark.parametrize("sid", ["nope", "omega-s1", "omega-sx", "lens-p3-z7", "lens-p1-z2"])
def test_unknown_betti_ids(sid):
    with pytest.raises(LookupFailure):
        reference_betti(sid)


def test_all_betti_ids_resolve():
    for sid in betti_ids():
        t = reference_betti(sid)
        assert isinstance(t, BettiTable) and t.provenance
        assert t.to_dict()["scenario_id"] == sid


# -- verdicts ------------------------------------------------------------------------------


def test_sphere_perfect(s2_report):
    assert s2_report.verdict["verdict"] == "perfect"
    assert s2_report.verdict["degrees_checked"] == 4


def test_circle_perfect(circle_report):
    assert circle_report.verdict == {"verdict": "perfect", "degrees_checked": 2, "mismatch_degrees": [],
                                     "hints": []}


def test_truncated_cap_mismatch():
    rep = taut_check(point_patch(RoundSphere(2), NORTH2), Q1, 11.0**2, "omega-s2")
    assert sorted(c.index for c in rep.criticals) == [0, 1, 2]
    assert rep.verdict["verdict"] == "mismatch"
    assert rep.verdict["mismatch_degrees"] == [3]
    assert rep.verdict["hints"] == ["cap too low"]


def test_reliable_degree_trims_near_cap():
    # the index-3 geodesic (length 4 pi - 1) sits inside the 5% margin: degree 3 is not judged
    cap = (4 * math.pi - 1) ** 2 / 0.97
    rep = taut_check(point_patch(RoundSphere(2), NORTH2), Q1, cap, "omega-s2")
    assert rep.verdict["verdict"] == "perfect" and rep.verdict["degrees_checked"] == 3


def test_non_generic_target_refused():
    P = point_patch(RoundSphere(2), NORTH2)
    rep = taut_check(P, -NORTH2, (1.5 * math.pi) ** 2, "omega-s2", density=4)
    assert not rep.count.generic
    assert rep.verdict["verdict"] == "non-generic target"
    forced = MorseReport(rep.target, rep.cap, rep.criticals, rep.count, reference_betti("omega-s2"))
    with pytest.raises(PreconditionError, match="non-generic target"):
        perfectness_verdict(forced)


def test_verdict_stability_circle():
    base = taut_check(circle_patch(), [0.3, 0.4], 9.0, "circle-plane", density=8)
    fine = taut_check(circle_patch(), [0.3, 0.4], 9.0, "circle-plane", density=16, tol=5e-13)
    assert base.verdict == fine.verdict
    assert base.count == fine.count


@settings(max_examples=8, deadline=None)
@given(st.floats(min_value=0.05, max_value=0.9), st.floats(min_value=0.0, max_value=2 * math.pi))
def test_circle_perfect_at_generic_targets(r, a):
    rep = taut_check(circle_patch(), [r * math.cos(a), r * math.sin(a)], 9.0, "circle-plane")
    assert rep.verdict["verdict"] == "perfect"


# -- probes --------------------------------------------------------------------------------


def test_probe_sphere_inward_unit():
    P = sphere_patch(Euclidean(3), np.zeros(3), 1.0)
    pr = fiber_integrability_probe(P, np.zeros(2), -P.point(np.zeros(2)))
    assert pr.fiber_dim == 2 == pr.nullity
    assert pr.verdict == "integrable" and pr.tangency_residual < 0.05


def test_probe_s3_antipode():
    P = point_patch(RoundSphere(3), [0.0, 0.0, 0.0, 1.0])
    pr = fiber_integrability_probe(P, np.zeros(0), [math.pi, 0.0, 0.0, 0.0])
    assert pr.fiber_dim == 2 == pr.nullity
    assert pr.verdict == "integrable"


def test_probe_hopf_fiber():
    P = hopf_fiber_patch()
    pr = fiber_integrability_probe(P, np.zeros(1), [0.0, 0.0, math.pi / 2, 0.0])
    assert pr.fiber_dim == 1 and pr.verdict == "integrable"


def test_probe_rejects_non_focal():
    P = sphere_patch(Euclidean(3), np.zeros(3), 1.0)
    with pytest.raises(PreconditionError):
        fiber_integrability_probe(P, np.zeros(2), -0.5 * P.point(np.zeros(2)))


def test_morse_bott_s2_antipode():
    rep = morse_bott_probe(point_patch(RoundSphere(2), NORTH2), -NORTH2, (1.5 * math.pi) ** 2)
    assert rep["verdict"] == "morse-bott" and not rep["morse"]
    (comp,) = rep["components"]
    assert comp["nullities"] == [1] and comp["critical_dims"][0] == 1 and comp["index_constant"]
    assert comp["energy"] == pytest.approx(math.pi**2, abs=1e-8)


def test_morse_bott_generic_is_morse():
    rep = morse_bott_probe(circle_patch(), [0.5, 0.0], 9.0)
    assert rep["morse"] and rep["verdict"] == "morse-bott"
    assert all(c["critical_dims"] == [0] for c in rep["components"])


# -- saturated preimages ----------------------------------------------------------------------


def test_preimage_circle_radius_two():
    P = build_saturated_preimage(concentric_circles(), [2.0])
    for u in np.linspace(-1, 1, 5):
        assert np.linalg.norm(P.point([u])) == pytest.approx(2.0, abs=1e-12)


def test_preimage_unit_sphere_taut():
    P = build_saturated_preimage(concentric_spheres(), {"kind": "point", "coords": [1.0]})
    assert np.linalg.norm(P.point(np.array([0.2, -0.1]))) == pytest.approx(1.0, abs=1e-12)
    rep = taut_check(P, [0.2, 0.1, 0.3], 16.0, "sphere-r3")
    assert rep.verdict["verdict"] == "perfect"


def test_preimage_hopf_fiber_focal_times():
    b = np.array([0.3, -0.2, math.sqrt(0.25 - 0.13)])
    P = build_saturated_preimage(hopf_foliation(), b)
    for u in (0.0, 1.0, 2.5):
        np.testing.assert_allclose(hopf_map(P.point([u])), b, atol=1e-9)
    u = np.zeros(1)
    v = P.normal_frame(u)[:, 0] * 2.0  # length 2: past pi/2, before pi
    _, recs = focal_records(P, u, v, horizon=2.0)
    np.testing.assert_allclose([r.time * 2.0 for r in recs], [math.pi / 2, math.pi], atol=1e-7)


def test_preimage_affine_leaf():
    F = parallel_lines()
    P = build_saturated_preimage(F, F.project(np.array([0.0, 0.4, -1.0])))
    np.testing.assert_allclose(F.project(P.point([0.7])), F.project(np.array([0.0, 0.4, -1.0])), atol=1e-12)


def test_preimage_singular_boundary_rejected():
    with pytest.raises(PreconditionError):
        build_saturated_preimage(concentric_circles(), [0.0])


def test_preimage_unknown_kind():
    with pytest.raises(ConstructionError):
        build_saturated_preimage(concentric_circles(), {"kind": "interval", "coords": [1.0, 2.0]})
