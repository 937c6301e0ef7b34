from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focal_forge.errors import ConstructionError, PreconditionError
from focal_forge.foliation import concentric_spheres, hopf_foliation
from focal_forge.linking import (
    EtaPolygon,
    bundle_descriptor,
    cohdim_bookkeeping,
    delta_dimension,
    energy_identity_check,
    first_focal_param,
    index_of,
    sample_Zv,
    tangent_decomposition_dim,
)
from focal_forge.spaces import Euclidean, RoundSphere
from focal_forge.submanifolds import hopf_fiber_patch, point_patch, sphere_patch

U0 = np.zeros(0)
U2 = np.zeros(2)
V_IN = np.array([-2.0, 0.0, 0.0])  # inward normal of length 2 at (1, 0, 0)


def _sphere():
    return sphere_patch(Euclidean(3), np.zeros(3), 1.0)


def _s2_source():
    return point_patch(RoundSphere(2), [0.0, 0.0, 1.0])


def _s2_vec(length):
    return np.array([length, 0.0, 0.0])


@pytest.fixture(scope="module")
def sphere_polys():
    return sample_Zv(_sphere(), U2, V_IN, samples=8)


@pytest.fixture(scope="module")
def s2_polys():
    return sample_Zv(_s2_source(), U0, _s2_vec(2.5 * math.pi), samples=4)


# -- m(v) --------------------------------------------------------------------------


def test_m_sphere_inward():
    assert first_focal_param(_sphere(), U2, V_IN) == pytest.approx(0.5, abs=1e-9)


def test_m_s2_three_half_pi():
    assert first_focal_param(_s2_source(), U0, _s2_vec(1.5 * math.pi)) == pytest.approx(2 / 3, abs=1e-9)


def test_m_short_vector_zero():
    assert first_focal_param(_s2_source(), U0, _s2_vec(2.0)) == 0.0
    with pytest.raises(PreconditionError):
        first_focal_param(_s2_source(), U0, np.zeros(3))


# -- sampling Z_v ---------------------------------------------------------------------


def test_sphere_polygons_once_broken(sphere_polys):
    assert len(sphere_polys) == 8
    for p in sphere_polys:
        assert p.depth == 1
        np.testing.assert_allclose(p.times, [1.0, 0.5, 0.0], atol=1e-9)
        assert energy_identity_check(p) < 1e-8
        assert p.chain_deviation() < 1e-8
        assert p.breakpoint_gaps() < 1e-7
        # every second leg starts at the origin
        np.testing.assert_allclose(p.sample([0.5])[0], 0.0, atol=1e-7)


def test_index_zero_vector_unbroken():
    polys = sample_Zv(_sphere(), U2, -0.5 * V_IN / 2)
    assert len(polys) == 1
    (p,) = polys
    assert p.depth == 0 and p.chain_deviation() == 0.0
    assert p.energy() == pytest.approx(0.25, abs=1e-15)


def test_s2_depth_two(s2_polys):
    v2 = (2.5 * math.pi) ** 2
    assert len(s2_polys) == 16
    for p in s2_polys:
        assert p.depth == 2
        np.testing.assert_allclose(p.times, [1.0, 0.8, 0.4, 0.0], atol=1e-9)
        assert abs(p.energy() - v2) < 1e-8 * v2
        assert p.chain_deviation() < 1e-8
        assert p.breakpoint_gaps() < 1e-7
    energies = [p.energy() for p in s2_polys]
    assert max(energies) - min(energies) < 1e-8 * v2


def test_sampling_deterministic():
    a = sample_Zv(_sphere(), U2, V_IN, samples=3, seed=7)
    b = sample_Zv(_sphere(), U2, V_IN, samples=3, seed=7)
    assert [p.to_dict() for p in a] == [p.to_dict() for p in b]


def test_depth_cap_reported():
    diag = []
    polys = sample_Zv(_s2_source(), U0, _s2_vec(2.5 * math.pi), samples=2, depth_cap=1, diagnostics=diag)
    assert polys == []
    assert any("depth cap 1" in d.get("reason", "") for d in diag)


def test_level_one_index_decreases(sphere_polys, s2_polys):
    for patch, u, v, polys in ((_sphere(), U2, V_IN, sphere_polys),
                               (_s2_source(), U0, _s2_vec(2.5 * math.pi), s2_polys)):
        iv = index_of(patch, u, v)
        for p in polys:
            assert index_of(patch, p.params[1], p.vectors[1]) < iv


# -- corrupted chains -------------------------------------------------------------------


def _corrupt(p: EtaPolygon, factor=1.01) -> EtaPolygon:
    vectors = [w.copy() for w in p.vectors]
    vectors[1] = factor * vectors[1]
    return EtaPolygon(p.patch, p.times.copy(), list(p.params), vectors, list(p.residuals))


def test_corrupted_polygon_sphere(sphere_polys):
    bad = _corrupt(sphere_polys[0])
    # E changes by (1.01^2 - 1) (|w_2| / t_1)^2 (t_1 - t_2) = 0.0201 (t_1 - t_2) |v|^2, as |w_2| = t_1 |v|
    assert energy_identity_check(bad) == pytest.approx(0.0201 * 0.5 * 4.0, rel=1e-6)
    assert bad.chain_deviation() == pytest.approx(0.01, rel=1e-6)


def test_corrupted_polygon_s2(s2_polys):
    bad = _corrupt(s2_polys[0])
    v2 = (2.5 * math.pi) ** 2
    assert energy_identity_check(bad) == pytest.approx(0.0201 * (0.8 - 0.4) * v2, rel=1e-6)
    assert bad.chain_deviation() > 1e-3


# -- dimension accounting -----------------------------------------------------------------


def test_delta_dimension_sphere():
    assert delta_dimension(_sphere(), U2, V_IN) == (2, None)
    assert delta_dimension(_sphere(), U2, V_IN, concentric_spheres()) == (2, 2)


def test_delta_dimension_hopf():
    P = hopf_fiber_patch()
    v = np.array([0.0, 0.0, 2.5, 0.0])
    assert delta_dimension(P, np.zeros(1), v) == (1, None)
    assert delta_dimension(P, np.zeros(1), v, hopf_foliation()) == (1, None)
    assert delta_dimension(P, np.zeros(1), v / 5) == (0, None)


def test_delta_dimension_focal_endpoint():
    with pytest.raises(PreconditionError):
        delta_dimension(_sphere(), U2, V_IN / 2)


def test_tangent_decomposition_examples():
    assert tangent_decomposition_dim(_sphere(), U2, V_IN) == 2
    assert tangent_decomposition_dim(_s2_source(), U0, _s2_vec(1.5 * math.pi)) == 1
    assert tangent_decomposition_dim(_s2_source(), U0, _s2_vec(2.0)) == 0


def test_cohdim_examples(s2_polys):
    node = bundle_descriptor(_sphere(), U2, V_IN)
    assert node.time == pytest.approx(0.5, abs=1e-9)
    assert (node.base_dim, node.child) == (2, None)
    assert cohdim_bookkeeping(node) == 2
    chain = bundle_descriptor(_s2_source(), U0, _s2_vec(2.5 * math.pi))
    assert (chain.base_dim, chain.child.base_dim, chain.child.child) == (1, 1, None)
    assert cohdim_bookkeeping(chain) == 2
    from_poly = bundle_descriptor(_s2_source(), U0, _s2_vec(2.5 * math.pi), polygon=s2_polys[3])
    assert cohdim_bookkeeping(from_poly) == 2
    assert cohdim_bookkeeping(None) == 0
    assert cohdim_bookkeeping({"base_dim": 1, "child": {"base_dim": 1, "child": None}}) == 2
    assert cohdim_bookkeeping(chain.to_dict()) == 2


@pytest.mark.parametrize("bad", ["x", 3, {"child": None}, {"base_dim": -1}, {"base_dim": 1.5},
                                 {"base_dim": True}, {"base_dim": 1, "child": [1]}])
def test_cohdim_malformed(bad):
    with pytest.raises(ConstructionError):
        cohdim_bookkeeping(bad)


@settings(max_examples=12, deadline=None)
@given(st.floats(min_value=0.2, max_value=2.9))
def test_dimensions_agree_on_s2(s):
    if abs(s - round(s)) < 0.03:
        s += 0.05
    length = s * math.pi
    P = _s2_source()
    v = _s2_vec(length)
    i, _ = delta_dimension(P, U0, v)
    assert i == int(s)
    assert tangent_decomposition_dim(P, U0, v) == i
    assert cohdim_bookkeeping(bundle_descriptor(P, U0, v)) == i
