from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focal_forge.errors import PreconditionError
from focal_forge.focal import detect_focal, morse_index
from focal_forge.foliation import (
    circles_times_line,
    concentric_circles,
    concentric_spheres,
    hopf_foliation,
    parallel_lines,
    point_foliation,
)
from focal_forge.jacobi import jacobi_basis, normal_geodesic
from focal_forge.scenarios import random_horizontal
from focal_forge.spaces import Euclidean, RoundSphere
from focal_forge.submanifolds import point_patch
from focal_forge.transversal import (
    a_adjoint_at,
    a_tensor_at,
    horizontal_geodesic,
    horizontal_index,
    horizontal_solution,
    intrinsicality_probe,
    transversal_curvature_at,
    transversal_system,
    verify_index_splitting,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)

P0 = np.array([1.0, 0.0, 0.0, 0.0])
H0 = np.array([0.0, 0.0, 1.0, 0.0])  # horizontal for the Hopf action at P0


def _hopf(length=2.5, x=P0, v=H0):
    return horizontal_geodesic(hopf_foliation(), x, v, length)


def _radial(length=2.0):
    return horizontal_geodesic(concentric_spheres(), [-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], length)


# -- W~ and the A-tensor -----------------------------------------------------------


def test_hopf_wtilde_equals_w():
    _, g = _hopf()
    S = transversal_system(g, hopf_foliation())
    assert S.rank == 1 and S.hdim == 1
    assert S.vanishing == ()


def test_hopf_a_tensor_unit():
    _, g = _hopf()
    S = transversal_system(g, hopf_foliation())
    norms = [np.linalg.norm(a_tensor_at(S, k, [1.0])) for k in range(0, len(S.times), 97)]
    np.testing.assert_allclose(norms, 1.0, atol=1e-6)


def test_radial_wtilde_completed_at_origin():
    _, g = _radial()
    S = transversal_system(g, concentric_spheres())
    assert S.rank == 2 and S.hdim == 0
    assert len(S.vanishing) >= 1
    k = S.vanishing[0]
    assert g.times[k] == pytest.approx(1.0, abs=2 / 2048)
    # completion spans both directions orthogonal to the line
    np.testing.assert_allclose(S.wt[k].T @ S.wt[k], np.eye(2), atol=1e-10)


def test_radial_a_tensor_zero_regular_node():
    # spheres x line in R^4 so that H is non-trivial; rotation fields have vertical derivatives
    F = concentric_spheres(3, 1)
    v = np.array([0.0, 0.6, -0.8, 1.0]) / math.sqrt(2.0)
    patch, g = horizontal_geodesic(F, [0.0, -0.6, 0.8, 0.1], v, 0.5)
    S = transversal_system(g, F)
    assert S.rank == 2 and S.hdim == 1
    assert np.max(np.abs(S.A)) < 1e-9


def test_parallel_lines_a_tensor_zero():
    F = parallel_lines()
    _, g = horizontal_geodesic(F, [0.3, 0.1, -0.2], [0.0, 0.6, 0.8], 2.0)
    S = transversal_system(g, F)
    assert S.rank == 1 and np.max(np.abs(S.A)) < 1e-12


def test_point_foliation_empty_wtilde():
    F = point_foliation(RoundSphere(2))
    _, g = horizontal_geodesic(F, [0, 0, 1.0], [1.0, 0, 0], 2.0)
    S = transversal_system(g, F)
    assert S.rank == 0 and S.hdim == 1


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_a_adjointness(seed):
    rng = np.random.default_rng(seed)
    F = hopf_foliation()
    x, v, _ = random_horizontal(F, rng)
    _, g = horizontal_geodesic(F, x, v, 1.5)
    S = transversal_system(g, F)
    for _ in range(5):
        k = int(rng.integers(len(S.times)))
        w = rng.normal(size=S.rank)
        h = rng.normal(size=S.hdim)
        assert abs(a_tensor_at(S, k, w) @ h - w @ a_adjoint_at(S, k, h)) < 1e-9


# -- transversal curvature -----------------------------------------------------------


def test_hopf_rh_is_four():
    _, g = _hopf()
    S = transversal_system(g, hopf_foliation())
    np.testing.assert_allclose(S.RH[:, 0, 0], 4.0, atol=1e-5)
    assert transversal_curvature_at(S, 10, [2.0])[0] == pytest.approx(8.0, abs=2e-5)
    assert S.symmetry_defect() < 1e-8


def test_point_foliation_s3_rh_identity():
    F = point_foliation(RoundSphere(3))
    _, g = horizontal_geodesic(F, P0, H0, 2.0)
    S = transversal_system(g, F)
    assert S.hdim == 2
    np.testing.assert_allclose(S.RH, np.broadcast_to(np.eye(2), S.RH.shape), atol=1e-9)


def test_euclidean_point_foliation_rh_zero():
    F = point_foliation(Euclidean(3))
    _, g = horizontal_geodesic(F, np.zeros(3), [0.0, 0.0, 1.0], 1.0)
    S = transversal_system(g, F)
    assert np.max(np.abs(S.RH)) < 1e-12


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_rh_symmetric_random(seed):
    rng = np.random.default_rng(seed)
    F = circles_times_line()
    x, v, length = random_horizontal(F, rng, (0.5, 3.0))
    _, g = horizontal_geodesic(F, x, v, length)
    S = transversal_system(g, F)
    assert S.symmetry_defect() < 1e-8
    assert S.wt.shape[2] == F.regular_dim


# -- horizontal index and splitting ----------------------------------------------------


def test_hopf_horizontal_index_one():
    patch, g = _hopf(2.5)
    assert horizontal_index(g, hopf_foliation(), patch) == 1


def test_radial_horizontal_index_zero():
    for length in (0.5, 2.0, 3.3):
        patch, g = _radial(length)
        assert horizontal_index(g, concentric_spheres(), patch) == 0


def test_point_foliation_horizontal_index():
    F = point_foliation(RoundSphere(2))
    patch, g = horizontal_geodesic(F, [0, 0, 1.0], [1.0, 0, 0], 4.0)
    assert horizontal_index(g, F, patch) == 1


def test_splitting_examples():
    patch, g = _hopf(2.5)
    assert verify_index_splitting(g, hopf_foliation(), patch) == {
        "ind_lambda": 1, "ind_w": 0, "ind_hor": 1, "holds": True}
    patch, g = _radial(2.0 + 0.3)
    assert verify_index_splitting(g, concentric_spheres(), patch) == {
        "ind_lambda": 2, "ind_w": 2, "ind_hor": 0, "holds": True}
    F = point_foliation(RoundSphere(2))
    patch, g = horizontal_geodesic(F, [0, 0, 1.0], [1.0, 0, 0], 4.0)
    assert verify_index_splitting(g, F, patch) == {
        "ind_lambda": 1, "ind_w": 0, "ind_hor": 1, "holds": True}


def test_splitting_rejects_focal_endpoint():
    patch, g = _hopf(math.pi / 2)
    with pytest.raises(PreconditionError):
        verify_index_splitting(g, hopf_foliation(), patch)


def test_complement_choice_irrelevant():
    F = hopf_foliation()
    patch, g = _hopf(4.0)
    base = horizontal_solution(g, F, patch)
    for seed in (11, 12):
        alt = horizontal_solution(g, F, patch, complement_seed=seed)
        assert [round(r.time, 7) for r in alt.records] == [round(r.time, 7) for r in base.records]
        assert morse_index(alt.records, end=4.0) == morse_index(base.records, end=4.0) == 2


def test_horizontal_solution_matches_projection():
    patch, g = _hopf(3.0)
    sol = horizontal_solution(g, hopf_foliation(), patch)
    assert sol.projection_deviation() < 1e-6


@settings(max_examples=8, deadline=None)
@given(seeds, st.sampled_from([hopf_foliation, circles_times_line, parallel_lines]))
def test_splitting_random(seed, make):
    F = make()
    rng = np.random.default_rng(seed)
    for _ in range(6):
        x, v, length = random_horizontal(F, rng)
        try:
            patch, g = horizontal_geodesic(F, x, v, length)
            res = verify_index_splitting(g, F, patch)
        except PreconditionError:
            continue
        assert res["holds"], res
        return


def test_submersion_index_coincidence():
    # horizontal Hopf geodesics project to geodesics of S^2(1/2)
    F = hopf_foliation()
    base = RoundSphere(2, 0.5)
    north = np.array([0.0, 0.0, 0.5])
    for length in (0.7, 1.9, 3.6, 5.2):
        patch, g = _hopf(length)
        hor = horizontal_index(g, F, patch)
        bpatch = point_patch(base, north)
        bg = normal_geodesic(bpatch, np.zeros(0), [1.0, 0.0, 0.0], horizon=length)
        ref = morse_index(detect_focal(jacobi_basis(bpatch, bg)), end=length)
        assert hor == ref == int(length // (math.pi / 2))


# -- intrinsicality -----------------------------------------------------------------------


def _ray_pairs(rng, count):
    pairs = []
    for _ in range(count):
        r = rng.uniform(0.5, 2.0)
        s = rng.choice([-1.0, 1.0])
        length = rng.uniform(0.3, 3.0)
        if s < 0 and abs(length - r) < 0.05:
            length += 0.1
        a = rng.uniform(0, 2 * math.pi)
        u2 = np.array([math.cos(a), math.sin(a)])
        u3 = rng.normal(size=3)
        u3 /= np.linalg.norm(u3)
        pairs.append(((r * u2, s * u2), (r * u3, s * u3), length))
    return pairs


def test_intrinsicality_ray_quotient():
    rows = intrinsicality_probe(concentric_circles(), concentric_spheres(), _ray_pairs(np.random.default_rng(5), 4))
    for row in rows:
        assert row["equal"], row
        assert row["projection_deviation"] < 1e-8


def test_intrinsicality_half_plane_quotient():
    # circles x line in R^3 against 2-spheres x line in R^4: same half-plane quotient
    x2 = np.array([0.6, 0.8, 0.2])
    v2 = np.array([-0.6, -0.8, 0.5]) / math.sqrt(1.25)
    x3 = np.array([0.0, 0.6, 0.8, 0.2])
    v3 = np.array([0.0, -0.6, -0.8, 0.5]) / math.sqrt(1.25)
    rows = intrinsicality_probe(circles_times_line(), concentric_spheres(3, 1), [((x2, v2), (x3, v3), 2.0)])
    assert rows[0]["equal"], rows[0]
    assert rows[0]["rh_spectrum_deviation"] < 1e-6
