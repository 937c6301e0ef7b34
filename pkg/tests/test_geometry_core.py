from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from focal_forge.errors import DomainError
from focal_forge.spaces import (
    Euclidean,
    ProductSpace,
    RoundSphere,
    curvature_operator,
    metric_at,
    stereographic_sphere,
)
from focal_forge.submanifolds import (
    circle_patch,
    ellipse_patch,
    hopf_fiber_patch,
    hyperplane_patch,
    point_patch,
    shape_operator,
    sphere_patch,
)

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def _unit(x):
    return x / np.linalg.norm(x)


def _sphere_point(rng, n, r=1.0):
    return r * _unit(rng.normal(size=n + 1))


def _tangent(rng, x):
    w = rng.normal(size=x.shape)
    return w - (w @ x) / (x @ x) * x


# -- metric -----------------------------------------------------------------


def test_metric_euclidean_identity():
    np.testing.assert_array_equal(metric_at(Euclidean(3), [0.4, -1.0, 2.0]), np.eye(3))


def test_metric_sphere_orthonormal_basis():
    S = RoundSphere(2, 1.0)
    B = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(metric_at(S, [0, 0, 1.0], B), np.eye(2), atol=1e-15)


def test_metric_stereographic_origin():
    np.testing.assert_allclose(metric_at(stereographic_sphere(), [0.0, 0.0]), 4 * np.eye(2))


def test_metric_off_constraint_names_residual():
    with pytest.raises(DomainError) as exc:
        metric_at(RoundSphere(2, 1.0), [0, 0, 1.1])
    assert exc.value.residual == pytest.approx(0.1, rel=1e-6)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_metric_spd_random_points(seed):
    rng = np.random.default_rng(seed)
    spaces = [Euclidean(3), RoundSphere(2, 1.0), RoundSphere(3, 2.0), stereographic_sphere(),
              ProductSpace(Euclidean(1), RoundSphere(2))]
    for S in spaces:
        for _ in range(40):
            if isinstance(S, RoundSphere):
                x = _sphere_point(rng, S.dim, S.radius)
            elif isinstance(S, ProductSpace):
                x = np.concatenate([rng.normal(size=1), _sphere_point(rng, 2)])
            else:
                x = rng.normal(size=S.ambient_dim)
            G = metric_at(S, x)
            np.testing.assert_allclose(G, G.T, atol=1e-14)
            assert np.linalg.eigvalsh(G).min() > 0


# -- curvature --------------------------------------------------------------


def test_curvature_flat_is_zero():
    rng = np.random.default_rng(1)
    u, w = rng.normal(size=(2, 4))
    np.testing.assert_array_equal(curvature_operator(Euclidean(4), np.zeros(4), u, w), np.zeros(4))


def test_curvature_s3_orthonormal_pair():
    S = RoundSphere(3, 1.0)
    p = np.array([1.0, 0, 0, 0])
    u = np.array([0, 1.0, 0, 0])
    w = np.array([0, 0, 1.0, 0])
    np.testing.assert_allclose(curvature_operator(S, p, u, w), u, atol=1e-15)


def test_curvature_stereographic_matches_round_sphere():
    S = stereographic_sphere()
    u = np.array([1.0, 0.0])
    w = np.array([0.0, 1.0])
    # K = 1 and g = 4 I at the origin: R(u,w)w = g(w,w) u
    np.testing.assert_allclose(curvature_operator(S, [0.0, 0.0], u, w), 4 * u, atol=1e-6)


def test_curvature_rejects_non_tangent():
    with pytest.raises(DomainError):
        curvature_operator(RoundSphere(2), [0, 0, 1.0], [0, 0, 1.0], [1.0, 0, 0])


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from([(2, 1.0), (3, 1.0), (3, 0.5), (4, 2.0)]))
def test_constant_curvature_identity(seed, nr):
    n, r = nr
    rng = np.random.default_rng(seed)
    S = RoundSphere(n, r)
    x = _sphere_point(rng, n, r)
    u, w = _tangent(rng, x), _tangent(rng, x)
    k = 1.0 / r**2
    expected = k * ((w @ w) * u - (u @ w) * w)
    got = curvature_operator(S, x, u, w)
    np.testing.assert_allclose(got, expected, atol=1e-9 * max(1.0, np.abs(expected).max()))
    assert abs(got @ w) < 1e-9 * max(1.0, np.linalg.norm(u) * np.linalg.norm(w) ** 3)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_product_mixed_curvature_vanishes(seed):
    rng = np.random.default_rng(seed)
    P = ProductSpace(RoundSphere(2), Euclidean(2))
    x = np.concatenate([_sphere_point(rng, 2), rng.normal(size=2)])
    a = np.concatenate([_tangent(rng, x[:3]), np.zeros(2)])
    b = np.concatenate([np.zeros(3), rng.normal(size=2)])
    np.testing.assert_allclose(curvature_operator(P, x, a, b), 0.0, atol=1e-12)
    np.testing.assert_allclose(curvature_operator(P, x, b, a), 0.0, atol=1e-12)


def test_chart_curvature_second_order():
    S = stereographic_sphere()
    x = np.array([0.3, -0.2])
    u, w = np.eye(2)
    exact = 4 / (1 + x @ x) ** 2 * u
    errs = [np.linalg.norm(S.with_steps(1e-5, h).curvature(x, u, w) - exact) for h in (0.2, 0.1, 0.05)]
    assert errs[0] / errs[1] >= 3.0
    assert errs[1] / errs[2] >= 3.0


# -- patches and shape operators ---------------------------------------------


def test_shape_hyperplane_zero():
    P = hyperplane_patch(3)
    np.testing.assert_allclose(shape_operator(P, [0.3, -0.1], [0, 0, 1.0]), np.zeros((2, 2)), atol=1e-12)


def test_shape_circle_radius_two_inward():
    P = circle_patch(2.0)
    u = np.array([0.7])
    inward = -P.point(u) / 2.0
    np.testing.assert_allclose(shape_operator(P, u, inward), [[0.5]], atol=1e-8)


def test_shape_hopf_fiber_totally_geodesic():
    P = hopf_fiber_patch()
    u = np.array([0.4])
    for xi in P.normal_frame(u).T:
        np.testing.assert_allclose(shape_operator(P, u, xi), [[0.0]], atol=1e-8)


def test_shape_sphere_inward_is_plus_identity():
    P = sphere_patch(Euclidean(3), np.zeros(3), 2.0)
    u = np.array([0.1, 0.2])
    S = shape_operator(P, u, -P.point(u) / 2.0)
    np.testing.assert_allclose(S, 0.5 * np.eye(2), atol=1e-6)


def test_shape_rejects_non_unit_normal():
    P = circle_patch()
    with pytest.raises(DomainError):
        shape_operator(P, [0.0], [-2.0, 0.0])


def test_point_patch_frames():
    P = point_patch(RoundSphere(2), [0, 0, 1.0])
    assert P.leaf_dim == 0
    assert P.tangent_frame(np.zeros(0)).shape == (3, 0)
    assert P.codim == 2


def _patches():
    return [
        circle_patch(1.5, (0.2, -0.1)),
        ellipse_patch(),
        sphere_patch(Euclidean(3), np.zeros(3), 1.0),
        sphere_patch(Euclidean(4), np.zeros(4), 1.0, subspace=np.eye(4)[:, :3]),
        hyperplane_patch(3),
        hopf_fiber_patch(_unit(np.array([0.3, -0.2, 0.5, 0.7]))),
        point_patch(RoundSphere(3), [1.0, 0, 0, 0]),
    ]


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_frames_orthonormal(seed):
    rng = np.random.default_rng(seed)
    for P in _patches():
        u = rng.uniform(-0.4, 0.4, size=P.leaf_dim)
        assert P.frame_gram_deviation(u) < 1e-10
        T, N = P.frames(u)
        assert T.shape[1] + N.shape[1] == P.parent.dim
