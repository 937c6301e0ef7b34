"""Geodesic traces, the normal exponential map and L-Jacobi bases."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, PreconditionError
from .flow import NODES_PER_UNIT, FlowResult, StepRecord, integrate_flow, normal_frame_of
from .spaces import RiemannianSpace, householder_complement
from .submanifolds import SubmanifoldPatch, shape_operator

__all__ = [
    "GeodesicTrace",
    "JacobiBasisTrace",
    "integrate_geodesic",
    "normal_geodesic",
    "normal_exp",
    "jacobi_basis",
    "l_jacobi_initial_data",
    "symplectic_deviation",
    "jacobi_residual",
]

DEFAULT_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class GeodesicTrace:
    """Geodesic sampled on a fixed output grid.

    ``frames[i]`` is an orthonormal basis (rows) of the orthogonal complement
    of the velocity at node i, transported in parallel from t = 0.
    """

    space: RiemannianSpace
    point: np.ndarray
    velocity: np.ndarray
    horizon: float
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    frames: np.ndarray
    steps: StepRecord
    tol: float
    patch: SubmanifoldPatch | None = None
    param: np.ndarray | None = None
    _flow: FlowResult | None = None

    @property
    def speed(self) -> float:
        return float(self.space.norm(self.point, self.velocity))

    def state_at(self, t):
        """(x, v, E) at times t from the dense output."""
        x, v, E, _, _ = self._flow.evaluate(t)
        return x[0], v[0], E[0]

    def speed_deviation(self) -> float:
        s = self.space.norm(self.positions, self.velocities)
        return float(np.max(np.abs(s - self.speed)) / max(self.speed, 1e-300))

    def constraint_residual(self) -> float:
        return float(np.max(np.abs(self.space.constraint_residual(self.positions))))


def integrate_geodesic(
    space: RiemannianSpace,
    point,
    velocity,
    horizon: float,
    tol: float = DEFAULT_TOL,
    nodes_per_unit: int = NODES_PER_UNIT,
    patch: SubmanifoldPatch | None = None,
    param=None,
) -> GeodesicTrace:
    """Integrate the geodesic with initial data (point, velocity) on [0, horizon]."""
    x0 = space.check_point(point)
    v0 = space.check_tangent(x0, velocity)
    if not horizon > 0:
        raise DomainError("integrate_geodesic: horizon must be positive", float(horizon))
    if float(space.norm(x0, v0)) == 0.0:
        raise DomainError("integrate_geodesic: velocity must be nonzero")
    E0 = normal_frame_of(space, x0, v0)
    fl = integrate_flow(space, x0[None], v0[None], E0[None], T=horizon, tol=tol,
                        nodes_per_unit=nodes_per_unit)
    return GeodesicTrace(
        space=space,
        point=x0,
        velocity=v0,
        horizon=float(horizon),
        times=fl.times,
        positions=fl.x[0],
        velocities=fl.v[0],
        frames=fl.E[0],
        steps=fl.steps,
        tol=tol,
        patch=patch,
        param=None if param is None else np.asarray(param, dtype=float),
        _flow=fl,
    )


def normal_geodesic(patch: SubmanifoldPatch, u, v, horizon: float = 1.0, tol: float = DEFAULT_TOL,
                    nodes_per_unit: int = NODES_PER_UNIT) -> GeodesicTrace:
    """L-geodesic t -> exp(t v) from the foot point phi(u)."""
    patch.normal_coeffs(u, v)
    return integrate_geodesic(patch.parent, patch.point(u), v, horizon, tol,
                              nodes_per_unit, patch=patch, param=u)


def normal_exp(patch: SubmanifoldPatch, u, v, tol: float = DEFAULT_TOL) -> np.ndarray:
    """exp_perp(v) for a normal vector v at parameter u."""
    patch.normal_coeffs(u, v)
    x0 = patch.point(u)
    if float(patch.parent.norm(x0, v)) == 0.0:
        return x0
    space = patch.parent
    E0 = normal_frame_of(space, x0, v)
    fl = integrate_flow(space, x0[None], np.asarray(v, dtype=float)[None], E0[None], T=1.0,
                        tol=tol, times=np.array([0.0, 1.0]), dense=False)
    return fl.x[0, -1]


def l_jacobi_initial_data(patch: SubmanifoldPatch, u, v):
    """Ambient initial values and derivatives of the seeded L-Jacobi basis.

    Returns (J0, dJ0, tags) with J0, dJ0 of shape (N, m).  Tangent-seeded
    fields: J(0) = e_i, J'(0) = -S_v e_i.  Normal-seeded fields: J(0) = 0,
    J'(0) = n_j with n_j an orthonormal basis of the normal directions
    orthogonal to v.
    """
    space = patch.parent
    x0 = patch.point(u)
    v = np.asarray(v, dtype=float)
    speed = float(space.norm(x0, v))
    if speed == 0.0:
        raise DomainError("L-Jacobi data needs a nonzero normal vector")
    Tf, Nf = patch.frames(u)
    k = Tf.shape[1]
    S = shape_operator(patch, u, v / speed) * speed if k else np.zeros((0, 0))
    c = patch.normal_coeffs(u, v) / speed
    if Nf.shape[1] > 1:
        nperp = Nf @ householder_complement(c)
    else:
        nperp = np.zeros((space.ambient_dim, 0))
    m = k + nperp.shape[1]
    if m != space.dim - 1:
        raise DimensionError("tangent and normal frames do not add up to the space dimension")
    J0 = np.concatenate([Tf, np.zeros_like(nperp)], axis=1)
    dJ0 = np.concatenate([-Tf @ S, nperp], axis=1)
    tags = tuple([f"tangent:{i}" for i in range(k)] + [f"normal:{j}" for j in range(nperp.shape[1])])
    return J0, dJ0, tags


@dataclass(frozen=True, eq=False)
class JacobiBasisTrace:
    """Jacobi matrix along a normal geodesic.

    ``values[i]`` is the m x m matrix J(t_i): rows are the parallel normal
    directions ``frames[i]``, columns are the basis fields.  ``derivatives``
    holds the covariant derivative in the same frame.
    """

    geodesic: GeodesicTrace
    patch: SubmanifoldPatch | None
    param: np.ndarray | None
    times: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    frames: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    tags: tuple
    _flow: FlowResult

    @property
    def count(self) -> int:
        return self.values.shape[2]

    @property
    def space(self) -> RiemannianSpace:
        return self.geodesic.space

    def evaluate(self, t):
        """(J, J') frame matrices at arbitrary times (arrays over t)."""
        _, _, _, Y, dY = self._flow.evaluate(t)
        return Y[0], dY[0]

    def state_at(self, t):
        x, v, E, Y, dY = self._flow.evaluate(t)
        return x[0], v[0], E[0], Y[0], dY[0]

    def ambient_values(self, node: int) -> np.ndarray:
        """J(t_node) as ambient vectors, shape (N, count)."""
        return self.frames[node].T @ self.values[node]

    def ambient_derivatives(self, node: int) -> np.ndarray:
        return self.frames[node].T @ self.derivatives[node]

    def symplectic(self, node: int | None = None) -> np.ndarray:
        """omega(J_a, J_b) = <J_a', J_b> - <J_a, J_b'> at one node or all nodes."""
        Y = self.values if node is None else self.values[node]
        dY = self.derivatives if node is None else self.derivatives[node]
        return np.swapaxes(dY, -1, -2) @ Y - np.swapaxes(Y, -1, -2) @ dY


def _jacobi_from_data(space, x0, v0, J0, dJ0, horizon, tol, nodes_per_unit, times=None, dense=True):
    """Integrate Jacobi fields with given ambient initial data.

    Components along the velocity are split off; they evolve linearly and
    are returned separately as coefficients (a0 + a1 t) of the unit tangent.
    """
    E0 = normal_frame_of(space, x0, v0)
    gE = space.lower(x0[None, :], E0)
    Y0 = gE @ J0
    dY0 = gE @ dJ0
    speed = float(space.norm(x0, v0))
    T0 = space.lower(x0, v0 / speed)
    tan = np.stack([T0 @ J0, T0 @ dJ0])
    fl = integrate_flow(space, x0[None], v0[None], E0[None], Y0[None], dY0[None], T=horizon,
                        tol=tol, times=times, dense=dense, nodes_per_unit=nodes_per_unit)
    return fl, tan


def jacobi_basis(patch: SubmanifoldPatch, geodesic: GeodesicTrace, tol: float | None = None) -> JacobiBasisTrace:
    """Seeded L-Jacobi basis along ``geodesic`` (which must start on the patch)."""
    u = geodesic.param
    if u is None:
        if patch.leaf_dim != 0:
            raise PreconditionError("jacobi_basis: geodesic carries no foot parameter; use normal_geodesic")
        u = np.zeros(0)
    space = patch.parent
    if space is not geodesic.space and space.describe() != geodesic.space.describe():
        raise DimensionError("jacobi_basis: patch and geodesic live in different spaces")
    x0 = patch.point(u)
    if float(np.linalg.norm(x0 - geodesic.point)) > 1e-9:
        raise PreconditionError("jacobi_basis: geodesic does not start at the foot point")
    J0, dJ0, tags = l_jacobi_initial_data(patch, u, geodesic.velocity)
    tol = geodesic.tol if tol is None else tol
    fl, _ = _jacobi_from_data(space, x0, geodesic.velocity, J0, dJ0, geodesic.horizon, tol,
                              NODES_PER_UNIT, times=geodesic.times)
    return JacobiBasisTrace(
        geodesic=geodesic,
        patch=patch,
        param=np.asarray(u, dtype=float),
        times=fl.times,
        values=fl.Y[0],
        derivatives=fl.dY[0],
        frames=fl.E[0],
        positions=fl.x[0],
        velocities=fl.v[0],
        tags=tags,
        _flow=fl,
    )


def symplectic_deviation(basis: JacobiBasisTrace) -> float:
    """max_t |omega(t) - omega(0)| over all pairs of basis fields."""
    W = basis.symplectic()
    return float(np.max(np.abs(W - W[0]), initial=0.0))


def _d4(a, dt):
    """Fourth-order central derivative along axis 0 (interior nodes only)."""
    return (-a[4:] + 8 * a[3:-1] - 8 * a[1:-3] + a[:-4]) / (12 * dt)


def jacobi_residual(basis) -> float:
    """Max residual of J'' + R(J, g')g' = 0 and of J' against d/dt J.

    Derivatives are re-taken from the node data with a fourth-order stencil,
    so this checks the stored trace rather than the integrator internals.
    Any object with ``times``, ``positions``, ``velocities``, ``frames``,
    ``values``, ``derivatives`` and ``space`` attributes is accepted.
    """
    t = basis.times
    if len(t) < 5:
        return 0.0
    dt = t[1] - t[0]
    space = basis.space
    K = space.jacobi_operator(basis.positions, basis.velocities, basis.frames)
    Y = basis.values
    dY = basis.derivatives
    acc = _d4(dY, dt)
    res1 = acc + np.einsum("tca,tck->tak", K[2:-2], Y[2:-2])
    res2 = _d4(Y, dt) - dY[2:-2]
    return float(max(np.max(np.abs(res1), initial=0.0), np.max(np.abs(res2), initial=0.0)))
