"""Singular Riemannian foliations described by leaf data.

A foliation is given by the integer leaf dimension at a point, a spanning
frame of the leaf tangent space and a finite list of Killing fields whose
orbits are the leaves.  All built-ins are homogeneous, so the vertical
Jacobi fields along a horizontal geodesic are restrictions of Killing fields.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConstructionError, DimensionError, PreconditionError
from .focal import FocalRecord, _golden_min, locate_rank_drops
from .jacobi import GeodesicTrace
from .quaternion import LEFT_I, hopf_map
from .spaces import (
    Euclidean,
    ProductSpace,
    RiemannianSpace,
    RoundSphere,
    householder_complement,
)
from .submanifolds import (
    SubmanifoldPatch,
    affine_patch,
    hopf_fiber_patch,
    point_patch,
    product_patch,
    sphere_patch,
)

__all__ = [
    "KillingField",
    "FoliationSpec",
    "VerticalJacobiTrace",
    "concentric_spheres",
    "concentric_circles",
    "circles_times_line",
    "hopf_foliation",
    "parallel_lines",
    "point_foliation",
    "product_foliation",
    "horizontality_check",
    "singular_times",
    "crossing_number",
    "vertical_jacobi_basis",
    "w_focal_records",
    "w_focal_index",
]


@dataclass(frozen=True, eq=False)
class KillingField:
    """Affine vector field x -> A x + b (A skew for isometries)."""

    A: np.ndarray
    b: np.ndarray
    name: str = "K"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.A.T + self.b

    def along(self, xdot) -> np.ndarray:
        """Ambient derivative d/dt K(c(t)) given c'(t)."""
        return np.asarray(xdot, dtype=float) @ self.A.T

    def combine(self, other: "KillingField", a: float = 1.0, b: float = 1.0) -> "KillingField":
        return KillingField(a * self.A + b * other.A, a * self.b + b * other.b, f"{self.name}+{other.name}")


def _combo(fields, coeffs) -> KillingField:
    A = sum(c * f.A for c, f in zip(coeffs, fields))
    b = sum(c * f.b for c, f in zip(coeffs, fields))
    return KillingField(np.asarray(A, dtype=float), np.asarray(b, dtype=float), "combo")


@dataclass(frozen=True, eq=False)
class FoliationSpec:
    """Leaf data of a (possibly singular) Riemannian foliation.

    ``leaf_dim_fn(x, atol)`` returns the exact dimension of the leaf through
    x; with ``atol > 0`` a point within distance atol of a lower stratum is
    reported with the lower dimension.  ``stratum_distance_fn`` (optional)
    measures the distance to the singular set and is used to localize
    crossings.  ``leaf_patch_fn(x)`` returns (patch, u) with phi(u) = x.
    """

    parent: RiemannianSpace
    regular_dim: int
    leaf_dim_fn: Callable
    vertical_frame_fn: Callable
    killing_generators: tuple = ()
    stratum_distance_fn: Callable | None = None
    quotient_projection: Callable | None = None
    quotient_metric: dict = field(default_factory=dict)
    leaf_patch_fn: Callable | None = None
    name: str = "foliation"

    def leaf_dim(self, x, atol: float = 0.0) -> int:
        return int(self.leaf_dim_fn(np.asarray(x, dtype=float), float(atol)))

    def vertical_frame(self, x) -> np.ndarray:
        """Columns spanning the tangent space of the leaf through x, shape (N, dim)."""
        x = np.asarray(x, dtype=float)
        V = np.asarray(self.vertical_frame_fn(x), dtype=float)
        return V.reshape(self.parent.ambient_dim, -1)

    def leaf_patch(self, x):
        if self.leaf_patch_fn is None:
            raise ConstructionError(f"{self.name}: no leaf parametrization available")
        return self.leaf_patch_fn(np.asarray(x, dtype=float))

    def project(self, x) -> np.ndarray:
        if self.quotient_projection is None:
            raise ConstructionError(f"{self.name}: no quotient projection available")
        return np.asarray(self.quotient_projection(np.asarray(x, dtype=float)), dtype=float)

    def killing_residual(self, x) -> float:
        """Largest distance of a generator value from the leaf tangent space."""
        x = np.asarray(x, dtype=float)
        V = self.vertical_frame(x)
        worst = 0.0
        for K in self.killing_generators:
            k = K(x)
            if V.shape[1]:
                k = k - V @ np.linalg.lstsq(V, k, rcond=None)[0]
            worst = max(worst, float(np.linalg.norm(k)))
        return worst

    def describe(self) -> dict:
        return {
            "name": self.name,
            "parent": self.parent.describe(),
            "regular_dim": self.regular_dim,
            "generators": len(self.killing_generators),
            "quotient": dict(self.quotient_metric),
        }


# ---------------------------------------------------------------------------
# built-ins


def _rotation(N, i, j) -> KillingField:
    A = np.zeros((N, N))
    A[i, j] = -1.0
    A[j, i] = 1.0
    return KillingField(A, np.zeros(N), f"rot({i},{j})")


def concentric_spheres(m: int = 3, extra: int = 0) -> FoliationSpec:
    """Spheres |y| = r around the origin of R^m, times the points of R^extra.

    The leaf through (y, z) is S^(m-1)(|y|) x {z}; the only singular leaves
    are the points (0, z).  With m = 2, extra = 1 this is the isoparametric
    foliation of R^3 by concentric circles times a line.
    """
    if m < 2:
        raise DimensionError("concentric_spheres: m must be at least 2")
    N = m + extra
    space = Euclidean(N)

    def dist(x):
        return float(np.linalg.norm(x[:m]))

    def leaf_dim(x, atol):
        return m - 1 if dist(x) > atol else 0

    def frame(x):
        r = dist(x)
        if r == 0.0:
            return np.zeros((N, 0))
        V = np.zeros((N, m - 1))
        V[:m] = householder_complement(x[:m] / r)
        return V

    gens = tuple(_rotation(N, i, j) for i in range(m) for j in range(i + 1, m))

    def project(x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([np.linalg.norm(x[..., :m], axis=-1)[..., None], x[..., m:]], axis=-1)

    def leaf_patch(x):
        r = dist(x)
        if r == 0.0:
            return point_patch(space, x), np.zeros(0)
        center = np.concatenate([np.zeros(m), x[m:]])
        Q = np.eye(N)[:, :m]
        if m == 2:
            patch = sphere_patch(space, center, r, subspace=Q)
            return patch, np.array([math.atan2(x[1], x[0]) % (2 * np.pi)])
        patch = sphere_patch(space, center, r, subspace=Q, base_dir=x[:m] / r)
        return patch, np.zeros(m - 1)

    name = f"concentric-spheres(R^{m})" if extra == 0 else f"concentric-spheres(R^{m})xR^{extra}"
    return FoliationSpec(
        parent=space,
        regular_dim=m - 1,
        leaf_dim_fn=leaf_dim,
        vertical_frame_fn=frame,
        killing_generators=gens,
        stratum_distance_fn=dist,
        quotient_projection=project,
        quotient_metric={"kind": "half-space", "dim": 1 + extra, "curvature": 0.0},
        leaf_patch_fn=leaf_patch,
        name=name,
    )


def concentric_circles() -> FoliationSpec:
    return concentric_spheres(2)


def circles_times_line() -> FoliationSpec:
    return concentric_spheres(2, 1)


def hopf_foliation() -> FoliationSpec:
    """Hopf circles q -> e^{it} q on the unit S^3; quotient S^2(1/2)."""
    space = RoundSphere(3, 1.0)
    K = KillingField(LEFT_I.copy(), np.zeros(4), "i")

    def leaf_patch(x):
        return hopf_fiber_patch(x / np.linalg.norm(x)), np.zeros(1)

    return FoliationSpec(
        parent=space,
        regular_dim=1,
        leaf_dim_fn=lambda x, atol: 1,
        vertical_frame_fn=lambda x: (LEFT_I @ x)[:, None],
        killing_generators=(K,),
        stratum_distance_fn=None,
        quotient_projection=hopf_map,
        quotient_metric={"kind": "round-sphere", "dim": 2, "radius": 0.5},
        leaf_patch_fn=leaf_patch,
        name="hopf(S^3)",
    )


def parallel_lines(n: int = 3, direction=None) -> FoliationSpec:
    """Product foliation R x R^(n-1) of euclidean(n) by parallel lines."""
    space = Euclidean(n)
    d = np.eye(n)[0] if direction is None else np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    comp = householder_complement(d)
    K = KillingField(np.zeros((n, n)), d.copy(), "translation")

    def leaf_patch(x):
        return affine_patch(n, x, d[:, None]), np.zeros(1)

    return FoliationSpec(
        parent=space,
        regular_dim=1,
        leaf_dim_fn=lambda x, atol: 1,
        vertical_frame_fn=lambda x: d[:, None],
        killing_generators=(K,),
        stratum_distance_fn=None,
        quotient_projection=lambda x: np.asarray(x, dtype=float) @ comp,
        quotient_metric={"kind": "euclidean", "dim": n - 1, "curvature": 0.0},
        leaf_patch_fn=leaf_patch,
        name=f"parallel-lines(R^{n})",
    )


def point_foliation(space: RiemannianSpace) -> FoliationSpec:
    """Trivial foliation by points."""
    N = space.ambient_dim
    return FoliationSpec(
        parent=space,
        regular_dim=0,
        leaf_dim_fn=lambda x, atol: 0,
        vertical_frame_fn=lambda x: np.zeros((N, 0)),
        killing_generators=(),
        stratum_distance_fn=None,
        quotient_projection=lambda x: np.asarray(x, dtype=float),
        quotient_metric={"kind": "identity", "space": space.describe()},
        leaf_patch_fn=lambda x: (point_patch(space, x), np.zeros(0)),
        name=f"points({space.describe().get('kind', 'space')})",
    )


def product_foliation(first: FoliationSpec, second: FoliationSpec) -> FoliationSpec:
    """Leaves L1 x L2 in the product of the two parent spaces."""
    space = ProductSpace(first.parent, second.parent)
    N1 = first.parent.ambient_dim
    N = space.ambient_dim

    def split(x):
        return x[:N1], x[N1:]

    def leaf_dim(x, atol):
        a, b = split(x)
        return first.leaf_dim(a, atol) + second.leaf_dim(b, atol)

    def frame(x):
        a, b = split(x)
        V1, V2 = first.vertical_frame(a), second.vertical_frame(b)
        V = np.zeros((N, V1.shape[1] + V2.shape[1]))
        V[:N1, : V1.shape[1]] = V1
        V[N1:, V1.shape[1] :] = V2
        return V

    def lift(K, lo):
        A = np.zeros((N, N))
        b = np.zeros(N)
        n = K.A.shape[0]
        A[lo : lo + n, lo : lo + n] = K.A
        b[lo : lo + n] = K.b
        return KillingField(A, b, K.name)

    gens = tuple(lift(K, 0) for K in first.killing_generators) + tuple(
        lift(K, N1) for K in second.killing_generators
    )

    dist = None
    if first.stratum_distance_fn or second.stratum_distance_fn:
        def dist(x):
            a, b = split(x)
            ds = [f(y) for f, y in ((first.stratum_distance_fn, a), (second.stratum_distance_fn, b)) if f]
            return float(min(ds))

    def leaf_patch(x):
        a, b = split(x)
        p1, u1 = first.leaf_patch(a)
        p2, u2 = second.leaf_patch(b)
        return product_patch(space, p1, p2), np.concatenate([u1, u2])

    project = None
    if first.quotient_projection and second.quotient_projection:
        def project(x):
            a, b = split(np.asarray(x, dtype=float))
            return np.concatenate([np.atleast_1d(first.project(a)), np.atleast_1d(second.project(b))])

    return FoliationSpec(
        parent=space,
        regular_dim=first.regular_dim + second.regular_dim,
        leaf_dim_fn=leaf_dim,
        vertical_frame_fn=frame,
        killing_generators=gens,
        stratum_distance_fn=dist,
        quotient_projection=project,
        quotient_metric={"kind": "product", "factors": [first.quotient_metric, second.quotient_metric]},
        leaf_patch_fn=leaf_patch,
        name=f"{first.name}x{second.name}",
    )


# ---------------------------------------------------------------------------
# operations along geodesics


def _check_space(geodesic: GeodesicTrace, foliation: FoliationSpec):
    if geodesic.space.describe() != foliation.parent.describe():
        raise DimensionError("geodesic and foliation live in different spaces")


def horizontality_check(geodesic: GeodesicTrace, foliation: FoliationSpec, tol: float = 1e-8,
                        max_nodes: int = 257):
    """(passed, max deviation) of |<gamma'/|gamma'|, V>| over unit vertical vectors and nodes.

    Killing inner products are constant along a geodesic, so an evenly spaced
    subset of at most ``max_nodes`` grid nodes (endpoints included) suffices.
    """
    _check_space(geodesic, foliation)
    space = geodesic.space
    worst = 0.0
    m = len(geodesic.times)
    idx = np.unique(np.linspace(0, m - 1, min(m, max_nodes)).round().astype(int))
    for x, v in zip(geodesic.positions[idx], geodesic.velocities[idx]):
        V = foliation.vertical_frame(x)
        if V.shape[1] == 0:
            continue
        G = V.T @ space.lower(x, V.T).T
        w = V.T @ space.lower(x, v) / float(space.norm(x, v))
        # norm of the projection of the unit velocity onto span(V)
        dev = float(np.sqrt(max(w @ np.linalg.solve(G, w), 0.0)))
        worst = max(worst, dev)
    return worst < tol, worst


def singular_times(geodesic: GeodesicTrace, foliation: FoliationSpec, hit_tol: float = 1e-7):
    """Times where the geodesic meets a lower-dimensional leaf, with that leaf's dimension.

    Candidates are grid nodes within one step of the singular set (as seen
    by ``leaf_dim`` with a step-sized tolerance); each is localized by
    golden-section search on the stratum distance.  A transversality guard
    requires the regular dimension to come back within one grid step.
    """
    t = geodesic.times
    n = foliation.regular_dim
    dt = float(t[1] - t[0])
    speed = geodesic.speed
    dist = foliation.stratum_distance_fn
    out = []
    if dist is None:
        drops = [i for i, x in enumerate(geodesic.positions) if foliation.leaf_dim(x) < n]
        for i in drops:
            out.append((float(t[i]), foliation.leaf_dim(geodesic.positions[i])))
        return out
    near = [i for i, x in enumerate(geodesic.positions)
            if foliation.leaf_dim(x, atol=1.01 * speed * dt) < n]
    groups = []
    for i in near:
        if groups and i == groups[-1][-1] + 1:
            groups[-1].append(i)
        else:
            groups.append([i])

    def f(s):
        x, _, _ = geodesic.state_at(s)
        return dist(x[0])

    for g in groups:
        a = t[max(g[0] - 1, 0)]
        b = t[min(g[-1] + 1, len(t) - 1)]
        ts = _golden_min(f, a, b, 1e-12)
        if f(ts) > hit_tol * max(1.0, speed):
            continue
        x, _, _ = geodesic.state_at(ts)
        dim = foliation.leaf_dim(x[0], atol=hit_tol * max(1.0, speed))
        if dim >= n:
            continue
        for s in (ts - dt, ts + dt):
            if 0.0 <= s <= t[-1]:
                xs, _, _ = geodesic.state_at(s)
                if foliation.leaf_dim(xs[0]) < n:
                    raise PreconditionError(
                        f"geodesic stays on the singular stratum near t={ts:.6g} (tangential contact)"
                    )
        out.append((float(ts), dim))
    return out


def _regular_endpoints(geodesic, foliation):
    n = foliation.regular_dim
    for x, label in ((geodesic.positions[0], "start"), (geodesic.positions[-1], "end")):
        if foliation.leaf_dim(x, atol=1e-9) < n:
            raise PreconditionError(f"{label} point lies on a singular leaf")


def crossing_number(geodesic: GeodesicTrace, foliation: FoliationSpec, tol: float = 1e-6) -> int:
    """c(gamma) = sum over singular crossings of (regular dim - dim at the crossing)."""
    _check_space(geodesic, foliation)
    _regular_endpoints(geodesic, foliation)
    ok, dev = horizontality_check(geodesic, foliation, tol)
    if not ok:
        raise PreconditionError(f"geodesic is not horizontal (deviation {dev:.3e})")
    n = foliation.regular_dim
    return int(sum(n - d for _, d in singular_times(geodesic, foliation)))


@dataclass(frozen=True, eq=False)
class VerticalJacobiTrace:
    """Jacobi fields along a horizontal geodesic spanned by restricted Killing fields.

    Same layout as a JacobiBasisTrace: ``values[i]`` has rows along the
    parallel normal frame ``frames[i]`` and one column per field.
    """

    geodesic: GeodesicTrace
    foliation: FoliationSpec
    fields: tuple
    times: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    frames: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    tags: tuple

    @property
    def count(self) -> int:
        return len(self.fields)

    @property
    def space(self) -> RiemannianSpace:
        return self.geodesic.space

    def _frame_data(self, x, v, E):
        space = self.space
        N = space.ambient_dim
        k = len(self.fields)
        if k == 0:
            return np.zeros(x.shape[:-1] + (E.shape[-2], 0)), np.zeros(x.shape[:-1] + (E.shape[-2], 0))
        vals = np.stack([K(x) for K in self.fields], axis=-1)  # (..., N, k)
        rates = np.stack([K.along(v) for K in self.fields], axis=-1)
        dvals = np.stack(
            [space.covariant_along(x, v, vals[..., a], rates[..., a]) for a in range(k)], axis=-1
        )
        gE = space.lower(x[..., None, :], E)  # (..., m, N)
        del N
        return gE @ vals, gE @ dvals

    def evaluate(self, t):
        """(values, derivatives) at arbitrary times, stacked over t."""
        x, v, E = self.geodesic.state_at(t)
        return self._frame_data(x, v, E)

    def ambient_values(self, node: int) -> np.ndarray:
        x = self.positions[node]
        return np.stack([K(x) for K in self.fields], axis=-1) if self.fields else np.zeros((x.shape[0], 0))

    def span_deviation(self) -> float:
        """Max sine of principal angles between W(t) and the leaf tangent space at regular nodes."""
        worst = 0.0
        d = len(self.fields)
        for i, x in enumerate(self.positions):
            if self.foliation.leaf_dim(x, atol=1e-6) < d or d == 0:
                continue
            W = np.linalg.qr(self.ambient_values(i))[0]
            V = np.linalg.qr(self.foliation.vertical_frame(x))[0]
            if V.shape[1] != W.shape[1]:
                return math.inf
            # sine of the largest principal angle, without cancellation
            worst = max(worst, float(np.linalg.norm(W - V @ (V.T @ W), 2)))
        return worst


def vertical_jacobi_basis(geodesic: GeodesicTrace, foliation: FoliationSpec,
                          rank_tol: float = 1e-8) -> VerticalJacobiTrace:
    """Vertical Jacobi fields W along a horizontal geodesic.

    The generators are restricted along the geodesic and recombined by an
    SVD at the start point, keeping d = max leaf dimension independent
    combinations; combinations vanishing identically along the geodesic
    (e.g. the rotation about a radial line) are discarded this way.
    """
    _check_space(geodesic, foliation)
    x0 = geodesic.positions[0]
    d = max(foliation.leaf_dim(x) for x in geodesic.positions[:: max(1, len(geodesic.times) // 64)])
    d = max(d, foliation.leaf_dim(x0))
    if foliation.leaf_dim(x0, atol=1e-9) < d:
        raise PreconditionError("vertical_jacobi_basis: start point must lie on a regular leaf")
    gens = foliation.killing_generators
    if d > 0:
        if not gens:
            raise ConstructionError(f"{foliation.name}: no Killing generators, cannot realize W")
        M = np.stack([K(x0) for K in gens], axis=-1)
        U, s, Vt = np.linalg.svd(M)
        if len(s) < d or s[d - 1] <= rank_tol * max(s[0], 1e-300):
            raise ConstructionError(
                f"{foliation.name}: only {int(np.sum(s > rank_tol * s[0]))} independent generators, need {d}"
            )
        fields = tuple(_combo(gens, Vt[a]) for a in range(d))
    else:
        fields = ()
    space = geodesic.space
    speed = geodesic.speed
    for K in fields:
        tang = float(np.max(np.abs(space.inner(geodesic.positions, K(geodesic.positions), geodesic.velocities))))
        if tang > 1e-6 * max(1.0, speed):
            raise PreconditionError(f"vertical field not normal to the geodesic (|<K, g'>| = {tang:.3e})")
    trace = VerticalJacobiTrace(
        geodesic=geodesic,
        foliation=foliation,
        fields=fields,
        times=geodesic.times,
        values=np.zeros((len(geodesic.times), geodesic.frames.shape[1], len(fields))),
        derivatives=np.zeros((len(geodesic.times), geodesic.frames.shape[1], len(fields))),
        frames=geodesic.frames,
        positions=geodesic.positions,
        velocities=geodesic.velocities,
        tags=tuple(f"vertical:{a}" for a in range(len(fields))),
    )
    Y, dY = trace._frame_data(geodesic.positions, geodesic.velocities, geodesic.frames)
    object.__setattr__(trace, "values", Y)
    object.__setattr__(trace, "derivatives", dY)
    return trace


def w_focal_records(wbasis: VerticalJacobiTrace, window=None, gap: float = 1e3, zero_tol: float = 1e-6):
    """Times where some nonzero W-field vanishes, with dim{J in W : J(t) = 0}."""
    T = float(wbasis.times[-1])
    window = (0.0, T) if window is None else window

    def evaluate(t):
        return wbasis.evaluate(t)[0][0]

    drops = locate_rank_drops(wbasis.times, wbasis.values, evaluate, window, gap, zero_tol)
    return [FocalRecord(t, mu, r, dd, None, s) for (t, mu, r, dd, s) in drops]


def w_focal_index(geodesic: GeodesicTrace, foliation: FoliationSpec, gap: float = 1e3) -> int:
    """ind_W = sum over interior W-focal times of dim{J in W : J(t) = 0}."""
    _regular_endpoints(geodesic, foliation)
    wb = vertical_jacobi_basis(geodesic, foliation)
    T = float(geodesic.times[-1])
    recs = w_focal_records(wb, gap=gap)
    return int(sum(r.multiplicity for r in recs if 0.0 < r.time < T - 1e-8))
