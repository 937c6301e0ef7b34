"""Parametrized submanifolds, their frames and shape operators.

A patch is a parametrization u -> phi(u) from a box in R^k into a
Riemannian space together with orthonormal tangent and normal frames.
Derivatives of phi are taken from callables when the builder knows them in
closed form, otherwise from fourth-order central differences.

Shape operator sign: S_xi X = -(nabla_X xi)^T, so that the inward normal of
a round sphere of radius r gives S = +(1/r) I.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError
from .quaternion import LEFT_I, LEFT_J, LEFT_K
from .spaces import Euclidean, RiemannianSpace, RoundSphere, householder_complement

__all__ = [
    "SubmanifoldPatch",
    "shape_operator",
    "point_patch",
    "hyperplane_patch",
    "sphere_patch",
    "circle_patch",
    "ellipse_patch",
    "great_circle_patch",
    "hopf_fiber_patch",
    "affine_patch",
    "product_patch",
    "unit_directions",
]


def _fd_first(f, u, h):
    """Fourth-order central difference of f at u, stacked on the last axis."""
    cols = []
    for a in range(u.shape[0]):
        e = np.zeros_like(u)
        e[a] = h
        cols.append((-f(u + 2 * e) + 8 * f(u + e) - 8 * f(u - e) + f(u - 2 * e)) / (12 * h))
    return np.stack(cols, axis=-1)


def _orthonormalize(space, x, A):
    """Metric Gram-Schmidt of the columns of A (via Cholesky, deterministic)."""
    if A.shape[1] == 0:
        return A
    GA = space.lower(x, A.T).T
    G = A.T @ GA
    L = np.linalg.cholesky(0.5 * (G + G.T))
    return np.linalg.solve(L, A.T).T


@dataclass(frozen=True, eq=False)
class SubmanifoldPatch:
    """Parametrized submanifold of ``parent`` with orthonormal frames."""

    parent: RiemannianSpace
    parametrization: Callable[[np.ndarray], np.ndarray]
    param_box: np.ndarray
    tangent_frame_fn: Callable | None = None
    normal_frame_fn: Callable | None = None
    jacobian_fn: Callable | None = None
    hessian_fn: Callable | None = None
    recenter_fn: Callable | None = None
    seed_fn: Callable | None = None
    periodic: tuple = ()
    name: str = "patch"
    fd_step: float = 1e-5
    hessian_step: float = 1e-3
    meta: dict = field(default_factory=dict)

    # -- basic data -----------------------------------------------------
    @property
    def leaf_dim(self) -> int:
        return int(np.asarray(self.param_box).shape[0])

    @property
    def codim(self) -> int:
        return self.parent.dim - self.leaf_dim

    def _u(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float)).reshape(-1)
        if u.shape[0] != self.leaf_dim:
            raise DimensionError(f"{self.name}: expected {self.leaf_dim} parameters, got {u.shape[0]}")
        return u

    def point(self, u) -> np.ndarray:
        return np.asarray(self.parametrization(self._u(u)), dtype=float)

    def jacobian(self, u) -> np.ndarray:
        u = self._u(u)
        if self.leaf_dim == 0:
            return np.zeros((self.parent.ambient_dim, 0))
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(u), dtype=float)
        return _fd_first(self.parametrization, u, self.fd_step)

    def hessian(self, u) -> np.ndarray:
        """Second partials of the parametrization, shape (N, k, k)."""
        u = self._u(u)
        k = self.leaf_dim
        N = self.parent.ambient_dim
        if k == 0:
            return np.zeros((N, 0, 0))
        if self.hessian_fn is not None:
            return np.asarray(self.hessian_fn(u), dtype=float)
        h = self.hessian_step
        jac = self.jacobian_fn if self.jacobian_fn is not None else (
            lambda w: _fd_first(self.parametrization, w, self.fd_step)
        )
        H = _fd_first(jac, u, h)  # H[:, b, a] = d_a d_b phi
        return 0.5 * (H + np.swapaxes(H, 1, 2))

    def tangent_frame(self, u) -> np.ndarray:
        u = self._u(u)
        if self.leaf_dim == 0:
            return np.zeros((self.parent.ambient_dim, 0))
        if self.tangent_frame_fn is not None:
            return np.asarray(self.tangent_frame_fn(u), dtype=float)
        return _orthonormalize(self.parent, self.point(u), self.jacobian(u))

    def normal_frame(self, u) -> np.ndarray:
        u = self._u(u)
        if self.normal_frame_fn is not None:
            return np.asarray(self.normal_frame_fn(u), dtype=float).reshape(self.parent.ambient_dim, -1)
        x = self.point(u)
        B = self.parent.tangent_basis(x)
        if self.leaf_dim == 0:
            return B
        T = self.tangent_frame(u)
        P = B - T @ (self.parent.lower(x, T.T) @ B)
        # keep the most independent projected basis vectors, in order
        keep = []
        for j in np.argsort(-np.linalg.norm(P, axis=0), kind="stable"):
            trial = P[:, keep + [int(j)]]
            if np.linalg.matrix_rank(trial, tol=1e-8) == len(keep) + 1:
                keep.append(int(j))
            if len(keep) == self.codim:
                break
        return _orthonormalize(self.parent, x, P[:, sorted(keep)])

    def frames(self, u):
        return self.tangent_frame(u), self.normal_frame(u)

    def frame_gram_deviation(self, u) -> float:
        x = self.point(u)
        T, Nf = self.frames(u)
        F = np.concatenate([T, Nf], axis=1)
        G = F.T @ self.parent.lower(x, F.T).T
        return float(np.max(np.abs(G - np.eye(F.shape[1])), initial=0.0))

    # -- normal vectors -------------------------------------------------
    def normal_vector(self, u, coeffs) -> np.ndarray:
        Nf = self.normal_frame(u)
        c = np.asarray(coeffs, dtype=float).reshape(-1)
        if c.shape[0] != Nf.shape[1]:
            raise DimensionError(f"{self.name}: expected {Nf.shape[1]} normal coefficients")
        return Nf @ c

    def normal_coeffs(self, u, v, tol: float = 1e-9) -> np.ndarray:
        """Coefficients of v in the normal frame; checks that v is normal."""
        x = self.point(u)
        Nf = self.normal_frame(u)
        v = np.asarray(v, dtype=float)
        c = Nf.T @ self.parent.lower(x, v)
        res = float(self.parent.norm(x, v - Nf @ c))
        if res > tol * max(1.0, float(np.linalg.norm(v))):
            raise DomainError(f"{self.name}: vector not in the span of the normal frame", res)
        return c

    def normal_field_derivative(self, u, coeffs) -> np.ndarray:
        """Covariant derivatives d/du_a of V(u) = N(u) c, shape (N, k)."""
        u = self._u(u)
        k = self.leaf_dim
        c = np.asarray(coeffs, dtype=float)
        if k == 0:
            return np.zeros((self.parent.ambient_dim, 0))
        V = lambda w: self.normal_frame(w) @ c  # noqa: E731
        dV = _fd_first(V, u, self.fd_step)
        x = self.point(u)
        D = self.jacobian(u)
        return np.stack(
            [self.parent.covariant_along(x, D[:, a], V(u), dV[:, a]) for a in range(k)], axis=-1
        )

    # -- charts and seeds -----------------------------------------------
    def recentered(self, u):
        """Return (patch, u') describing the same point in a well-centred chart."""
        if self.recenter_fn is None:
            return self, self._u(u)
        return self.recenter_fn(self._u(u))

    def wrap(self, u) -> np.ndarray:
        u = self._u(u).copy()
        box = np.asarray(self.param_box, dtype=float)
        for a in self.periodic:
            lo, hi = box[a]
            u[a] = lo + np.mod(u[a] - lo, hi - lo)
        return u

    def seeds(self, density: int):
        """Seed foot points (patch, u) covering the submanifold."""
        if self.seed_fn is not None:
            return self.seed_fn(int(density))
        k = self.leaf_dim
        if k == 0:
            return [(self, np.zeros(0))]
        box = np.asarray(self.param_box, dtype=float)
        axes = []
        for a in range(k):
            lo, hi = box[a]
            if a in self.periodic:
                axes.append(lo + (hi - lo) * np.arange(density) / density)
            else:
                axes.append(np.linspace(lo, hi, density))
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, k)
        return [(self, g) for g in grid]

    def describe(self) -> dict:
        d = {"name": self.name, "leaf_dim": self.leaf_dim, "space": self.parent.describe()}
        d.update(self.meta)
        return d


def shape_operator(patch: SubmanifoldPatch, u, normal) -> np.ndarray:
    """Shape operator S_xi on the tangent frame, as a symmetric k x k matrix."""
    space = patch.parent
    x = patch.point(u)
    xi = np.asarray(normal, dtype=float)
    nrm = float(space.norm(x, xi))
    if abs(nrm - 1.0) > 1e-9:
        raise DomainError("shape_operator: normal must have unit length", abs(nrm - 1.0))
    k = patch.leaf_dim
    if k == 0:
        return np.zeros((0, 0))
    D = patch.jacobian(u)
    H = patch.hessian(u)
    gxi = space.lower(x, xi)
    h = np.empty((k, k))
    for a in range(k):
        for b in range(a, k):
            cov = space.covariant_along(x, D[:, a], D[:, b], H[:, a, b])
            h[a, b] = h[b, a] = float(cov @ gxi)
    # express the tangent frame in coordinate directions: T = D C
    T = patch.tangent_frame(u)
    G = D.T @ space.lower(x, D.T).T
    C = np.linalg.solve(G, D.T @ space.lower(x, T.T).T)
    S = C.T @ h @ C
    return 0.5 * (S + S.T)


# ---------------------------------------------------------------------------
# builders


def unit_directions(c: int, density: int) -> np.ndarray:
    """Deterministic unit vectors in R^c spread over the sphere."""
    if c == 1:
        return np.array([[1.0], [-1.0]])
    if c == 2:
        th = 2 * np.pi * np.arange(density) / density
        return np.stack([np.cos(th), np.sin(th)], axis=-1)
    if c == 3:
        n = max(2 * density, 4)
        i = np.arange(n) + 0.5
        z = 1 - 2 * i / n
        phi = np.pi * (1 + 5**0.5) * i
        r = np.sqrt(1 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
    rng = np.random.default_rng(12345 + c)
    d = rng.normal(size=(max(4 * density, 2 * c), c))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def point_patch(space: RiemannianSpace, p) -> SubmanifoldPatch:
    """Zero-dimensional patch {p}; the normal frame is a full tangent basis."""
    p = space.check_point(np.asarray(p, dtype=float))
    B = space.tangent_basis(p)
    return SubmanifoldPatch(
        parent=space,
        parametrization=lambda u: p.copy(),
        param_box=np.zeros((0, 2)),
        normal_frame_fn=lambda u: B,
        name="point",
        meta={"point": p.tolist()},
    )


def hyperplane_patch(n: int, point=None, normal=None, half_width: float = 10.0) -> SubmanifoldPatch:
    """Affine hyperplane of euclidean(n) through ``point`` with unit ``normal``."""
    space = Euclidean(n)
    p0 = np.zeros(n) if point is None else np.asarray(point, dtype=float)
    nu = np.eye(n)[-1] if normal is None else np.asarray(normal, dtype=float)
    nu = nu / np.linalg.norm(nu)
    B = householder_complement(nu)
    return SubmanifoldPatch(
        parent=space,
        parametrization=lambda u: p0 + B @ u,
        param_box=np.tile([-half_width, half_width], (n - 1, 1)),
        tangent_frame_fn=lambda u: B,
        normal_frame_fn=lambda u: nu[:, None],
        jacobian_fn=lambda u: B,
        hessian_fn=lambda u: np.zeros((n, n - 1, n - 1)),
        name="hyperplane",
        meta={"point": p0.tolist(), "normal": nu.tolist()},
    )


def circle_patch(radius: float = 1.0, center=(0.0, 0.0)) -> SubmanifoldPatch:
    """Circle in euclidean(2), angle parametrized, normal frame = outward."""
    return sphere_patch(Euclidean(2), center, radius)


def sphere_patch(
    space: RiemannianSpace,
    center,
    radius: float,
    subspace=None,
    base_dir=None,
) -> SubmanifoldPatch:
    """Round sphere of ``radius`` in the affine subspace center + span(Q).

    ``space`` must be euclidean.  With Q of rank m the sphere is S^(m-1).
    For m = 2 the chart is the angle; for m >= 3 it is the graph chart over
    the tangent plane at ``base_dir`` and Newton-type callers re-centre
    through ``recentered``.  The normal frame is the outward radial
    direction followed by a fixed basis of the complement of span(Q).
    """
    if not isinstance(space, Euclidean):
        raise DomainError("sphere_patch: parent must be euclidean")
    N = space.ambient_dim
    c0 = np.asarray(center, dtype=float)
    Q = np.eye(N) if subspace is None else np.asarray(subspace, dtype=float)
    Q = np.linalg.qr(Q)[0] if Q.shape[1] else Q
    m = Q.shape[1]
    rho = float(radius)
    if m < 2:
        raise DimensionError("sphere_patch: subspace must have dimension >= 2")
    if m < N:
        comp = np.linalg.svd(np.eye(N) - Q @ Q.T)[0][:, : N - m]
    else:
        comp = np.zeros((N, 0))
    meta = {"center": c0.tolist(), "radius": rho, "sphere_dim": m - 1}

    def radial(x):
        y = Q.T @ (x - c0)
        return Q @ (y / np.linalg.norm(y))

    def normal_frame(u, _point):
        return np.concatenate([radial(_point(u))[:, None], comp], axis=1)

    if m == 2:
        e1, e2 = Q[:, 0], Q[:, 1]

        def phi(u):
            return c0 + rho * (np.cos(u[0]) * e1 + np.sin(u[0]) * e2)

        def jac(u):
            return (rho * (-np.sin(u[0]) * e1 + np.cos(u[0]) * e2))[:, None]

        def hess(u):
            return (-rho * (np.cos(u[0]) * e1 + np.sin(u[0]) * e2))[:, None, None]

        return SubmanifoldPatch(
            parent=space,
            parametrization=phi,
            param_box=np.array([[0.0, 2 * np.pi]]),
            tangent_frame_fn=lambda u: jac(u) / rho,
            normal_frame_fn=lambda u: normal_frame(u, phi),
            jacobian_fn=jac,
            hessian_fn=hess,
            periodic=(0,),
            name=f"circle(r={rho:g})",
            meta=meta,
        )

    b = np.eye(m)[0] if base_dir is None else np.asarray(base_dir, dtype=float)
    b = b / np.linalg.norm(b)
    Bt = householder_complement(b)  # m x (m-1)

    def phi(u):
        w = np.sqrt(max(1.0 - u @ u, 1e-300))
        return c0 + rho * Q @ (w * b + Bt @ u)

    def jac(u):
        w = np.sqrt(1.0 - u @ u)
        return rho * Q @ (np.outer(b, -u / w) + Bt)

    def hess(u):
        w = np.sqrt(1.0 - u @ u)
        k = u.shape[0]
        Hs = -np.eye(k) / w - np.outer(u, u) / w**3
        return rho * np.einsum("n,ab->nab", Q @ b, Hs)

    def recenter(u):
        x = phi(u)
        y = Q.T @ (x - c0)
        new = sphere_patch(space, c0, rho, Q, base_dir=y / np.linalg.norm(y))
        return new, np.zeros(m - 1)

    def seeds(density):
        dirs = unit_directions(m, max(density, 2)) if m == 3 else np.concatenate(
            [np.eye(m), -np.eye(m), unit_directions(m, density)]
        )
        return [(sphere_patch(space, c0, rho, Q, base_dir=d), np.zeros(m - 1)) for d in dirs]

    return SubmanifoldPatch(
        parent=space,
        parametrization=phi,
        param_box=np.tile([-0.7, 0.7], (m - 1, 1)),
        normal_frame_fn=lambda u: normal_frame(u, phi),
        jacobian_fn=jac,
        hessian_fn=hess,
        recenter_fn=recenter,
        seed_fn=seeds,
        name=f"sphere(dim={m - 1},r={rho:g})",
        meta=meta | {"base_dir": b.tolist()},
    )


def ellipse_patch(a: float = 2.0, b: float = 1.0) -> SubmanifoldPatch:
    """Ellipse x^2/a^2 + y^2/b^2 = 1 in euclidean(2), outward normal frame."""
    space = Euclidean(2)

    def phi(u):
        return np.array([a * np.cos(u[0]), b * np.sin(u[0])])

    def jac(u):
        return np.array([[-a * np.sin(u[0])], [b * np.cos(u[0])]])

    def hess(u):
        return -np.array([a * np.cos(u[0]), b * np.sin(u[0])])[:, None, None]

    def tframe(u):
        d = jac(u)[:, 0]
        return (d / np.linalg.norm(d))[:, None]

    def nframe(u):
        t = tframe(u)[:, 0]
        return np.array([[t[1]], [-t[0]]])

    return SubmanifoldPatch(
        parent=space,
        parametrization=phi,
        param_box=np.array([[0.0, 2 * np.pi]]),
        tangent_frame_fn=tframe,
        normal_frame_fn=nframe,
        jacobian_fn=jac,
        hessian_fn=hess,
        periodic=(0,),
        name=f"ellipse(a={a:g},b={b:g})",
        meta={"a": a, "b": b},
    )


def great_circle_patch(space: RoundSphere, p, direction, normal_basis=None, name="great-circle"):
    """Great circle theta -> r(cos theta p_hat + sin theta u_hat) in a round sphere.

    The normal frame is a constant basis of the complement of span(p, u),
    which is parallel along the circle.
    """
    if not isinstance(space, RoundSphere):
        raise DomainError("great_circle_patch: parent must be a round sphere")
    r = space.radius
    p = space.check_point(np.asarray(p, dtype=float))
    ph = p / r
    uh = np.asarray(direction, dtype=float)
    uh = uh - (uh @ ph) * ph
    uh = uh / np.linalg.norm(uh)
    N = space.ambient_dim
    if normal_basis is None:
        P = np.eye(N) - np.outer(ph, ph) - np.outer(uh, uh)
        comp = np.linalg.svd(P)[0][:, : N - 2]
    else:
        comp = np.asarray(normal_basis, dtype=float)

    def phi(u):
        return r * (np.cos(u[0]) * ph + np.sin(u[0]) * uh)

    def jac(u):
        return (r * (-np.sin(u[0]) * ph + np.cos(u[0]) * uh))[:, None]

    def hess(u):
        return -phi(u)[:, None, None]

    return SubmanifoldPatch(
        parent=space,
        parametrization=phi,
        param_box=np.array([[0.0, 2 * np.pi]]),
        tangent_frame_fn=lambda u: jac(u) / r,
        normal_frame_fn=lambda u: comp,
        jacobian_fn=jac,
        hessian_fn=hess,
        periodic=(0,),
        name=name,
        meta={"point": p.tolist(), "direction": uh.tolist()},
    )


def hopf_fiber_patch(p=(1.0, 0.0, 0.0, 0.0)) -> SubmanifoldPatch:
    """Hopf fiber {e^{i theta} p} in round-sphere(3, 1); normal frame (jp, kp)."""
    space = RoundSphere(3, 1.0)
    p = space.check_point(np.asarray(p, dtype=float))
    comp = np.stack([LEFT_J @ p, LEFT_K @ p], axis=1)
    patch = great_circle_patch(space, p, LEFT_I @ p, normal_basis=comp, name="hopf-fiber")
    return patch


def affine_patch(n: int, point, basis, half_width: float = 10.0) -> SubmanifoldPatch:
    """Affine subspace point + span(basis) of euclidean(n)."""
    space = Euclidean(n)
    p0 = np.asarray(point, dtype=float)
    Bm = np.asarray(basis, dtype=float).reshape(n, -1)
    Bm = np.linalg.qr(Bm)[0]
    k = Bm.shape[1]
    comp = np.linalg.svd(np.eye(n) - Bm @ Bm.T)[0][:, : n - k]
    return SubmanifoldPatch(
        parent=space,
        parametrization=lambda u: p0 + Bm @ u,
        param_box=np.tile([-half_width, half_width], (k, 1)),
        tangent_frame_fn=lambda u: Bm,
        normal_frame_fn=lambda u: comp,
        jacobian_fn=lambda u: Bm,
        hessian_fn=lambda u: np.zeros((n, k, k)),
        name=f"affine(dim={k})",
        meta={"point": p0.tolist()},
    )


def product_patch(space, first: SubmanifoldPatch, second: SubmanifoldPatch) -> SubmanifoldPatch:
    """Product of two patches inside the product space ``space``."""
    k1, k2 = first.leaf_dim, second.leaf_dim
    N1 = first.parent.ambient_dim

    def split(u):
        return u[:k1], u[k1:]

    def block(A, B):
        out = np.zeros((A.shape[0] + B.shape[0], A.shape[1] + B.shape[1]))
        out[: A.shape[0], : A.shape[1]] = A
        out[A.shape[0] :, A.shape[1] :] = B
        return out

    def hess(u):
        a, b = split(u)
        H = np.zeros((space.ambient_dim, k1 + k2, k1 + k2))
        H[:N1, :k1, :k1] = first.hessian(a)
        H[N1:, k1:, k1:] = second.hessian(b)
        return H

    return SubmanifoldPatch(
        parent=space,
        parametrization=lambda u: np.concatenate([first.point(split(u)[0]), second.point(split(u)[1])]),
        param_box=np.concatenate([np.asarray(first.param_box).reshape(-1, 2),
                                  np.asarray(second.param_box).reshape(-1, 2)]),
        tangent_frame_fn=lambda u: block(first.tangent_frame(split(u)[0]), second.tangent_frame(split(u)[1])),
        normal_frame_fn=lambda u: block(first.normal_frame(split(u)[0]), second.normal_frame(split(u)[1])),
        jacobian_fn=lambda u: block(first.jacobian(split(u)[0]), second.jacobian(split(u)[1])),
        hessian_fn=hess,
        periodic=tuple(first.periodic) + tuple(k1 + a for a in second.periodic),
        name=f"{first.name}x{second.name}",
    )
