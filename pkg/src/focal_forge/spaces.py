"""Riemannian spaces: euclidean, round spheres, chart metrics and products.

Points and tangent vectors are plain numpy arrays whose last axis holds the
ambient coordinates.  Every method below broadcasts over leading axes so the
integrators can push a whole batch of geodesics through one call.

Curvature follows the convention R(u, w)w with <R(u, w)w, u> = K |u ^ w|^2,
so on a space of constant curvature kappa

    R(u, w)w = kappa * (<w, w> u - <u, w> w).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "RiemannianSpace",
    "Euclidean",
    "RoundSphere",
    "ChartMetric",
    "ProductSpace",
    "euclidean",
    "round_sphere",
    "chart_metric",
    "product",
    "stereographic_sphere",
    "metric_at",
    "curvature_operator",
    "householder_complement",
]


def _dot(a, b):
    return (a * b).sum(axis=-1)


def householder_complement(c: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the complement of a unit vector ``c`` in R^k.

    Uses the Householder reflection that sends ``c`` to a coordinate axis,
    which is deterministic and smooth away from one antipodal set.
    Returns a (k, k-1) array.
    """
    c = np.asarray(c, dtype=float)
    k = c.shape[0]
    c = c / np.linalg.norm(c)
    j = int(np.argmax(np.abs(c)))
    s = 1.0 if c[j] >= 0 else -1.0
    w = c.copy()
    w[j] += s
    H = np.eye(k) - 2.0 * np.outer(w, w) / np.dot(w, w)
    # column j of H is -s*c; the other columns span c-perp
    cols = [i for i in range(k) if i != j]
    return H[:, cols]


class RiemannianSpace:
    """Common interface; concrete kinds override the geometric hooks."""

    kind: str = "abstract"
    dim: int
    ambient_dim: int
    embedded: bool = False

    # -- domain ---------------------------------------------------------
    def constraint_residual(self, x) -> np.ndarray:
        return np.zeros(np.shape(x)[:-1])

    def check_point(self, x, tol: float = 1e-9) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            raise DimensionError(
                f"{self.kind}: expected coordinate length {self.ambient_dim}, got {x.shape[-1]}"
            )
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self.kind}: point has non-finite coordinates")
        res = float(np.max(np.abs(self.constraint_residual(x)), initial=0.0))
        if res > tol:
            raise DomainError(self._constraint_text(), res)
        return x

    def _constraint_text(self) -> str:
        return f"{self.kind}: point off the coordinate domain"

    def project_point(self, x):
        return np.asarray(x, dtype=float)

    def tangent_residual(self, x, w) -> np.ndarray:
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(w))[:-1])

    def check_tangent(self, x, w, tol: float = 1e-9) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != self.ambient_dim:
            raise DimensionError(
                f"{self.kind}: expected vector length {self.ambient_dim}, got {w.shape[-1]}"
            )
        scale = max(1.0, float(np.max(np.abs(w), initial=0.0)))
        res = float(np.max(np.abs(self.tangent_residual(x, w)), initial=0.0))
        if res > tol * scale:
            raise DomainError(f"{self.kind}: vector not tangent at point", res)
        return w

    def project_tangent(self, x, w):
        return np.asarray(w, dtype=float)

    # -- metric ---------------------------------------------------------
    def metric_matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.ambient_dim), x.shape[:-1] + (self.ambient_dim,) * 2)

    def lower(self, x, w):
        """Apply the metric: returns g(x) w (the covector of w)."""
        return np.asarray(w, dtype=float)

    def inner(self, x, u, w):
        return _dot(u, self.lower(x, w))

    def norm(self, x, w):
        return np.sqrt(np.maximum(self.inner(x, w, w), 0.0))

    def tangent_basis(self, x) -> np.ndarray:
        """Orthonormal basis of T_x, shape (ambient_dim, dim)."""
        raise NotImplementedError

    # -- connection and curvature --------------------------------------
    def geodesic_accel(self, x, v):
        raise NotImplementedError

    def transport_rate(self, x, v, E):
        """Time derivative of a parallel field E (..., k, N) along velocity v."""
        raise NotImplementedError

    def covariant_along(self, x, xdot, V, Vdot):
        """Covariant derivative of a field V along a curve with velocity xdot."""
        raise NotImplementedError

    def curvature(self, x, u, w):
        """R(u, w)w, broadcasting over leading axes."""
        raise NotImplementedError

    def jacobi_operator(self, x, v, E):
        """Matrix K_ab = <R(E_a, v)v, E_b> for a frame E of shape (..., m, N)."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        R = self.curvature(x[..., None, :], E, v[..., None, :])
        GE = self.lower(x[..., None, :], E)
        K = np.einsum("...an,...bn->...ab", R, GE)
        return 0.5 * (K + np.swapaxes(K, -1, -2))

    def describe(self) -> dict:
        return {"kind": self.kind, "dim": self.dim}


class Euclidean(RiemannianSpace):
    kind = "euclidean"
    embedded = True

    def __init__(self, n: int):
        if int(n) < 1:
            raise DomainError("euclidean: dimension must be positive")
        self.dim = int(n)
        self.ambient_dim = int(n)

    def tangent_basis(self, x):
        return np.eye(self.dim)

    def geodesic_accel(self, x, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)))

    def transport_rate(self, x, v, E):
        return np.zeros(np.shape(E))

    def covariant_along(self, x, xdot, V, Vdot):
        return np.asarray(Vdot, dtype=float)

    def curvature(self, x, u, w):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(u), np.shape(w)))

    def describe(self):
        return {"kind": self.kind, "dim": self.dim}


class RoundSphere(RiemannianSpace):
    """Sphere S^n(r) sitting in R^(n+1) as |x| = r."""

    kind = "round-sphere"
    embedded = True

    def __init__(self, n: int, radius: float = 1.0):
        if int(n) < 1:
            raise DomainError("round-sphere: dimension must be positive")
        if not radius > 0:
            raise DomainError("round-sphere: radius must be positive", float(radius))
        self.dim = int(n)
        self.ambient_dim = int(n) + 1
        self.radius = float(radius)
        self.kappa = 1.0 / self.radius**2

    def constraint_residual(self, x):
        return np.linalg.norm(x, axis=-1) - self.radius

    def _constraint_text(self):
        return f"round-sphere: point must satisfy |x| = r = {self.radius:g}"

    def project_point(self, x):
        x = np.asarray(x, dtype=float)
        return self.radius * x / np.linalg.norm(x, axis=-1, keepdims=True)

    def tangent_residual(self, x, w):
        return _dot(x, w) / self.radius

    def project_tangent(self, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        return w - (_dot(w, x) / self.radius**2)[..., None] * x

    def tangent_basis(self, x):
        x = np.asarray(x, dtype=float)
        return householder_complement(x / np.linalg.norm(x))

    def geodesic_accel(self, x, v):
        return -(_dot(v, v) * self.kappa)[..., None] * x

    def transport_rate(self, x, v, E):
        Ev = _dot(E, v[..., None, :])
        return -(Ev * self.kappa)[..., None] * x[..., None, :]

    def covariant_along(self, x, xdot, V, Vdot):
        return self.project_tangent(x, Vdot)

    def curvature(self, x, u, w):
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        return self.kappa * (_dot(w, w)[..., None] * u - _dot(u, w)[..., None] * w)

    def jacobi_operator(self, x, v, E):
        # closed form, avoids building R column by column
        vv = _dot(v, v)
        Ev = _dot(E, v[..., None, :])
        EE = np.einsum("...an,...bn->...ab", E, E)
        return self.kappa * (vv[..., None, None] * EE - Ev[..., :, None] * Ev[..., None, :])

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "radius": self.radius}


class ChartMetric(RiemannianSpace):
    """Open subset of R^n with a metric g(x) given by a callable.

    Christoffel symbols come from central differences of g with step
    ``fd_step``; curvature from central differences of the Christoffel
    symbols with step ``curvature_step``.  Both steps are configurable.  The
    nested difference is second order in the outer step as long as the
    inner step is small enough not to dominate.
    """

    kind = "chart-metric"
    embedded = False

    def __init__(
        self,
        n: int,
        g: Callable[[np.ndarray], np.ndarray],
        fd_step: float = 1e-5,
        curvature_step: float = 1e-4,
        domain: Callable[[np.ndarray], float] | None = None,
        name: str = "chart",
    ):
        self.dim = int(n)
        self.ambient_dim = int(n)
        self._g = g
        self.fd_step = float(fd_step)
        self.curvature_step = float(curvature_step)
        self._domain = domain
        self.name = name

    def with_steps(self, fd_step: float, curvature_step: float) -> "ChartMetric":
        return ChartMetric(self.dim, self._g, fd_step, curvature_step, self._domain, self.name)

    def constraint_residual(self, x):
        if self._domain is None:
            return np.zeros(np.shape(x)[:-1])
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for idx in np.ndindex(out.shape):
            out[idx] = max(0.0, float(self._domain(x[idx])))
        return out

    def _constraint_text(self):
        return f"chart-metric '{self.name}': point outside the chart domain"

    def g(self, x) -> np.ndarray:
        G = np.asarray(self._g(np.asarray(x, dtype=float)), dtype=float)
        if G.shape != (self.dim, self.dim):
            raise DimensionError(f"metric callable returned shape {G.shape}")
        return G

    def metric_matrix(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (self.dim, self.dim))
        for idx in np.ndindex(x.shape[:-1]):
            out[idx] = self.g(x[idx])
        return out

    def lower(self, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        shape = np.broadcast_shapes(x.shape, w.shape)
        xb = np.broadcast_to(x, shape)
        wb = np.broadcast_to(w, shape)
        out = np.empty(shape)
        for idx in np.ndindex(shape[:-1]):
            out[idx] = self.g(xb[idx]) @ wb[idx]
        return out

    def tangent_basis(self, x):
        G = self.g(x)
        L = np.linalg.cholesky(G)
        # columns B satisfy B^T G B = I
        return np.linalg.inv(L).T

    def _dg(self, x, h):
        n = self.dim
        dg = np.empty((n, n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = h
            dg[l] = (self.g(x + e) - self.g(x - e)) / (2 * h)
        return dg

    def christoffel(self, x, h: float | None = None) -> np.ndarray:
        """Gamma[i, j, k] = Gamma^i_{jk} at a single point."""
        x = np.asarray(x, dtype=float)
        h = self.fd_step if h is None else h
        dg = self._dg(x, h)  # dg[l, i, j] = d_l g_ij
        ginv = np.linalg.inv(self.g(x))
        # lower-index symbol Gamma_{l jk} = 1/2 (d_j g_lk + d_k g_lj - d_l g_jk)
        low = 0.5 * (
            np.transpose(dg, (1, 0, 2)) + np.transpose(dg, (1, 2, 0)) - dg
        )
        return np.einsum("il,ljk->ijk", ginv, low)

    def riemann(self, x) -> np.ndarray:
        """R[i, j, k, l] with R(d_k, d_l) d_j = R^i_{jkl} d_i."""
        x = np.asarray(x, dtype=float)
        n = self.dim
        hc = self.curvature_step
        Gam = self.christoffel(x)
        dGam = np.empty((n, n, n, n))  # dGam[k, i, l, j] = d_k Gamma^i_{lj}
        for k in range(n):
            e = np.zeros(n)
            e[k] = hc
            dGam[k] = (self.christoffel(x + e) - self.christoffel(x - e)) / (2 * hc)
        R = (
            np.einsum("kilj->ijkl", dGam)
            - np.einsum("likj->ijkl", dGam)
            + np.einsum("ikm,mlj->ijkl", Gam, Gam)
            - np.einsum("ilm,mkj->ijkl", Gam, Gam)
        )
        return R

    def geodesic_accel(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.empty(np.broadcast_shapes(x.shape, v.shape))
        xb = np.broadcast_to(x, out.shape)
        vb = np.broadcast_to(v, out.shape)
        for idx in np.ndindex(out.shape[:-1]):
            Gam = self.christoffel(xb[idx])
            out[idx] = -np.einsum("ijk,j,k->i", Gam, vb[idx], vb[idx])
        return out

    def transport_rate(self, x, v, E):
        x = np.asarray(x, dtype=float)
        E = np.asarray(E, dtype=float)
        out = np.empty(E.shape)
        for idx in np.ndindex(x.shape[:-1]):
            Gam = self.christoffel(x[idx])
            out[idx] = -np.einsum("ijk,j,ak->ai", Gam, v[idx], E[idx])
        return out

    def covariant_along(self, x, xdot, V, Vdot):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape, np.shape(xdot), np.shape(V), np.shape(Vdot))
        xb, xdb, Vb, Vdb = (np.broadcast_to(a, shape) for a in (x, xdot, V, Vdot))
        out = np.empty(shape)
        for idx in np.ndindex(shape[:-1]):
            Gam = self.christoffel(xb[idx])
            out[idx] = Vdb[idx] + np.einsum("ijk,j,k->i", Gam, xdb[idx], Vb[idx])
        return out

    def curvature(self, x, u, w):
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape, np.shape(u), np.shape(w))
        xb, ub, wb = (np.broadcast_to(a, shape) for a in (x, u, w))
        out = np.empty(shape)
        cache: dict[bytes, np.ndarray] = {}
        for idx in np.ndindex(shape[:-1]):
            key = xb[idx].tobytes()
            R = cache.get(key)
            if R is None:
                R = cache[key] = self.riemann(xb[idx])
            out[idx] = np.einsum("ijkl,j,k,l->i", R, wb[idx], ub[idx], wb[idx])
        return out

    def describe(self):
        return {
            "kind": self.kind,
            "dim": self.dim,
            "name": self.name,
            "fd_step": self.fd_step,
            "curvature_step": self.curvature_step,
        }


class ProductSpace(RiemannianSpace):
    """Riemannian product; coordinates are concatenated factor coordinates."""

    kind = "product"

    def __init__(self, first: RiemannianSpace, second: RiemannianSpace):
        self.factors = (first, second)
        self.dim = first.dim + second.dim
        self.ambient_dim = first.ambient_dim + second.ambient_dim
        self.embedded = first.embedded and second.embedded
        self._cut = first.ambient_dim

    def _split(self, a):
        a = np.asarray(a, dtype=float)
        return a[..., : self._cut], a[..., self._cut :]

    def constraint_residual(self, x):
        a, b = self._split(x)
        return np.maximum(
            np.abs(self.factors[0].constraint_residual(a)),
            np.abs(self.factors[1].constraint_residual(b)),
        )

    def _constraint_text(self):
        return "product: a factor constraint is violated"

    def project_point(self, x):
        a, b = self._split(x)
        return np.concatenate(
            [self.factors[0].project_point(a), self.factors[1].project_point(b)], axis=-1
        )

    def tangent_residual(self, x, w):
        xa, xb = self._split(x)
        wa, wb = self._split(w)
        return np.maximum(
            np.abs(self.factors[0].tangent_residual(xa, wa)),
            np.abs(self.factors[1].tangent_residual(xb, wb)),
        )

    def project_tangent(self, x, w):
        xa, xb = self._split(x)
        wa, wb = self._split(w)
        return np.concatenate(
            [self.factors[0].project_tangent(xa, wa), self.factors[1].project_tangent(xb, wb)],
            axis=-1,
        )

    def metric_matrix(self, x):
        xa, xb = self._split(x)
        Ga = self.factors[0].metric_matrix(xa)
        Gb = self.factors[1].metric_matrix(xb)
        out = np.zeros(np.shape(x)[:-1] + (self.ambient_dim, self.ambient_dim))
        c = self._cut
        out[..., :c, :c] = Ga
        out[..., c:, c:] = Gb
        return out

    def lower(self, x, w):
        xa, xb = self._split(x)
        wa, wb = self._split(w)
        return np.concatenate(
            [self.factors[0].lower(xa, wa), self.factors[1].lower(xb, wb)], axis=-1
        )

    def tangent_basis(self, x):
        xa, xb = self._split(x)
        Ba = self.factors[0].tangent_basis(xa)
        Bb = self.factors[1].tangent_basis(xb)
        out = np.zeros((self.ambient_dim, self.dim))
        out[: self._cut, : Ba.shape[1]] = Ba
        out[self._cut :, Ba.shape[1] :] = Bb
        return out

    def geodesic_accel(self, x, v):
        xa, xb = self._split(x)
        va, vb = self._split(v)
        return np.concatenate(
            [self.factors[0].geodesic_accel(xa, va), self.factors[1].geodesic_accel(xb, vb)],
            axis=-1,
        )

    def transport_rate(self, x, v, E):
        xa, xb = self._split(x)
        va, vb = self._split(v)
        Ea, Eb = self._split(E)
        return np.concatenate(
            [
                self.factors[0].transport_rate(xa, va, Ea),
                self.factors[1].transport_rate(xb, vb, Eb),
            ],
            axis=-1,
        )

    def covariant_along(self, x, xdot, V, Vdot):
        parts = [self._split(a) for a in (x, xdot, V, Vdot)]
        return np.concatenate(
            [self.factors[i].covariant_along(*(p[i] for p in parts)) for i in range(2)], axis=-1
        )

    def curvature(self, x, u, w):
        xa, xb = self._split(x)
        ua, ub = self._split(u)
        wa, wb = self._split(w)
        return np.concatenate(
            [self.factors[0].curvature(xa, ua, wa), self.factors[1].curvature(xb, ub, wb)],
            axis=-1,
        )

    def describe(self):
        return {"kind": self.kind, "dim": self.dim, "factors": [f.describe() for f in self.factors]}


def euclidean(n: int) -> Euclidean:
    return Euclidean(n)


def round_sphere(n: int, radius: float = 1.0) -> RoundSphere:
    return RoundSphere(n, radius)


def chart_metric(n: int, g, **kwargs) -> ChartMetric:
    return ChartMetric(n, g, **kwargs)


def product(first: RiemannianSpace, second: RiemannianSpace) -> ProductSpace:
    return ProductSpace(first, second)


def stereographic_sphere(radius: float = 1.0, **kwargs) -> ChartMetric:
    """Round S^2(radius) in stereographic coordinates from the north pole.

    g(x) = 4 r^4 / (r^2 + |x|^2)^2 * I; for r = 1 this is 4/(1+|x|^2)^2 * I.
    """
    r2 = float(radius) ** 2

    def g(x):
        x = np.asarray(x, dtype=float)
        return (4.0 * r2 * r2 / (r2 + x @ x) ** 2) * np.eye(2)

    return ChartMetric(2, g, name=f"stereographic-S2(r={radius:g})", **kwargs)


def metric_at(space: RiemannianSpace, point, basis=None) -> np.ndarray:
    """Gram matrix of the metric at ``point``.

    For chart metrics this is g(point) in coordinate directions.  For the
    embedded kinds it is the ambient product restricted to ``basis``
    (default: the space's orthonormal tangent basis), i.e. a dim x dim matrix.
    """
    x = space.check_point(point)
    if basis is None:
        if not space.embedded:
            return space.metric_matrix(x)
        basis = space.tangent_basis(x)
    B = np.asarray(basis, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    for col in B.T:
        space.check_tangent(x, col)
    G = B.T @ space.metric_matrix(x) @ B
    return 0.5 * (G + G.T)


def curvature_operator(space: RiemannianSpace, point, u, w) -> np.ndarray:
    """R(u, w)w at a single point, with domain checks on all inputs."""
    x = space.check_point(point)
    u = space.check_tangent(x, u)
    w = space.check_tangent(x, w)
    return space.curvature(x, u, w)
