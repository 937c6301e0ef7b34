"""Broken-geodesic cycles built by following focal chains towards the zero section.

For a normal vector v let m(v) be its last interior focal parameter.  The
chain w_1 = v, w_{i+1} in the exp-fiber through m(w_i) w_i, with
breakpoints t_0 = 1, t_i = m(w_i) t_{i-1}, defines a broken geodesic
c(t) = exp((t / t_{i-1}) w_i) on [t_i, t_{i-1}] whose energy telescopes to
|v|^2.  Dimensions of these families are tracked by simple recursions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, PreconditionError
from .focal import (
    ENDPOINT_TOL,
    classify_regularity,
    focal_records,
    morse_index,
    nullity_at_endpoint,
)
from .foliation import FoliationSpec, singular_times
from .jacobi import DEFAULT_TOL, normal_exp, normal_geodesic
from .shooting import fiber_solutions
from .submanifolds import SubmanifoldPatch

__all__ = [
    "first_focal_param",
    "EtaPolygon",
    "sample_Zv",
    "energy_identity_check",
    "delta_dimension",
    "tangent_decomposition_dim",
    "BundleNode",
    "bundle_descriptor",
    "cohdim_bookkeeping",
    "index_of",
]

DEPTH_CAP = 6


def _interior(records, end=1.0):
    return [r for r in records if 0.0 < r.time < end - ENDPOINT_TOL]


def first_focal_param(patch: SubmanifoldPatch, u, v, tol: float = DEFAULT_TOL) -> float:
    """Largest focal time of t -> exp(t v) in (0, 1), or 0 if there is none."""
    if float(np.linalg.norm(v)) == 0.0:
        raise PreconditionError("first_focal_param: v must be nonzero")
    _, recs = focal_records(patch, u, v, horizon=1.0, tol=tol)
    inner = _interior(recs)
    return max((r.time for r in inner), default=0.0)


@dataclass(eq=False)
class EtaPolygon:
    """A broken geodesic assembled from a focal chain.

    ``times`` holds t_0 = 1 > t_1 > ... > t_r = 0; segment i (1-based)
    uses the normal vector ``vectors[i-1]`` at foot ``params[i-1]`` on
    [t_i, t_{i-1}].  ``residuals[j]`` is the exp-fiber defect of
    ``vectors[j+1]`` against m(w_{j+1}) w_{j+1}.
    """

    patch: SubmanifoldPatch
    times: np.ndarray
    params: list
    vectors: list
    residuals: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.vectors) - 1

    @property
    def norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(w) for w in self.vectors])

    def energy(self) -> float:
        t = self.times
        return float(sum((n / t[i]) ** 2 * (t[i] - t[i + 1]) for i, n in enumerate(self.norms)))

    def chain_deviation(self) -> float:
        """max | m(w_i) |w_i| - |w_{i+1}| |, with m(w_i) = t_i / t_{i-1}."""
        n = self.norms
        t = self.times
        dev = [abs(t[i + 1] / t[i] * n[i] - n[i + 1]) for i in range(len(n) - 1)]
        return float(max(dev, default=0.0))

    def breakpoint_gaps(self, tol: float = DEFAULT_TOL) -> float:
        """Largest mismatch of the segment endpoints at interior breakpoints."""
        worst = 0.0
        t = self.times
        for i in range(len(self.vectors) - 1):
            a = normal_exp(self.patch, self.params[i], t[i + 1] / t[i] * self.vectors[i], tol)
            b = normal_exp(self.patch, self.params[i + 1], self.vectors[i + 1], tol)
            worst = max(worst, float(np.linalg.norm(a - b)))
        return worst

    def sample(self, ts, tol: float = DEFAULT_TOL) -> np.ndarray:
        """Points c(t) of the broken geodesic."""
        t = self.times
        out = []
        for s in np.atleast_1d(ts):
            i = next((k for k in range(len(self.vectors)) if s >= t[k + 1]), len(self.vectors) - 1)
            out.append(normal_exp(self.patch, self.params[i], s / t[i] * self.vectors[i], tol)
                       if s > 0 else self.patch.point(self.params[-1]))
        return np.stack(out)

    def sort_key(self):
        return (self.depth, tuple(np.round(self.times, 9)),
                tuple(np.round(np.concatenate(self.vectors), 9)))

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "times": [float(x) for x in self.times],
            "params": [[float(a) for a in p] for p in self.params],
            "vectors": [[float(a) for a in w] for w in self.vectors],
            "residuals": [float(r) for r in self.residuals],
            "energy": self.energy(),
        }


def energy_identity_check(polygon: EtaPolygon) -> float:
    """|E(c) - |v|^2| from the segment-wise energy sum."""
    return abs(polygon.energy() - float(polygon.norms[0] ** 2))


def sample_Zv(patch: SubmanifoldPatch, u, v, samples: int = 4, seed: int = 0, depth_cap: int = DEPTH_CAP,
              radius_frac: float = 0.3, tol: float = DEFAULT_TOL, diagnostics: list | None = None):
    """Sample broken geodesics by recursing through the exp-fibers of the focal chain.

    Returns polygons sorted by (depth, breakpoints, vectors).  Branches
    whose fiber sampling fails are dropped and reported in ``diagnostics``.
    """
    rng = np.random.default_rng(seed)
    diag = [] if diagnostics is None else diagnostics
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = []

    def recurse(params, vectors, times, residuals):
        uw, w = params[-1], vectors[-1]
        depth = len(vectors) - 1
        m = first_focal_param(patch, uw, w, tol)
        if m == 0.0:
            out.append(EtaPolygon(patch, np.array(times + [0.0]), list(params), list(vectors), list(residuals)))
            return
        if depth >= depth_cap:
            diag.append({"depth": depth, "reason": f"depth cap {depth_cap} reached"})
            return
        f = m * w
        cf = patch.normal_coeffs(uw, f)
        _, recs = focal_records(patch, uw, f, horizon=1.0, tol=tol)
        mu = nullity_at_endpoint(recs)
        q = normal_exp(patch, uw, f, tol)
        zs, status = fiber_solutions(patch, uw, cf, q, samples, radius_frac * float(np.linalg.norm(cf)),
                                     mu, rng, tol)
        good = [z for z, st in zip(zs, status) if st == "ok"]
        if len(good) < samples:
            diag.append({"depth": depth + 1, "requested": samples, "found": len(good),
                         "reasons": sorted({st for st in status if st != "ok"})})
        k = patch.leaf_dim
        for z in good:
            u2, c2 = z[:k], z[k:]
            w2 = patch.normal_vector(u2, c2)
            res = float(np.linalg.norm(normal_exp(patch, u2, w2, tol) - q))
            recurse(params + [u2], vectors + [w2], times + [times[-1] * m], residuals + [res])

    recurse([u], [patch.normal_vector(u, patch.normal_coeffs(u, v))], [1.0], [])
    out.sort(key=EtaPolygon.sort_key)
    return out


def delta_dimension(patch: SubmanifoldPatch, u, v, foliation: FoliationSpec | None = None,
                    tol: float = DEFAULT_TOL, match_tol: float = 1e-6):
    """i(v) = sum of interior focal multiplicities, with an optional foliation cross-check.

    Returns (i, crossing) where ``crossing`` is the sum of leaf-dimension
    drops along s_v when every focal time sits at a singular crossing of
    ``foliation``, and None otherwise.
    """
    _, recs = focal_records(patch, u, v, horizon=1.0, tol=tol)
    if nullity_at_endpoint(recs):
        raise PreconditionError("delta_dimension: endpoint of v is focal")
    idx = morse_index(recs)
    if foliation is None:
        return idx, None
    g = normal_geodesic(patch, u, v, horizon=1.0, tol=tol)
    sing = singular_times(g, foliation)
    inner = _interior(recs)
    if not inner or not all(any(abs(r.time - s) < match_tol for s, _ in sing) for r in inner):
        return idx, None
    n = foliation.regular_dim
    crossing = sum(n - d for s, d in sing if 0.0 < s < 1.0 - ENDPOINT_TOL)
    return idx, int(crossing)


def _corank_at(patch, u, v, t, tol, zero_tol=1e-6, gap=1e3):
    basis, _ = focal_records(patch, u, v, horizon=1.0, tol=tol)
    Y, _ = basis.evaluate(t)
    s = np.linalg.svd(np.asarray(Y)[0] if np.ndim(Y) == 3 else Y, compute_uv=False)
    scale = max(float(s.max()), 1.0)
    small = s <= zero_tol * scale
    if small.any() and (~small).any() and s[~small].min() < gap * s[small].max():
        raise PreconditionError(f"ambiguous corank at t={t:.6g}")
    return int(small.sum())


def tangent_decomposition_dim(patch: SubmanifoldPatch, u, v, tol: float = DEFAULT_TOL, seed: int = 0) -> int:
    """Sum over interior focal times of the number of vanishing L-Jacobi fields."""
    _, recs = focal_records(patch, u, v, horizon=1.0, tol=tol)
    inner = _interior(recs)
    if not inner:
        return 0
    flagged = classify_regularity(patch, u, v, inner, seed=seed, tol=tol)
    bad = [r.time for r in flagged if not r.regular]
    if bad:
        raise PreconditionError(f"non-regular focal crossing at t={bad[0]:.6g}")
    return int(sum(_corank_at(patch, u, v, r.time, tol) for r in inner))


@dataclass(frozen=True)
class BundleNode:
    """One level of the iterated bundle: focal time, base dimension k, child level."""

    time: float
    base_dim: int
    child: "BundleNode | None" = None

    def to_dict(self) -> dict:
        return {"time": self.time, "base_dim": self.base_dim,
                "child": None if self.child is None else self.child.to_dict()}


def bundle_descriptor(patch: SubmanifoldPatch, u, v, polygon: EtaPolygon | None = None,
                      tol: float = DEFAULT_TOL) -> BundleNode | None:
    """Descriptor read off a focal chain.

    With a polygon the chain is its own w_i; otherwise the chain of v is
    followed by rescaling (w_{i+1} = m(w_i) w_i), which is a point of the
    same fiber component.  Each level's base dimension is the endpoint
    nullity at m(w_i) w_i.
    """
    if polygon is not None:
        chain = list(zip(polygon.params, polygon.vectors))
    else:
        chain = [(np.asarray(u, dtype=float), np.asarray(v, dtype=float))]
        while True:
            uw, w = chain[-1]
            m = first_focal_param(patch, uw, w, tol)
            if m == 0.0 or len(chain) > DEPTH_CAP:
                break
            chain.append((uw, m * w))
    levels = []
    t = 1.0
    for uw, w in chain:
        m = first_focal_param(patch, uw, w, tol)
        if m == 0.0:
            break
        _, recs = focal_records(patch, uw, m * w, horizon=1.0, tol=tol)
        t *= m
        levels.append((t, nullity_at_endpoint(recs)))
    node = None
    for t, k in reversed(levels):
        node = BundleNode(float(t), int(k), node)
    return node


def cohdim_bookkeeping(node) -> int:
    """leaf -> 0; a level with base dimension k over a child of dimension n -> n + k.

    Accepts a BundleNode, None, or a nested dict {"base_dim": k, "child": ...}.
    """
    if node is None:
        return 0
    if isinstance(node, dict):
        if "base_dim" not in node:
            raise ConstructionError("bundle descriptor level lacks base_dim")
        k, child = node["base_dim"], node.get("child")
    elif isinstance(node, BundleNode):
        k, child = node.base_dim, node.child
    else:
        raise ConstructionError(f"malformed bundle descriptor: {type(node).__name__}")
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 0:
        raise ConstructionError(f"base dimension must be a nonnegative integer, got {k!r}")
    return int(k) + cohdim_bookkeeping(child)


def index_of(patch: SubmanifoldPatch, u, w, tol: float = DEFAULT_TOL) -> int:
    """Interior focal count of w (endpoint may be focal)."""
    _, recs = focal_records(patch, u, w, horizon=1.0, tol=tol)
    return int(sum(r.multiplicity for r in _interior(recs)))

