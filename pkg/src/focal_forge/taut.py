"""Morse counting for energy functionals, reference Betti data and probes.

A target q is generic when no critical geodesic has q as a focal point
(nullity 0) and every focal time stays at least 1e-4 away from t = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError, DomainError, LookupFailure, PreconditionError
from .focal import focal_records, nullity_at_endpoint
from .foliation import FoliationSpec
from .jacobi import DEFAULT_TOL, normal_exp
from .quaternion import qconj, qmul, hopf_map
from .shooting import (
    ShootingResult,
    exp_with_differential,
    fiber_solutions,
    shoot_critical_points,
)
from .submanifolds import (
    SubmanifoldPatch,
    hopf_fiber_patch,
    point_patch,
    sphere_patch,
)

__all__ = [
    "BettiTable",
    "MorseReport",
    "MorseCount",
    "morse_polynomial",
    "reference_betti",
    "betti_ids",
    "sphere_geodesic_oracle",
    "perfectness_verdict",
    "taut_check",
    "FiberProbe",
    "fiber_integrability_probe",
    "morse_bott_probe",
    "build_saturated_preimage",
]

MARGIN = 0.05
GENERIC_GAP = 1e-4


# ---------------------------------------------------------------------------
# counting


@dataclass(frozen=True)
class MorseCount:
    coefficients: tuple
    generic: bool
    flagged: tuple  # positions of critical points with nullity > 0

    def as_text(self) -> str:
        terms = []
        for k, c in enumerate(self.coefficients):
            if c == 0:
                continue
            mono = "1" if k == 0 else ("t" if k == 1 else f"t^{k}")
            terms.append(mono if c == 1 else f"{c}{mono if k else ''}" if k else str(c))
        return " + ".join(terms) if terms else "0"


def morse_polynomial(criticals) -> MorseCount:
    """Number of critical points per index; nullity > 0 marks the count non-generic."""
    pts = list(criticals)
    top = max((p.index for p in pts), default=-1)
    coeffs = [0] * (top + 1)
    for p in pts:
        coeffs[p.index] += 1
    flagged = tuple(i for i, p in enumerate(pts) if p.nullity > 0)
    generic = not flagged and all(
        abs(t - 1.0) > GENERIC_GAP for p in pts for t in p.focal_times
    )
    return MorseCount(tuple(coeffs), generic, flagged)


# ---------------------------------------------------------------------------
# reference data


@dataclass(frozen=True)
class BettiTable:
    scenario_id: str
    field: str
    ranks: dict  # degree -> rank
    max_degree: int
    provenance: str

    def rank(self, k: int) -> int:
        if k > self.max_degree:
            raise LookupFailure(f"{self.scenario_id}: degree {k} beyond tabulated range {self.max_degree}")
        return int(self.ranks.get(k, 0))

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "field": self.field,
            "ranks": {str(k): int(v) for k, v in sorted(self.ranks.items())},
            "max_degree": self.max_degree,
            "provenance": self.provenance,
        }


def sphere_geodesic_oracle(n: int, d: float, cap: float, radius: float = 1.0):
    """Lengths and indices of all geodesics between two points at distance d on S^n(radius).

    Geodesics run along the great circle through both points: lengths
    d + 2 pi r j and 2 pi r - d + 2 pi r j, index (n - 1) floor(length / (pi r)).
    """
    out = []
    period = 2 * math.pi * radius
    j = 0
    while True:
        a = d + period * j
        b = period - d + period * j
        added = False
        for ell in (a, b):
            if ell * ell <= cap:
                out.append((ell, (n - 1) * int(math.floor(ell / (math.pi * radius)))))
                added = True
        if not added:
            break
        j += 1
    out.sort()
    return out


def _omega_sphere(n: int, max_degree: int) -> BettiTable:
    # enumerate enough geodesics between two points at generic distance
    d = 1.0
    cap = (math.pi * (max_degree // max(n - 1, 1) + 2)) ** 2
    ranks: dict = {}
    for _, idx in sphere_geodesic_oracle(n, d, cap):
        if idx <= max_degree:
            ranks[idx] = ranks.get(idx, 0) + 1
    return BettiTable(
        f"omega-s{n}", "Z2", {k: ranks.get(k, 0) for k in range(max_degree + 1)}, max_degree,
        "geodesic enumeration on S^%d (path space of two points, rank 1 in degrees k(n-1))" % n,
    )


def _fixed(sid, field, ranks, provenance, max_degree=None):
    md = max(ranks) if max_degree is None else max_degree
    return BettiTable(sid, field, {k: ranks.get(k, 0) for k in range(md + 1)}, md, provenance)


def betti_ids() -> list:
    return [
        "omega-s2", "omega-s3", "omega-s4", "circle-plane", "ellipse-plane", "sphere-r3",
        "hyperplane-r3", "hopf-fiber", "lens-p3-z3", "lens-p3-z2", "lens-p4-z2", "lens-p5-z5",
        "lens-p5-z2",
    ]


def reference_betti(scenario_id: str, max_degree: int | None = None) -> BettiTable:
    """Bundled reference ranks for the path spaces used by the scenarios."""
    sid = str(scenario_id)
    if sid.startswith("omega-s"):
        try:
            n = int(sid[len("omega-s"):])
        except ValueError:
            raise LookupFailure(f"unknown Betti table {sid!r}") from None
        if n < 2:
            raise LookupFailure(f"unknown Betti table {sid!r}")
        return _omega_sphere(n, max(3, 2 * (n - 1)) if max_degree is None else int(max_degree))
    if sid.startswith("lens-p"):
        try:
            p_text, f_text = sid[len("lens-p"):].split("-z")
            p, f = int(p_text), int(f_text)
        except ValueError:
            raise LookupFailure(f"unknown Betti table {sid!r}") from None
        if p < 2 or f not in (2, p):
            raise LookupFailure(f"unknown Betti table {sid!r}")
        if f == p or p % 2 == 0:
            ranks = {0: 1, 1: 1, 2: 1, 3: 1}
            note = "H_k(L(p,q); Z_%d) = Z_%d for 0 <= k <= 3" % (f, f)
        else:
            ranks = {0: 1, 1: 0, 2: 0, 3: 1}
            note = "odd p with Z_2 coefficients: H_1 = H_2 = 0 (universal coefficients)"
        return _fixed(sid, f"Z{f}", ranks, note, 3)
    md = max_degree
    if sid in ("circle-plane", "ellipse-plane"):
        return _fixed(sid, "Z2", {0: 1, 1: 1}, "segments to a closed curve retract onto S^1", md)
    if sid == "sphere-r3":
        return _fixed(sid, "Z2", {0: 1, 1: 0, 2: 1}, "segments to S^2 retract onto S^2", md)
    if sid == "hyperplane-r3":
        return _fixed(sid, "Z2", {0: 1}, "segments to a hyperplane retract onto R^2", md)
    if sid == "hopf-fiber":
        top = 4 if md is None else md
        return _fixed(sid, "Z2", {k: 1 for k in range(top + 1)},
                      "paths from a great circle of S^3 to a point: Poincare series (1+t)/(1-t^2)", top)
    raise LookupFailure(f"unknown Betti table {sid!r}")


# ---------------------------------------------------------------------------
# verdicts


@dataclass(frozen=True, eq=False)
class MorseReport:
    target: np.ndarray
    cap: float
    criticals: list
    count: MorseCount
    betti: BettiTable | None
    verdict: dict = field(default_factory=dict)
    shooting: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "target": [float(x) for x in self.target],
            "cap": float(self.cap),
            "critical_points": [c.to_dict() for c in self.criticals],
            "counting_polynomial": list(self.count.coefficients),
            "generic": self.count.generic,
            "reference": None if self.betti is None else self.betti.to_dict(),
            "verdict": dict(self.verdict),
            "shooting": dict(self.shooting),
        }


def _reliable_degree(criticals, cap, table: BettiTable) -> int:
    """Largest k (up to the table) with no found index <= k inside the cap margin."""
    k = table.max_degree
    for c in criticals:
        if c.energy > cap * (1.0 - MARGIN):
            k = min(k, c.index - 1)
    return k


def perfectness_verdict(report: MorseReport) -> dict:
    """Degree-wise comparison of the counting polynomial with the reference ranks."""
    if not report.count.generic:
        raise PreconditionError("non-generic target: some critical geodesic has q as (near) focal point")
    if report.betti is None:
        raise PreconditionError("no reference table attached to the report")
    table = report.betti
    upto = _reliable_degree(report.criticals, report.cap, table)
    coeffs = report.count.coefficients
    mismatches = []
    hints = []
    for k in range(upto + 1):
        have = coeffs[k] if k < len(coeffs) else 0
        want = table.rank(k)
        if have != want:
            mismatches.append(k)
            hints.append("cap too low" if have < want else "extra critical points")
    return {
        "verdict": "perfect" if not mismatches else "mismatch",
        "degrees_checked": upto + 1,
        "mismatch_degrees": mismatches,
        "hints": sorted(set(hints)),
    }


def taut_check(patch: SubmanifoldPatch, target, cap: float, betti_id: str | None = None,
               density: int = 8, tol: float = DEFAULT_TOL, newton_tol: float = 1e-10) -> MorseReport:
    """Shoot, count, and (for generic targets) compare with the reference ranks."""
    res: ShootingResult = shoot_critical_points(patch, target, cap, density=density, tol=tol,
                                                newton_tol=newton_tol)
    count = morse_polynomial(res.points)
    table = None if betti_id is None else reference_betti(betti_id)
    rep = MorseReport(res.target, float(cap), list(res.points), count, table, {}, res.report())
    if table is not None:
        if count.generic:
            verdict = perfectness_verdict(rep)
        else:
            verdict = {"verdict": "non-generic target", "degrees_checked": 0, "mismatch_degrees": [],
                       "hints": ["move the target off the focal set"]}
        object.__setattr__(rep, "verdict", verdict)
    return rep


# ---------------------------------------------------------------------------
# probes


@dataclass(frozen=True)
class FiberProbe:
    fiber_dim: int | None
    nullity: int
    tangency_residual: float
    solutions: int
    eigenvalues: tuple
    verdict: str
    notes: tuple = ()

    def to_dict(self) -> dict:
        return {
            "fiber_dim": self.fiber_dim,
            "nullity": self.nullity,
            "tangency_residual": self.tangency_residual,
            "solutions": self.solutions,
            "eigenvalues": list(self.eigenvalues),
            "verdict": self.verdict,
            "notes": list(self.notes),
        }


def _pca_dim(X, gap):
    C = np.cov((X - X.mean(axis=0)).T)
    w = np.sort(np.linalg.eigvalsh(np.atleast_2d(C)))[::-1]
    w = np.maximum(w, 0.0)
    ratios = w[:-1] / np.maximum(w[1:], 1e-300)
    big = np.nonzero(ratios >= gap)[0]
    return (int(big[0]) + 1 if len(big) else None), w


def _embed(patch, u, c):
    return np.concatenate([patch.point(u), patch.normal_vector(u, c)])


def _embed_diff(patch, u, c, h=1e-6):
    z = np.concatenate([u, c])
    k = u.shape[0]
    cols = []
    for a in range(z.shape[0]):
        e = np.zeros_like(z)
        e[a] = h
        zp, zm = z + e, z - e
        cols.append((_embed(patch, zp[:k], zp[k:]) - _embed(patch, zm[:k], zm[k:])) / (2 * h))
    return np.stack(cols, axis=1)


def _kernel(J, zero_tol=1e-6, gap=1e3):
    _, s, Vt = np.linalg.svd(J)
    p = J.shape[1]
    s_full = np.concatenate([s, np.zeros(p - len(s))])
    scale = max(float(s_full.max()), 1e-300)
    small = s_full <= zero_tol * scale
    mu = int(small.sum())
    if mu and mu < p:
        lo = s_full[~small].min()
        hi = s_full[small].max()
        if hi > 0 and lo / hi < gap:
            return None
    return Vt[p - mu :].T


def fiber_integrability_probe(patch: SubmanifoldPatch, u, v, samples: int = 24, tol: float = 0.05,
                              radius: float | None = None, seed: int = 0, gap: float = 1e3) -> FiberProbe:
    """Compare the local fiber of the normal exponential map with the kernel of its differential.

    v must be a focal vector with endpoint nullity mu > 0.  Solutions of
    exp(w) = exp(v) near v are found on random affine slices, the fiber
    dimension is read off a PCA of the cloud (embedded as (foot, vector)
    pairs), and each cloud point's kernel is compared with the PCA tangent.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    c = patch.normal_coeffs(u, v)
    _, recs = focal_records(patch, u, v, horizon=1.0)
    mu = nullity_at_endpoint(recs, end=1.0)
    if mu == 0:
        raise PreconditionError("fiber probe needs a focal vector (endpoint nullity is 0)")
    q = normal_exp(patch, u, v)
    rng = np.random.default_rng(seed)
    rho = 0.005 if radius is None else float(radius)  # chord error grows with the radius
    zs, status = fiber_solutions(patch, u, c, q, samples, rho, mu, rng)
    good = [z for z, st in zip(zs, status) if st == "ok"]
    notes = []
    if len(good) < mu + 3:
        return FiberProbe(None, mu, math.inf, len(good), (), "inconclusive",
                          (f"only {len(good)} fiber solutions",))
    k = patch.leaf_dim
    X = np.stack([_embed(patch, z[:k], z[k:]) for z in good])
    dim, w = _pca_dim(X, gap)
    if dim is None:
        notes.append("no eigenvalue gap in the solution cloud")
    # tangent fit: top principal directions
    Xc = X - X.mean(axis=0)
    _, _, Vt = np.linalg.svd(Xc, full_matrices=False)
    tangent = Vt[: (dim or mu)].T
    worst = 0.0
    _, Jac, _ = exp_with_differential([patch] * len(good), [z[:k] for z in good], [z[k:] for z in good])
    for z, Jz in zip(good, Jac):
        K = _kernel(Jz)
        if K is None or K.shape[1] != mu:
            notes.append("kernel dimension changes along the fiber")
            worst = math.inf
            break
        TK = np.linalg.qr(_embed_diff(patch, z[:k], z[k:]) @ K)[0]
        worst = max(worst, float(np.linalg.norm(TK - tangent @ (tangent.T @ TK), 2)))
    verdict = "integrable" if (dim == mu and worst < tol) else "not integrable"
    return FiberProbe(dim, mu, float(worst), len(good), tuple(float(x) for x in w[: mu + 2]), verdict,
                      tuple(notes))


def morse_bott_probe(patch: SubmanifoldPatch, target, cap: float, density: int = 6, probes: int = 2,
                     samples: int = 16, seed: int = 0) -> dict:
    """Check nullity = dimension of the critical set on each energy level.

    Critical points are grouped into components by energy (within 1e-6);
    for each component the critical-set dimension is the fiber dimension
    reported by ``fiber_integrability_probe`` at a few members (0 when the
    nullity is 0).
    """
    res = shoot_critical_points(patch, target, cap, density=density)
    comps: list = []
    for cp in res.points:
        for comp in comps:
            if abs(comp[0].energy - cp.energy) < 1e-6:
                comp.append(cp)
                break
        else:
            comps.append([cp])
    rows = []
    ok = True
    for comp in comps:
        nullities = sorted({c.nullity for c in comp})
        indices = sorted({c.index for c in comp})
        dims = []
        for c in comp[:probes]:
            if c.nullity == 0:
                dims.append(0)
                continue
            pr = fiber_integrability_probe(c.patch, c.param, c.vector, samples=samples, seed=seed)
            dims.append(pr.fiber_dim)
        row = {
            "energy": float(comp[0].energy),
            "members": len(comp),
            "nullities": nullities,
            "indices": indices,
            "critical_dims": dims,
            "index_constant": len(indices) == 1,
            "morse_bott": len(nullities) == 1 and all(d == nullities[0] for d in dims),
        }
        ok = ok and row["morse_bott"] and row["index_constant"]
        rows.append(row)
    return {"target": [float(x) for x in res.target], "cap": float(cap), "components": rows,
            "morse": all(r["nullities"] == [0] for r in rows), "verdict": "morse-bott" if ok else "degenerate"}


# ---------------------------------------------------------------------------
# saturated preimages


def _hopf_lift(b):
    """A unit quaternion q with hopf_map(q) = b (|b| = 1/2)."""
    w = 2.0 * np.asarray(b, dtype=float)
    wq = np.concatenate([[0.0], w])
    iq = np.array([0.0, 1.0, 0.0, 0.0])
    # conj(q) i q = w: take conj(q) = r with r i conj(r) = w
    r = np.array([1.0, 0.0, 0.0, 0.0]) - qmul(wq, iq)
    nr = float(np.linalg.norm(r))
    if nr < 1e-12:  # w = -i
        r = np.array([0.0, 0.0, 1.0, 0.0])
    else:
        r = r / nr
    return qconj(r)


def build_saturated_preimage(foliation: FoliationSpec, subset, tol: float = 1e-9) -> SubmanifoldPatch:
    """Union of the leaves over a quotient point, as a patch.

    ``subset`` is a quotient point, given as coordinates or as
    {"kind": "point", "coords": [...]}.
    """
    if isinstance(subset, dict):
        if subset.get("kind", "point") != "point":
            raise ConstructionError(f"unsupported quotient subset kind {subset.get('kind')!r}")
        coords = np.asarray(subset["coords"], dtype=float)
    else:
        coords = np.atleast_1d(np.asarray(subset, dtype=float))
    kind = foliation.quotient_metric.get("kind")
    if kind == "half-space":
        m = foliation.regular_dim + 1
        r = float(coords[0])
        if r <= tol:
            raise PreconditionError("quotient point lies on the singular boundary r = 0")
        extra = coords[1:]
        N = foliation.parent.ambient_dim
        center = np.concatenate([np.zeros(m), extra])
        if m == 2:
            return sphere_patch(foliation.parent, center, r, subspace=np.eye(N)[:, :m])
        return sphere_patch(foliation.parent, center, r, subspace=np.eye(N)[:, :m], base_dir=np.eye(m)[0])
    if kind == "round-sphere":
        rad = float(foliation.quotient_metric.get("radius", 0.5))
        if abs(float(np.linalg.norm(coords)) - rad) > 1e-9:
            raise DomainError("quotient point is not on the base sphere",
                              abs(float(np.linalg.norm(coords)) - rad))
        q = _hopf_lift(coords)
        if float(np.linalg.norm(hopf_map(q) - coords)) > 1e-9:
            raise ConstructionError("failed to lift the base point")
        return hopf_fiber_patch(q)
    if kind == "euclidean":
        n = foliation.parent.ambient_dim
        P = np.stack([foliation.project(e) for e in np.eye(n)])  # linear projection
        point = np.linalg.lstsq(P.T, coords, rcond=None)[0]
        return foliation.leaf_patch(point)[0]
    if kind == "identity":
        return point_patch(foliation.parent, coords)
    raise ConstructionError(f"{foliation.name}: no saturated-preimage rule for quotient {kind!r}")
