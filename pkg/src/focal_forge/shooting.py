"""Shooting for geodesics from a submanifold to a target point.

Unknowns are a foot parameter u and normal coefficients c, v = N(u) c.  The
residual F(u, c) = exp(v) - q is driven to zero by a damped Gauss-Newton
iteration whose derivative comes from Jacobi fields along the current
geodesic:

* d/du_a : J(0) = d_a phi, J'(0) = covariant derivative of N(u) c along d_a,
* d/dc_j : J(0) = 0, J'(0) = n_j.

All seeds of one call are integrated together as a single batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, IntegrationError
from .flow import integrate_flow, normal_frame_of
from .focal import ENDPOINT_TOL, focal_records, morse_index, nullity_at_endpoint
from .jacobi import DEFAULT_TOL
from .submanifolds import SubmanifoldPatch, unit_directions

__all__ = [
    "CriticalPoint",
    "ShootingResult",
    "exp_with_differential",
    "newton_solve",
    "shoot_critical_points",
    "critical_point_from",
    "fiber_solutions",
]

log = logging.getLogger(__name__)


def _seed_data(patch: SubmanifoldPatch, u, c, with_jac: bool):
    x0 = patch.point(u)
    Nf = patch.normal_frame(u)
    v = Nf @ c
    if not with_jac:
        return x0, v, None, None
    k = patch.leaf_dim
    D = patch.jacobian(u)
    dV = patch.normal_field_derivative(u, c) if k else np.zeros((x0.shape[0], 0))
    J0 = np.concatenate([D, np.zeros_like(Nf)], axis=1)
    dJ0 = np.concatenate([dV, Nf], axis=1)
    return x0, v, J0, dJ0


def exp_with_differential(patches, us, cs, with_jac: bool = True, tol: float = DEFAULT_TOL):
    """exp(N(u) c) and its derivative in (u, c) for a batch of seeds.

    Returns (endpoints (B, N), jacobians (B, N, k + codim) or None,
    velocities at t = 1).
    """
    space = patches[0].parent
    data = [_seed_data(p, u, c, with_jac) for p, u, c in zip(patches, us, cs)]
    x0 = np.stack([d[0] for d in data])
    v0 = np.stack([d[1] for d in data])
    speed = space.norm(x0, v0)
    if np.any(speed == 0.0):
        raise DomainError("shooting: zero normal vector in batch")
    E0 = np.stack([normal_frame_of(space, x, v) for x, v in zip(x0, v0)])
    if with_jac:
        J0 = np.stack([d[2] for d in data])
        dJ0 = np.stack([d[3] for d in data])
        gE = space.lower(x0[:, None, :], E0)  # (B, m, N)
        Y0 = gE @ J0
        dY0 = gE @ dJ0
        T0 = space.lower(x0, v0 / speed[:, None])
        tan = np.einsum("bn,bnp->bp", T0, J0) + np.einsum("bn,bnp->bp", T0, dJ0)
    else:
        Y0 = dY0 = None
    fl = integrate_flow(space, x0, v0, E0, Y0, dY0, T=1.0, tol=tol, times=np.array([0.0, 1.0]),
                        dense=False)
    x1 = fl.x[:, -1]
    v1 = fl.v[:, -1]
    if not with_jac:
        return x1, None, v1
    E1 = fl.E[:, -1]
    Jac = np.einsum("ban,bap->bnp", E1, fl.Y[:, -1])
    Jac = Jac + tan[:, None, :] * (v1 / speed[:, None])[:, :, None]
    return x1, Jac, v1


def _split(patch, z):
    k = patch.leaf_dim
    return z[:k], z[k:]


def newton_solve(patches, zs, target, extra=None, newton_tol: float = 1e-10, max_iter: int = 40,
                 tol: float = DEFAULT_TOL, recenter: bool = True, energy_limit: float | None = None):
    """Damped Gauss-Newton on exp(N(u) c) = q for a batch of starting points.

    ``extra`` optionally adds affine constraints L (z - z0) = 0 per seed as a
    list of (L, z0).  Returns (patches, zs, residuals, status) where status
    is "ok" or a failure reason per seed.
    """
    B = len(zs)
    patches = list(patches)
    zs = [np.asarray(z, dtype=float).copy() for z in zs]
    q = np.asarray(target, dtype=float)
    status = ["running"] * B
    resid = np.full(B, np.inf)
    history = [[] for _ in range(B)]

    def residuals(idx, cand_p, cand_z, with_jac):
        us = [_split(cand_p[j], cand_z[j])[0] for j in range(len(idx))]
        cs = [_split(cand_p[j], cand_z[j])[1] for j in range(len(idx))]
        x1, Jac, _ = exp_with_differential(cand_p, us, cs, with_jac, tol)
        F = x1 - q
        if extra is not None:
            F = np.concatenate([F, np.stack([extra[i][0] @ (cand_z[j] - extra[i][1])
                                             for j, i in enumerate(idx)])], axis=1)
            if with_jac:
                Jac = np.concatenate([Jac, np.stack([extra[i][0] for i in idx])], axis=1)
        return F, Jac

    def check(i, p, z):
        """Wrap periodic coordinates, enforce the box, recentre charts."""
        u, c = _split(p, z)
        if energy_limit is not None and float(c @ c) > energy_limit:
            return None, None, "left energy window"
        if float(np.linalg.norm(c)) < 1e-12:
            return None, None, "collapsed to the zero section"
        if p.leaf_dim:
            u = p.wrap(u)
            box = np.asarray(p.param_box, dtype=float)
            for a in range(p.leaf_dim):
                if a in p.periodic:
                    continue
                if not (box[a, 0] - 1e-12 <= u[a] <= box[a, 1] + 1e-12):
                    return None, None, "left parameter box"
            if recenter and p.recenter_fn is not None and float(np.max(np.abs(u))) > 0.3:
                p, u = p.recentered(u)
        return p, np.concatenate([u, c]), None

    for it in range(max_iter):
        act = [i for i in range(B) if status[i] == "running"]
        log.debug("newton iteration %d: %d active", it, len(act))
        if not act:
            break
        try:
            F, Jac = residuals(act, [patches[i] for i in act], [zs[i] for i in act], True)
        except IntegrationError as exc:
            for i in act:
                status[i] = f"integration failed: {exc}"
            break
        r = np.linalg.norm(F, axis=1)
        steps = {}
        for j, i in enumerate(act):
            resid[i] = r[j]
            history[i].append(r[j])
            if r[j] < newton_tol:
                status[i] = "ok"
                continue
            if len(history[i]) > 6 and r[j] > 0.5 * history[i][-6]:
                status[i] = "stagnated"
                continue
            steps[i] = np.linalg.lstsq(Jac[j], -F[j], rcond=1e-12)[0]
        pending = [i for i in act if i in steps]
        alpha = {i: 1.0 for i in pending}
        r_of = {i: resid[i] for i in pending}
        for _ in range(8):
            if not pending:
                break
            cand_p, cand_z, idx = [], [], []
            for i in pending:
                p, z, why = check(i, patches[i], zs[i] + alpha[i] * steps[i])
                if why is not None:
                    # shrink once more before giving up on this seed
                    alpha[i] *= 0.5
                    if alpha[i] < 1e-2:
                        status[i] = why
                    continue
                cand_p.append(p)
                cand_z.append(z)
                idx.append(i)
            pending = [i for i in pending if status[i] == "running"]
            if not idx:
                continue
            try:
                Ft, _ = residuals(idx, cand_p, cand_z, False)
            except IntegrationError:
                for i in idx:
                    alpha[i] *= 0.5
                continue
            rt = np.linalg.norm(Ft, axis=1)
            accepted = set()
            for j, i in enumerate(idx):
                if rt[j] < (1.0 - 1e-4 * alpha[i]) * r_of[i] or rt[j] < newton_tol:
                    patches[i], zs[i] = cand_p[j], cand_z[j]
                    resid[i] = rt[j]
                    accepted.add(i)
                else:
                    alpha[i] *= 0.5
            pending = [i for i in pending if i not in accepted]
        for i in pending:
            if status[i] == "running":
                status[i] = "line search stalled"
    for i in range(B):
        if status[i] == "running":
            status[i] = "ok" if resid[i] < newton_tol else "no convergence"
    return patches, zs, resid, status


@dataclass(frozen=True, eq=False)
class CriticalPoint:
    """Geodesic from the submanifold to the target, normal at its foot."""

    param: np.ndarray
    coeffs: np.ndarray
    foot: np.ndarray
    vector: np.ndarray
    residual: float
    energy: float
    index: int
    nullity: int
    focal_times: tuple
    patch: SubmanifoldPatch = field(repr=False)

    @property
    def length(self) -> float:
        return float(np.sqrt(self.energy))

    @property
    def generic(self) -> bool:
        return self.nullity == 0 and all(abs(t - 1.0) > 1e-4 for t in self.focal_times)

    def to_dict(self) -> dict:
        return {
            "foot": [float(x) for x in self.foot],
            "vector": [float(x) for x in self.vector],
            "residual": float(self.residual),
            "energy": float(self.energy),
            "length": self.length,
            "index": int(self.index),
            "nullity": int(self.nullity),
            "focal_times": [float(t) for t in self.focal_times],
        }


@dataclass(frozen=True, eq=False)
class ShootingResult:
    points: list
    target: np.ndarray
    cap: float
    seeds: int
    failures: dict
    duplicates: int

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def __getitem__(self, i):
        return self.points[i]

    def report(self) -> dict:
        return {
            "seeds": self.seeds,
            "converged": self.seeds - sum(self.failures.values()),
            "failures": dict(sorted(self.failures.items())),
            "unique": len(self.points),
            "duplicates_collapsed": self.duplicates,
        }


def critical_point_from(patch: SubmanifoldPatch, u, c, residual: float, tol: float = DEFAULT_TOL,
                        gap: float = 1e3) -> CriticalPoint:
    """Attach energy, index and nullity to a converged shooting solution."""
    u = np.asarray(u, dtype=float)
    c = np.asarray(c, dtype=float)
    v = patch.normal_vector(u, c)
    foot = patch.point(u)
    _, recs = focal_records(patch, u, v, horizon=1.0, tol=tol, gap=gap)
    return CriticalPoint(
        param=u,
        coeffs=c,
        foot=foot,
        vector=v,
        residual=float(residual),
        energy=float(patch.parent.inner(foot, v, v)),
        index=morse_index(recs, end=1.0),
        nullity=nullity_at_endpoint(recs, end=1.0),
        focal_times=tuple(float(r.time) for r in recs),
        patch=patch,
    )


def _default_seeds(patch: SubmanifoldPatch, cap: float, density: int):
    codim = patch.codim
    dirs = unit_directions(codim, max(density, 2))
    root = float(np.sqrt(cap))
    n_len = max(2 * density, 4)
    lengths = root * (np.arange(n_len) + 0.5) / n_len
    out = []
    for p, u in patch.seeds(density):
        for d in dirs:
            for s in lengths:
                out.append((p, np.concatenate([u, s * d])))
    return out


def shoot_critical_points(patch: SubmanifoldPatch, target, cap: float, density: int = 8,
                          newton_tol: float = 1e-10, tol: float = DEFAULT_TOL, max_iter: int = 40,
                          dedup: float = 1e-6, seeds=None, coarse_tol: float = 1e-6) -> ShootingResult:
    """All geodesics normal to the patch ending at ``target`` with energy <= cap.

    Seeds cover the foot seeds of the patch, ``unit_directions`` of the
    normal space and lengths below sqrt(cap).  All seeds are first solved to
    ``coarse_tol`` with a loose integrator tolerance; the distinct coarse
    solutions are then polished to ``newton_tol``.  Non-converging seeds are
    counted by reason and logged; duplicates (distance in the normal bundle
    below ``dedup``) are collapsed.  The result is sorted by energy, then
    lexicographically by the normal vector.
    """
    space = patch.parent
    q = space.check_point(np.asarray(target, dtype=float))
    if not np.isfinite(cap) or cap <= 0:
        raise DomainError("shooting: energy cap must be positive and finite", float(cap))
    if patch.leaf_dim == 0 and float(np.linalg.norm(patch.point(np.zeros(0)) - q)) < 1e-9:
        raise DomainError("shooting: target lies on the submanifold")
    seed_list = _default_seeds(patch, cap, density) if seeds is None else list(seeds)
    # coarse phase: loose integration, collapse near-duplicates, then polish
    patches, zs, resid, status = newton_solve(
        [s[0] for s in seed_list], [s[1] for s in seed_list], q, newton_tol=coarse_tol,
        max_iter=max_iter, tol=coarse_tol * 1e-2, energy_limit=2.0 * cap,
    )
    failures: dict = {}
    coarse = []
    for p, z, st in zip(patches, zs, status):
        if st != "ok":
            failures[st] = failures.get(st, 0) + 1
            continue
        u, c = _split(p, z)
        foot = p.point(u)
        v = p.normal_vector(u, c)
        if any(np.linalg.norm(foot - g[2]) + np.linalg.norm(v - g[3]) < 1e3 * coarse_tol for g in coarse):
            continue
        coarse.append((p, z, foot, v))
    patches, zs, resid, status = newton_solve(
        [g[0] for g in coarse], [g[1] for g in coarse], q, newton_tol=newton_tol,
        max_iter=max_iter, tol=tol, energy_limit=2.0 * cap,
    ) if coarse else ([], [], [], [])
    found = []
    for p, z, r, st in zip(patches, zs, resid, status):
        if st != "ok":
            failures["polish: " + st] = failures.get("polish: " + st, 0) + 1
            continue
        u, c = _split(p, z)
        foot = p.point(u)
        v = p.normal_vector(u, c)
        e = float(space.inner(foot, v, v))
        if e > cap:
            failures["above cap"] = failures.get("above cap", 0) + 1
            continue
        found.append((p, u, c, foot, v, float(r)))
    for reason, count in sorted(failures.items()):
        log.debug("shooting: %d seeds: %s", count, reason)
    found.sort(key=lambda f: f[5])
    unique = []
    dups = len(seed_list) - sum(failures.values()) - len(found)
    for f in found:
        if any(np.linalg.norm(f[3] - g[3]) + np.linalg.norm(f[4] - g[4]) < dedup for g in unique):
            dups += 1
            continue
        unique.append(f)
    points = [critical_point_from(p, u, c, r, tol) for (p, u, c, _, _, r) in unique]
    points.sort(key=lambda cp: (round(cp.energy, 9), tuple(np.round(cp.vector, 9))))
    return ShootingResult(points, q, float(cap), len(seed_list), failures, dups)


def fiber_solutions(patch: SubmanifoldPatch, u0, c0, target, count: int, radius: float, mu: int,
                    rng: np.random.Generator, tol: float = DEFAULT_TOL, newton_tol: float = 1e-10):
    """Solutions of exp(N(u) c) = target near (u0, c0) on random affine slices.

    Each seed is displaced from (u0, c0) inside the kernel of the
    differential at (u0, c0); the slice fixes ``mu`` random linear functionals
    close to that kernel, so the restricted system has isolated solutions.
    Returns (list of z, statuses).
    """
    u0 = np.asarray(u0, dtype=float)
    c0 = np.asarray(c0, dtype=float)
    z0 = np.concatenate([u0, c0])
    _, Jac, _ = exp_with_differential([patch], [u0], [c0], True, tol)
    _, s, Vt = np.linalg.svd(Jac[0])
    p = z0.shape[0]
    K = Vt[p - mu :].T if mu else np.zeros((p, 0))
    seeds, extra = [], []
    for _ in range(count):
        coef = rng.normal(size=mu)
        coef /= max(np.linalg.norm(coef), 1e-300)
        zs = z0 + radius * rng.uniform(0.3, 1.0) * (K @ coef)
        L = K + 0.1 * rng.normal(size=K.shape)
        L = np.linalg.qr(L)[0].T
        seeds.append(zs)
        extra.append((L, zs))
    _, zs, resid, status = newton_solve([patch] * count, seeds, target, extra=extra,
                                        newton_tol=newton_tol, tol=tol, recenter=False)
    return zs, status
