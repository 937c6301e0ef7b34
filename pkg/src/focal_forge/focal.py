"""Focal times, multiplicities, Morse index and focal-time profiles.

Rank drops of an evaluation matrix A(t) (rows: directions, columns: fields)
are found in three passes:

1. scan the smallest singular value on the output grid for V-shaped local
   minima;
2. narrow each candidate by golden-section search on the smallest singular
   value;
3. polish by bisection on the sign of a bordered determinant.  With corank
   mu at t*, bordering A by mu - 1 approximate left/right null vectors
   leaves a matrix with a simple zero, whose determinant changes sign even
   when det A(t) has a zero of even order.

The corank is the number of singular values below ``zero_tol * scale``; the
split between retained and discarded values must show a ratio of at least
``gap``, otherwise a CorankAmbiguityError carrying the spectrum is raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CorankAmbiguityError, IntegrationError
from .jacobi import DEFAULT_TOL, JacobiBasisTrace, jacobi_basis, normal_geodesic
from .submanifolds import SubmanifoldPatch

__all__ = [
    "FocalRecord",
    "FocalProfile",
    "locate_rank_drops",
    "detect_focal",
    "morse_index",
    "nullity_at_endpoint",
    "focal_records",
    "classify_regularity",
    "focal_time_profile",
    "ENDPOINT_TOL",
]

ENDPOINT_TOL = 1e-8
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FocalRecord:
    time: float
    multiplicity: int
    retained_sv: float
    discarded_sv: float
    regular: bool | None = None
    spectrum: tuple = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "multiplicity": self.multiplicity,
            "retained_sv": self.retained_sv,
            "discarded_sv": self.discarded_sv,
            "regular": self.regular,
        }


def _svals(A):
    if A.shape[-1] == 0:
        return np.zeros(A.shape[:-2] + (0,))
    return np.linalg.svd(A, compute_uv=False)


def _golden_min(f, a, b, xtol):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    for t, ft in ((a, f(a)), (b, f(b))):
        if ft < min(fc, fd):
            return t
    return c if fc <= fd else d


def _bordered_proxy(evaluate, t_ref, mu):
    A = evaluate(t_ref)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    c = A.shape[1]
    Ub = np.eye(c)[:, c - mu : c - 1]
    Vb = Vt[c - mu : c - 1].T

    def proxy(t):
        B = U.T @ evaluate(t)
        M = np.block([[B, Ub], [Vb.T, np.zeros((mu - 1, mu - 1))]])
        return np.linalg.slogdet(M)[0]

    return proxy


def _polish(evaluate, t_ref, mu, lo, hi, step, xtol=1e-12):
    proxy = _bordered_proxy(evaluate, t_ref, mu)
    delta = 1e-9
    while delta <= step:
        a, b = max(lo, t_ref - delta), min(hi, t_ref + delta)
        sa, sb = proxy(a), proxy(b)
        if sa != 0 and sb != 0 and sa != sb:
            while b - a > xtol:
                mid = 0.5 * (a + b)
                sm = proxy(mid)
                if sm == 0:
                    return mid
                if sm == sa:
                    a = mid
                else:
                    b = mid
            return 0.5 * (a + b)
        delta *= 4.0
    return t_ref


def _corank(s, scale, zero_tol, gap, t):
    c = s.shape[0]
    thr = zero_tol * scale
    mu = int(np.sum(s <= thr))
    if mu == 0:
        return 0, float(s[-1]) if c else math.inf, 0.0
    retained = float(s[c - mu - 1]) if mu < c else math.inf
    discarded = float(s[c - mu])
    if retained < gap * max(discarded, 1e-300):
        raise CorankAmbiguityError(t, s, gap)
    return mu, retained, discarded


def locate_rank_drops(times, stack, evaluate, window=None, gap=1e3, zero_tol=1e-6, xtol=1e-11):
    """Times in ``window`` (open at the left, closed at the right) where A(t) loses rank.

    Parameters
    ----------
    times : grid nodes
    stack : A at the nodes, shape (n, r, c) with r >= c
    evaluate : callable t -> A(t) (dense)
    Returns a list of (t*, mu, retained, discarded, spectrum) tuples.
    """
    times = np.asarray(times, dtype=float)
    stack = np.asarray(stack, dtype=float)
    c = stack.shape[2]
    if c == 0:
        return []
    lo, hi = (times[0], times[-1]) if window is None else (float(window[0]), float(window[1]))
    sv = _svals(stack)
    scale = max(float(np.max(sv[:, 0])), 1e-300)
    smin = sv[:, -1]
    idx = np.nonzero((times > lo) & (times <= hi + 1e-15))[0]
    if len(idx) == 0:
        return []
    step = float(times[1] - times[0]) if len(times) > 1 else hi - lo

    def f(t):
        return float(_svals(evaluate(t))[-1])

    found = []
    last = idx[-1]
    for i in idx:
        left = smin[i - 1] if i > 0 else math.inf
        right = smin[i + 1] if i < last else math.inf
        if not (smin[i] < left and smin[i] <= right):
            continue
        slope = max(abs(left - smin[i]) if math.isfinite(left) else 0.0,
                    abs(right - smin[i]) if math.isfinite(right) else 0.0)
        if smin[i] > 4.0 * slope + zero_tol * scale:
            continue  # smooth minimum well above zero
        a = max(times[i - 1] if i > 0 else lo, lo)
        b = min(times[i + 1] if i < len(times) - 1 and i < last else times[i], hi)
        t_ref = _golden_min(f, a, b, xtol)
        s = _svals(evaluate(t_ref))
        mu, _, _ = _corank(s, scale, zero_tol, gap, t_ref)
        if mu == 0:
            continue
        t_star = _polish(evaluate, t_ref, mu, lo, hi, step)
        if not (lo < t_star <= hi):
            continue
        s = _svals(evaluate(t_star))
        mu2, retained, discarded = _corank(s, scale, zero_tol, gap, t_star)
        if mu2 == 0:
            t_star, mu2 = t_ref, mu
            s = _svals(evaluate(t_ref))
            _, retained, discarded = _corank(s, scale, zero_tol, gap, t_ref)
        if found and abs(found[-1][0] - t_star) < 1e-8:
            continue
        found.append((float(t_star), int(mu2), retained, discarded, tuple(float(x) for x in s)))
    found.sort(key=lambda r: r[0])
    return found


def detect_focal(basis: JacobiBasisTrace, window=None, gap: float = 1e3, zero_tol: float = 1e-6):
    """Focal times of the basis in ``window`` (default (0, T])."""
    T = float(basis.times[-1])
    window = (0.0, T) if window is None else window

    def evaluate(t):
        return basis.evaluate(t)[0][0]

    drops = locate_rank_drops(basis.times, basis.values, evaluate, window, gap, zero_tol)
    return [FocalRecord(t, mu, r, d, None, s) for (t, mu, r, d, s) in drops]


def morse_index(records, end: float = 1.0, start: float = 0.0) -> int:
    """Sum of multiplicities with start < t < end (end itself excluded)."""
    return int(sum(r.multiplicity for r in records
                   if r.time > start and r.time < end and abs(r.time - end) >= ENDPOINT_TOL))


def nullity_at_endpoint(records, end: float = 1.0) -> int:
    for r in records:
        if abs(r.time - end) < ENDPOINT_TOL:
            return r.multiplicity
    return 0


def focal_records(patch: SubmanifoldPatch, u, v, horizon: float = 1.0, tol: float = DEFAULT_TOL,
                  gap: float = 1e3):
    """Convenience: integrate the L-geodesic of v and return (basis, records)."""
    g = normal_geodesic(patch, u, v, horizon=horizon, tol=tol)
    b = jacobi_basis(patch, g)
    return b, detect_focal(b, gap=gap)


def _probe_vectors(patch, u, v, count, eps, rng):
    """Nearby (u', v') pairs: perturbed foot point and perturbed direction."""
    speed = float(np.linalg.norm(patch.normal_coeffs(u, v)))
    c = patch.normal_coeffs(u, v) / speed
    out = []
    for _ in range(count):
        dc = rng.normal(size=c.shape)
        dc -= (dc @ c) * c
        nd = float(np.linalg.norm(dc))
        c2 = c + (eps * dc / nd if nd > 0 else 0.0)
        c2 = c2 / np.linalg.norm(c2)
        u2 = np.asarray(u, dtype=float).copy()
        if u2.size:
            du = rng.normal(size=u2.shape)
            u2 = u2 + eps * du / np.linalg.norm(du)
        out.append((u2, speed * patch.normal_vector(u2, c2)))
    return out


def classify_regularity(patch, u, v, records, probes: int = 4, eps: float = 1e-3,
                        rel_window: float = 0.02, seed: int = 0, tol: float = DEFAULT_TOL):
    """Mark each record regular if nearby rays cross its window exactly once with the same mu.

    This is the computable proxy for membership in the regular focal set:
    rays through a small neighbourhood meet the focal set near t* exactly
    once and with constant multiplicity.
    """
    if not records:
        return []
    rng = np.random.default_rng(seed)
    tmax = max(r.time for r in records)
    horizon = tmax * (1.0 + 2 * rel_window)
    probes_data = []
    for u2, v2 in _probe_vectors(patch, u, v, probes, eps, rng):
        try:
            _, rec2 = focal_records(patch, u2, v2, horizon=horizon, tol=tol)
        except Exception:  # noqa: BLE001 - a failed probe makes the flag False
            rec2 = None
        probes_data.append(rec2)
    out = []
    for r in records:
        w = rel_window * r.time
        ok = True
        for rec2 in probes_data:
            if rec2 is None:
                ok = False
                break
            near = [q for q in rec2 if abs(q.time - r.time) <= w]
            if len(near) != 1 or near[0].multiplicity != r.multiplicity:
                ok = False
                break
        out.append(replace(r, regular=ok))
    return out


@dataclass(frozen=True)
class FocalProfile:
    samples: list
    lambdas: np.ndarray  # (n, k), nan where no focal time within the horizon
    multiplicities: np.ndarray  # (n, k), 0 where absent
    continuity_constant: float
    regular: list
    errors: list

    def rows(self):
        for i in range(len(self.samples)):
            yield i, self.lambdas[i], self.multiplicities[i]


def focal_time_profile(patch: SubmanifoldPatch, samples, k: int = 1, horizon: float = 4.0,
                       tol: float = DEFAULT_TOL, probes: int = 2, gap: float = 1e3):
    """First k focal times along unit-speed normal rays for each sample.

    ``samples`` is a sequence of (u, unit normal) pairs ordered so that
    neighbours are adjacent in the unit normal bundle.
    """
    n = len(samples)
    lam = np.full((n, k), np.nan)
    mult = np.zeros((n, k), dtype=int)
    regular = []
    errors = []
    pts = []
    for i, (u, nvec) in enumerate(samples):
        x = patch.point(u)
        pts.append(np.concatenate([x, np.asarray(nvec, dtype=float)]))
        try:
            _, recs = focal_records(patch, u, nvec, horizon=horizon, tol=tol, gap=gap)
            if probes:
                recs = classify_regularity(patch, u, nvec, recs, probes=probes, seed=i, tol=tol)
            for j, r in enumerate(recs[:k]):
                lam[i, j] = r.time
                mult[i, j] = r.multiplicity
            regular.append(all(r.regular is not False for r in recs))
            errors.append(None)
        except (IntegrationError, CorankAmbiguityError) as exc:
            regular.append(False)
            errors.append(str(exc))
    K = 0.0
    for i in range(n - 1):
        delta = float(np.linalg.norm(pts[i + 1] - pts[i]))
        if delta == 0:
            continue
        for j in range(k):
            a, b = lam[i, j], lam[i + 1, j]
            if np.isfinite(a) and np.isfinite(b):
                K = max(K, abs(b - a) / delta)
    return FocalProfile(list(samples), lam, mult, K, regular, errors)
