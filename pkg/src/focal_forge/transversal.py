"""Transversal Jacobi equation along horizontal geodesics.

All vectors are expressed in the parallel orthonormal frame of the normal
space of the geodesic, so covariant derivatives are plain time derivatives
of coefficients.  Per node the system stores

* ``wt``: orthonormal basis of the extended vertical space W~ (m x d),
* ``h``: orthonormal basis of its complement H (m x (m - d)), propagated
  by projection and polar re-orthonormalization (second order accurate
  for the connection P_H d/dt),
* ``A``: the A-tensor W~ -> H in these bases,
* ``RH``: P_H R P_H + 3 A A^*, symmetric on H.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import DegeneracyError, IntegrationError, PreconditionError
from .focal import ENDPOINT_TOL, FocalRecord, detect_focal, locate_rank_drops, morse_index
from .foliation import FoliationSpec, VerticalJacobiTrace, vertical_jacobi_basis, w_focal_index
from .jacobi import GeodesicTrace, JacobiBasisTrace, jacobi_basis, normal_geodesic

__all__ = [
    "TransversalSystem",
    "horizontal_geodesic",
    "extend_vertical_bundle",
    "transversal_system",
    "a_tensor_at",
    "a_adjoint_at",
    "transversal_curvature_at",
    "HorizontalSolution",
    "horizontal_solution",
    "horizontal_index",
    "verify_index_splitting",
    "intrinsicality_probe",
]


def horizontal_geodesic(foliation: FoliationSpec, point, velocity, length: float, tol: float = 1e-11):
    """Normal geodesic of the leaf through ``point`` with initial velocity ``velocity``.

    Returns (patch, geodesic); the geodesic carries the foot parameter so
    that L-Jacobi bases can be built on it.
    """
    patch, u = foliation.leaf_patch(point)
    return patch, normal_geodesic(patch, u, velocity, horizon=length, tol=tol)


def _wtilde(Y, dY, zero_tol, gap):
    """Orthonormal basis of W~ and the data needed for the A-tensor.

    Returns (Q, C, nz): Q is m x d, column j of C (d x d) holds the
    non-vanishing W combination whose derivative defines A on q_j, and nz
    is the number of vanishing combinations.
    """
    m, d = Y.shape
    if d == 0:
        return np.zeros((m, 0)), np.zeros((0, 0)), 0
    U, s, Vt = np.linalg.svd(Y)
    scale = max(float(np.max(np.abs(Y))), 1e-300)
    small = s <= zero_tol * max(scale, 1.0)
    nz = int(np.sum(small))
    Vb = Vt[: d - nz].T
    Vs = Vt[d - nz :].T
    M = np.concatenate([Y @ Vb, dY @ Vs], axis=1)
    Q, R = np.linalg.qr(M)
    sv = np.abs(np.diag(R))
    if sv.min() <= 1e-10 * max(sv.max(), 1e-300):
        raise DegeneracyError("extended vertical space lost rank", np.linalg.svd(M, compute_uv=False))
    Rinv = np.linalg.inv(R)
    # W~ basis vector q_j = M Rinv[:, j]; its A-image uses only the Y @ Vb part
    coeff_big = Vb @ Rinv[: d - nz]  # d x d: combination of W fields per q_j
    return Q, coeff_big, nz


@dataclass(frozen=True, eq=False)
class TransversalSystem:
    geodesic: GeodesicTrace
    wbasis: VerticalJacobiTrace
    times: np.ndarray
    wt: np.ndarray  # (T, m, d)
    h: np.ndarray  # (T, m, m - d)
    A: np.ndarray  # (T, m - d, d)
    RH: np.ndarray  # (T, m - d, m - d)
    K: np.ndarray  # (T, m, m) Jacobi operator in the parallel frame
    vanishing: tuple  # nodes where the W~ completion was used
    max_step_angle: float

    @property
    def rank(self) -> int:
        return self.wt.shape[2]

    @property
    def hdim(self) -> int:
        return self.h.shape[2]

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.RH - np.swapaxes(self.RH, 1, 2)), initial=0.0))


def _principal_sine(P, Q) -> float:
    if P.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(Q - P @ (P.T @ Q), 2))


def extend_vertical_bundle(wbasis: VerticalJacobiTrace, zero_tol: float = 1e-6, gap: float = 1e3,
                           limit_tol: float = 1e-4):
    """Per-node orthonormal W~ bases (T, m, d), the A-coefficient data and vanishing nodes.

    At a node where some W combination vanishes the basis is completed by
    the derivatives of the vanishing combinations.  At such nodes the bases
    just left and right of the node are compared; they must agree within
    principal angle ``limit_tol``.
    """
    T = len(wbasis.times)
    m = wbasis.values.shape[1]
    d = wbasis.count
    if d == 0:
        return np.zeros((T, m, 0)), np.zeros((T, 0, 0)), ()
    Y, dY = wbasis.values, wbasis.derivatives
    # batched pass for nodes where W itself has full rank
    _, s, Vt = np.linalg.svd(Y)
    scale = np.maximum(np.max(np.abs(Y), axis=(1, 2)), 1.0)
    Vb = np.swapaxes(Vt, 1, 2)
    Q, R = np.linalg.qr(Y @ Vb)
    wt = Q
    coeff = Vb @ np.linalg.inv(R)
    vanishing = [int(i) for i in np.nonzero(np.any(s <= zero_tol * scale[:, None], axis=1))[0]]
    for i in vanishing:
        Qi, Ci, _ = _wtilde(Y[i], dY[i], zero_tol, gap)
        wt[i], coeff[i] = Qi, Ci
    dt = float(wbasis.times[1] - wbasis.times[0]) if T > 1 else 1.0
    for i in vanishing:
        t0 = float(wbasis.times[i])
        delta = 1e-3 * dt
        sides = []
        for s in (t0 - delta, t0 + delta):
            if wbasis.times[0] <= s <= wbasis.times[-1]:
                Y, dY = wbasis.evaluate(s)
                sides.append(_wtilde(Y[0], dY[0], zero_tol, gap)[0])
        for S in sides:
            ang = _principal_sine(wt[i], S)
            if ang > limit_tol:
                raise DegeneracyError(f"one-sided limits of W~ disagree at t={t0:.6g}", np.array([ang]))
    return wt, coeff, tuple(vanishing)


def _complement_frames(wt, h0=None):
    """Projection-transported orthonormal frames of the complement of W~."""
    T, m, d = wt.shape
    r = m - d
    h = np.zeros((T, m, r))
    if r == 0:
        return h
    P0 = np.eye(m) - wt[0] @ wt[0].T
    if h0 is None:
        U, s, _ = np.linalg.svd(P0)
        h0 = U[:, :r]
    h[0] = h0
    for i in range(1, T):
        M = h[i - 1] - wt[i] @ (wt[i].T @ h[i - 1])
        U, _, Vt = np.linalg.svd(M, full_matrices=False)
        h[i] = U @ Vt  # polar factor
    return h


def transversal_system(geodesic: GeodesicTrace, foliation: FoliationSpec, zero_tol: float = 1e-6,
                       gap: float = 1e3) -> TransversalSystem:
    """W~, H, A and R^H at every grid node of a horizontal geodesic."""
    wb = vertical_jacobi_basis(geodesic, foliation)
    wt, coeff, vanishing = extend_vertical_bundle(wb, zero_tol, gap)
    h = _complement_frames(wt)
    # A(q_j) = P_H(W' c_j) with c_j the non-vanishing combination of q_j
    dW = wb.derivatives  # (T, m, d)
    A = np.einsum("tmr,tmd,tdj->trj", h, dW, coeff)
    K = geodesic.space.jacobi_operator(geodesic.positions, geodesic.velocities, geodesic.frames)
    RH = np.einsum("tmr,tmn,tns->trs", h, K, h) + 3.0 * np.einsum("trj,tsj->trs", A, A)
    RH = 0.5 * (RH + np.swapaxes(RH, 1, 2))
    step = 0.0
    if wt.shape[2] and len(wt) > 1:
        D = wt[1:] - wt[:-1] @ (np.swapaxes(wt[:-1], 1, 2) @ wt[1:])
        step = float(np.max(np.linalg.norm(D, ord=2, axis=(1, 2))))
    return TransversalSystem(
        geodesic=geodesic,
        wbasis=wb,
        times=geodesic.times,
        wt=wt,
        h=h,
        A=A,
        RH=RH,
        K=K,
        vanishing=vanishing,
        max_step_angle=step,
    )


def a_tensor_at(system: TransversalSystem, node: int, w) -> np.ndarray:
    """A(w) in H-coordinates for w given in W~-coordinates."""
    return system.A[node] @ np.asarray(w, dtype=float)


def a_adjoint_at(system: TransversalSystem, node: int, y) -> np.ndarray:
    """A^*(y) in W~-coordinates for y given in H-coordinates."""
    return system.A[node].T @ np.asarray(y, dtype=float)


def transversal_curvature_at(system: TransversalSystem, node: int, y) -> np.ndarray:
    """R^H(y) = P_H R(y) + 3 A A^*(y), all in H-coordinates."""
    return system.RH[node] @ np.asarray(y, dtype=float)


def _lambda_complement(basis: JacobiBasisTrace, wb: VerticalJacobiTrace, seed=None):
    """Frame data (J(0), J'(0)) of a complement of W inside the L-Jacobi space.

    Default: phase-space Gram-Schmidt against W at t = 0.  With ``seed`` a
    random element of W is added to each complement vector, which gives a
    different but equally valid complement.
    Returns (C, coefficients in the L-Jacobi basis).
    """
    Z = np.concatenate([basis.values[0], basis.derivatives[0]], axis=0)  # (2m, m)
    ZW = np.concatenate([wb.values[0], wb.derivatives[0]], axis=0)  # (2m, d)
    m = Z.shape[1]
    d = ZW.shape[1]
    cw, res, *_ = np.linalg.lstsq(Z, ZW, rcond=None)
    if d and np.max(np.abs(Z @ cw - ZW)) > 1e-7 * max(1.0, np.max(np.abs(ZW))):
        raise PreconditionError("vertical fields are not L-Jacobi fields of the given leaf")
    Qz = np.linalg.qr(Z)[0]
    if d:
        Qw = np.linalg.qr(ZW)[0]
        P = Qz - Qw @ (Qw.T @ Qz)
        U, s, _ = np.linalg.svd(P, full_matrices=False)
        comp = U[:, : m - d]
    else:
        comp = Qz
    if seed is not None and d:
        rng = np.random.default_rng(seed)
        comp = comp + ZW @ rng.normal(size=(d, m - d))
    coeffs = np.linalg.lstsq(Z, comp, rcond=None)[0]
    return comp, coeffs


@dataclass(frozen=True, eq=False)
class HorizontalSolution:
    system: TransversalSystem
    times: np.ndarray
    z: np.ndarray  # (T, r, r)
    dz: np.ndarray
    projected: np.ndarray  # H^T J_C at the nodes, for cross-checking
    records: list
    _sol: object

    def evaluate(self, t):
        r = self.z.shape[1]
        y = self._sol(np.atleast_1d(t))
        return y[: r * r].T.reshape(-1, r, r)

    def projection_deviation(self) -> float:
        return float(np.max(np.abs(self.z - self.projected), initial=0.0))


def horizontal_solution(geodesic: GeodesicTrace, foliation: FoliationSpec, patch=None,
                        tol: float = 1e-11, gap: float = 1e3, zero_tol: float = 1e-6,
                        complement_seed=None, system: TransversalSystem | None = None) -> HorizontalSolution:
    """Solve (nabla^H)^2 z + R^H z = 0 for the H-parts of a complement of W in the L-Jacobi space."""
    if patch is None:
        patch = geodesic.patch
    if patch is None:
        raise PreconditionError("horizontal_solution: geodesic carries no leaf patch")
    sysm = transversal_system(geodesic, foliation, zero_tol, gap) if system is None else system
    basis = jacobi_basis(patch, geodesic, tol=tol)
    comp, coeffs = _lambda_complement(basis, sysm.wbasis, complement_seed)
    m = basis.values.shape[1]
    r = sysm.hdim
    t = sysm.times
    if r == 0:
        empty = np.zeros((len(t), 0, 0))
        return HorizontalSolution(sysm, t, empty, empty, empty, [], None)
    JC0, dJC0 = comp[:m], comp[m:]
    h0 = sysm.h[0]
    z0 = h0.T @ JC0
    # W~ coordinates of the vertical part, then subtract A of it
    dz0 = h0.T @ dJC0 - sysm.A[0] @ (sysm.wt[0].T @ JC0)
    spline = CubicSpline(t, sysm.RH, axis=0)

    def rhs(s, y):
        Z = y[: r * r].reshape(r, r)
        dZ = y[r * r :].reshape(r, r)
        return np.concatenate([dZ.ravel(), (-spline(s) @ Z).ravel()])

    sol = solve_ivp(rhs, (float(t[0]), float(t[-1])), np.concatenate([z0.ravel(), dz0.ravel()]),
                    method="DOP853", rtol=tol, atol=tol, dense_output=True)
    if sol.status != 0:
        raise IntegrationError(f"transversal equation: {sol.message}", float(sol.t[-1]))
    Y = sol.sol(t).T
    z = Y[:, : r * r].reshape(-1, r, r)
    dz = Y[:, r * r :].reshape(-1, r, r)
    JC = np.einsum("tmk,kc->tmc", basis.values, coeffs)
    projected = np.einsum("tmr,tmc->trc", sysm.h, JC)

    def evaluate(s):
        return sol.sol(np.atleast_1d(s))[: r * r, 0].reshape(r, r)

    drops = locate_rank_drops(t, z, evaluate, (float(t[0]), float(t[-1])), gap, zero_tol)
    records = [FocalRecord(tt, mu, a, b, None, s) for (tt, mu, a, b, s) in drops]
    return HorizontalSolution(sysm, t, z, dz, projected, records, sol.sol)


def horizontal_index(geodesic: GeodesicTrace, foliation: FoliationSpec, patch=None, **kwargs) -> int:
    """Sum of transversal focal multiplicities on the open interval (0, T)."""
    sol = horizontal_solution(geodesic, foliation, patch, **kwargs)
    T = float(geodesic.times[-1])
    return morse_index(sol.records, end=T)


def verify_index_splitting(geodesic: GeodesicTrace, foliation: FoliationSpec, patch=None,
                           complement_seed=None) -> dict:
    """ind_Lambda = ind_W + ind_hor, each computed independently."""
    if patch is None:
        patch = geodesic.patch
    T = float(geodesic.times[-1])
    basis = jacobi_basis(patch, geodesic)
    recs = detect_focal(basis)
    if any(abs(r.time - T) < ENDPOINT_TOL for r in recs):
        raise PreconditionError("endpoint is focal; move the endpoint")
    ind_l = morse_index(recs, end=T)
    ind_w = w_focal_index(geodesic, foliation)
    ind_h = horizontal_index(geodesic, foliation, patch, complement_seed=complement_seed)
    return {
        "ind_lambda": int(ind_l),
        "ind_w": int(ind_w),
        "ind_hor": int(ind_h),
        "holds": bool(ind_l == ind_w + ind_h),
    }


def intrinsicality_probe(first: FoliationSpec, second: FoliationSpec, pairs) -> list:
    """Compare transversal data of geodesics with the same quotient projection.

    ``pairs`` is a list of ((point, velocity), (point, velocity), length)
    entries, one geodesic in each foliation.  For each pair the quotient
    projections are compared node-wise, and the horizontal indices and the
    transversal curvature spectra at matched nodes are reported.
    """
    rows = []
    for (p1, v1), (p2, v2), length in pairs:
        patch1, g1 = horizontal_geodesic(first, p1, v1, length)
        patch2, g2 = horizontal_geodesic(second, p2, v2, length)
        q1 = first.project(g1.positions)
        q2 = second.project(g2.positions)
        proj_dev = float(np.max(np.abs(q1 - q2)))
        s1 = transversal_system(g1, first)
        s2 = transversal_system(g2, second)
        ev1 = np.linalg.eigvalsh(s1.RH) if s1.hdim else np.zeros((len(g1.times), 0))
        ev2 = np.linalg.eigvalsh(s2.RH) if s2.hdim else np.zeros((len(g2.times), 0))
        if ev1.shape == ev2.shape:
            rh_dev = float(np.max(np.abs(ev1 - ev2), initial=0.0))
        else:
            rh_dev = float("inf")
        i1 = horizontal_index(g1, first, patch1)
        i2 = horizontal_index(g2, second, patch2)
        rows.append({
            "length": float(length),
            "projection_deviation": proj_dev,
            "rh_spectrum_deviation": rh_dev,
            "ind_hor": [int(i1), int(i2)],
            "equal": bool(i1 == i2 and proj_dev < 1e-8 and rh_dev < 1e-6),
        })
    return rows
