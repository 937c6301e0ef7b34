"""Batched integration of geodesics, parallel frames and Jacobi matrices.

The state of one geodesic is (x, v, E, Y, Y') where E is an orthonormal
frame of the orthogonal complement of v, transported in parallel, and the
columns of Y hold Jacobi fields J = sum_a Y[a] E_a.  In a parallel frame the
Jacobi equation reads Y'' + K^T Y = 0 with K_ab = <R(E_a, v)v, E_b>.

Stepping is delegated to scipy's DOP853 (embedded 8(5,3) Runge-Kutta with
per-step error control and 7th order dense output).  Constrained kinds are
re-projected onto the constraint at every output node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DegeneracyError, DomainError, IntegrationError
from .spaces import RiemannianSpace, householder_complement

__all__ = ["StepRecord", "FlowResult", "normal_frame_of", "integrate_flow", "output_grid", "polar"]

NODES_PER_UNIT = 2048


@dataclass(frozen=True)
class StepRecord:
    n_steps: int
    n_rhs: int
    min_step: float
    max_step: float
    tol: float


def output_grid(T: float, nodes_per_unit: int = NODES_PER_UNIT) -> np.ndarray:
    n = max(1, int(math.ceil(nodes_per_unit * T - 1e-9)))
    return np.linspace(0.0, T, n + 1)


def normal_frame_of(space: RiemannianSpace, x, v) -> np.ndarray:
    """Orthonormal basis of the orthogonal complement of v in T_x, shape (m, N)."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    B = space.tangent_basis(x)
    c = B.T @ space.lower(x, v)
    nc = float(np.linalg.norm(c))
    if nc == 0.0:
        raise DomainError("zero velocity has no normal frame")
    H = householder_complement(c / nc)
    return (B @ H).T


def polar(space, x, E):
    """Closest orthonormal frame to the rows of E (batched over leading axes)."""
    G = np.einsum("...an,...bn->...ab", E, space.lower(x[..., None, :], E))
    w, Q = np.linalg.eigh(G)
    if np.any(w <= 0):
        raise DegeneracyError("frame collapsed during re-orthonormalization", w.reshape(-1))
    Gi = np.einsum("...ab,...b,...cb->...ac", Q, 1.0 / np.sqrt(w), Q)
    return np.einsum("...ab,...bn->...an", Gi, E)


@dataclass(frozen=True, eq=False)
class FlowResult:
    times: np.ndarray
    x: np.ndarray  # (B, T, N)
    v: np.ndarray
    E: np.ndarray  # (B, T, m, N)
    Y: np.ndarray  # (B, T, m, k)
    dY: np.ndarray
    steps: StepRecord
    _sol: object
    _space: RiemannianSpace
    _shape: tuple

    def evaluate(self, t):
        """State at arbitrary times from the dense output (projected)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self._sol is None:
            raise IntegrationError("dense output not retained", float(self.times[-1]))
        raw = self._sol(t)
        return _unpack(raw.T, self._shape, self._space, project=True)


def _unpack(states, shape, space, project):
    """states: (T, n_state) -> tuple of arrays with batch axis first."""
    B, N, m, k = shape
    nT = states.shape[0]
    i = 0

    def take(size, tail):
        nonlocal i
        out = states[:, i : i + B * size].reshape((nT, B) + tail)
        i += B * size
        return np.swapaxes(out, 0, 1)

    x = take(N, (N,))
    v = take(N, (N,))
    E = take(m * N, (m, N))
    Y = take(m * k, (m, k))
    dY = take(m * k, (m, k))
    if project and space.embedded:
        x = space.project_point(x)
        v = space.project_tangent(x, v)
        E = space.project_tangent(x[..., None, :], E)
        vv = space.inner(x, v, v)
        Ev = space.inner(x[..., None, :], E, v[..., None, :])
        safe = np.where(vv > 0, vv, 1.0)
        E = E - (Ev / safe[..., None])[..., None] * v[..., None, :]
        if m:
            E = polar(space, x, E)
    return x, v, E, Y, dY


class _Blowup(Exception):
    pass


def integrate_flow(
    space: RiemannianSpace,
    x0,
    v0,
    E0,
    Y0=None,
    dY0=None,
    T: float = 1.0,
    tol: float = 1e-11,
    times=None,
    dense: bool = True,
    nodes_per_unit: int = NODES_PER_UNIT,
) -> FlowResult:
    """Integrate a batch of geodesics with frames and Jacobi matrices.

    Parameters
    ----------
    x0, v0 : (B, N) arrays
    E0 : (B, m, N) orthonormal frames of v0-perp
    Y0, dY0 : (B, m, k) frame coefficients of the Jacobi columns (optional)
    T : horizon
    tol : relative and absolute per-step error tolerance
    times : output nodes; default is the fixed grid of ``nodes_per_unit``
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    v0 = np.atleast_2d(np.asarray(v0, dtype=float))
    E0 = np.asarray(E0, dtype=float)
    if E0.ndim == 2:
        E0 = E0[None]
    B, N = x0.shape
    m = E0.shape[1]
    if Y0 is None:
        Y0 = np.zeros((B, m, 0))
        dY0 = np.zeros((B, m, 0))
    Y0 = np.asarray(Y0, dtype=float).reshape(B, m, -1)
    dY0 = np.asarray(dY0, dtype=float).reshape(B, m, -1)
    k = Y0.shape[2]
    if not T > 0:
        raise DomainError("horizon must be positive", float(T))
    shape = (B, N, m, k)
    sizes = [B * N, B * N, B * m * N, B * m * k, B * m * k]
    c1, c2, c3, c4 = np.cumsum(sizes)[:-1]
    nrhs = 0
    good = [0.0]

    def rhs(t, y):
        nonlocal nrhs
        nrhs += 1
        with np.errstate(all="ignore"):
            out = _rhs(y)
        if not np.all(np.isfinite(out)):
            raise _Blowup(t)
        good[0] = max(good[0], float(t))
        return out

    def _rhs(y):
        x = y[:c1].reshape(B, N)
        v = y[c1:c2].reshape(B, N)
        E = y[c2:c3].reshape(B, m, N)
        Y = y[c3:c4].reshape(B, m, k)
        dY = y[c4:].reshape(B, m, k)
        acc = space.geodesic_accel(x, v)
        dE = space.transport_rate(x, v, E) if m else E
        if k:
            K = space.jacobi_operator(x, v, E)
            ddY = -np.einsum("bca,bck->bak", K, Y)
        else:
            ddY = dY
        return np.concatenate([v.ravel(), acc.ravel(), dE.ravel(), dY.ravel(), ddY.ravel()])

    y0 = np.concatenate([x0.ravel(), v0.ravel(), E0.ravel(), Y0.ravel(), dY0.ravel()])
    try:
        res = solve_ivp(
            rhs,
            (0.0, float(T)),
            y0,
            method="DOP853",
            rtol=tol,
            atol=tol,
            dense_output=True,
        )
    except _Blowup as exc:
        raise IntegrationError(f"non-finite vector field at t={exc.args[0]:.6g}",
                               min(good[0], float(exc.args[0]))) from None
    if res.status != 0:
        last = float(res.t[-1]) if len(res.t) else 0.0
        raise IntegrationError(f"integrator stopped: {res.message}", last)
    ts = np.asarray(res.t)
    h = np.diff(ts)
    steps = StepRecord(
        n_steps=int(len(h)),
        n_rhs=int(nrhs),
        min_step=float(h.min()) if len(h) else 0.0,
        max_step=float(h.max()) if len(h) else 0.0,
        tol=float(tol),
    )
    grid = output_grid(T, nodes_per_unit) if times is None else np.asarray(times, dtype=float)
    states = res.sol(grid).T
    x, v, E, Y, dY = _unpack(states, shape, space, project=True)
    return FlowResult(grid, x, v, E, Y, dY, steps, res.sol if dense else None, space, shape)
