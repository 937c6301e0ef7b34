"""Quaternion helpers for S^3 and the Hopf fibration.

A point (a, b, c, d) of R^4 is the quaternion a + b i + c j + d k, which is
also the C^2 point (a + b i, c + d i).  Complex scalar multiplication on C^2
is left multiplication by i, so Hopf fibers are the orbits q -> e^{i t} q.
"""

from __future__ import annotations

import numpy as np

__all__ = ["qmul", "qconj", "LEFT_I", "LEFT_J", "LEFT_K", "hopf_map", "hopf_differential"]


def qmul(p, q):
    """Hamilton product, broadcasting over leading axes."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    a1, b1, c1, d1 = np.moveaxis(p, -1, 0)
    a2, b2, c2, d2 = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ],
        axis=-1,
    )


def qconj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _left_matrix(u):
    return np.stack([qmul(u, e) for e in np.eye(4)], axis=-1)


LEFT_I = _left_matrix(np.array([0.0, 1.0, 0.0, 0.0]))
LEFT_J = _left_matrix(np.array([0.0, 0.0, 1.0, 0.0]))
LEFT_K = _left_matrix(np.array([0.0, 0.0, 0.0, 1.0]))

_I = np.array([0.0, 1.0, 0.0, 0.0])


def hopf_map(q):
    """q -> (1/2) conj(q) i q, a point of the sphere S^2(1/2) in R^3."""
    r = qmul(qconj(q), qmul(_I, q))
    return 0.5 * r[..., 1:]


def hopf_differential(q, w):
    """Differential of ``hopf_map`` at q applied to w."""
    r = qmul(qconj(w), qmul(_I, q)) + qmul(qconj(q), qmul(_I, w))
    return 0.5 * r[..., 1:]
