"""Named scenarios: submanifold patches, foliations and their default targets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import LookupFailure
from .foliation import (
    FoliationSpec,
    circles_times_line,
    concentric_circles,
    concentric_spheres,
    hopf_foliation,
    parallel_lines,
)
from .quaternion import LEFT_I
from .spaces import Euclidean, RoundSphere
from .submanifolds import (
    circle_patch,
    ellipse_patch,
    hopf_fiber_patch,
    hyperplane_patch,
    point_patch,
    sphere_patch,
)
from .taut import reference_betti

__all__ = [
    "Scenario",
    "SCENARIOS",
    "get_scenario",
    "scenario_ids",
    "random_horizontal",
    "sphere_pair",
]


@dataclass(frozen=True)
class Scenario:
    sid: str
    kind: str  # "patch" | "foliation" | "reference"
    description: str
    build: Callable | None = None
    betti_id: str | None = None
    target: tuple = ()
    cap: float | None = None
    focal_vector: tuple = ()
    extras: dict = field(default_factory=dict)

    def make(self):
        if self.build is None:
            raise LookupFailure(f"scenario {self.sid!r} carries reference data only")
        return self.build()

    def summary(self) -> dict:
        return {"id": self.sid, "kind": self.kind, "description": self.description,
                "betti": self.betti_id}


def _north(n):
    p = np.zeros(n + 1)
    p[-1] = 1.0
    return p


def _at_distance(n, d):
    q = np.zeros(n + 1)
    q[0], q[-1] = math.sin(d), math.cos(d)
    return tuple(q)


_ENTRIES = [
    Scenario("point-s2", "patch", "point source on the unit 2-sphere",
             lambda: point_patch(RoundSphere(2), _north(2)), "omega-s2", _at_distance(2, 1.0),
             (4 * math.pi) ** 2, (1.5 * math.pi, 0.0, 0.0)),
    Scenario("point-s3", "patch", "point source on the unit 3-sphere",
             lambda: point_patch(RoundSphere(3), _north(3)), "omega-s3", _at_distance(3, 1.0),
             (2 * math.pi + 1.5) ** 2, (1.5 * math.pi, 0.0, 0.0, 0.0)),
    Scenario("point-s4", "patch", "point source on the unit 4-sphere",
             lambda: point_patch(RoundSphere(4), _north(4)), "omega-s4", _at_distance(4, 1.0),
             (2 * math.pi + 1.5) ** 2, (1.5 * math.pi, 0.0, 0.0, 0.0, 0.0)),
    Scenario("circle-plane", "patch", "unit circle in the euclidean plane",
             circle_patch, "circle-plane", (0.5, 0.0), 9.0, (-1.0, 0.0)),
    Scenario("ellipse-plane", "patch", "ellipse with semi-axes 2 and 1 in the plane",
             ellipse_patch, "ellipse-plane", (0.3, 0.2), 25.0),
    Scenario("sphere-r3", "patch", "unit sphere in euclidean 3-space",
             lambda: sphere_patch(Euclidean(3), np.zeros(3), 1.0), "sphere-r3", (0.2, 0.1, 0.3), 16.0,
             (-2.0, 0.0, 0.0)),
    Scenario("hyperplane-r3", "patch", "coordinate plane z = 0 in euclidean 3-space",
             lambda: hyperplane_patch(3), "hyperplane-r3", (0.3, -0.2, 1.5), 9.0, (0.0, 0.0, 1.0)),
    Scenario("hopf-fiber", "patch", "Hopf circle through (1,0,0,0) in the unit 3-sphere",
             hopf_fiber_patch, "hopf-fiber", (0.6, 0.0, 0.8, 0.0), (2 * math.pi + 1.5) ** 2,
             (0.0, 0.0, 0.5 * math.pi, 0.0)),
    Scenario("hopf", "foliation", "Hopf fibration of the unit 3-sphere", hopf_foliation),
    Scenario("concentric-spheres-r3", "foliation", "spheres about the origin of R^3", concentric_spheres),
    Scenario("concentric-circles-r2", "foliation", "circles about the origin of R^2", concentric_circles),
    Scenario("circles-x-line", "foliation", "concentric circles of R^2 times a line", circles_times_line),
    Scenario("parallel-lines-r3", "foliation", "lines parallel to e1 in R^3", parallel_lines),
]
for _p in (3, 4, 5):
    for _f in sorted({2, _p}):
        _sid = f"lens-p{_p}-z{_f}"
        _ENTRIES.append(Scenario(_sid, "reference", f"lens space L({_p},1), Z_{_f} coefficients",
                                 None, _sid))

SCENARIOS = {s.sid: s for s in _ENTRIES}


def scenario_ids() -> list:
    return sorted(SCENARIOS)


def get_scenario(sid: str) -> Scenario:
    try:
        return SCENARIOS[sid]
    except KeyError:
        raise LookupFailure(f"unknown scenario {sid!r}") from None


def _unit(x):
    return x / np.linalg.norm(x)


def random_horizontal(foliation: FoliationSpec, rng: np.random.Generator, length_range=(0.3, 5.0)):
    """A random regular point, unit horizontal velocity and length for ``foliation``."""
    length = float(rng.uniform(*length_range))
    name = foliation.name
    if name.startswith("hopf"):
        x = _unit(rng.normal(size=4))
        v = rng.normal(size=4)
        for b in (x, LEFT_I @ x):
            v -= (v @ b) * b
        return x, _unit(v), length
    if name.startswith("concentric-spheres"):
        N = foliation.parent.ambient_dim
        m = foliation.regular_dim + 1
        y = _unit(rng.normal(size=m)) * rng.uniform(0.5, 2.0)
        z = rng.normal(size=N - m)
        x = np.concatenate([y, z])
        radial = np.concatenate([_unit(y), np.zeros(N - m)])
        a = rng.choice([-1.0, 1.0])
        if N == m:
            return x, a * radial, length
        along = np.concatenate([np.zeros(m), _unit(rng.normal(size=N - m))])
        th = rng.uniform(-0.45 * math.pi, 0.45 * math.pi)
        return x, a * math.cos(th) * radial + math.sin(th) * along, length
    if name.startswith("parallel-lines"):
        N = foliation.parent.ambient_dim
        x = rng.normal(size=N)
        d = foliation.vertical_frame(x)[:, 0]
        v = rng.normal(size=N)
        v -= (v @ d) * d
        return x, _unit(v), length
    raise LookupFailure(f"no random horizontal sampler for {name}")


def sphere_pair(n: int, rng: np.random.Generator):
    """Random p, q on S^n and their distance."""
    p = _unit(rng.normal(size=n + 1))
    q = _unit(rng.normal(size=n + 1))
    d = float(np.arccos(np.clip(p @ q, -1.0, 1.0)))
    return p, q, d


def betti_for(sid: str):
    s = get_scenario(sid)
    return None if s.betti_id is None else reference_betti(s.betti_id)
