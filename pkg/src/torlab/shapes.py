"""Support functions of common test bodies sampled on a sphere grid."""
from __future__ import annotations

import numpy as np

from .body import Body, body_from_support
from .errors import ConfigurationError
from .sphere import SphereGrid


def ball_support(grid: SphereGrid, R: float = 1.0, center=None) -> np.ndarray:
    h = np.full(grid.size, float(R))
    if center is not None:
        h = h + grid.nodes @ np.asarray(center, dtype=float)
    return h


def ellipsoid_support(grid: SphereGrid, axes, center=None) -> np.ndarray:
    """``h(x) = sqrt(sum a_i^2 x_i^2) + c . x`` for semi-axes ``a``."""
    a = np.asarray(axes, dtype=float)
    if a.shape != (grid.n,):
        raise ConfigurationError(f"need {grid.n} semi-axes, got {a.shape}")
    h = np.sqrt((grid.nodes ** 2) @ (a ** 2))
    if center is not None:
        h = h + grid.nodes @ np.asarray(center, dtype=float)
    return h


def polytope_support(grid: SphereGrid, vertices) -> np.ndarray:
    V = np.asarray(vertices, dtype=float)
    return (grid.nodes @ V.T).max(axis=1)


def square_vertices(half_width: float = 1.0) -> np.ndarray:
    a = half_width
    return np.array([[a, a], [-a, a], [-a, -a], [a, -a]])


def fourier_support(grid: SphereGrid, a0: float, cos=(), sin=()) -> np.ndarray:
    """``a0 + sum_m (cos[m-1] cos(m t) + sin[m-1] sin(m t))`` on a circle grid."""
    if grid.n != 2:
        raise ConfigurationError("Fourier coefficient fields are only defined for n=2")
    t = grid.theta
    h = np.full(grid.size, float(a0))
    for m, c in enumerate(cos, start=1):
        h += c * np.cos(m * t)
    for m, s in enumerate(sin, start=1):
        h += s * np.sin(m * t)
    return h


def make_body(grid: SphereGrid, spec: dict, convention=None) -> Body:
    """Build a body from a small JSON-style description.

    Recognized ``kind`` values: ``ball`` (R, center), ``ellipsoid`` (axes,
    center), ``fourier`` (a0, cos, sin), ``polytope`` (vertices), ``square``
    (half_width), ``values`` (h).
    """
    kind = spec.get("kind", "ball")
    convention = convention or spec.get("sigma_convention", "elementary")
    if kind == "ball":
        h = ball_support(grid, spec.get("R", 1.0), spec.get("center"))
    elif kind in ("ellipsoid", "ellipse"):
        h = ellipsoid_support(grid, spec["axes"], spec.get("center"))
    elif kind == "fourier":
        h = fourier_support(grid, spec.get("a0", 1.0), spec.get("cos", ()), spec.get("sin", ()))
    elif kind == "polytope":
        return body_from_support(grid, polytope_support(grid, spec["vertices"]), convention, strict=False)
    elif kind == "square":
        V = square_vertices(spec.get("half_width", 1.0))
        return body_from_support(grid, polytope_support(grid, V), convention, strict=False)
    elif kind == "values":
        h = np.asarray(spec["h"], dtype=float)
    else:
        raise ConfigurationError(f"unknown body kind {kind!r}")
    return body_from_support(grid, h, convention)


def random_perturbed_ball(grid: SphereGrid, rng: np.random.Generator, amplitude: float = 0.3,
                          convention=None) -> Body:
    """Unit ball with a random smooth convex perturbation and a random shift.

    Circles get Fourier modes 2..5 with ``sum |c_m| (m^2 - 1) <= amplitude``,
    which keeps ``h'' + h >= 1 - amplitude``; spheres get a random
    ellipsoid ``sqrt(x^T M x)`` with ``M`` near the identity.
    """
    if not 0 < amplitude < 1:
        raise ConfigurationError("amplitude must lie in (0, 1)")
    shift = rng.uniform(-0.2, 0.2, grid.n)
    if grid.n == 2:
        m = np.arange(2, 6)
        raw = rng.uniform(-1, 1, (2, len(m)))
        scale = amplitude / np.sum(np.abs(raw).sum(axis=0) * (m ** 2 - 1))
        c, s = raw * scale
        h = fourier_support(grid, 1.0, np.r_[0.0, c], np.r_[0.0, s])
    else:
        E = rng.uniform(-1, 1, (3, 3))
        E = 0.5 * amplitude * (E + E.T) / 2
        A = np.eye(3) + E
        M = A @ A
        h = np.sqrt(np.einsum("ij,jk,ik->i", grid.nodes, M, grid.nodes))
    h = h + grid.nodes @ shift
    return body_from_support(grid, h, convention or "elementary")
