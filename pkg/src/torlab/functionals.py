"""Torsional rigidities, dual torsional measures and the flow functionals.

Integrals over the normal parameter ``x`` use the support nodes with the
weights ``dx``; integrals over the radial parameter ``v`` use the same nodes
read as ray directions, with the boundary gradient transported along the
radial Gauss map (``g(alpha(v))``).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RectSphereBivariateSpline

from . import sphere
from .body import Body, partition_labels, region_mask
from .errors import ConfigurationError, ValidationError
from .sphere import SphereGrid
from .torsion import TorsionSolution, boundary_gradient

TestFunction = Callable[[np.ndarray], np.ndarray]


# -- normalized power ----------------------------------------------------

@dataclass(frozen=True)
class NormalizedPower:
    """``b^a / a`` for ``a != 0`` and ``log b`` for ``a == 0``."""

    a: float

    def __call__(self, b):
        b = np.asarray(b, dtype=float)
        if self.a == 0:
            return np.log(b)
        return b ** self.a / self.a


def normalized_power(b, a: float):
    return NormalizedPower(float(a))(b)


# -- helpers -------------------------------------------------------------

def _g_radial(sol: TorsionSolution) -> np.ndarray:
    if sol.g_radial is None:
        raise ValidationError("torsion solution carries no radial gradient samples")
    return sol.g_radial


def field_function(grid: SphereGrid, values) -> TestFunction:
    """Interpolate node values to a function of unit vectors.

    Trigonometric interpolation on circles, a bicubic spherical spline on
    latitude-longitude grids.
    """
    values = np.asarray(values, dtype=float)
    if grid.n == 2:
        def fn(x):
            x = np.atleast_2d(x)
            return sphere.fourier_eval(values, np.arctan2(x[:, 1], x[:, 0]))[0]
        return fn
    spl = RectSphereBivariateSpline(grid.theta, grid.phi, values.reshape(grid.shape))

    def fn(x):
        x = np.atleast_2d(x)
        th = np.arccos(np.clip(x[:, 2], -1.0, 1.0))
        ph = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2 * np.pi)
        return spl.ev(th, ph)
    return fn


def _as_function(grid: SphereGrid, fn) -> TestFunction:
    if callable(fn):
        return fn
    arr = np.asarray(fn, dtype=float)
    if arr.ndim == 0:
        return lambda x: np.full(len(np.atleast_2d(x)), float(arr))
    return field_function(grid, arr)


# -- rigidities ----------------------------------------------------------

def rigidity_Tk(body: Body, sol: TorsionSolution, k: int, convention: Optional[str] = None):
    """``(T~_k, T_k)`` from the boundary (Pohozaev) form over normals."""
    n = body.n
    g = boundary_gradient(sol, body)
    sigma = body.sigma(k, convention)
    Tt = body.grid.integrate(body.h * g ** (k + 1) * sigma) / (k * (n + 2))
    return Tt, Tt ** k


def rigidity_dual_form(body: Body, sol: TorsionSolution, k: int) -> float:
    """``T~_k`` as the radial integral of ``rho^(n+1-k) |Du|^(k+1)``."""
    n = body.n
    g = _g_radial(sol)
    return body.grid.integrate(body.rho ** (n + 1 - k) * g ** (k + 1)) / (k * (n + 2))


def dual_rigidity_Q(body: Body, sol: TorsionSolution, k: int, p: float) -> float:
    """Dual torsional rigidity; the ``p == n`` case uses the log formula."""
    n = body.n
    g = _g_radial(sol)
    rho = body.rho
    if p == n:
        return body.grid.integrate(np.log(rho) * rho ** (n + 1 - k) * g ** (k + 1))
    return body.grid.integrate(rho ** (p + 1 - k) * g ** (k + 1)) / (n - p)


def mixed_dual_rigidity(body1: Body, body2: Body, sol1: TorsionSolution, k: int, p: float) -> float:
    """``int rho_2^{p-bar} rho_1^(n+1-k-p) g_1^(k+1) dv`` with the normalized power."""
    if body1.grid is not body2.grid and body1.grid.size != body2.grid.size:
        raise ConfigurationError("mixed rigidity needs both bodies on the same grid")
    n = body1.n
    g = _g_radial(sol1)
    return body1.grid.integrate(normalized_power(body2.rho, p) * body1.rho ** (n + 1 - k - p)
                                * g ** (k + 1))


def mixed_measure_total(body1: Body, sol1: TorsionSolution, body3: Body, k: int, p: float) -> float:
    """Total mass of ``(1/(n-p)) rho_1^(n-p) rho_3^(p+1-k) g_1^(k+1) dv``."""
    n = body1.n
    _check_p(n, p)
    g = _g_radial(sol1)
    return body1.grid.integrate(body1.rho ** (n - p) * body3.rho ** (p + 1 - k) * g ** (k + 1)) / (n - p)


def _check_p(n, p):
    if p == n:
        raise ConfigurationError("the dual torsional measure is defined for p != n only")


# -- measures ------------------------------------------------------------

@dataclass
class DualMeasure:
    """Masses of the dual torsional measure over a partition of normals."""

    k: int
    p: float
    masses: list  # [(region id, mass)]
    solid_angles: list
    atoms: list = field(default_factory=list)  # [(normal, mass)] for polytopes

    @property
    def total(self) -> float:
        return float(np.sum([m for _, m in self.masses]))

    def mass(self, region_id) -> float:
        return dict(self.masses)[region_id]

    def to_csv(self, header: Optional[str] = None) -> str:
        buf = io.StringIO()
        if header:
            for line in header.splitlines():
                buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region", "solid_angle", "mass"])
        for (rid, m), sa in zip(self.masses, self.solid_angles):
            w.writerow([rid, repr(float(sa)), repr(float(m))])
        return buf.getvalue()


def _density(body: Body, sol: TorsionSolution, k: int, p: float) -> np.ndarray:
    """Per-node radial mass ``rho^(p+1-k) g^(k+1) w / (n-p)``."""
    n = body.n
    _check_p(n, p)
    g = _g_radial(sol)
    return body.rho ** (p + 1 - k) * g ** (k + 1) * body.grid.weights / (n - p)


def dual_measure(body: Body, sol: TorsionSolution, k: int, p: float,
                 partition: Optional[Sequence] = None) -> DualMeasure:
    """Dual torsional measure of each region of ``partition``.

    Regions are predicates on normals or ``(center, angle)`` cap lists; the
    normals not covered by any region form an extra complement region.
    The complement is omitted when it carries no radial node.
    """
    dens = _density(body, sol, k, p)
    regions = list(partition) if partition else []
    labels = partition_labels(body, regions)
    nreg = len(regions) + 1
    # fixed-order reduction keeps results bit-reproducible
    masses = [float(np.sum(dens[labels == i])) for i in range(nreg)]
    normals = body.grid.nodes
    covered = np.zeros(body.grid.size, dtype=bool)
    angles = []
    for r in regions:
        m = region_mask(r, normals) & ~covered
        covered |= m
        angles.append(float(np.sum(body.grid.weights[m])))
    angles.append(float(np.sum(body.grid.weights[~covered])))
    ids = list(range(nreg))
    if not regions:
        return DualMeasure(k, p, [(0, masses[-1])], [angles[-1]])
    if not np.any(labels == len(regions)):
        ids, masses, angles = ids[:-1], masses[:-1], angles[:-1]
    return DualMeasure(k, p, list(zip(ids, masses)), angles)


def facet_fans(normals: np.ndarray) -> list:
    """One region per facet normal: directions closer to it than to any other."""
    normals = np.asarray(normals, dtype=float)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)

    def fan(i):
        return lambda x: np.argmax(np.atleast_2d(x) @ normals.T, axis=1) == i
    return [fan(i) for i in range(len(normals))]


def polytope_measure(body: Body, sol: TorsionSolution, k: int, p: float, normals) -> DualMeasure:
    """Atoms ``(v_i, c_i)`` of a polytope's dual measure at its facet normals."""
    normals = np.asarray(normals, dtype=float)
    meas = dual_measure(body, sol, k, p, facet_fans(normals))
    meas.atoms = [(normals[i] / np.linalg.norm(normals[i]), meas.mass(i)) for i in range(len(normals))]
    return meas


def _normal_cells(grid: SphereGrid, normals: np.ndarray, refine: int):
    """Bin normals into a refined angular partition; returns labels and cell centres."""
    if grid.n == 2:
        M = refine * grid.size
        ang = np.mod(np.arctan2(normals[:, 1], normals[:, 0]), 2 * np.pi)
        lab = np.minimum((ang / (2 * np.pi) * M).astype(int), M - 1)
        c = (np.arange(M) + 0.5) * 2 * np.pi / M
        return lab, np.stack([np.cos(c), np.sin(c)], axis=1)
    nt, npf = refine * grid.shape[0], refine * grid.shape[1]
    th = np.arccos(np.clip(normals[:, 2], -1, 1))
    ph = np.mod(np.arctan2(normals[:, 1], normals[:, 0]), 2 * np.pi)
    it = np.minimum((th / np.pi * nt).astype(int), nt - 1)
    ip = np.minimum((ph / (2 * np.pi) * npf).astype(int), npf - 1)
    ct = (np.arange(nt) + 0.5) * np.pi / nt
    cp = (np.arange(npf) + 0.5) * 2 * np.pi / npf
    T, P = np.meshgrid(ct, cp, indexing="ij")
    centers = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    return it * npf + ip, centers


def pushforward_integral(g_fn, body: Body, sol: TorsionSolution, k: int, p: float,
                         refine: int = 16):
    """Both sides of the change of variables for ``int g dQ~``.

    ``lhs`` integrates ``g_fn`` against the measure through a refined cell
    partition of the normal sphere (value at each cell centre times the
    cell mass); ``rhs`` is the radial integral of ``g_fn(alpha(v))``.
    """
    fn = _as_function(body.grid, g_fn)
    dens = _density(body, sol, k, p)
    lab, centers = _normal_cells(body.grid, body.alpha, refine)
    cell_mass = np.bincount(lab, weights=dens, minlength=len(centers))
    used = np.flatnonzero(cell_mass)
    lhs = float(np.dot(fn(centers[used]), cell_mass[used]))
    rhs = float(np.dot(fn(body.alpha), dens))
    return lhs, rhs


def measure_integral(g_fn, body: Body, sol: TorsionSolution, k: int, p: float) -> float:
    """``int g dQ~`` evaluated on the radial side."""
    fn = _as_function(body.grid, g_fn)
    return float(np.dot(fn(body.alpha), _density(body, sol, k, p)))


# -- flow functionals ----------------------------------------------------

def eta(body: Body, sol: TorsionSolution, f, k: int, p: float) -> float:
    """Flow normalization ``int rho^(p+1-k) g^(k+1) dv / int f dx``."""
    f = np.broadcast_to(np.asarray(f, dtype=float), (body.grid.size,))
    g = _g_radial(sol)
    return body.grid.integrate(body.rho ** (p + 1 - k) * g ** (k + 1)) / body.grid.integrate(f)


def phi(h, f, grid: Optional[SphereGrid] = None) -> float:
    """``int f log h dx``; ``h`` may be a SupportField, a Body or node values."""
    if grid is None:
        grid = h.grid
    values = getattr(h, "h", None)
    if values is None:
        values = getattr(h, "values", h)
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        raise ValidationError("log h needs a positive support function")
    f = np.broadcast_to(np.asarray(f, dtype=float), values.shape)
    return grid.integrate(f * np.log(values))


def crofton_audit(body: Body, k: int, sol: Optional[TorsionSolution] = None) -> dict:
    """Compare ``int rho^(n+1-k) dv`` with ``int h sigma_{n-k} dx`` per convention.

    Returns ``{convention: {"lhs", "rhs", "ratio", "discrepancy"}}`` with
    ``discrepancy = |lhs - rhs| / lhs``.  ``sol`` is accepted for interface
    symmetry and unused.
    """
    n = body.n
    lhs = body.grid.integrate(body.rho ** (n + 1 - k))
    out = {}
    for conv in ("elementary", "mean"):
        rhs = body.grid.integrate(body.h * body.sigma(k, conv))
        out[conv] = {"lhs": lhs, "rhs": rhs, "ratio": rhs / lhs, "discrepancy": abs(lhs - rhs) / lhs}
    return out
