"""Convex bodies represented by support and radial functions on a sphere grid."""
from __future__ import annotations

import json
from dataclasses import dataclass
from math import comb
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.spatial import HalfspaceIntersection, cKDTree

from . import sphere
from .errors import ConfigurationError, ValidationError
from .sphere import SphereGrid

CONVENTIONS = ("elementary", "mean")


class SupportField:
    """Support function samples ``h_i`` with cached derivatives.

    With ``strict=True`` (default) non-positive values or a non positive
    definite ``omega = hess(h) + h*I`` raise :class:`ValidationError`;
    otherwise the outcome is only recorded in ``convex``.
    """

    def __init__(self, grid: SphereGrid, values, strict: bool = True, eig_floor: float = 0.0):
        self.grid = grid
        self.values = np.asarray(values, dtype=float).copy()
        self.values.setflags(write=False)
        if self.values.shape != (grid.size,):
            raise ValidationError(f"support field needs {grid.size} values, got {self.values.shape}")
        self.grad = sphere.grad(self.values, grid)
        self.hess = sphere.hess(self.values, grid)
        eye = np.eye(grid.n - 1)
        self.omega = self.hess + self.values[:, None, None] * eye
        self.eigs = np.linalg.eigvalsh(self.omega)
        self.positive = bool(np.all(self.values > 0))
        self.convex = self.positive and bool(np.all(self.eigs > eig_floor))
        if strict:
            if not self.positive:
                raise ValidationError(f"support function must be positive (min {self.values.min():.3g})")
            if not self.convex:
                raise ValidationError(
                    f"omega = h_ij + h delta_ij is not positive definite (min eigenvalue {self.eigs.min():.3g})")

    @property
    def points(self) -> np.ndarray:
        """Boundary points ``X(x) = grad h + h x`` for every node."""
        return self.grid.to_ambient(self.grad) + self.values[:, None] * self.grid.nodes

    def grad_norm(self) -> np.ndarray:
        return np.linalg.norm(self.grad, axis=1)


@dataclass(frozen=True, eq=False)
class RadialField:
    grid: SphereGrid
    values: np.ndarray


def _default_convention(k: Optional[int]) -> Optional[str]:
    return "elementary" if k in (None, 1) else None


class Body:
    """Validated convex body carrying support, radial and Gauss-map data.

    ``alpha[i]`` is the outer normal at the boundary point hit by the ray
    through radial node ``grid.nodes[i]``.
    """

    def __init__(self, support: SupportField, convention: Optional[str] = "elementary"):
        if convention is not None and convention not in CONVENTIONS:
            raise ConfigurationError(f"unknown sigma convention {convention!r}")
        self.support = support
        self.grid = support.grid
        self.n = self.grid.n
        self.convention = convention
        self.smooth = support.convex
        self._tree = None
        rho, alpha = self.radial_at(self.grid.nodes)
        self.radial = RadialField(self.grid, rho)
        self.alpha = alpha

    # -- convenience -------------------------------------------------------
    @property
    def h(self) -> np.ndarray:
        return self.support.values

    @property
    def rho(self) -> np.ndarray:
        return self.radial.values

    @property
    def points(self) -> np.ndarray:
        return self.support.points

    def scaled(self, lam: float) -> "Body":
        return body_from_support(self.grid, lam * self.h, self.convention, strict=self.smooth)

    def sigma(self, k: int, convention: Optional[str] = None) -> np.ndarray:
        return curvature_sigma(self.support, k, convention or self.convention)

    def bounding_box(self):
        """Axis-aligned box ``(lo, hi)`` from the support values near ``+-e_i``."""
        pts = self.points if self.smooth else None
        if pts is not None:
            return pts.min(axis=0), pts.max(axis=0)
        r = self.rho[:, None] * self.grid.nodes
        return r.min(axis=0), r.max(axis=0)

    # -- radial evaluation ----------------------------------------------
    def radial_at(self, dirs) -> tuple:
        """Radial function and Gauss-map normal at arbitrary unit directions.

        Uses ``rho(v) = min_x h(x) / (x . v)``; the minimizing normal is the
        radial Gauss image.  Smooth bodies start from the node whose boundary
        point direction is closest to ``v`` and apply Newton refinement;
        otherwise the discrete minimum over nodes is returned (ties go to
        the lowest node index).
        """
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        if self.smooth and self.n == 2:
            return self._radial_circle(dirs)
        if self.smooth:
            return self._radial_sphere(dirs)
        return self._radial_discrete(dirs)

    def _nearest_hit_node(self, dirs):
        if self._tree is None:
            P = self.points
            self._tree = cKDTree(P / np.linalg.norm(P, axis=1)[:, None])
        _, idx = self._tree.query(dirs)
        return idx

    def _radial_circle(self, dirs):
        h = self.h
        phi = np.arctan2(dirs[:, 1], dirs[:, 0])
        th = self.grid.theta[self._nearest_hit_node(dirs)].copy()
        for _ in range(30):
            f, f1, f2 = sphere.fourier_eval(h, th, 2)
            c = np.cos(th - phi)
            # X = f x + f1 e; x cross v = sin(phi - th), e cross v = -cos(phi - th)
            cross = f * np.sin(phi - th) - f1 * c
            dcross = -(f2 + f) * c
            step = cross / dcross
            th = th - step
            if np.max(np.abs(step)) < 1e-14:
                break
        f = sphere.fourier_eval(h, th, 0)[0]
        rho = f / np.cos(th - phi)
        alpha = np.stack([np.cos(th), np.sin(th)], axis=1)
        return rho, alpha

    def _radial_sphere(self, dirs):
        sf = self.support
        i0 = self._nearest_hit_node(dirs)
        x0 = self.grid.nodes[i0]
        E = self.grid.frames[i0]  # (m, 2, 3)
        h = sf.values[i0]
        hi = sf.grad[i0]
        om = sf.omega[i0]
        a = np.einsum("ij,ij->i", x0, dirs)
        ai = np.einsum("iaj,ij->ia", E, dirs)
        F0 = h / a
        gF = hi / a[:, None] - (h / a ** 2)[:, None] * ai
        HF = (om / a[:, None, None]
              - (hi[:, :, None] * ai[:, None, :] + ai[:, :, None] * hi[:, None, :]) / (a ** 2)[:, None, None]
              + 2 * (h / a ** 3)[:, None, None] * ai[:, :, None] * ai[:, None, :])
        d = -np.linalg.solve(HF, gF[..., None])[..., 0]
        rho = F0 + 0.5 * np.einsum("ia,ia->i", gF, d)
        dn = np.linalg.norm(d, axis=1)
        damb = np.einsum("ia,iaj->ij", d, E)
        with np.errstate(invalid="ignore", divide="ignore"):
            dhat = np.where(dn[:, None] > 0, damb / dn[:, None], 0.0)
        alpha = np.cos(dn)[:, None] * x0 + np.sin(dn)[:, None] * dhat
        return rho, alpha

    def _radial_discrete(self, dirs, chunk=4096):
        X = self.grid.nodes
        h = self.h
        rho = np.empty(len(dirs))
        idx = np.empty(len(dirs), dtype=int)
        for s in range(0, len(dirs), chunk):
            D = dirs[s:s + chunk] @ X.T
            with np.errstate(divide="ignore"):
                R = np.where(D > 1e-12, h[None, :] / np.where(D > 1e-12, D, 1.0), np.inf)
            j = np.argmin(R, axis=1)
            idx[s:s + chunk] = j
            rho[s:s + chunk] = R[np.arange(len(j)), j]
        return rho, X[idx].copy()

    # -- persistence -----------------------------------------------------
    def to_dict(self) -> dict:
        return {"n": self.n, "grid": self.grid.spec(), "h": [float(v) for v in self.h],
                "sigma_convention": self.convention}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "Body":
        grid = sphere.grid_from_spec(d["grid"])
        return body_from_support(grid, d["h"], d.get("sigma_convention", "elementary"), strict=False)


def body_from_support(grid: SphereGrid, h, convention: Optional[str] = "elementary",
                      strict: bool = True) -> Body:
    """Build a :class:`Body` from support values (validated when ``strict``)."""
    sf = h if isinstance(h, SupportField) else SupportField(grid, h, strict=strict)
    if not sf.positive:
        raise ValidationError("support function must be positive: origin must be interior")
    return Body(sf, convention)


def body_from_radial(grid: SphereGrid, rho, convention: Optional[str] = "elementary",
                     smooth: bool = False) -> Body:
    """Body of the convex hull of the radial graph ``{rho(v) v}``."""
    sf = support_from_radial(RadialField(grid, np.asarray(rho, dtype=float)), smooth=smooth)
    return Body(sf, convention)


def radial_from_support(h: SupportField) -> tuple:
    """Radial field and Gauss-map table of a strictly convex support field."""
    if not h.convex:
        raise ValidationError("radial_from_support needs a strictly convex support field")
    body = Body(h)
    return body.radial, body.alpha


# -- hulls and Wulff shapes -------------------------------------------------

def _parabolic_peak(a, b, c):
    d2 = a - 2 * b + c
    # an isolated spike (vertex) is not a smooth peak: leave it unrefined
    smooth = (a > 0.5 * b) & (c > 0.5 * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where((d2 < 0) & smooth, -(a - c) ** 2 / (8 * d2), 0.0)
    return b + np.clip(gain, 0.0, None)


def support_from_radial(rho: RadialField, smooth: bool = False, chunk: int = 2048) -> SupportField:
    """Support function of ``conv{rho(v) v}`` at the grid nodes.

    The discrete maximum over radial samples is refined by a parabolic fit
    through neighbouring samples.  ``smooth=True`` (circles only) further
    polishes the maximizer with Newton steps on the trigonometric
    interpolant of ``rho``.
    """
    grid = rho.grid
    r = np.asarray(rho.values, dtype=float)
    if np.any(r <= 0):
        raise ValidationError("radial function must be positive")
    V = grid.nodes
    P = r[:, None] * V
    N = grid.size
    out = np.empty(N)
    arg = np.empty(N, dtype=int)
    for s in range(0, N, chunk):
        D = V[s:s + chunk] @ P.T
        j = np.argmax(D, axis=1)
        arg[s:s + chunk] = j
        out[s:s + chunk] = D[np.arange(len(j)), j]
    if grid.n == 2:
        a = np.einsum("ij,ij->i", V, P[(arg - 1) % N])
        c = np.einsum("ij,ij->i", V, P[(arg + 1) % N])
        out = _parabolic_peak(a, out, c)
        if smooth:
            th = grid.theta
            phi = grid.theta[arg].astype(float)
            for _ in range(20):
                f, f1, f2 = sphere.fourier_eval(r, phi, 2)
                cc, ss = np.cos(phi - th), np.sin(phi - th)
                g1 = f1 * cc - f * ss
                g2 = f2 * cc - 2 * f1 * ss - f * cc
                ok = g2 < 0
                step = np.where(ok, g1 / np.where(ok, g2, 1.0), 0.0)
                step = np.clip(step, -2 * np.pi / N, 2 * np.pi / N)
                phi = phi - step
                if np.max(np.abs(step)) < 1e-14:
                    break
            f = sphere.fourier_eval(r, phi, 0)[0]
            polished = f * np.cos(phi - th)
            out = np.where(np.abs(polished - out) < 1e-2 * np.abs(out), polished, out)
    else:
        nlat, nlon = grid.shape
        jl, jm = np.divmod(arg, nlon)

        def node(l, m):
            m = m % nlon
            flip = (l < 0) | (l >= nlat)
            l2 = np.where(l < 0, -l - 1, np.where(l >= nlat, 2 * nlat - 1 - l, l))
            m2 = np.where(flip, (m + nlon // 2) % nlon, m)
            return l2 * nlon + m2

        def val(idx):
            return np.einsum("ij,ij->i", V, P[idx])

        gain_lat = _parabolic_peak(val(node(jl - 1, jm)), out, val(node(jl + 1, jm))) - out
        gain_lon = _parabolic_peak(val(node(jl, jm - 1)), out, val(node(jl, jm + 1))) - out
        out = out + gain_lat + gain_lon
    return SupportField(grid, out, strict=False)


def wulff_shape(grid: SphereGrid, f) -> SupportField:
    """Support function of ``[f] = intersection of {y : y . v <= f(v)}``.

    Computed exactly for the discrete halfspace family via Qhull, so
    ``h <= f`` at every node with equality wherever ``f`` already is a
    support function.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValidationError("Wulff shape needs a positive function")
    hs = np.hstack([grid.nodes, -f[:, None]])
    verts = HalfspaceIntersection(hs, np.zeros(grid.n)).intersections
    h = (grid.nodes @ verts.T).max(axis=1)
    return SupportField(grid, np.minimum(h, f), strict=False)


def polar_dual(body: Body) -> Body:
    """Polar body: radial function ``1/h`` and support of the hull of it."""
    sf = support_from_radial(RadialField(body.grid, 1.0 / body.h), smooth=body.smooth)
    if body.smooth:
        sf = SupportField(body.grid, sf.values, strict=False)
    return Body(sf, body.convention)


# -- curvature -------------------------------------------------------------

def elementary_symmetric(eigs: np.ndarray, m: int) -> np.ndarray:
    """``sigma_m`` of the trailing-axis eigenvalue lists."""
    e = np.zeros(eigs.shape[:-1] + (m + 1,))
    e[..., 0] = 1.0
    for j in range(eigs.shape[-1]):
        lam = eigs[..., j]
        for r in range(m, 0, -1):
            e[..., r] = e[..., r] + lam * e[..., r - 1]
    return e[..., m]


def curvature_sigma(h: SupportField, k: int, convention: Optional[str] = None) -> np.ndarray:
    """``sigma_{n-k}`` of the principal radii ``eig(h_ij + h delta_ij)``.

    ``convention='mean'`` divides by ``binom(n-1, n-k)`` so that a ball of
    radius R gets ``R^(n-k)``.
    """
    n = h.grid.n
    if not 1 <= k <= n - 1:
        raise ConfigurationError(f"k must satisfy 1<=k<=n-1 (got k={k}, n={n})")
    if convention is None:
        convention = _default_convention(k)
        if convention is None:
            raise ConfigurationError("sigma convention must be given explicitly for k >= 2")
    if convention not in CONVENTIONS:
        raise ConfigurationError(f"unknown sigma convention {convention!r}")
    m = n - k
    s = elementary_symmetric(h.eigs, m)
    if convention == "mean":
        s = s / comb(n - 1, m)
    return s


# -- reverse radial Gauss image --------------------------------------------

Region = Union[Callable[[np.ndarray], np.ndarray], Sequence]


def region_mask(region: Region, normals: np.ndarray) -> np.ndarray:
    """Evaluate a region (predicate or list of ``(center, angle)`` caps) on normals."""
    if region is None:
        return np.ones(len(normals), dtype=bool)
    if callable(region):
        return np.asarray(region(normals), dtype=bool)
    mask = np.zeros(len(normals), dtype=bool)
    for center, angle in region:
        c = np.asarray(center, dtype=float)
        c = c / np.linalg.norm(c)
        mask |= normals @ c >= np.cos(angle) - 1e-12
    return mask


def radial_gauss_reverse(body: Body, region: Region) -> np.ndarray:
    """Boolean mask of radial nodes whose Gauss image lies in ``region``."""
    return region_mask(region, body.alpha)


def partition_labels(body: Body, regions: Sequence[Region]) -> np.ndarray:
    """Label each radial node with the first region containing its Gauss image.

    Nodes matched by no region get label ``len(regions)`` (the complement),
    so any list of regions induces a partition of the radial nodes.
    """
    labels = np.full(body.grid.size, len(regions), dtype=int)
    for i in reversed(range(len(regions))):
        labels[radial_gauss_reverse(body, regions[i])] = i
    return labels
