"""Quadrature grids and covariant derivatives on S^1 and S^2.

Two discretizations are provided:

* ``n == 2``: uniform angles ``theta_i = 2*pi*i/N`` with equal weights and
  spectral (FFT) differentiation.
* ``n == 3``: Gauss-Legendre colatitudes (no pole nodes) times a uniform
  longitude ring.  Derivatives use centered finite differences whose
  latitude stencils continue across the poles along great circles.

Node ordering is fixed: for ``n == 3`` nodes are latitude-major.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .errors import ConfigurationError

MIN_CIRCLE_NODES = 16
MIN_LAT, MIN_LON = 16, 32


def fornberg_weights(x0: float, xs: np.ndarray, m: int) -> np.ndarray:
    """Finite difference weights for derivatives 0..m at ``x0`` on nodes ``xs``.

    Returns an array of shape ``(m + 1, len(xs))``.  Standard Fornberg
    recursion (Math. Comp. 1988).
    """
    xs = np.asarray(xs, dtype=float)
    npts = len(xs)
    c = np.zeros((m + 1, npts))
    c1 = 1.0
    c4 = xs[0] - x0
    c[0, 0] = 1.0
    for i in range(1, npts):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Immutable quadrature grid on S^{n-1}.

    Attributes
    ----------
    n : int
        Ambient dimension (2 or 3).
    nodes : ndarray, shape (N, n)
        Unit vectors.
    weights : ndarray, shape (N,)
        Quadrature weights; they sum to |S^{n-1}|.
    frames : ndarray, shape (N, n-1, n)
        Orthonormal tangent frame at each node.
    shape : tuple
        ``(N,)`` for circles, ``(nlat, nlon)`` for spheres.
    order : int
        Finite difference order used for ``n == 3``.
    """

    n: int
    nodes: np.ndarray
    weights: np.ndarray
    frames: np.ndarray
    shape: Tuple[int, ...]
    order: int = 4
    theta: Optional[np.ndarray] = None  # colatitudes (n=3) or angles (n=2)
    phi: Optional[np.ndarray] = None  # longitudes (n=3)
    _stencils: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def area(self) -> float:
        return 2 * np.pi if self.n == 2 else 4 * np.pi

    def spec(self) -> dict:
        """JSON-serializable description sufficient to rebuild the grid."""
        res = self.shape[0] if self.n == 2 else list(self.shape)
        return {"n": self.n, "resolution": res, "order": self.order}

    # -- differential operators -------------------------------------------
    def grad(self, field):
        return grad(field, self)

    def hess(self, field):
        return hess(field, self)

    def integrate(self, field):
        return integrate(field, self)

    def to_ambient(self, tangent: np.ndarray) -> np.ndarray:
        """Convert frame components ``(N, n-1)`` to ambient vectors ``(N, n)``."""
        return np.einsum("ia,iaj->ij", tangent, self.frames)


def build_grid(n: int, resolution: Union[int, Tuple[int, int]], order: int = 4) -> SphereGrid:
    """Build a quadrature grid on S^{n-1}.

    ``resolution`` is the node count for ``n == 2`` and either ``nlat`` or
    ``(nlat, nlon)`` for ``n == 3`` (``nlon`` defaults to ``2 * nlat``).
    """
    if n == 2:
        N = int(resolution)
        if N < MIN_CIRCLE_NODES:
            raise ConfigurationError(f"circle grid needs at least {MIN_CIRCLE_NODES} nodes, got {N}")
        th = 2 * np.pi * np.arange(N) / N
        nodes = np.stack([np.cos(th), np.sin(th)], axis=1)
        frames = np.stack([-np.sin(th), np.cos(th)], axis=1)[:, None, :]
        w = np.full(N, 2 * np.pi / N)
        return SphereGrid(2, nodes, w, frames, (N,), order, theta=th)
    if n == 3:
        if np.isscalar(resolution):
            nlat, nlon = int(resolution), 2 * int(resolution)
        else:
            nlat, nlon = (int(r) for r in resolution)
        if nlat < MIN_LAT or nlon < MIN_LON:
            raise ConfigurationError(
                f"sphere grid needs at least {MIN_LAT}x{MIN_LON} nodes, got {nlat}x{nlon}")
        if nlon % 2:
            raise ConfigurationError("longitude count must be even for pole-crossing stencils")
        if order not in (2, 4, 6, 8):
            raise ConfigurationError(f"unsupported finite difference order {order}")
        xg, wg = np.polynomial.legendre.leggauss(nlat)
        xg, wg = xg[::-1], wg[::-1]  # north to south
        th = np.arccos(xg)
        ph = 2 * np.pi * np.arange(nlon) / nlon
        T, P = np.meshgrid(th, ph, indexing="ij")
        st, ct, sp, cp = np.sin(T), np.cos(T), np.sin(P), np.cos(P)
        nodes = np.stack([st * cp, st * sp, ct], axis=-1).reshape(-1, 3)
        e_th = np.stack([ct * cp, ct * sp, -st], axis=-1).reshape(-1, 3)
        e_ph = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1).reshape(-1, 3)
        frames = np.stack([e_th, e_ph], axis=1)
        w = (wg[:, None] * np.full(nlon, 2 * np.pi / nlon)[None, :]).reshape(-1)
        return SphereGrid(3, nodes, w, frames, (nlat, nlon), order, theta=th, phi=ph)
    raise ConfigurationError(f"dimension must be 2 or 3, got {n}")


def grid_from_spec(spec: dict) -> SphereGrid:
    return build_grid(spec["n"], spec["resolution"] if spec["n"] == 2 else tuple(spec["resolution"]),
                      spec.get("order", 4))


def integrate(field, grid: SphereGrid) -> float:
    """Quadrature sum ``sum_i field_i * w_i``."""
    return float(np.dot(np.asarray(field, dtype=float), grid.weights))


# -- n = 2 spectral machinery ------------------------------------------------

def _spectral_derivative(values: np.ndarray, order: int) -> np.ndarray:
    N = values.shape[0]
    c = np.fft.rfft(values)
    k = np.arange(c.shape[0], dtype=float)
    if order % 2 == 1 and N % 2 == 0:
        k[-1] = 0.0  # Nyquist mode has no odd derivative
    return np.fft.irfft(c * (1j * k) ** order, n=N)


def fourier_eval(values: np.ndarray, angles: np.ndarray, derivs: int = 0):
    """Evaluate the trigonometric interpolant of circle samples off-grid.

    Returns a list ``[f, f', ..., f^(derivs)]`` at ``angles``.
    """
    values = np.asarray(values, dtype=float)
    N = values.shape[0]
    c = np.fft.rfft(values) / N
    k = np.arange(c.shape[0])
    scale = np.full(c.shape[0], 2.0)
    scale[0] = 1.0
    if N % 2 == 0:
        scale[-1] = 1.0
    c = c * scale
    angles = np.asarray(angles, dtype=float)
    phase = np.exp(1j * np.multiply.outer(angles, k))
    out = []
    for d in range(derivs + 1):
        kd = (1j * k) ** d
        if d % 2 == 1 and N % 2 == 0:
            kd = kd.copy()
            kd[-1] = 0.0
        out.append(np.real(phase @ (c * kd)))
    return out


# -- n = 3 finite differences ---------------------------------------------

def _lat_stencils(grid: SphereGrid):
    """Per-latitude stencil indices, longitude shifts and derivative weights."""
    if "lat" in grid._stencils:
        return grid._stencils["lat"]
    nlat, nlon = grid.shape
    th = grid.theta
    half = grid.order // 2
    rows = []
    for j in range(nlat):
        idx, shift, coord = [], [], []
        for o in range(-half, half + 1):
            i = j + o
            if i < 0:
                src = -i - 1
                idx.append(src); shift.append(nlon // 2); coord.append(-th[src])
            elif i >= nlat:
                src = 2 * nlat - 1 - i
                idx.append(src); shift.append(nlon // 2); coord.append(2 * np.pi - th[src])
            else:
                idx.append(i); shift.append(0); coord.append(th[i])
        w = fornberg_weights(th[j], np.array(coord), 2)
        rows.append((np.array(idx), np.array(shift), w[1], w[2]))
    grid._stencils["lat"] = rows
    return rows


def _lon_weights(order: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
    half = order // 2
    offs = np.arange(-half, half + 1)
    w = fornberg_weights(0.0, offs.astype(float), m)
    return offs, w[m]


def _d_lat(F: np.ndarray, grid: SphereGrid, m: int) -> np.ndarray:
    out = np.zeros_like(F)
    for j, (idx, shift, w1, w2) in enumerate(_lat_stencils(grid)):
        w = w1 if m == 1 else w2
        for s, (i, sh) in enumerate(zip(idx, shift)):
            out[j] += w[s] * np.roll(F[i], -sh)
    return out


def _d_lon(F: np.ndarray, grid: SphereGrid, m: int) -> np.ndarray:
    offs, w = _lon_weights(grid.order, m)
    dphi = 2 * np.pi / grid.shape[1]
    out = np.zeros_like(F)
    for o, c in zip(offs, w):
        out += c * np.roll(F, -o, axis=1)
    return out / dphi ** m


def _partials3(field: np.ndarray, grid: SphereGrid):
    F = np.asarray(field, dtype=float).reshape(grid.shape)
    f_t = _d_lat(F, grid, 1)
    f_p = _d_lon(F, grid, 1)
    return F, f_t, f_p


def grad(field, grid: SphereGrid) -> np.ndarray:
    """Frame components of the spherical gradient, shape ``(N, n-1)``."""
    field = np.asarray(field, dtype=float)
    if grid.n == 2:
        return _spectral_derivative(field, 1)[:, None]
    _, f_t, f_p = _partials3(field, grid)
    st = np.sin(grid.theta)[:, None]
    return np.stack([f_t, f_p / st], axis=-1).reshape(-1, 2)


def hess(field, grid: SphereGrid) -> np.ndarray:
    """Covariant Hessian in the node frames, shape ``(N, n-1, n-1)``."""
    field = np.asarray(field, dtype=float)
    if grid.n == 2:
        return _spectral_derivative(field, 2)[:, None, None]
    F, f_t, f_p = _partials3(field, grid)
    f_tt = _d_lat(F, grid, 2)
    f_pp = _d_lon(F, grid, 2)
    f_tp = _d_lat(f_p, grid, 1)
    st = np.sin(grid.theta)[:, None]
    cot = (np.cos(grid.theta) / np.sin(grid.theta))[:, None]
    h11 = f_tt
    h12 = (f_tp - cot * f_p) / st
    h22 = f_pp / st ** 2 + cot * f_t
    H = np.empty(grid.shape + (2, 2))
    H[..., 0, 0] = h11
    H[..., 0, 1] = H[..., 1, 0] = h12
    H[..., 1, 1] = h22
    return H.reshape(-1, 2, 2)
