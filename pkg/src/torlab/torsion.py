"""Dirichlet k-Hessian torsion problem ``S_k(D^2 u) = 1`` in a convex body.

The body is embedded in a Cartesian grid.  Every second derivative is a
directional Shortley-Weller difference: along a grid line (axis or
diagonal) the three-point non-uniform stencil uses the exact boundary
crossing, where ``u = 0``.  Mixed derivatives come from the two diagonal
directions, ``u_ab = (u_{xi xi} - u_{eta eta}) / 2``.  The stencils are exact
for quadratics, so ball and ellipsoid solutions are reproduced to solver
precision.

Solutions follow the k-convex sign convention ``u <= 0``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import linprog

from .body import Body
from .errors import ConfigurationError, SolverError

log = logging.getLogger(__name__)

SUPPORTED = {(2, 1), (3, 1), (3, 2)}
MIN_CROSSING = 1e-8  # fraction of the link length


def sk(A: np.ndarray, k: int) -> np.ndarray:
    """k-th elementary symmetric function of symmetric matrices ``(..., n, n)``."""
    if k == 1:
        return np.trace(A, axis1=-2, axis2=-1)
    if k == 2:
        tr = np.trace(A, axis1=-2, axis2=-1)
        return 0.5 * (tr ** 2 - np.einsum("...ij,...ji->...", A, A))
    from .body import elementary_symmetric
    return elementary_symmetric(np.linalg.eigvalsh(A), k)


def sk_derivative(A: np.ndarray, k: int) -> np.ndarray:
    """``dS_k / dA_ij``; closed forms for k = 1, 2."""
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n), A.shape)
    if k == 1:
        return eye.copy()
    if k == 2:
        return np.trace(A, axis1=-2, axis2=-1)[..., None, None] * eye - A
    raise ConfigurationError(f"derivative of S_{k} not implemented")


def in_gamma_k(A: np.ndarray, k: int, tol: float = 0.0) -> np.ndarray:
    """``S_i(A) > tol`` for ``i = 1..k``."""
    ok = np.ones(A.shape[:-2], dtype=bool)
    for i in range(1, k + 1):
        ok &= sk(A, i) > tol
    return ok


def radial_oracle(R: float, n: int, k: int):
    """Ball solution ``u = c (|y|^2 - R^2)``: returns ``(c_{n,k}, |Du| on the sphere)``."""
    c = 0.5 * comb(n, k) ** (-1.0 / k)
    return c, 2 * c * R


def check_nk(n: int, k: int):
    if not 1 <= k <= n - 1:
        raise ConfigurationError(f"k must satisfy 1≤k≤n−1 (got n={n}, k={k})")
    if (n, k) not in SUPPORTED:
        raise ConfigurationError(f"unsupported (n, k) = ({n}, {k})")


# -- grid -------------------------------------------------------------------

@dataclass
class CartesianGrid:
    """Uniform grid covering a body, with the inside mask and index maps."""

    lo: np.ndarray
    dx: float
    shape: tuple
    inside: np.ndarray  # bool, full grid shape
    unknown: np.ndarray  # int, full grid shape; -1 outside

    @property
    def n(self) -> int:
        return len(self.shape)

    def coords(self, idx: np.ndarray) -> np.ndarray:
        return self.lo + idx * self.dx

    @property
    def interior_index(self) -> np.ndarray:
        return np.argwhere(self.inside)

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.n


def _inside(body: Body, pts: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(pts, axis=1)
    inside = r < 0.999 * body.rho.min()
    maybe = ~inside & (r <= 1.001 * body.rho.max() + 1e-12)
    if maybe.any():
        rho, _ = body.radial_at(pts[maybe] / r[maybe][:, None])
        inside[np.flatnonzero(maybe)] = r[maybe] < rho
    return inside


def make_cartesian_grid(body: Body, resolution: int, pad: int = 3,
                        box: Optional[tuple] = None) -> CartesianGrid:
    """Grid with ``resolution`` cells across the largest extent of the body.

    ``box=(lo, hi)`` fixes the covered box (used to keep one grid across a
    family of nearby bodies).
    """
    lo, hi = box if box is not None else body.bounding_box()
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    dx = float((hi - lo).max()) / resolution
    lo = lo - pad * dx
    counts = np.ceil((hi + pad * dx - lo) / dx).astype(int) + 1
    axes = [lo[a] + dx * np.arange(counts[a]) for a in range(len(counts))]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(counts))
    inside = _inside(body, mesh).reshape(tuple(counts))
    # the outermost layers must stay outside for neighbour lookups
    sl = [slice(2, -2)] * len(counts)
    core = np.zeros_like(inside)
    core[tuple(sl)] = True
    if np.any(inside & ~core):
        raise ConfigurationError("body does not fit in the Cartesian box")
    unknown = -np.ones(inside.shape, dtype=np.int64)
    unknown[inside] = np.arange(int(inside.sum()))
    return CartesianGrid(lo, dx, tuple(counts), inside, unknown)


def _crossing(body: Body, y: np.ndarray, d: np.ndarray, s: float, iters: int = 60) -> np.ndarray:
    """Distance ``t`` in (0, s] from inside points ``y`` to the boundary along ``d``.

    Vectorized Illinois regula falsi on ``|p| - rho(p/|p|)``.
    """
    def psi(t):
        p = y + t[:, None] * d
        r = np.linalg.norm(p, axis=1)
        rho, _ = body.radial_at(p / r[:, None])
        return r - rho

    a = np.zeros(len(y))
    b = np.full(len(y), s)
    fa, fb = psi(a), psi(b)
    side = np.zeros(len(y), dtype=int)
    t = b.copy()
    for _ in range(iters):
        t = (a * fb - b * fa) / (fb - fa)
        ft = psi(t)
        pos = ft >= 0
        # root in [a, t] when ft >= 0
        b = np.where(pos, t, b)
        fb = np.where(pos, ft, fb)
        fa = np.where(pos & (side == 1), fa / 2, fa)
        a = np.where(pos, a, t)
        fa = np.where(pos, fa, ft)
        fb = np.where(~pos & (side == -1), fb / 2, fb)
        side = np.where(pos, 1, -1)
        if np.max(np.abs(ft)) < 1e-14 or np.max(b - a) < 1e-14 * s:
            break
    return np.clip(t, MIN_CROSSING * s, s)


def _directions(n: int, k: int):
    axes = [tuple(int(i == a) for i in range(n)) for a in range(n)]
    if k == 1:
        return axes
    diag = []
    for a, b in itertools.combinations(range(n), 2):
        o = [0] * n
        o[a], o[b] = 1, 1
        diag.append(tuple(o))
        o = [0] * n
        o[a], o[b] = 1, -1
        diag.append(tuple(o))
    return axes + diag


def directional_operator(body: Body, grid: CartesianGrid, offset) -> sp.csr_matrix:
    """Sparse Shortley-Weller second difference along the integer ``offset``."""
    o = np.asarray(offset)
    s = grid.dx * np.linalg.norm(o)
    d = o / np.linalg.norm(o)
    idx = grid.interior_index
    rows = grid.unknown[tuple(idx.T)]
    y = grid.coords(idx)
    dist = {}
    nbr = {}
    for sign in (1, -1):
        j = idx + sign * o
        col = grid.unknown[tuple(j.T)]
        hstep = np.full(len(idx), s)
        cut = col < 0
        if cut.any():
            hstep[cut] = _crossing(body, y[cut], sign * d, s)
        dist[sign], nbr[sign] = hstep, col
    hp, hm = dist[1], dist[-1]
    cp = 2.0 / (hp * (hp + hm))
    cm = 2.0 / (hm * (hp + hm))
    c0 = -2.0 / (hp * hm)
    r_list = [rows]
    c_list = [rows]
    v_list = [c0]
    for sign, c in ((1, cp), (-1, cm)):
        ok = nbr[sign] >= 0
        r_list.append(rows[ok]); c_list.append(nbr[sign][ok]); v_list.append(c[ok])
    m = int(grid.inside.sum())
    return sp.csr_matrix((np.concatenate(v_list), (np.concatenate(r_list), np.concatenate(c_list))),
                         shape=(m, m))


@dataclass
class HessianOperators:
    """Sparse maps from interior values to each entry of the discrete Hessian."""

    D: dict  # (a, b) -> csr, a <= b

    def apply(self, u: np.ndarray, n: int) -> np.ndarray:
        H = np.empty((len(u), n, n))
        for (a, b), M in self.D.items():
            H[:, a, b] = H[:, b, a] = M @ u
        return H


def hessian_operators(body: Body, grid: CartesianGrid, k: int) -> HessianOperators:
    n = grid.n
    ops = {o: directional_operator(body, grid, o) for o in _directions(n, k)}
    D = {}
    for a in range(n):
        D[(a, a)] = ops[tuple(int(i == a) for i in range(n))]
    if k >= 2:
        for a, b in itertools.combinations(range(n), 2):
            plus = [0] * n; plus[a] = plus[b] = 1
            minus = [0] * n; minus[a] = 1; minus[b] = -1
            D[(a, b)] = 0.5 * (ops[tuple(plus)] - ops[tuple(minus)])
    return HessianOperators(D)


# -- solution -------------------------------------------------------------

@dataclass
class TorsionSolution:
    """Grid solution of ``S_k(D^2 u) = 1`` with boundary gradient samples.

    ``g_support[i]`` is ``|Du|`` at the boundary point with outer normal
    ``body.grid.nodes[i]`` (smooth bodies only); ``g_radial[i]`` is ``|Du|``
    at the hit point of radial node ``i``.
    """

    k: int
    grid: CartesianGrid
    u: np.ndarray  # full grid array, zero outside
    hessian: np.ndarray  # (m, n, n) at interior nodes
    residual: float
    iterations: int = 0
    g_support: Optional[np.ndarray] = None
    g_radial: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    @property
    def u_interior(self) -> np.ndarray:
        return self.u[self.grid.inside]

    @property
    def u_min(self) -> float:
        return float(self.u_interior.min())

    def integral_neg_u(self) -> float:
        """``int_Omega (-u) dy`` by the node sum."""
        return float(-self.u_interior.sum() * self.grid.cell_volume)

    def interpolate(self, pts: np.ndarray) -> np.ndarray:
        """Tensor three-point Lagrange interpolation (exact for quadratics)."""
        g = self.grid
        pts = np.atleast_2d(pts)
        rel = (pts - g.lo) / g.dx
        base = np.rint(rel).astype(int)
        frac = rel - base  # in [-1/2, 1/2]
        n = g.n
        L = [np.stack([0.5 * f * (f - 1), 1 - f ** 2, 0.5 * f * (f + 1)], axis=1) for f in frac.T]
        out = np.zeros(len(pts))
        for offs in itertools.product((-1, 0, 1), repeat=n):
            w = np.ones(len(pts))
            idx = []
            for a, o in enumerate(offs):
                w = w * L[a][:, o + 1]
                idx.append(np.clip(base[:, a] + o, 0, g.shape[a] - 1))
            out += w * self.u[tuple(idx)]
        return out

    def gradient_at(self, points: np.ndarray, normals: np.ndarray, depth: float = 3.0) -> np.ndarray:
        """``|Du|`` at boundary points by a one-sided three-point difference
        along the inward normal, with samples ``depth*dx`` apart."""
        delta = depth * self.grid.dx
        u1 = self.interpolate(points - delta * normals)
        u2 = self.interpolate(points - 2 * delta * normals)
        return (u2 - 4 * u1) / (2 * delta)


def _fitted_ellipsoid_guess(body: Body, grid: CartesianGrid, k: int) -> np.ndarray:
    n = grid.n
    E = np.eye(n)
    P = body.points if body.smooth else body.rho[:, None] * body.grid.nodes
    hp = (P @ E.T).max(axis=0)
    hm = (-P @ E.T).max(axis=0)
    a = 0.5 * (hp + hm)
    c = 0.5 * (hp - hm)
    M = np.diag(a ** -2.0)
    kappa = 0.5 * sk(M, k) ** (-1.0 / k)
    y = grid.coords(grid.interior_index) - c
    return kappa * (np.einsum("ij,j,ij->i", y, a ** -2.0, y) - 1.0)


DIRECT_LIMIT = 30000  # unknowns; larger systems use AMG-preconditioned GMRES


def _linear_solve(A: sp.csr_matrix, b: np.ndarray, rtol: float) -> np.ndarray:
    if A.shape[0] <= DIRECT_LIMIT:
        x = spla.spsolve(A.tocsc(), b)
    else:
        import pyamg
        M = pyamg.smoothed_aggregation_solver(A.tocsr()).aspreconditioner()
        x, _ = spla.gmres(A, b, M=M, rtol=min(rtol, 1e-12), restart=60, maxiter=400)
    res = np.linalg.norm(A @ x - b) / max(np.linalg.norm(b), 1e-300)
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"linear solve relative residual {res:.2e} above {rtol:.0e}", res)
    return x


def solve_khessian(body: Body, k: int, resolution: int = 128, *, tol: float = 1e-8,
                   max_iter: int = 50, box: Optional[tuple] = None, depth: float = 3.0,
                   grid: Optional[CartesianGrid] = None) -> TorsionSolution:
    """Solve ``S_k(D^2 u) = 1`` in ``body`` with ``u = 0`` on the boundary.

    ``resolution`` is the number of Cartesian cells across the largest
    extent of the body.  k = 1 is a single sparse solve; k = 2 runs damped
    Newton from a fitted-ellipsoid quadratic with step halving until the
    discrete Hessian stays in the Gamma_k cone.
    """
    n = body.n
    check_nk(n, k)
    if grid is None:
        grid = make_cartesian_grid(body, resolution, box=box)
    ops = hessian_operators(body, grid, k)
    m = int(grid.inside.sum())
    ones = np.ones(m)
    history = []
    if k == 1:
        L = sum(ops.D[(a, a)] for a in range(n)).tocsr()
        u = _linear_solve(L, ones, 1e-10)
        H = ops.apply(u, n)
        res = float(np.abs(L @ u - 1).max())
        it = 1
    else:
        u = _fitted_ellipsoid_guess(body, grid, k)
        H = ops.apply(u, n)
        if not in_gamma_k(H, k).all():
            L = sum(ops.D[(a, a)] for a in range(n)).tocsr()
            up = _linear_solve(L, ones, 1e-10)
            Hp = ops.apply(up, n)
            lam = np.sqrt(1.0 / np.mean(sk(Hp, k)))
            u, H = lam * up, lam * Hp
        # a few nodes next to tiny boundary cuts may start outside the cone;
        # the line search never lets that set grow and it must empty by the end
        bad = int((~in_gamma_k(H, k)).sum())
        if bad > max(10, m // 100):
            raise SolverError(f"initial guess leaves Gamma_{k} at {bad} nodes")
        r = sk(H, k) - 1.0
        res = float(np.abs(r).max())
        history.append(res)
        it = 0
        while res > tol:
            if it >= max_iter:
                raise SolverError(f"Newton did not converge in {max_iter} iterations", res)
            Sd = sk_derivative(H, k)
            J = None
            for (a, b), M in ops.D.items():
                coef = Sd[:, a, b] if a == b else Sd[:, a, b] + Sd[:, b, a]
                term = sp.diags(coef) @ M
                J = term if J is None else J + term
            du = _linear_solve(J.tocsr(), -r, 1e-8)
            t = 1.0
            while True:
                un = u + t * du
                Hn = ops.apply(un, n)
                rn = sk(Hn, k) - 1.0
                bad_n = int((~in_gamma_k(Hn, k)).sum())
                if bad_n <= bad and np.abs(rn).max() < res * (1 - 1e-4 * t) + 1e-14:
                    bad = bad_n
                    break
                t *= 0.5
                if t < 1e-10:
                    raise SolverError("line search failed to keep D^2u in Gamma_k", res)
            u, H, r = un, Hn, rn
            res = float(np.abs(r).max())
            history.append(res)
            it += 1
            log.debug("newton it=%d step=%.3g residual=%.3e", it, t, res)
        if bad:
            raise SolverError(f"converged Hessian leaves Gamma_{k} at {bad} nodes", res)
    full = np.zeros(grid.shape)
    full[grid.inside] = u
    sol = TorsionSolution(k, grid, full, H, res, it, history=history)
    if body.smooth:
        sol.g_support = sol.gradient_at(body.points, body.grid.nodes, depth)
    hits = body.rho[:, None] * body.grid.nodes
    sol.g_radial = sol.gradient_at(hits, body.alpha, depth)
    return sol


def boundary_gradient(sol: TorsionSolution, body: Body) -> np.ndarray:
    """``g(x) = |Du(nu^{-1}(x))|`` at every support node."""
    if sol.g_support is not None:
        return sol.g_support
    return sol.gradient_at(body.points, body.grid.nodes)


def comparison_bounds(body: Body, k: int) -> dict:
    """Ball-comparison bounds ``2 c_{n,k} r_in <= g <= 2 c_{n,k} R_out``.

    The body is recentred at its Chebyshev centre; ``touching`` lists the
    support nodes where the inscribed ball meets the boundary (within the
    grid's resolution), the only places the lower bound is asserted.
    """
    n = body.n
    X = body.grid.nodes
    h = body.h
    res = linprog(np.r_[np.zeros(n), -1.0], A_ub=np.hstack([X, np.ones((len(X), 1))]), b_ub=h,
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    r_in = res.x[n]
    # the inscribed centre need not be unique; among them take the one that
    # also minimizes the circumradius
    res = linprog(np.r_[np.zeros(n), 1.0],
                  A_ub=np.vstack([np.hstack([-X, -np.ones((len(X), 1))]),
                                  np.hstack([X, np.zeros((len(X), 1))])]),
                  b_ub=np.r_[-h, h - r_in * (1 - 1e-12)],
                  bounds=[(None, None)] * (n + 1), method="highs")
    center = res.x[:n]
    hc = h - X @ center
    R_out = float(hc.max())
    c, _ = radial_oracle(1.0, n, k)
    touching = np.flatnonzero(hc <= r_in + 1e-9 * max(1.0, r_in))
    return {"lower": 2 * c * r_in, "upper": 2 * c * R_out, "r_in": float(r_in),
            "R_out": R_out, "center": center, "touching": touching}


def write_vtk(sol: TorsionSolution, path) -> None:
    """Legacy-VTK structured points dump of ``u`` (debugging aid)."""
    g = sol.grid
    dims = list(g.shape) + [1] * (3 - g.n)
    origin = list(g.lo) + [0.0] * (3 - g.n)
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\ntorsion u\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write("DIMENSIONS {} {} {}\n".format(*dims))
        fh.write("ORIGIN {} {} {}\n".format(*origin))
        fh.write("SPACING {0} {0} {0}\n".format(g.dx))
        fh.write(f"POINT_DATA {int(np.prod(dims))}\nSCALARS u double 1\nLOOKUP_TABLE default\n")
        for v in sol.u.transpose().reshape(-1):
            fh.write(f"{v:.10e}\n")
