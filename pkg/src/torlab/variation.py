"""One-parameter families of bodies and finite-difference variational audits."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .body import Body, RadialField, SupportField, body_from_support, support_from_radial, wulff_shape
from .errors import ConfigurationError, RangeError
from .functionals import (dual_rigidity_Q, measure_integral, mixed_measure_total,
                          rigidity_dual_form)
from .torsion import make_cartesian_grid, solve_khessian

KINDS = ("wulff", "hull", "p-radial", "zero-radial", "linear", "log")
STEPS = (1e-2, 5e-3, 2.5e-3)


class UnreliableDerivativeWarning(UserWarning):
    """The finite-difference error cascade did not decrease monotonically."""


@dataclass
class LogFamily:
    """``s -> body`` for the supported one-parameter families.

    ``wulff``: ``h_s = h exp(s f)``; ``hull``: ``rho_s = rho exp(s g)``;
    ``p-radial``: ``rho_s = (rho_1^p + s rho_2^p)^(1/p)``; ``zero-radial``:
    ``rho_s = rho_1 rho_2^s``; ``linear``: ``h_s = (1-s) h_1 + s h_2``;
    ``log``: ``h_s = h_1^(1-s) h_2^s``.  Radial kinds are convexified
    through the support of the hull, the Wulff kind through the Wulff
    shape.  ``s = 0`` returns the base body itself.
    """

    base: Body
    kind: str
    pert: Optional[np.ndarray] = None
    second: Optional[Body] = None
    p: float = 1.0
    s_max: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown family kind {self.kind!r}")
        if self.kind in ("wulff", "hull"):
            if self.pert is None:
                raise ConfigurationError(f"{self.kind} family needs a perturbation field")
            self.pert = np.broadcast_to(np.asarray(self.pert, dtype=float), (self.base.grid.size,))
        elif self.second is None:
            raise ConfigurationError(f"{self.kind} family needs a second body")
        if self.kind == "p-radial" and self.p == 0:
            raise ConfigurationError("p-radial combinations need p != 0; use zero-radial")

    def _support(self, s):
        b, grid = self.base, self.base.grid
        if self.kind == "wulff":
            return b.h * np.exp(s * self.pert), "support"
        if self.kind == "linear":
            return (1 - s) * b.h + s * self.second.h, "support"
        if self.kind == "log":
            return b.h ** (1 - s) * self.second.h ** s, "support"
        if self.kind == "hull":
            return b.rho * np.exp(s * self.pert), "radial"
        if self.kind == "zero-radial":
            return b.rho * self.second.rho ** s, "radial"
        base = b.rho ** self.p + s * self.second.rho ** self.p
        if np.any(base <= 0):
            raise RangeError(f"p-radial combination leaves the positive range at s={s}")
        return base ** (1.0 / self.p), "radial"

    def __call__(self, s: float) -> Body:
        if s == 0:
            return self.base
        if abs(s) > self.s_max:
            raise RangeError(f"|s|={abs(s):g} exceeds s_max={self.s_max:g}")
        vals, rep = self._support(s)
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise RangeError(f"family leaves the positive range at s={s}")
        grid, conv = self.base.grid, self.base.convention
        if rep == "radial":
            hs = support_from_radial(RadialField(grid, vals), smooth=self.base.smooth)
            return Body(hs, conv)
        sf = SupportField(grid, vals, strict=False)
        if not sf.convex:
            sf = wulff_shape(grid, vals)
        return Body(sf, conv)


def make_family(base: Body, pert=None, kind: str = "wulff", second: Optional[Body] = None,
                p: float = 1.0, s_max: float = 0.1) -> LogFamily:
    return LogFamily(base, kind, pert, second, p, s_max)


# -- finite differences ----------------------------------------------------

@dataclass
class FDResult:
    value: float
    error: float
    reliable: bool
    stencils: list = field(default_factory=list)  # five-point value per step


def fd_derivative(functional: Callable[[Body], float], family: LogFamily,
                  steps: Sequence[float] = STEPS) -> FDResult:
    """``d/ds functional(family(s))`` at ``s = 0``.

    Five-point central differences at each step are combined by Richardson
    extrapolation of consecutive pairs (the stencil error is ``O(s^4)``).
    The estimate is the spread of the extrapolated values.
    """
    cache = {}

    def F(s):
        if s not in cache:
            cache[s] = float(functional(family(s)))
        return cache[s]

    D = [(-F(2 * s) + 8 * F(s) - 8 * F(-s) + F(-2 * s)) / (12 * s) for s in steps]
    R = [(16 * D[i + 1] - D[i]) / 15 for i in range(len(D) - 1)]
    diffs = np.abs(np.diff(D))
    # differences at round-off level carry no ordering information
    floor = 1e-9 * max(abs(v) for v in cache.values()) / min(steps)
    reliable = bool(np.all(diffs[1:] <= diffs[:-1] * 1.0000001 + floor))
    value = R[-1] if R else D[-1]
    error = float(abs(R[-1] - R[-2])) if len(R) > 1 else float(diffs[-1]) if len(diffs) else 0.0
    if not reliable:
        warnings.warn(f"non-monotone finite-difference cascade {D}", UnreliableDerivativeWarning,
                      stacklevel=2)
    return FDResult(float(value), error, reliable, D)


class SolvedFunctional:
    """Functional of a body that needs a torsion solve.

    Every member is solved on one fixed Cartesian box (the base box padded by
    ``margin``), so neighbouring family members differ only through their
    boundary cuts.
    """

    def __init__(self, evaluate, k: int, resolution: int, base: Body, margin: float = 0.1):
        self.evaluate = evaluate
        self.k = k
        lo, hi = base.bounding_box()
        pad = margin * float((hi - lo).max())
        self.box = (lo - pad, hi + pad)
        self.resolution = resolution

    def solve(self, body: Body):
        return solve_khessian(body, self.k, self.resolution, box=self.box)

    def __call__(self, body: Body) -> float:
        return self.evaluate(body, self.solve(body))


# -- audits ----------------------------------------------------------------

@dataclass
class AuditRecord:
    audit: str
    k: int
    p: float
    fd: float
    fd_error: float
    claimed: float
    alt: float = float("nan")
    reliable: bool = True

    @property
    def ratio(self) -> float:
        return self.fd / self.claimed if self.claimed != 0 else float("nan")

    def row(self) -> list:
        return [self.audit, self.k, _fmt(self.p), _fmt(self.fd), _fmt(self.fd_error), _fmt(self.claimed),
                _fmt(self.alt), _fmt(self.ratio), "" if self.reliable else "unreliable"]


AUDIT_COLUMNS = ["audit", "k", "p", "fd", "fd_error", "claimed", "alt", "ratio", "flags"]


def _fmt(x) -> str:
    return repr(float(x))


def audit_csv(records: Sequence[AuditRecord], header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AUDIT_COLUMNS)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def _record(name, k, p, fd: FDResult, claimed, alt=float("nan")):
    return AuditRecord(name, k, p, fd.value, fd.error, float(claimed), float(alt), fd.reliable)


def audit_scaling(body: Body, functional: str, k: int, p: float = -1.0, resolution: int = 128,
                  steps=STEPS) -> AuditRecord:
    """FD self-test on ``h_s = e^s h``: the derivative is degree times value.

    ``functional`` is ``"T"`` (degree ``n + 2``) or ``"Q"`` (degree ``p + 2``).
    """
    n = body.n
    if functional == "T":
        ev, deg = (lambda b, s: rigidity_dual_form(b, s, k)), n + 2
    elif functional == "Q":
        ev, deg = (lambda b, s: dual_rigidity_Q(b, s, k, p)), p + 2
    else:
        raise ConfigurationError(f"unknown scaling functional {functional!r}")
    fam = make_family(body, np.ones(body.grid.size), "wulff")
    F = SolvedFunctional(ev, k, resolution, body, margin=0.1)
    fd = fd_derivative(F, fam, steps)
    return _record(f"scaling-{functional}", k, p, fd, deg * F(body))


def audit_hull_rigidity(body: Body, pert, k: int, resolution: int = 128, steps=STEPS) -> AuditRecord:
    """Hull family ``rho e^(s g)`` against ``int g rho^(n+1-k) |Du|^(k+1) dv``."""
    n = body.n
    g = np.broadcast_to(np.asarray(pert, dtype=float), (body.grid.size,))
    fam = make_family(body, g, "hull")
    F = SolvedFunctional(lambda b, s: rigidity_dual_form(b, s, k), k, resolution, body)
    fd = fd_derivative(F, fam, steps)
    sol = F.solve(body)
    claimed = body.grid.integrate(g * body.rho ** (n + 1 - k) * sol.g_radial ** (k + 1))
    return _record("hull-rigidity", k, 0.0, fd, claimed)


def _wulff_like(name, fam, body, pert_fn, k, p, resolution, steps, alt_scale=None):
    F = SolvedFunctional(lambda b, s: dual_rigidity_Q(b, s, k, p), k, resolution, body)
    fd = fd_derivative(F, fam, steps)
    sol = F.solve(body)
    integral = measure_integral(pert_fn, body, sol, k, p)
    claimed = (p + 1 - k) * (k + 2) * integral
    alt = float("nan") if alt_scale is None else (p + 2) * alt_scale * dual_rigidity_Q(body, sol, k, p)
    return _record(name, k, p, fd, claimed, alt)


def audit_wulff_measure(body: Body, pert, k: int, p: float, resolution: int = 128, steps=STEPS) -> AuditRecord:
    """Wulff family ``h e^(s f)`` against ``(p+1-k)(k+2) int f dQ~``.

    For constant ``f`` the homogeneity value ``(p+2) f Q~`` is stored in ``alt``.
    """
    f = np.broadcast_to(np.asarray(pert, dtype=float), (body.grid.size,))
    fam = make_family(body, f, "wulff")
    const = float(f[0]) if np.all(f == f[0]) else None
    return _wulff_like("wulff-measure", fam, body, f, k, p, resolution, steps, const)


def audit_radial_combination(body1: Body, body2: Body, k: int, p: float, resolution: int = 128,
                steps=STEPS) -> AuditRecord:
    """p-radial combination against the mixed dual rigidity."""
    from .functionals import mixed_dual_rigidity
    fam = make_family(body1, kind="p-radial", second=body2, p=p)
    F = SolvedFunctional(lambda b, s: rigidity_dual_form(b, s, k), k, resolution, body1)
    fd = fd_derivative(F, fam, steps)
    sol = F.solve(body1)
    return _record("radial-combination", k, p, fd, mixed_dual_rigidity(body1, body2, sol, k, p))


def audit_interpolation(body1: Body, body2: Body, k: int, p: float, kind: str = "linear",
                 resolution: int = 128, steps=STEPS) -> AuditRecord:
    """Linear or log interpolation of support functions."""
    if kind == "linear":
        pert = body2.h / body1.h - 1.0
    elif kind == "log":
        pert = np.log(body2.h / body1.h)
    else:
        raise ConfigurationError("interpolation kind must be 'linear' or 'log'")
    fam = make_family(body1, kind=kind, second=body2)
    return _wulff_like(f"interp-{kind}", fam, body1, pert, k, p, resolution, steps)


def audit_mixed_interpolation(body1: Body, body2: Body, body3: Body, k: int, p: float, resolution: int = 128,
                 steps=STEPS) -> AuditRecord:
    """Log interpolation of ``body1`` toward ``body2`` in the mixed functional with ``body3``."""
    from .functionals import _as_function
    fam = make_family(body1, kind="log", second=body2)
    F = SolvedFunctional(lambda b, s: mixed_measure_total(b, s, body3, k, p), k, resolution, body1)
    fd = fd_derivative(F, fam, steps)
    sol = F.solve(body1)
    n = body1.n
    fn = _as_function(body1.grid, np.log(body2.h / body1.h))
    dens = body1.rho ** (n - p) * body3.rho ** (p + 1 - k) * sol.g_radial ** (k + 1) / (n - p)
    integral = body1.grid.integrate(fn(body1.alpha) * dens)
    return _record("mixed-interp", k, p, fd, (p + 1 - k) * (k + 2) * integral)
