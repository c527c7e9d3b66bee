"""Normalized flow of support functions toward solutions of the dual problem.

The scalar evolution is

    dh/dt = h * A / f - eta * h,    A = h rho^(p-n) g^(k+1) sigma_{n-k},

with ``g = |Du|`` read at the boundary point with normal ``x`` and
``eta = int A dx / int f dx``.  Integrating ``A`` over normals instead of
the radial parameter makes ``d/dt int f log h = 0`` hold for the
semi-discrete system, so the drift of that functional measures only the
time integrator.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .body import Body, RadialField, SupportField, support_from_radial
from .errors import ConfigurationError, StiffnessError, ValidationError
from .functionals import dual_rigidity_Q, field_function, phi
from .torsion import check_nk, solve_khessian

log = logging.getLogger(__name__)

CSV_COLUMNS = ["t", "dt", "eta", "phi", "Q", "residual", "h_min", "h_max", "grad_max",
               "kappa_min", "kappa_max", "dQ_sign", "flags"]


@dataclass
class FlowConfig:
    n: int = 2
    k: int = 1
    p: float = -1.0
    f: object = 1.0  # scalar or node values
    dt: float = 1e-3
    dt_min: float = 1e-8
    dt_max: float = 5e-2
    grow: float = 1.2
    cfl: float = 0.8  # fraction of the explicit stability limit
    tol: float = 1e-3
    t_max: float = 10.0
    max_steps: int = 1_000_000
    convention: Optional[str] = None
    torsion_resolution: int = 64
    mode: str = "convergence"
    phi_step_bound: float = 1e-4  # drift per accepted step, relative to int f
    phi_total_bound: float = 1e-3
    h_floor: float = 1e-3
    h_ceiling: float = 1e3
    pinch_bound: float = 1e3  # max ratio of principal radii

    def __post_init__(self):
        check_nk(self.n, self.k)
        if self.p == self.n:
            raise ConfigurationError("flows need p != n")
        if self.mode not in ("convergence", "exploratory"):
            raise ConfigurationError(f"unknown flow mode {self.mode!r}")
        if self.mode == "convergence" and not self.p < self.n - 2:
            raise ConfigurationError(f"convergence mode requires p < n - 2 (got p={self.p}, n={self.n})")
        if not (self.dt > 0 and self.dt_min > 0 and self.dt_max >= self.dt_min):
            raise ConfigurationError("time steps must satisfy 0 < dt_min <= dt_max and dt > 0")
        if self.convention is None:
            self.convention = "elementary" if self.k == 1 else "mean"
        if np.any(np.asarray(self.f, dtype=float) <= 0):
            raise ConfigurationError("density f must be positive")

    def density(self, size: int) -> np.ndarray:
        f = np.asarray(self.f, dtype=float)
        if f.ndim and f.shape != (size,):
            raise ConfigurationError(f"density needs {size} node values, got {f.shape}")
        return np.broadcast_to(f, (size,)).astype(float)

    def phi_scale(self, grid) -> float:
        """Drift of ``int f log h`` is measured relative to ``int f`` (a log-radius change)."""
        return grid.integrate(self.density(grid.size))

    def to_dict(self) -> dict:
        d = asdict(self)
        f = np.asarray(self.f, dtype=float)
        d["f"] = float(f) if f.ndim == 0 else f.tolist()
        return d


@dataclass
class Evaluation:
    """Everything derived from one support function."""

    body: Body
    sol: object
    A: np.ndarray
    eta: float
    speed: np.ndarray


@dataclass
class FlowState:
    t: float
    h: SupportField
    ev: Evaluation
    phi: float
    Q: float
    residual: float
    dt: float
    steps: int = 0
    monitors: dict = field(default_factory=dict)

    @property
    def body(self) -> Body:
        return self.ev.body

    @property
    def eta(self) -> float:
        return self.ev.eta


def evaluate(h: SupportField, config: FlowConfig, f: np.ndarray) -> Evaluation:
    """Solve torsion on the body of ``h`` and build the flow speed."""
    body = Body(h, config.convention)
    sol = solve_khessian(body, config.k, config.torsion_resolution)
    A = _flux(body, sol, config)
    eta = body.grid.integrate(A) / body.grid.integrate(f)
    return Evaluation(body, sol, A, eta, h.values * A / f - eta * h.values)


def _flux(body: Body, sol, config: FlowConfig) -> np.ndarray:
    n, k, p = body.n, config.k, config.p
    h = body.h
    rho = np.sqrt(h ** 2 + body.support.grad_norm() ** 2)
    g = sol.g_support
    return h * rho ** (p - n) * g ** (k + 1) * body.sigma(k, config.convention)


def speed(h: SupportField, sol, f, k: int, p: float, convention: Optional[str] = None):
    """``(F, full speed)`` with ``F = (h^2/f) rho^(p-n) g^(k+1) sigma``."""
    body = Body(h, convention or ("elementary" if k == 1 else "mean"))
    cfg = FlowConfig(n=body.n, k=k, p=p, convention=body.convention, mode="exploratory")
    f = np.broadcast_to(np.asarray(f, dtype=float), h.values.shape)
    A = _flux(body, sol, cfg)
    eta = body.grid.integrate(A) / body.grid.integrate(f)
    F = h.values * A / f
    return F, F - eta * h.values


def residual_of(ev: Evaluation, f: np.ndarray) -> float:
    """``max |f - A/eta| / f``: distance from the stationary equation with ``tau = 1/eta``."""
    return float(np.max(np.abs(f - ev.A / ev.eta) / f))


def residual(state: FlowState, config: FlowConfig) -> float:
    return residual_of(state.ev, config.density(state.h.grid.size))


def stability_limit(ev: Evaluation, f: np.ndarray, config: FlowConfig) -> float:
    """Explicit midpoint stability bound from the diffusive part of ``sigma``.

    The stiff term is ``h A / f`` with ``A`` linear in the second covariant
    derivatives through ``sigma``; its coefficient times the largest
    eigenvalue of the discrete Laplacian must stay below 2.
    """
    body = ev.body
    grid = body.grid
    h = body.h
    rho = np.sqrt(h ** 2 + body.support.grad_norm() ** 2)
    g = ev.sol.g_support
    n, k, p = body.n, config.k, config.p
    coef = h ** 2 * rho ** (p - n) * g ** (k + 1) / f
    if n == 2:
        lam = (grid.size / 2) ** 2
        d = coef
    else:
        eigs = body.support.eigs
        # d sigma_{n-k} / d omega is bounded by the largest radius for n = 3, k = 1
        d = coef * (eigs.max(axis=1) if k == 1 else np.ones(grid.size))
        if config.convention == "mean" and k == 2:
            d = d / 2
        st = np.sin(grid.theta).min()
        lam = 16.0 / 3.0 * ((grid.shape[0] / np.pi) ** 2 + (grid.shape[1] / (2 * np.pi * st)) ** 2)
    return 2.0 / float(np.max(d) * lam)


def _sign(x: float, tol: float) -> int:
    return 0 if abs(x) <= tol else int(np.sign(x))


def monitors(state: FlowState, config: FlowConfig, previous: Optional[FlowState] = None,
             phi0: Optional[float] = None) -> dict:
    body = state.body
    eigs = body.support.eigs
    rec = {
        "h_min": float(body.h.min()),
        "h_max": float(body.h.max()),
        "grad_max": float(body.support.grad_norm().max()),
        "kappa_min": float(eigs.min()),
        "kappa_max": float(eigs.max()),
        "dQ_sign": 0 if previous is None else _sign(state.Q - previous.Q, 1e-9 * abs(previous.Q)),
    }
    flags = []
    if phi0 is not None and abs(state.phi - phi0) > config.phi_total_bound * config.phi_scale(body.grid):
        flags.append("phi-drift")
    if rec["h_min"] < config.h_floor:
        flags.append("h-collapse")
    if rec["h_max"] > config.h_ceiling:
        flags.append("h-ceiling")
    if rec["kappa_max"] > config.pinch_bound * rec["kappa_min"]:
        flags.append("curvature-pinch")
    rec["flags"] = flags
    return rec


def initial_state(body: Body, config: FlowConfig) -> FlowState:
    if body.n != config.n:
        raise ConfigurationError(f"body dimension {body.n} does not match config n={config.n}")
    h = SupportField(body.grid, body.h)  # strict: raises on non-convex input
    f = config.density(h.grid.size)
    ev = evaluate(h, config, f)
    st = FlowState(0.0, h, ev, phi(h, f), dual_rigidity_Q(ev.body, ev.sol, config.k, config.p),
                   residual_of(ev, f), config.dt)
    st.monitors = monitors(st, config, phi0=st.phi)
    return st


def step(state: FlowState, config: FlowConfig, phi0: Optional[float] = None) -> FlowState:
    """One accepted explicit midpoint step, halving ``dt`` on rejected trials."""
    grid = state.h.grid
    f = config.density(grid.size)
    h0 = state.h.values
    dt = min(state.dt, config.dt_max, config.cfl * stability_limit(state.ev, f, config))
    reason = ""
    while dt >= config.dt_min:
        try:
            hm = SupportField(grid, h0 + 0.5 * dt * state.ev.speed)
            em = evaluate(hm, config, f)
            hn = SupportField(grid, h0 + dt * em.speed)
        except ValidationError as exc:
            reason = str(exc)
        else:
            phin = phi(hn, f)
            if abs(phin - state.phi) <= config.phi_step_bound * config.phi_scale(grid):
                en = evaluate(hn, config, f)
                new = FlowState(state.t + dt, hn, en, phin, dual_rigidity_Q(en.body, en.sol, config.k, config.p),
                                residual_of(en, f), min(dt * config.grow, config.dt_max), state.steps + 1)
                new.monitors = monitors(new, config, state, phi0)
                new.monitors["dt"] = dt
                return new
            reason = f"phi drift {abs(phin - state.phi):.3e} above bound"
        log.debug("rejected dt=%.3e: %s", dt, reason)
        dt *= 0.5
    raise StiffnessError(f"time step fell below dt_min={config.dt_min:g} ({reason})",
                         {"t": state.t, "dt": dt, "reason": reason, **state.monitors})


@dataclass
class FlowResult:
    series: list
    final: FlowState
    converged: bool
    tau: Optional[float]

    @property
    def body(self) -> Body:
        return self.final.body

    def to_csv(self, header: Optional[str] = None) -> str:
        return series_csv(self.series, header)


def _row(state: FlowState, dt: float) -> dict:
    m = state.monitors
    return {"t": state.t, "dt": dt, "eta": state.eta, "phi": state.phi, "Q": state.Q,
            "residual": state.residual, **{k: m[k] for k in CSV_COLUMNS[6:12]},
            "flags": ";".join(m["flags"])}


def series_csv(series: list, header: Optional[str] = None) -> str:
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in series:
        w.writerow([r[c] if isinstance(r[c], (str, int)) else repr(float(r[c])) for c in CSV_COLUMNS])
    return buf.getvalue()


def run(initial: Body, config: FlowConfig, record_every: int = 1, callback=None) -> FlowResult:
    """Integrate until the residual drops below ``tol`` or ``t >= t_max``.

    ``record_every`` thins the time series (the last state is always kept).
    """
    state = initial_state(initial, config)
    phi0 = state.phi
    series = [_row(state, 0.0)]
    if callback:
        callback(state)
    converged = state.residual < config.tol
    while not converged and state.t < config.t_max and state.steps < config.max_steps:
        cfg_dt = min(state.dt, config.t_max - state.t)
        state.dt = max(cfg_dt, config.dt_min)
        state = step(state, config, phi0)
        converged = state.residual < config.tol
        if state.steps % record_every == 0 or converged or state.t >= config.t_max:
            series.append(_row(state, state.monitors["dt"]))
        if callback:
            callback(state)
    return FlowResult(series, state, converged, 1.0 / state.eta if converged else None)


# -- radial form -------------------------------------------------------------

def radial_speed(body: Body, sol, f, config: FlowConfig) -> np.ndarray:
    """``d rho / dt`` at the radial nodes, ``rho (A/f - eta)`` read at ``alpha(v)``."""
    f = config.density(body.grid.size) if f is None else np.broadcast_to(np.asarray(f, float), (body.grid.size,))
    A = _flux(body, sol, config)
    eta = body.grid.integrate(A) / body.grid.integrate(f)
    rate = field_function(body.grid, A / f)(body.alpha) - eta
    return body.rho * rate


def run_radial(initial: Body, config: FlowConfig, t_end: float, dt: float) -> Body:
    """Fixed-step midpoint integration of the radial form (consistency checks)."""
    f = config.density(initial.grid.size)
    body = initial
    t = 0.0
    while t < t_end - 1e-12:
        d = min(dt, t_end - t)
        sol = solve_khessian(body, config.k, config.torsion_resolution)
        rho_m = body.rho + 0.5 * d * radial_speed(body, sol, f, config)
        mid = _radial_body(body.grid, rho_m, config)
        sol_m = solve_khessian(mid, config.k, config.torsion_resolution)
        rho_n = body.rho + d * radial_speed(mid, sol_m, f, config)
        body = _radial_body(body.grid, rho_n, config)
        t += d
    return body


def _radial_body(grid, rho, config: FlowConfig) -> Body:
    h = support_from_radial(RadialField(grid, rho), smooth=True)
    if not h.convex:
        raise ValidationError("radial flow lost strict convexity")
    return Body(h, config.convention)
