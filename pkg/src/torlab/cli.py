"""Command line entry point: ``torlab <command> --config path.json``.

Every output file embeds the fully resolved configuration, and no output
depends on wall-clock time, so identical configs give identical files.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import functionals as fn
from . import variation as var
from .body import Body
from .errors import ConfigurationError, SolverError, StiffnessError, TorlabError
from .flow import FlowConfig, run
from .shapes import fourier_support, make_body, random_perturbed_ball
from .sphere import SphereGrid, build_grid
from .torsion import boundary_gradient, check_nk, comparison_bounds, solve_khessian, write_vtk

log = logging.getLogger("torlab")

COMMANDS = ("solve-torsion", "flow", "measure", "variation-audit", "crofton-audit")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_NOT_CONVERGED = 0, 2, 3, 4

FLOW_KEYS = {"dt", "dt_min", "dt_max", "grow", "cfl", "tol", "t_max", "max_steps", "mode",
             "phi_step_bound", "phi_total_bound", "h_floor", "h_ceiling", "pinch_bound",
             "record_every", "plot_samples"}
TOP_KEYS = {"command", "n", "k", "p", "f", "body", "second_body", "third_body", "sphere_resolution",
            "sphere_order", "cartesian_resolution", "sigma_convention", "flow", "partition",
            "audits", "random_bodies", "amplitude", "dump_u", "seed", "out"}


@dataclass
class ExperimentConfig:
    command: str
    n: int = 2
    k: int = 1
    p: float = -1.0
    f: dict = field(default_factory=lambda: {"constant": 1.0})
    body: dict = field(default_factory=lambda: {"kind": "ball", "R": 1.0})
    second_body: Optional[dict] = None
    third_body: Optional[dict] = None
    sphere_resolution: object = None
    sphere_order: int = 4
    cartesian_resolution: int = 128
    sigma_convention: Optional[str] = None
    flow: dict = field(default_factory=dict)
    partition: Optional[dict] = None
    audits: list = field(default_factory=list)
    random_bodies: int = 0
    amplitude: float = 0.3
    dump_u: bool = False
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict, command: str, seed: Optional[int] = None) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config: top level must be a JSON object")
        unknown = sorted(set(d) - TOP_KEYS)
        if unknown:
            raise ConfigurationError(f"config: unknown field(s) {', '.join(unknown)}")
        if "command" in d and d["command"] != command:
            raise ConfigurationError(f"config field 'command': {d['command']!r} does not match {command!r}")
        kw = {k: v for k, v in d.items() if k not in ("command", "out")}
        if seed is not None:
            kw["seed"] = seed
        cfg = cls(command=command, **kw)
        cfg.validate()
        return cfg

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigurationError(f"config field '{name}': {msg}")

        need(self.command in COMMANDS, "command", f"must be one of {COMMANDS}")
        need(isinstance(self.n, int) and self.n in (2, 3), "n", "must be 2 or 3")
        need(isinstance(self.k, int), "k", "must be an integer")
        check_nk(self.n, self.k)
        need(isinstance(self.p, (int, float)), "p", "must be a number")
        need(isinstance(self.cartesian_resolution, int) and self.cartesian_resolution >= 8,
             "cartesian_resolution", "must be an integer >= 8")
        need(self.sigma_convention in (None, "elementary", "mean"), "sigma_convention",
             "must be 'elementary' or 'mean'")
        if self.k >= 2 and self.command != "flow":
            need(self.sigma_convention is not None, "sigma_convention", "must be given explicitly for k >= 2")
        need(isinstance(self.f, dict) and len(self.f) >= 1, "f", "must be an object")
        need(set(self.f) <= {"constant", "fourier", "caps", "base"}, "f",
             "use 'constant', 'fourier' (n=2) or 'caps' (n=3)")
        if "fourier" in self.f:
            need(self.n == 2, "f.fourier", "Fourier densities are for n=2")
        if "caps" in self.f:
            need(self.n == 3, "f.caps", "cap bump densities are for n=3")
        unknown = sorted(set(self.flow) - FLOW_KEYS)
        need(not unknown, "flow", f"unknown key(s) {', '.join(unknown)}")
        need(isinstance(self.seed, int), "seed", "must be an integer")

    def resolved(self) -> dict:
        d = {k: getattr(self, k) for k in ["command", "n", "k", "p", "f", "body", "second_body",
                                             "third_body", "sphere_resolution", "sphere_order",
                                             "cartesian_resolution", "sigma_convention", "flow",
                                             "partition", "audits", "random_bodies", "amplitude",
                                             "dump_u", "seed"]}
        d["sphere_resolution"] = self.grid_resolution()
        d["sigma_convention"] = self.convention()
        return d

    def header(self) -> str:
        return "config: " + json.dumps(self.resolved(), sort_keys=True)

    def grid_resolution(self):
        if self.sphere_resolution is not None:
            return self.sphere_resolution
        return 256 if self.n == 2 else [32, 64]

    def convention(self) -> str:
        if self.sigma_convention:
            return self.sigma_convention
        return "elementary" if self.k == 1 else "mean"

    def grid(self) -> SphereGrid:
        res = self.grid_resolution()
        return build_grid(self.n, tuple(res) if isinstance(res, list) else res, self.sphere_order)


# -- helpers -----------------------------------------------------------------

def density(spec: dict, grid: SphereGrid) -> np.ndarray:
    """Density values from a constant, Fourier coefficients or a sum of cap bumps."""
    if "constant" in spec:
        f = np.full(grid.size, float(spec["constant"]))
    elif "fourier" in spec:
        c = spec["fourier"]
        f = fourier_support(grid, c.get("a0", 1.0), c.get("cos", ()), c.get("sin", ()))
    else:
        f = np.full(grid.size, float(spec.get("base", 1.0)))
        for cap in spec["caps"]:
            c = np.asarray(cap["center"], dtype=float)
            c = c / np.linalg.norm(c)
            ca = np.cos(cap["angle"])
            t = np.clip((grid.nodes @ c - ca) / (1 - ca), 0.0, None)
            f += cap["amplitude"] * t ** 2
    if np.any(f <= 0):
        raise ConfigurationError("config field 'f': density must be positive at every node")
    return f


def _body(spec: dict, grid: SphereGrid, cfg: ExperimentConfig) -> Body:
    return make_body(grid, spec, cfg.convention())


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _csv_text(header: str, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


# -- commands ----------------------------------------------------------------

def cmd_solve_torsion(cfg: ExperimentConfig, out: Path) -> int:
    grid = cfg.grid()
    body = _body(cfg.body, grid, cfg)
    sol = solve_khessian(body, cfg.k, cfg.cartesian_resolution)
    summary = {"config": cfg.resolved(), "u_min": sol.u_min, "residual": sol.residual,
               "iterations": sol.iterations, "integral_neg_u": sol.integral_neg_u()}
    T_dual = fn.rigidity_dual_form(body, sol, cfg.k)
    summary["T_tilde_radial"] = T_dual
    if body.smooth:
        T_norm, Tk = fn.rigidity_Tk(body, sol, cfg.k, cfg.convention())
        g = boundary_gradient(sol, body)
        summary.update({"T_tilde_normal": T_norm, "T_k": Tk, "g_min": float(g.min()), "g_max": float(g.max())})
        summary["pohozaev_relative_gap"] = abs(T_norm - sol.integral_neg_u()) / sol.integral_neg_u()
        b = comparison_bounds(body, cfg.k)
        summary["comparison_bounds"] = {"lower": b["lower"], "upper": b["upper"],
                                        "r_in": b["r_in"], "R_out": b["R_out"]}
    _write(out, "torsion_summary.json", _dump(summary))
    if cfg.dump_u:
        out.mkdir(parents=True, exist_ok=True)
        write_vtk(sol, out / "u.vtk")
    return EXIT_OK


def _svg_polar(grid: SphereGrid, samples: list, f: np.ndarray, header: str) -> str:
    """Polylines of ``h(theta, t)`` (blue shades) and ``f`` (red) in polar form."""
    size, pad = 480, 20
    rmax = max(max(np.max(h) for _, h in samples), float(np.max(f))) * 1.05
    scale = (size / 2 - pad) / rmax
    th = np.r_[grid.theta, grid.theta[:1]]

    def path(r):
        r = np.r_[r, r[:1]]
        x = size / 2 + scale * r * np.cos(th)
        y = size / 2 - scale * r * np.sin(th)
        return " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(x, y))

    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f"<!-- {header.replace('--', '- -')} -->",
             f'<rect width="{size}" height="{size}" fill="white"/>']
    m = len(samples)
    for i, (t, h) in enumerate(samples):
        shade = int(200 - 170 * i / max(m - 1, 1))
        lines.append(f'<polyline fill="none" stroke="rgb({shade},{shade},255)" stroke-width="1.5" '
                     f'points="{path(h)}"><title>t={t:.4g}</title></polyline>')
    lines.append(f'<polyline fill="none" stroke="red" stroke-dasharray="4,3" points="{path(f)}">'
                 f'<title>f</title></polyline>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_flow(cfg: ExperimentConfig, out: Path) -> int:
    grid = cfg.grid()
    body = _body(cfg.body, grid, cfg)
    f = density(cfg.f, grid)
    fl = dict(cfg.flow)
    record_every = int(fl.pop("record_every", 1))
    nplot = int(fl.pop("plot_samples", 8))
    fc = FlowConfig(n=cfg.n, k=cfg.k, p=cfg.p, f=f, convention=cfg.convention(),
                    torsion_resolution=cfg.cartesian_resolution, **fl)
    snapshots = []
    status = "converged"
    try:
        res = run(body, fc, record_every=record_every,
                  callback=lambda st: snapshots.append((st.t, st.h.values.copy())))
    except StiffnessError as exc:
        _write(out, "flow_summary.json", _dump({"config": cfg.resolved(), "status": "stiff",
                                                "message": str(exc), "record": exc.record}))
        raise
    if not res.converged:
        status = "initial-only" if fc.t_max == 0 else "not-converged"
    final = res.final
    R_star = float(np.exp(fn.phi(final.h, f) / grid.integrate(f)))
    summary = {"config": cfg.resolved(), "status": status, "t": final.t, "steps": final.steps,
               "residual": final.residual, "eta": final.eta, "tau": res.tau, "phi": final.phi,
               "Q": final.Q, "phi_radius": R_star, "h_min": float(final.h.values.min()),
               "h_max": float(final.h.values.max()), "strictly_convex": bool(final.h.convex),
               "dQ_sign_counts": {str(s): sum(1 for r in res.series[1:] if r["dQ_sign"] == s) for s in (-1, 0, 1)}}
    _write(out, "flow.csv", res.to_csv(cfg.header()))
    _write(out, "flow_summary.json", _dump(summary))
    final_body = final.body.to_dict()
    final_body["config"] = cfg.resolved()
    _write(out, "final_body.json", _dump(final_body))
    if cfg.n == 2:
        idx = np.unique(np.linspace(0, len(snapshots) - 1, min(nplot, len(snapshots))).round().astype(int))
        _write(out, "flow.svg", _svg_polar(grid, [snapshots[i] for i in idx], f, cfg.header()))
    return EXIT_NOT_CONVERGED if status == "not-converged" else EXIT_OK


def _partition(spec: Optional[dict], cfg: ExperimentConfig):
    if not spec:
        return [], None
    kind = spec.get("kind")
    if kind == "hemispheres":
        axis = np.asarray(spec.get("axis", [0.0] * (cfg.n - 1) + [1.0]), dtype=float)
        return [lambda x, a=axis: np.atleast_2d(x) @ a >= 0], None
    if kind == "facets":
        normals = np.asarray(spec["normals"], dtype=float)
        return fn.facet_fans(normals), normals
    if kind == "caps":
        return [[(c["center"], c["angle"])] for c in spec["caps"]], None
    raise ConfigurationError(f"config field 'partition.kind': unknown kind {kind!r}")


def cmd_measure(cfg: ExperimentConfig, out: Path) -> int:
    grid = cfg.grid()
    body = _body(cfg.body, grid, cfg)
    regions, normals = _partition(cfg.partition, cfg)
    if cfg.p == cfg.n and cfg.partition:
        raise ConfigurationError("config field 'p': partition masses need p != n (only the total is defined)")
    sol = solve_khessian(body, cfg.k, cfg.cartesian_resolution)
    Q = fn.dual_rigidity_Q(body, sol, cfg.k, cfg.p)
    summary = {"config": cfg.resolved(), "Q": Q}
    if cfg.p != cfg.n:
        if normals is not None:
            meas = fn.polytope_measure(body, sol, cfg.k, cfg.p, normals)
            summary["atoms"] = [{"normal": v, "mass": m} for v, m in meas.atoms]
        else:
            meas = fn.dual_measure(body, sol, cfg.k, cfg.p, regions)
        summary["total"] = meas.total
        _write(out, "measure.csv", meas.to_csv(cfg.header()))
    _write(out, "measure_summary.json", _dump(summary))
    return EXIT_OK


def _field(spec, grid: SphereGrid) -> np.ndarray:
    if isinstance(spec, (int, float)):
        return np.full(grid.size, float(spec))
    return density(spec, grid) if ("constant" in spec or "caps" in spec) else \
        fourier_support(grid, spec.get("a0", 0.0), spec.get("cos", ()), spec.get("sin", ()))


def cmd_variation_audit(cfg: ExperimentConfig, out: Path) -> int:
    grid = cfg.grid()
    body = _body(cfg.body, grid, cfg)
    second = _body(cfg.second_body, grid, cfg) if cfg.second_body else None
    third = _body(cfg.third_body, grid, cfg) if cfg.third_body else None
    res = cfg.cartesian_resolution
    records = []
    for i, a in enumerate(cfg.audits or [{"kind": "hull-rigidity", "pert": 1.0}]):
        kind = a.get("kind")
        k, p = a.get("k", cfg.k), a.get("p", cfg.p)

        def need_second():
            if second is None:
                raise ConfigurationError(f"config field 'audits[{i}]': {kind} needs 'second_body'")
        if kind == "hull-rigidity":
            records.append(var.audit_hull_rigidity(body, _field(a.get("pert", 1.0), grid), k, res))
        elif kind == "wulff-measure":
            records.append(var.audit_wulff_measure(body, _field(a.get("pert", 1.0), grid), k, p, res))
        elif kind in ("scaling-T", "scaling-Q"):
            records.append(var.audit_scaling(body, kind[-1], k, p, res))
        elif kind == "radial-combination":
            need_second()
            records.append(var.audit_radial_combination(body, second, k, p, res))
        elif kind in ("interp-linear", "interp-log"):
            need_second()
            records.append(var.audit_interpolation(body, second, k, p, kind.split("-")[1], res))
        elif kind == "mixed-interp":
            need_second()
            if third is None:
                raise ConfigurationError(f"config field 'audits[{i}]': mixed-interp needs 'third_body'")
            records.append(var.audit_mixed_interpolation(body, second, third, k, p, res))
        else:
            raise ConfigurationError(f"config field 'audits[{i}].kind': unknown audit {kind!r}")
    _write(out, "audits.csv", var.audit_csv(records, cfg.header()))
    lines = [cfg.header(), ""]
    for r in records:
        flag = "" if r.reliable else "  [FD unreliable]"
        alt = "" if np.isnan(r.alt) else f", homogeneity value {r.alt:.8g}"
        lines.append(f"{r.audit} (k={r.k}, p={r.p:g}): measured {r.fd:.8g} +- {r.fd_error:.2g}, "
                     f"claimed {r.claimed:.8g}{alt}, ratio {r.ratio:.6g}{flag}")
    _write(out, "audits_summary.txt", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_crofton_audit(cfg: ExperimentConfig, out: Path) -> int:
    grid = cfg.grid()
    rng = np.random.default_rng(cfg.seed)
    bodies = [("body", _body(cfg.body, grid, cfg))]
    bodies += [(f"random{i}", random_perturbed_ball(grid, rng, cfg.amplitude, cfg.convention()))
               for i in range(cfg.random_bodies)]
    rows = []
    for name, b in bodies:
        for conv, r in fn.crofton_audit(b, cfg.k).items():
            rows.append([name, conv, r["lhs"], r["rhs"], r["ratio"], r["discrepancy"]])
    _write(out, "crofton.csv", _csv_text(cfg.header(), ["body", "convention", "lhs", "rhs", "ratio",
                                                        "discrepancy"], rows))
    return EXIT_OK


HANDLERS = {"solve-torsion": cmd_solve_torsion, "flow": cmd_flow, "measure": cmd_measure,
            "variation-audit": cmd_variation_audit, "crofton-audit": cmd_crofton_audit}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="torlab", description="k-torsional rigidity flow laboratory")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path, help="JSON experiment config")
    ap.add_argument("--out", type=Path, default=None, help="output directory (default: config 'out' or .)")
    ap.add_argument("--seed", type=int, default=None, help="seed for random body suites")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(path: Path, command: str, seed: Optional[int] = None):
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    return ExperimentConfig.from_dict(raw, command, seed), raw.get("out")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out_default = load_config(args.config, args.command, args.seed)
        out = args.out or Path(out_default or ".")
        return HANDLERS[args.command](cfg, out)
    except ConfigurationError as exc:
        print(f"torlab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, StiffnessError) as exc:
        print(f"torlab: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except TorlabError as exc:
        print(f"torlab: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
