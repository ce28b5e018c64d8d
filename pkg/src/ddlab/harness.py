"""Experiment harness: flat-file configs, runs, oracle checks, outputs.

A config is a plain text file of ``key = value`` lines (# comments allowed)
that pins down one decomposed solve: geometry, material pattern, boundary
conditions, solver family, and every algorithmic knob. Runs are validated
against a sparse direct oracle before they count. Outputs are a CSV
residual history and a dependency-free SVG convergence plot, both
deterministic for a given config.
"""

from __future__ import annotations

import hashlib
import itertools
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (
    MaterialField, build_problem, face_pressure_load, nodal_face_load,
)
from .bdd import solve_bdd
from .feti import solve_feti
from .mesh import GridSpec, build_structured_mesh


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or inconsistent combinations."""


class OracleError(RuntimeError):
    """Raised when the direct solve cannot be trusted as a reference."""


_CHOICES = {
    "physics": ("scalar", "elasticity"),
    "material": ("uniform", "checkerboard", "layers"),
    "load_kind": ("face_pressure", "nodal"),
    "solver": ("feti", "bdd"),
    "splitting": ("none", "classical", "condensed"),
    "initialization": ("standard", "new"),
    "projector": ("identity", "superlumped", "dirichlet"),
    "preconditioner": ("dirichlet", "lumped"),
    "scaling": ("multiplicity", "stiffness"),
    "redundancy": ("non-redundant", "fully-redundant"),
    "raw_assignment": ("owner", "shared"),
    "stopping": ("global", "interface"),
}

_INT_KEYS = ("dimension", "max_iterations", "seed")
_FLOAT_KEYS = ("element_size", "slant_angle", "poisson", "load_magnitude",
               "tol", "oracle_tol")
_INT_TUPLE_KEYS = ("elements_per_axis", "subdomains_per_axis")
_FLOAT_TUPLE_KEYS = ("material_values", "load_direction")
_STR_TUPLE_KEYS = ("clamp_face",)
_OPTIONAL_KEYS = ("layer_axis", "load_direction")


@dataclass(frozen=True)
class ExperimentConfig:
    """One fully pinned-down experiment."""

    dimension: int = 2
    physics: str = "scalar"
    elements_per_axis: tuple = (8,)
    subdomains_per_axis: tuple = (2,)
    element_size: float = 1.0
    slant_angle: float = 0.0
    material: str = "uniform"
    material_values: tuple = (1.0,)
    poisson: float = 0.3
    layer_axis: int | None = None
    clamp_face: tuple = ("-x",)
    load_kind: str = "face_pressure"
    load_face: str = "+x"
    load_magnitude: float = 1.0
    load_direction: tuple | None = None
    solver: str = "feti"
    splitting: str = "none"
    initialization: str = "new"
    projector: str = "dirichlet"
    preconditioner: str = "dirichlet"
    scaling: str = "stiffness"
    redundancy: str = "non-redundant"
    raw_assignment: str = "owner"
    stopping: str = "global"
    tol: float = 1e-6
    max_iterations: int = 500
    oracle_tol: float = 1e-8
    seed: int = 0
    label: str = ""

    def validate(self):
        if self.dimension not in (2, 3):
            raise ConfigError(f"dimension must be 2 or 3, got {self.dimension}")
        for key, allowed in _CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(
                    f"{key} must be one of {', '.join(allowed)}; "
                    f"got {getattr(self, key)!r}")
        if self.tol <= 0 or self.oracle_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if len(self.material_values) not in (1, 2):
            raise ConfigError("material_values takes one or two numbers")
        if not all(v > 0 for v in self.material_values):
            raise ConfigError("material values must be positive")
        return self

    def canonical(self) -> str:
        parts = []
        for f in fields(self):
            if f.name == "label":
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            parts.append(f"{f.name}={v}")
        return "; ".join(parts)

    def digest(self) -> str:
        return hashlib.sha1(self.canonical().encode()).hexdigest()[:8]

    def name(self) -> str:
        return self.label or f"{self.solver}-{self.digest()}"

    def with_overrides(self, **raw) -> "ExperimentConfig":
        """Apply string or typed overrides; strings go through the parser."""
        typed = {}
        for key, value in raw.items():
            if key not in {f.name for f in fields(self)}:
                raise ConfigError(f"unknown config key {key!r}")
            typed[key] = _parse_value(key, value) if isinstance(value, str) else value
        return replace(self, **typed).validate()


def _parse_value(key, text):
    text = text.strip()
    if key in _OPTIONAL_KEYS and text.lower() in ("none", ""):
        return None
    try:
        if key in _INT_KEYS:
            return int(text)
        if key == "layer_axis":
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
        if key in _INT_TUPLE_KEYS:
            return tuple(int(p) for p in text.split(","))
        if key in _FLOAT_TUPLE_KEYS:
            return tuple(float(p) for p in text.split(","))
        if key in _STR_TUPLE_KEYS:
            return tuple(p.strip() for p in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key} = {text!r}: {exc}") from exc
    return text


def load_config(path) -> ExperimentConfig:
    """Read a flat ``key = value`` config file."""
    known = {f.name for f in fields(ExperimentConfig())}
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {body!r}")
            key, _, text = body.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(key, text)
    return ExperimentConfig(**values).validate()


def _scalar_or_tuple(t):
    return t[0] if len(t) == 1 else t


def build_from_config(config: ExperimentConfig):
    """Mesh, assemble, and decompose the problem a config describes."""
    config.validate()
    spec = GridSpec(
        dimension=config.dimension,
        elements_per_axis=_scalar_or_tuple(config.elements_per_axis),
        subdomains_per_axis=_scalar_or_tuple(config.subdomains_per_axis),
        element_size=config.element_size,
        slant_angle=config.slant_angle,
    )
    mesh = build_structured_mesh(spec)
    mv = config.material_values
    material = MaterialField(
        pattern=config.material, value=mv[0], value2=mv[-1],
        layer_axis=config.layer_axis, poisson=config.poisson,
    )
    direction = np.asarray(config.load_direction) if config.load_direction else None
    loader = face_pressure_load if config.load_kind == "face_pressure" else nodal_face_load
    load = loader(mesh, config.load_face, config.load_magnitude,
                  config.physics, direction=direction)
    return build_problem(
        spec, physics=config.physics, material=material,
        clamp_faces=config.clamp_face, load=load,
        redundancy=config.redundancy, raw_assignment=config.raw_assignment,
        mesh=mesh,
    )


def direct_oracle(problem, backward_tol=1e-12, max_condition=1e13):
    """Sparse direct reference solution with a trust check.

    Factorizes the assembled operator, applies one step of iterative
    refinement, and rejects the result unless the normwise backward error
    ||K u - f|| / (||K||_1 ||u|| + ||f||) is at most ``backward_tol``.
    A singular operator can sneak past that test alone: the factorization
    survives on a roundoff pivot and u explodes until K u rounds back to f,
    which makes the normwise denominator arbitrarily forgiving. A 1-norm
    condition estimate from the same factorization catches this; anything
    above ``max_condition`` is rejected as numerically singular.
    Returns (u, backward_error).
    """
    K = problem.K_global.tocsc()
    f = problem.f_global
    try:
        lu = spla.splu(K)
    except RuntimeError as exc:
        raise OracleError(f"direct factorization failed: {exc}") from exc
    u = lu.solve(f)
    u = u + lu.solve(f - K @ u)
    norm_K = spla.norm(K, 1) if K.shape[0] else 0.0
    if K.shape[0] > 1:
        inv_op = spla.LinearOperator(
            K.shape, matvec=lu.solve, rmatvec=lambda b: lu.solve(b, trans="T"))
        cond_est = float(spla.onenormest(inv_op)) * norm_K
        if not np.isfinite(cond_est) or cond_est > max_condition:
            raise OracleError(
                f"estimated condition number {cond_est:.3e} exceeds "
                f"{max_condition:.1e}; the assembled operator is numerically "
                "singular (missing constraints?)")
    denom = norm_K * np.linalg.norm(u) + np.linalg.norm(f)
    backward = np.linalg.norm(K @ u - f) / denom if denom > 0 else 0.0
    if not np.isfinite(backward) or backward > backward_tol:
        raise OracleError(
            f"direct solve backward error {backward:.3e} exceeds {backward_tol:.1e}; "
            "reference solution rejected")
    return u, float(backward)


@dataclass
class RunRecord:
    """One validated experiment: config, solver result, oracle comparison."""

    config: ExperimentConfig
    problem: object
    result: object
    oracle_u: np.ndarray
    oracle_backward_error: float
    oracle_error: float
    validated: bool
    wall_seconds: float

    @property
    def iterations(self):
        return self.result.iterations

    @property
    def history(self):
        return self.result.history


def run_experiment(config: ExperimentConfig, problem=None) -> RunRecord:
    """Build, solve, and validate one experiment against the oracle."""
    config.validate()
    t0 = time.perf_counter()
    if problem is None:
        problem = build_from_config(config)
    if config.solver == "feti":
        result = solve_feti(
            problem,
            splitting=config.splitting,
            initialization=config.initialization,
            projector=config.projector,
            preconditioner=config.preconditioner,
            scaling=config.scaling,
            tol=config.tol,
            maxit=config.max_iterations,
            stopping=config.stopping,
        )
    else:
        result = solve_bdd(
            problem, tol=config.tol, maxit=config.max_iterations,
            stopping=config.stopping,
        )
    u_star, backward = direct_oracle(problem)
    scale = np.linalg.norm(u_star)
    err = np.linalg.norm(result.u_global - u_star) / scale if scale > 0 else \
        np.linalg.norm(result.u_global)
    validated = bool(result.converged and err <= config.oracle_tol)
    return RunRecord(
        config=config, problem=problem, result=result, oracle_u=u_star,
        oracle_backward_error=backward, oracle_error=float(err),
        validated=validated, wall_seconds=time.perf_counter() - t0,
    )


def write_history_csv(path, record_or_history):
    """Residual history as CSV: iter, interface and global residuals, time."""
    history = getattr(record_or_history, "history", record_or_history)
    with open(path, "w") as fh:
        fh.write("iter,interface_residual,global_residual,seconds\n")
        for row in history.rows:
            fh.write("%d,%.12e,%.12e,%.12e\n" % (
                row.iteration, row.interface_residual,
                row.global_residual, row.seconds))
    return path


_SVG_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd",
               "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def render_convergence_svg(path, curves, title="convergence",
                           ylabel="relative residual"):
    """Hand-rolled log-scale convergence plot, no plotting dependency.

    ``curves`` is a list of (label, residuals) pairs; iteration counts are
    implicit (0, 1, ...). Output is deterministic for fixed input.
    """
    width, height = 720.0, 460.0
    ml, mr, mt, mb = 70.0, 180.0, 40.0, 50.0
    pw, ph = width - ml - mr, height - mt - mb

    cleaned = [(label, [max(float(r), 1e-18) for r in res])
               for label, res in curves if len(res)]
    if not cleaned:
        raise ValueError("no curves to plot")
    xmax = max(len(res) - 1 for _, res in cleaned)
    xmax = max(xmax, 1)
    lo = min(min(np.log10(res)) for _, res in cleaned)
    hi = max(max(np.log10(res)) for _, res in cleaned)
    lo, hi = np.floor(lo) - 0.2, np.ceil(hi) + 0.2

    def X(i):
        return ml + pw * i / xmax

    def Y(r):
        return mt + ph * (hi - np.log10(r)) / (hi - lo)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="white"/>',
        f'<text x="{ml + pw / 2:.1f}" y="24" text-anchor="middle" '
        f'font-family="monospace" font-size="14">{title}</text>',
    ]
    # axes box and ticks
    out.append(f'<rect x="{ml:.1f}" y="{mt:.1f}" width="{pw:.1f}" height="{ph:.1f}" '
               'fill="none" stroke="black" stroke-width="1"/>')
    for p in range(int(np.floor(lo)), int(np.ceil(hi)) + 1):
        y = Y(10.0 ** p)
        if y < mt - 1 or y > mt + ph + 1:
            continue
        out.append(f'<line x1="{ml:.1f}" y1="{y:.1f}" x2="{ml + pw:.1f}" y2="{y:.1f}" '
                   'stroke="#dddddd" stroke-width="0.7"/>')
        out.append(f'<text x="{ml - 8:.1f}" y="{y + 4:.1f}" text-anchor="end" '
                   f'font-family="monospace" font-size="11">1e{p}</text>')
    n_xticks = min(xmax, 8)
    for t in range(n_xticks + 1):
        i = round(xmax * t / n_xticks)
        x = X(i)
        out.append(f'<line x1="{x:.1f}" y1="{mt + ph:.1f}" x2="{x:.1f}" '
                   f'y2="{mt + ph + 5:.1f}" stroke="black" stroke-width="1"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 20:.1f}" text-anchor="middle" '
                   f'font-family="monospace" font-size="11">{i}</text>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12:.1f}" text-anchor="middle" '
               'font-family="monospace" font-size="12">iteration</text>')
    out.append(f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" '
               f'font-family="monospace" font-size="12" '
               f'transform="rotate(-90 18 {mt + ph / 2:.1f})">{ylabel}</text>')

    for c, (label, res) in enumerate(cleaned):
        color = _SVG_COLORS[c % len(_SVG_COLORS)]
        points = " ".join(f"{X(i):.2f},{Y(r):.2f}" for i, r in enumerate(res))
        out.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                   'stroke-width="1.6"/>')
        ly = mt + 16 + 18 * c
        out.append(f'<line x1="{ml + pw + 10:.1f}" y1="{ly - 4:.1f}" '
                   f'x2="{ml + pw + 34:.1f}" y2="{ly - 4:.1f}" '
                   f'stroke="{color}" stroke-width="1.6"/>')
        out.append(f'<text x="{ml + pw + 40:.1f}" y="{ly:.1f}" '
                   f'font-family="monospace" font-size="11">{label[:24]}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
    return path


@dataclass
class ComparisonReport:
    """Side-by-side runs of one base config with varied knobs."""

    base: ExperimentConfig
    varied_keys: tuple
    records: list = field(default_factory=list)

    def rows(self):
        out = []
        for rec in self.records:
            varied = ",".join(
                f"{k}={getattr(rec.config, k)}" for k in self.varied_keys)
            init = rec.result.history.global_residuals[0] \
                if rec.result.history.rows else np.nan
            out.append({
                "label": varied or rec.config.name(),
                "iterations": rec.iterations,
                "converged": rec.result.converged,
                "validated": rec.validated,
                "initial_global_residual": init,
                "oracle_error": rec.oracle_error,
            })
        return out

    def table(self) -> str:
        rows = self.rows()
        header = f"{'run':40s} {'iters':>6s} {'ok':>3s} {'initial_res':>12s} {'oracle_err':>11s}"
        lines = [header, "-" * len(header)]
        for r in rows:
            lines.append(
                f"{r['label'][:40]:40s} {r['iterations']:6d} "
                f"{'yes' if r['validated'] else 'NO':>3s} "
                f"{r['initial_global_residual']:12.3e} {r['oracle_error']:11.3e}")
        return "\n".join(lines)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("label,iterations,converged,validated,"
                     "initial_global_residual,oracle_error\n")
            for r in self.rows():
                fh.write("%s,%d,%d,%d,%.12e,%.12e\n" % (
                    r["label"], r["iterations"], r["converged"],
                    r["validated"], r["initial_global_residual"],
                    r["oracle_error"]))
        return path


def run_comparison(base: ExperimentConfig, vary: dict) -> ComparisonReport:
    """Run the cartesian product of varied keys over one base config.

    ``vary`` maps config keys to lists of raw (string or typed) values. The
    problem is rebuilt per combination only when a geometry or assembly key
    changes; solver-only sweeps reuse one problem.
    """
    keys = tuple(vary.keys())
    report = ComparisonReport(base=base, varied_keys=keys)
    assembly_keys = {f.name for f in fields(ExperimentConfig())} - {
        "solver", "splitting", "initialization", "projector", "preconditioner",
        "scaling", "stopping", "tol", "max_iterations", "oracle_tol", "label",
    }
    solver_only = not (set(keys) & assembly_keys)
    shared_problem = build_from_config(base) if solver_only else None
    for combo in itertools.product(*vary.values()):
        cfg = base.with_overrides(**dict(zip(keys, combo)))
        report.records.append(run_experiment(cfg, problem=shared_problem))
    return report
