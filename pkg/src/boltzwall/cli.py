"""Configuration, experiment orchestration, and report emission.

Configuration is flat INI-style text (sections of key = value lines; see
README for the grammar).  Identical config + seed + thread count produces
byte-identical verify.json and norms.csv: outputs carry the config hash
and no timestamps (wall-clock timings go to summary.txt only).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import WallTemperature
from .collision import KernelParams
from .errors import ConfigError
from .geometry import ConvexDomain, ellipsoid, unit_ball
from .solver import (
    Field,
    NormSeries,
    PhaseGrid,
    fit_decay_rate,
    prepare_initial_condition,
    steady_solve,
    transient_solve,
    w1p_norm,
    weighted_gradient_norm,
)
from .verify import LemmaCheck, run_all_checks

CSV_SCHEMA = 1
JSON_SCHEMA = 1

_DEFAULTS = {
    "domain": {"kind": "ball", "semi_axes": "1.0 1.0 1.0"},
    "wall": {"profile": "isothermal", "epsilon": "0.0"},
    "kernel": {"varrho": "0.125", "varrho_tilde": "0.0625", "theta": "0.125",
               "theta_tilde": "0.015625", "c_k1": "1.0", "c_k2": "4.0"},
    "grid": {"interior": "320", "boundary": "160", "v_nodes": "10",
             "v_max": "5.0"},
    "solver": {"tol_fp": "1e-10", "max_iter": "400", "dt": "0.02",
               "horizon": "6.0", "n_s": "6", "include_gamma": "false",
               "record_dt": "0.25"},
    "transient": {"amplitude": "0.01"},
    "w1p": {"p": "2.5"},
    "verify": {"scale": "1.0"},
    "run": {"seed": "12345", "threads": "1", "out": "./out"},
}


@dataclass
class RunConfig:
    """Validated run configuration with its canonical text and hash."""

    domain_kind: str
    semi_axes: tuple
    wall_profile: str
    epsilon: float
    kernel: KernelParams
    n_interior: int
    n_boundary: int
    n_v: int
    v_max: float
    tol_fp: float
    max_iter: int
    dt: float
    horizon: float
    n_s: int
    include_gamma: bool
    record_dt: float
    amplitude: float
    w1p_p: float
    verify_scale: float
    seed: int
    threads: int
    out: str
    canonical: str = field(default="", repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()[:16]

    def make_domain(self) -> ConvexDomain:
        if self.domain_kind == "ball":
            return unit_ball()
        return ellipsoid(*self.semi_axes)

    def make_wall(self, domain: ConvexDomain) -> WallTemperature:
        return WallTemperature(domain=domain, profile=self.wall_profile,
                               epsilon=self.epsilon)

    def make_grid(self, domain: ConvexDomain) -> PhaseGrid:
        return PhaseGrid.build(domain, n_interior=self.n_interior,
                               n_boundary=self.n_boundary, n_v=self.n_v,
                               v_max=self.v_max, seed=self.seed)


def _get(parser: configparser.ConfigParser, section: str, key: str, cast,
         check=None, describe: str = "") -> object:
    raw = parser.get(section, key)
    try:
        val = cast(raw)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from exc
    if check is not None and not check(val):
        raise ConfigError(f"{section}.{key}: {describe} (got {raw})")
    return val


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(raw)


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Read the INI config, apply defaults and CLI overrides, validate."""
    parser = configparser.ConfigParser()
    parser.read_dict(_DEFAULTS)
    if path is not None:
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
    for (sec, key), val in (overrides or {}).items():
        if not parser.has_section(sec):
            parser.add_section(sec)
        parser.set(sec, key, str(val))

    for sec in parser.sections():
        if sec not in _DEFAULTS:
            raise ConfigError(f"{sec}: unknown section")
        for key in parser[sec]:
            if key not in _DEFAULTS[sec]:
                raise ConfigError(f"{sec}.{key}: unknown key")

    axes = tuple(float(t) for t in parser.get("domain", "semi_axes").split())
    if len(axes) != 3 or min(axes) <= 0:
        raise ConfigError("domain.semi_axes: need three positive numbers")
    kind = _get(parser, "domain", "kind", str,
                lambda s: s in ("ball", "ellipsoid"), "must be ball or ellipsoid")
    profile = _get(parser, "wall", "profile", str,
                   lambda s: s in ("isothermal", "linear_z"),
                   "must be isothermal or linear_z")
    eps = _get(parser, "wall", "epsilon", float,
               lambda x: 0.0 <= x < 0.1, "must satisfy 0 <= epsilon < 0.1")
    if profile == "isothermal" and eps != 0.0:
        raise ConfigError("wall.epsilon: isothermal wall requires epsilon = 0")
    try:
        kernel = KernelParams(
            varrho=_get(parser, "kernel", "varrho", float, lambda x: x > 0, "positive"),
            varrho_tilde=_get(parser, "kernel", "varrho_tilde", float,
                              lambda x: x > 0, "positive"),
            theta=_get(parser, "kernel", "theta", float, lambda x: x > 0, "positive"),
            theta_tilde=_get(parser, "kernel", "theta_tilde", float,
                             lambda x: x > 0, "positive"),
            c_k1=_get(parser, "kernel", "c_k1", float, lambda x: x > 0, "positive"),
            c_k2=_get(parser, "kernel", "c_k2", float, lambda x: x > 0, "positive"),
        )
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from exc

    cfg = RunConfig(
        domain_kind=kind, semi_axes=axes, wall_profile=profile, epsilon=eps,
        kernel=kernel,
        n_interior=_get(parser, "grid", "interior", int, lambda x: x >= 16, ">= 16"),
        n_boundary=_get(parser, "grid", "boundary", int, lambda x: x >= 16, ">= 16"),
        n_v=_get(parser, "grid", "v_nodes", int, lambda x: 4 <= x <= 40,
                 "between 4 and 40"),
        v_max=_get(parser, "grid", "v_max", float, lambda x: x > 0, "positive"),
        tol_fp=_get(parser, "solver", "tol_fp", float, lambda x: x > 0, "positive"),
        max_iter=_get(parser, "solver", "max_iter", int, lambda x: x > 0, "positive"),
        dt=_get(parser, "solver", "dt", float, lambda x: x > 0, "positive"),
        horizon=_get(parser, "solver", "horizon", float, lambda x: x > 0, "positive"),
        n_s=_get(parser, "solver", "n_s", int, lambda x: x >= 2, ">= 2"),
        include_gamma=_get(parser, "solver", "include_gamma", _parse_bool),
        record_dt=_get(parser, "solver", "record_dt", float, lambda x: x > 0, "positive"),
        amplitude=_get(parser, "transient", "amplitude", float,
                       lambda x: 0 < x < 1, "in (0, 1)"),
        w1p_p=_get(parser, "w1p", "p", float, lambda x: x > 0, "must be positive"),
        verify_scale=_get(parser, "verify", "scale", float, lambda x: x > 0, "positive"),
        seed=_get(parser, "run", "seed", int, lambda x: x >= 0, "nonnegative"),
        threads=_get(parser, "run", "threads", int, lambda x: x >= 1, ">= 1"),
        out=parser.get("run", "out"),
    )
    buf = io.StringIO()
    for sec in sorted(parser.sections()):
        buf.write(f"[{sec}]\n")
        for key in sorted(parser[sec]):
            if (sec, key) == ("run", "out"):
                continue  # the output directory is an override, not config
            buf.write(f"{key} = {parser.get(sec, key)}\n")
    cfg.canonical = buf.getvalue()
    return cfg


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(x: float) -> str:
    return f"{x:.12e}"


def write_norms_csv(path: Path, series: NormSeries, cfg: RunConfig) -> None:
    cols = ["t", "sup_wf", "sup_bdry_wf", "weighted_c1", "w1p_p2", "w1p_p25", "mass"]
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# schema={CSV_SCHEMA} config_hash={cfg.config_hash} seed={cfg.seed}\n")
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(series.ts):
            row = [_fmt(float(t))] + [_fmt(float(series.columns[c][i])) for c in cols[1:]]
            fh.write(",".join(row) + "\n")


def write_verify_json(path: Path, checks: list[LemmaCheck], cfg: RunConfig) -> None:
    doc = {
        "schema": JSON_SCHEMA,
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "thresholds": {
            "divergence_last_over_first": 1.5,
            "w1p_tail_ratio": 1.10,
            "obstruction_increment_band": 0.30,
            "nonlocal_stability_drift": 0.25,
            "nonlocal_truncation_gain": 0.25,
        },
        "conventions": {
            "chart_patch_radius": 0.5,
            "velocity_cutoff": 10.0,
            "sup_norms_over": "|v| <= velocity_cutoff",
        },
        "records": [c.as_record() for c in checks],
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _summary_table(rows: list[tuple[str, str, str]]) -> str:
    width = max(len(r[0]) for r in rows) + 2
    out = []
    for name, status, info in rows:
        out.append(f"{name:<{width}}{status:<8}{info}")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# experiments


def make_initial_perturbation(grid: PhaseGrid, tw: WallTemperature,
                              params: KernelParams, amplitude: float):
    """Smooth, boundary-compatible, mass-neutral initial perturbation with
    weighted sup norm equal to `amplitude`."""
    X = grid.points
    V = grid.v_nodes
    shape = X[:, 2]
    raw = shape[:, None] * np.exp(-np.einsum("vi,vi->v", V, V))[None, :]
    values, resid = prepare_initial_condition(grid, tw, params, raw)
    fld = Field(grid=grid, values=values)
    sup = fld.weighted_sup(params)
    fld.values *= amplitude / sup
    return fld, resid


def run_steady(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    domain = cfg.make_domain()
    tw = cfg.make_wall(domain)
    grid = cfg.make_grid(domain)
    t0 = time.perf_counter()
    fld, rep = steady_solve(grid, tw, cfg.kernel, include_gamma=cfg.include_gamma,
                            tol_fp=cfg.tol_fp, max_iter=cfg.max_iter, n_s=cfg.n_s)
    wall_t = time.perf_counter() - t0
    sup = fld.weighted_sup(cfg.kernel)
    wc1, excl = weighted_gradient_norm(fld, grid, cfg.kernel)
    w1p = w1p_norm(fld, grid, cfg.w1p_p)
    lines = [
        f"steady solve: {rep.iterations} iterations, converged={rep.converged}, "
        f"{wall_t:.1f}s",
        f"  ||w f_s||_inf      = {sup:.6e}",
        f"  ||wt a grad f_s||  = {wc1:.6e}  (grazing exclusion {excl:.2%})",
        f"  W1p norm (p={cfg.w1p_p:g})  = {w1p:.6e}",
    ]
    if cfg.wall_profile == "isothermal":
        lines.append("  isothermal wall: trivial fixed point f_s = 0 "
                     f"(residual {rep.residuals[0]:.2e} at first iterate)")
    status = 0 if rep.converged else 1
    return status, lines


def run_transient(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    domain = cfg.make_domain()
    tw = cfg.make_wall(domain)
    grid = cfg.make_grid(domain)
    f0, resid = make_initial_perturbation(grid, tw, cfg.kernel, cfg.amplitude)
    t0 = time.perf_counter()
    series, final, rep = transient_solve(grid, tw, cfg.kernel, f0,
                                         horizon=cfg.horizon, dt=cfg.dt,
                                         record_dt=cfg.record_dt,
                                         include_gamma=cfg.include_gamma)
    wall_t = time.perf_counter() - t0
    write_norms_csv(out / "norms.csv", series, cfg)
    window = (min(1.0, cfg.horizon / 2), cfg.horizon)
    lam, r2 = fit_decay_rate(series, "sup_wf", window=window)
    lines = [
        f"transient solve: {rep.steps} steps of dt={cfg.dt:g}, {wall_t:.1f}s",
        f"  compatibility projection residual = {resid:.3e}",
        f"  fitted decay rate on {window}: lambda = {lam:.4f} (r^2 = {r2:.4f})",
        f"  final ||w f||_inf = {series.columns['sup_wf'][-1]:.6e}",
        f"  wrote {out / 'norms.csv'}",
    ]
    return (0 if lam > 0 else 1), lines


def run_verify(cfg: RunConfig, out: Path, lemma: str | None = None) -> tuple[int, list[str]]:
    domain = cfg.make_domain()
    t0 = time.perf_counter()
    checks = run_all_checks(domain, cfg.kernel, seed=cfg.seed, threads=cfg.threads,
                            scale=cfg.verify_scale)
    wall_t = time.perf_counter() - t0
    if lemma is not None:
        checks = [c for c in checks if c.lemma_id == lemma]
        if not checks:
            raise ConfigError(f"run.lemma: unknown lemma id {lemma!r}")
    write_verify_json(out / "verify.json", checks, cfg)
    rows = [(c.lemma_id, "pass" if c.passed else "FAIL",
             f"trend={c.trend} levels={len(c.levels)}") for c in checks]
    lines = [f"verification: {len(checks)} lemma records in {wall_t:.1f}s",
             _summary_table(rows),
             f"wrote {out / 'verify.json'}"]
    status = 0 if all(c.passed for c in checks) else 1
    return status, lines


def run_report(cfg: RunConfig, out: Path) -> tuple[int, list[str]]:
    lines = ["report over existing artifacts:"]
    status = 0
    vpath = out / "verify.json"
    if vpath.exists():
        doc = json.loads(vpath.read_text())
        rows = [(r["lemma_id"], "pass" if r["passed"] else "FAIL", r["trend"])
                for r in doc["records"]]
        lines.append(_summary_table(rows))
        if not all(r["passed"] for r in doc["records"]):
            status = 1
    else:
        lines.append("  (no verify.json)")
    npath = out / "norms.csv"
    if npath.exists():
        body = npath.read_text().splitlines()
        lines.append(f"  norms.csv: {len(body) - 2} samples, header {body[0]!r}")
    else:
        lines.append("  (no norms.csv)")
    return status, lines


def run(cfg: RunConfig, experiment: str, lemma: str | None = None) -> int:
    """Execute one experiment; returns the process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    np.random.seed(cfg.seed % 2**32)  # legacy global seeding for any strays
    runner = {"steady": run_steady, "transient": run_transient,
              "verify": run_verify, "report": run_report}.get(experiment)
    if runner is None:
        raise ConfigError(f"run.experiment: unknown experiment {experiment!r}")
    if experiment == "verify":
        status, lines = runner(cfg, out, lemma=lemma)
    else:
        status, lines = runner(cfg, out)
    summary = [f"boltzwall {experiment}", f"config_hash = {cfg.config_hash}",
               f"seed = {cfg.seed}  threads = {cfg.threads}", ""] + lines + [
        "", f"exit status: {status}"]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return status


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="boltzwall",
                                 description="kinetic toolkit experiments")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in ("steady", "transient", "verify", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--lemma", type=str, default=None)
    args = ap.parse_args(argv)
    overrides = {}
    if args.out is not None:
        overrides[("run", "out")] = args.out
    if args.seed is not None:
        overrides[("run", "seed")] = args.seed
    if args.threads is not None:
        overrides[("run", "threads")] = args.threads
    try:
        cfg = load_config(args.config, overrides)
        return run(cfg, args.experiment, lemma=args.lemma)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
