"""Command-line front end.

Subcommands dispatch scenario configs to the analysis operations and write
deterministic CSV/JSON outputs:

* ``within-sim``     one within-host infection trajectory
* ``bifurcate``      equilibrium branches, fold/oscillation-onset events,
                     and periodic-orbit amplitudes over a parameter sweep
* ``manifold``       slow-manifold curve, status nullcline, and fold point
* ``r0``             reproduction number with its route breakdown
* ``equilibria``     endemic equilibrium values and stationarity residuals
* ``epi-sim``        structured transport simulation
* ``renewal-check``  renewal reformulation vs. the transport solver
* ``spectral``       infection-free growth rate and endemic residual scan
* ``plot-data``      gnuplot-ready data blocks from earlier runs

Every run writes ``summary.json`` (all defaults echoed, full-precision
numbers) and ``manifest.json`` (sha256 of each written file; the manifest
itself is not self-listed). Identical configs produce byte-identical
outputs. The ``IMMUNOEPI_LOG`` environment variable sets log verbosity.
Exit codes: 0 success, 2 invalid config or arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, bifurcation, between_host, within_host
from .config import ConfigError, ScenarioConfig, load_scenario
from .numerics import NumericsError, QuadratureSpec

__all__ = ["main", "run", "emit_plot_data", "RunOutput"]

log = logging.getLogger("immunoepi")

SPECTRAL_SCAN_MAX = 50.0
SPECTRAL_SCAN_STEP = 1e-2
QUAD_DEFAULT = QuadratureSpec(rule="simpson", n=64)


@dataclass
class RunOutput:
    """What a subcommand produced: directory, file checksums, summary."""

    out_dir: Path
    files: dict[str, str]
    summary: dict


# ---------------------------------------------------------------------------
# deterministic writers


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _finalize(out_dir: Path, summary: dict) -> RunOutput:
    """Write summary.json, then manifest.json over everything else."""
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files = {
        p.name: _sha256(p)
        for p in sorted(out_dir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "files": [
            {"name": name, "sha256": digest, "bytes": (out_dir / name).stat().st_size}
            for name, digest in files.items()
        ],
        "note": "manifest.json is excluded from its own listing",
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunOutput(out_dir=out_dir, files=files, summary=summary)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    return obj


def _between_echo(cfg: ScenarioConfig) -> dict:
    p = cfg.between
    return {
        "r": p.r, "mu1": p.mu1, "mu3": p.mu3, "beta_h": p.beta_h,
        "beta_e": p.beta_e, "rho": p.rho, "sigma": p.sigma,
        "omega0": p.omega0, "a_bar": p.a_bar,
        "functions": {
            name: {"family": fn.family, **_jsonable(fn.describe)}
            for name, fn in (("mu2", p.mu2), ("xi", p.xi), ("P", p.P), ("g", p.g))
        },
        "quadrature": {"rule": QUAD_DEFAULT.rule, "n": QUAD_DEFAULT.n},
    }


def _within_echo(cfg: ScenarioConfig) -> dict:
    p = cfg.within
    return {
        "Lambda": p.Lambda, "mu": p.mu, "alpha": p.alpha, "gamma": p.gamma,
        "delta": p.delta, "epsilon": p.epsilon, "kappa": p.kappa, "c": p.c,
    }


# ---------------------------------------------------------------------------
# subcommands


def _cmd_within_sim(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("within_host")
    params = cfg.within
    t_max = cfg.t_max if cfg.t_max is not None else 400.0
    if cfg.within_initial is not None:
        initial = within_host.WithinHostState(*cfg.within_initial)
    else:
        initial = within_host.WithinHostState(params.Lambda / params.mu, 0.5, 0.0)
    run_rec = within_host.simulate_infection(
        params, initial, t_max, p_clear=cfg.p_clear
    )
    within_host.write_trajectory_csv(run_rec, out_dir / "trajectory.csv")
    summary = {
        "subcommand": "within-sim",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "defaults": {
            "t_max": t_max,
            "initial": list(initial.as_array()),
            "p_clear": cfg.p_clear,
        },
        **within_host.run_metadata(run_rec, params),
    }
    return _finalize(out_dir, _jsonable(summary))


def _cmd_bifurcate(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("within_host", "sweep")
    params, spec = cfg.within, cfg.sweep
    if args.grid_refine > 1:
        spec = bifurcation.SweepSpec(
            which=spec.which, lo=spec.lo, hi=spec.hi,
            n=spec.n * args.grid_refine, W=spec.W,
        )
    result = bifurcation.sweep_branch(params, spec)
    events = bifurcation.detect_all_events(result)
    cycle_spec = bifurcation.SweepSpec(
        which=spec.which, lo=spec.lo, hi=spec.hi, n=cfg.cycle_n, W=spec.W
    )
    cycles = bifurcation.cycle_amplitude(params, cycle_spec)
    bifurcation.branch_to_csv(result.fold_path, out_dir / "branches.csv")
    bifurcation.branch_to_csv(result.trivial, out_dir / "trivial.csv")
    bifurcation.cycles_to_csv(cycles, out_dir / "cycles.csv")
    bifurcation.events_json_dump(events, out_dir / "events.json")
    loci = within_host.critical_loci(params)
    summary = {
        "subcommand": "bifurcate",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "sweep": {
            "which": spec.which, "lo": spec.lo, "hi": spec.hi, "n": spec.n,
            "W": spec.W,
        },
        "defaults": {
            "cycle_n": cfg.cycle_n,
            "cycle_transient": 400.0,
            "cycle_window": 400.0,
            "cycle_step": 0.02,
        },
        "parameters": _within_echo(cfg),
        "events": bifurcation.events_to_json(events),
        "analytic_fold_clearance": loci.Gamma_fold,
        "analytic_hopf_clearance": [root.Gamma for root in loci.hopf if root.valid],
    }
    return _finalize(out_dir, _jsonable(summary))


def _cmd_manifold(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("within_host")
    params = cfg.within
    tip_P, tip_W = within_host.manifold_tip(params)
    p_max = within_host.upper_branch_P(0.0, params) * 1.2
    n = 400 * max(args.grid_refine, 1)
    p_grid = np.linspace(1e-6, p_max, n)
    phi = within_host.slow_manifold_W(p_grid, params)
    null = within_host.w_nullcline(p_grid, params)
    _write_rows(
        out_dir / "manifold.csv",
        "P,manifold_W,nullcline_W",
        zip(p_grid, phi, null),
    )
    summary = {
        "subcommand": "manifold",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "defaults": {"n_points": n, "p_max": p_max},
        "parameters": _within_echo(cfg),
        "tip": {"P": tip_P, "W": tip_W},
        "nullcline_slope": params.kappa / params.c,
    }
    return _finalize(out_dir, _jsonable(summary))


def _cmd_r0(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("between_host")
    direct, environmental = between_host.r0_terms(cfg.between, QUAD_DEFAULT)
    summary = {
        "subcommand": "r0",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "parameters": _between_echo(cfg),
        "r0": direct + environmental,
        "direct_term": direct,
        "environmental_term": environmental,
    }
    return _finalize(out_dir, _jsonable(summary))


def _cmd_equilibria(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("between_host")
    params = cfg.between
    basic = between_host.r0(params, QUAD_DEFAULT)
    eq = between_host.endemic_equilibrium(
        params, n_omega=400 * max(args.grid_refine, 1), quad=QUAD_DEFAULT
    )
    summary = {
        "subcommand": "equilibria",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "parameters": _between_echo(cfg),
        "r0": basic,
        "endemic_exists": eq is not None,
    }
    if eq is not None:
        _write_rows(
            out_dir / "equilibrium_profile.csv",
            "omega,I_star",
            zip(eq.omega, eq.I),
        )
        summary["endemic"] = {
            "S": eq.S, "I0": eq.I0, "V": eq.V, "B": eq.B,
            "residuals": between_host.endemic_residuals(eq, params),
        }
    return _finalize(out_dir, _jsonable(summary))


def _apply_refine(cfg: ScenarioConfig, k: int) -> tuple[int, float]:
    n_omega = cfg.n_omega * k
    dt = cfg.dt / k
    return n_omega, dt


def _cmd_epi_sim(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("between_host", "grid", "run")
    params = cfg.between
    n_omega, dt = _apply_refine(cfg, max(args.grid_refine, 1))
    s0, i0, v0, b0 = cfg.initial_state_arrays(n_omega)
    initial = between_host.StructuredState(S=s0, I=i0, V=v0, B=b0)
    run_rec = between_host.simulate_epidemic(
        params, initial, cfg.t_max, n_omega, dt,
        output_stride=cfg.output_stride,
        snapshot_stride=cfg.snapshot_stride,
    )
    _write_rows(
        out_dir / "timeseries.csv",
        "t,S,I_total,V,B,F",
        zip(run_rec.t, run_rec.S, run_rec.I_total, run_rec.V, run_rec.B, run_rec.F),
    )
    if cfg.snapshot_stride:
        header = "t," + ",".join(repr(float(w)) for w in run_rec.omega)
        _write_rows(
            out_dir / "snapshots.csv",
            header,
            (
                [t, *row]
                for t, row in zip(run_rec.snapshot_t, run_rec.snapshots)
            ),
        )
    summary = {
        "subcommand": "epi-sim",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "parameters": _between_echo(cfg),
        "grid": {"n_omega": n_omega, "dt": dt},
        "defaults": {
            "output_stride": cfg.output_stride,
            "snapshot_stride": cfg.snapshot_stride,
            "negativity_tolerance": between_host.NEGATIVITY_ABORT,
        },
        "t_max": cfg.t_max,
        "r0": between_host.r0(params, QUAD_DEFAULT),
        "final": {
            "S": run_rec.final.S,
            "I_total": run_rec.I_total[-1],
            "I_boundary": run_rec.final.I[0],
            "V": run_rec.final.V,
            "B": run_rec.final.B,
        },
    }
    return _finalize(out_dir, _jsonable(summary))


def _matched_history(cfg: ScenarioConfig, clock: between_host.StatusClock):
    """Force-of-infection history encoding the initial infected density.

    The renewal form carries I(0, omega) as past boundary input: entrants
    at time -G(omega) that survived to status omega. Inverting the survival
    factor and holding S at its initial value before time zero gives
    F(-theta) = phi(w(theta)) / (pi(w(theta)) * S0) for theta within the
    travel time to recovery, zero earlier.
    """
    params = cfg.between
    s0 = cfg.initial_S
    phi = cfg.initial_I
    total = clock.total_time

    def history(s):
        s = np.asarray(s, dtype=float)
        theta = np.clip(-s, 0.0, None)
        w = clock.status_at(np.minimum(theta, total))
        pi_w = np.exp(-clock.decay_at(w)) / params.g(w)
        vals = phi(w) / (pi_w * s0)
        return np.where(theta <= total, vals, 0.0)

    return history


def _cmd_renewal_check(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("between_host", "grid", "run")
    params = cfg.between
    n_omega, dt = _apply_refine(cfg, max(args.grid_refine, 1))
    clock = between_host.build_clock(params)
    window = params.a_bar + clock.total_time
    steps = max(int(round(window / dt)), 1)
    dt_renewal = window / steps

    s0, i0, v0, b0 = cfg.initial_state_arrays(n_omega)
    initial = between_host.StructuredState(S=s0, I=i0, V=v0, B=b0)
    pde = between_host.simulate_epidemic(
        params, initial, cfg.t_max, n_omega, dt, output_stride=1
    )
    renewal = between_host.simulate_renewal(
        params,
        _matched_history(cfg, clock),
        s0,
        cfg.t_max,
        dt_renewal,
        quad=QUAD_DEFAULT,
    )
    f_pde = np.interp(renewal.t, pde.t, pde.F)
    s_pde = np.interp(renewal.t, pde.t, pde.S)
    _write_rows(
        out_dir / "renewal.csv",
        "t,S_pde,F_pde,S_renewal,F_renewal",
        zip(renewal.t, s_pde, f_pde, renewal.S, renewal.F),
    )
    summary = {
        "subcommand": "renewal-check",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "parameters": _between_echo(cfg),
        "grid": {"n_omega": n_omega, "dt": dt, "dt_renewal": dt_renewal},
        "memory_window": window,
        "t_max": cfg.t_max,
        "max_abs_dF": float(np.max(np.abs(f_pde - renewal.F))),
        "max_abs_dS": float(np.max(np.abs(s_pde - renewal.S))),
    }
    basic = between_host.r0(params, QUAD_DEFAULT)
    summary["r0"] = basic
    if basic > 1 and params.rho == 0:
        eq = between_host.endemic_equilibrium(params, quad=QUAD_DEFAULT)
        total_kernel = between_host.kernel_total_integral(params, clock=clock)
        summary["stationary_kernel_identity"] = eq.S * total_kernel
    return _finalize(out_dir, _jsonable(summary))


def _cmd_spectral(cfg: ScenarioConfig, out_dir: Path, args) -> RunOutput:
    cfg.require("between_host")
    params = cfg.between
    basic = between_host.r0(params, QUAD_DEFAULT)
    summary = {
        "subcommand": "spectral",
        "seed": args.seed,
        "grid_refine": args.grid_refine,
        "parameters": _between_echo(cfg),
        "r0": basic,
        "defaults": {
            "scan_max": SPECTRAL_SCAN_MAX,
            "scan_step": SPECTRAL_SCAN_STEP,
        },
    }
    try:
        summary["lambda_hat"] = between_host.dfe_lambda_hat(params, QUAD_DEFAULT)
    except NumericsError as exc:
        # no real crossing on the admissible interval; recorded, not fatal
        summary["lambda_hat"] = None
        summary["lambda_hat_note"] = str(exc)
    if basic > 1:
        eq = between_host.endemic_equilibrium(params, quad=QUAD_DEFAULT)
        clock = between_host.build_clock(params)
        grid = np.arange(0.0, SPECTRAL_SCAN_MAX + 0.5 * SPECTRAL_SCAN_STEP, SPECTRAL_SCAN_STEP)
        residuals = [
            between_host.endemic_char_residual(lam, params, eq, QUAD_DEFAULT, clock)
            for lam in grid
        ]
        _write_rows(out_dir / "scan.csv", "lambda,residual", zip(grid, residuals))
        roots = between_host.endemic_spectrum_scan(
            params, SPECTRAL_SCAN_MAX, SPECTRAL_SCAN_STEP, QUAD_DEFAULT
        )
        summary["endemic_scan_roots"] = roots
        summary["endemic_residual_at_zero_plus"] = residuals[1]
    else:
        summary["endemic_scan_roots"] = None
    return _finalize(out_dir, _jsonable(summary))


# ---------------------------------------------------------------------------
# plot data


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise ConfigError(f"plot-data: missing upstream file {path.name} in {path.parent}")
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def emit_plot_data(out_dir: Path, figure: str) -> list[str]:
    """Write gnuplot-ready whitespace-separated blocks from earlier runs.

    fig1/fig2: equilibrium branches and periodic-orbit extents from a
    `bifurcate` run (fig1 expects a delta sweep, fig2 a W sweep); columns
    are `param P stability kind`, stable = 1. fig3: slow-manifold curve,
    status nullcline, and one trajectory from `manifold` + `within-sim`
    runs; columns are `P W kind`. Blocks are separated by blank lines.
    """
    out_dir = Path(out_dir)
    written: list[str] = []
    if figure in ("fig1", "fig2"):
        summary_path = out_dir / "summary.json"
        if not summary_path.is_file():
            raise ConfigError(f"plot-data: no summary.json in {out_dir}")
        summary = json.loads(summary_path.read_text())
        which = summary.get("sweep", {}).get("which")
        expected = "delta" if figure == "fig1" else "W"
        if which != expected:
            raise ConfigError(
                f"plot-data: {figure} needs a bifurcate run sweeping {expected!r}, "
                f"found {which!r}"
            )
        _, branch_rows = _read_csv(out_dir / "branches.csv")
        _, trivial_rows = _read_csv(out_dir / "trivial.csv")
        _, cycle_rows = _read_csv(out_dir / "cycles.csv")
        target = out_dir / f"{figure}.dat"
        with open(target, "w") as fh:
            fh.write("# param P stability kind\n")
            for name, rows in (("branch", branch_rows), ("trivial", trivial_rows)):
                previous = None
                for row in rows:
                    stability = row[7]
                    stable = 1 if stability.startswith("stable") else 0
                    if previous is not None and stable != previous:
                        fh.write("\n")
                    fh.write(f"{row[0]} {row[2]} {stable} {name}\n")
                    previous = stable
                fh.write("\n\n")
            for idx, kind in ((1, "cycle_min"), (2, "cycle_max")):
                wrote = False
                for row in cycle_rows:
                    if row[5] == "1":  # oscillatory column
                        fh.write(f"{row[0]} {row[idx]} 1 {kind}\n")
                        wrote = True
                if wrote:
                    fh.write("\n\n")
        written.append(target.name)
    elif figure == "fig3":
        _, manifold_rows = _read_csv(out_dir / "manifold.csv")
        _, trajectory_rows = _read_csv(out_dir / "trajectory.csv")
        target = out_dir / "fig3.dat"
        with open(target, "w") as fh:
            fh.write("# P W kind\n")
            for row in manifold_rows:
                fh.write(f"{row[0]} {row[1]} manifold\n")
            fh.write("\n\n")
            for row in manifold_rows:
                fh.write(f"{row[0]} {row[2]} nullcline\n")
            fh.write("\n\n")
            for row in trajectory_rows:
                fh.write(f"{row[2]} {row[3]} trajectory\n")
        written.append(target.name)
    else:
        raise ConfigError(f"plot-data: unknown figure {figure!r}")
    return written


def _cmd_plot_data(cfg: ScenarioConfig | None, out_dir: Path, args) -> RunOutput:
    written = emit_plot_data(out_dir, args.figure)
    summary_path = out_dir / "summary.json"
    summary = json.loads(summary_path.read_text()) if summary_path.is_file() else {}
    summary.setdefault("plot_data", []).extend(
        name for name in written if name not in summary.get("plot_data", [])
    )
    return _finalize(out_dir, summary)


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "within-sim": (_cmd_within_sim, True),
    "bifurcate": (_cmd_bifurcate, True),
    "manifold": (_cmd_manifold, True),
    "r0": (_cmd_r0, True),
    "equilibria": (_cmd_equilibria, True),
    "epi-sim": (_cmd_epi_sim, True),
    "renewal-check": (_cmd_renewal_check, True),
    "spectral": (_cmd_spectral, True),
    "plot-data": (_cmd_plot_data, False),
}


def run(subcommand: str, config_path: str | None, out_dir: str | Path, args) -> RunOutput:
    """Dispatch one subcommand; raises ConfigError / NumericsError on failure."""
    handler, needs_config = _COMMANDS[subcommand]
    cfg = None
    if needs_config:
        if config_path is None:
            raise ConfigError(f"{subcommand}: --config is required")
        cfg = load_scenario(config_path)
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from exc
    return handler(cfg, out_dir, args)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="immunoepi",
        description="Linked within-host / between-host epidemic analysis toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="scenario JSON document")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument(
            "--grid-refine", type=int, default=1, metavar="K",
            help="refine discretizations by an integer factor",
        )
        cmd.add_argument(
            "--seed", type=int, default=0,
            help="recorded in the summary; no component is stochastic",
        )
        if name == "plot-data":
            cmd.add_argument(
                "--figure", required=True, choices=("fig1", "fig2", "fig3")
            )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("IMMUNOEPI_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.grid_refine < 1:
        print("error: --grid-refine must be a positive integer", file=sys.stderr)
        return 2
    try:
        output = run(args.command, args.config, args.out, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    log.info("wrote %d files to %s", len(output.files), output.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
