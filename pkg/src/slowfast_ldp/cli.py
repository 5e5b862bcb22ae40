"""Command-line entry points wrapping the library modules.

Subcommands: sample-fbm, solve, average, rate, mc.  Each takes
--config <file> --out <dir> [--seed <u64>] [--strict].  The environment
variable SLOWFAST_LDP_OUT, when set, overrides the output directory.

Exit codes: 0 success, 1 validation error, 2 numerical blow-up,
3 non-convergence.  On error no artifacts are written (all files are
staged and committed atomically with the manifest).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .config import RunConfig, emit_config, load_config
from .errors import (
    BlowUpError,
    DomainError,
    IllConditionedError,
    NonConvergenceError,
    PrecisionError,
    SlowFastError,
    StabilityError,
    UsageError,
)
from .fbm import (
    FbmSpec,
    RngStream,
    fbm_covariance,
    sample_bm_increments,
    sample_fbm,
    sample_fbm_batch,
)
from .grid import Grid, GridPath
from .ldp import (
    EnterSet,
    HitEndpoint,
    MatchPath,
    MinimizeOptions,
    RateProblem,
    forced_control_for_path,
    minimize_rate_endpoint,
    rate_lower_envelope,
)
from .mc import (
    DeltaRule,
    EndpointExceeds,
    ExperimentPlan,
    SupNormExceeds,
    run_averaging_study,
    run_ldp_consistency,
    run_rare_event,
)
from .multiscale import AveragedDrift, ErgodicParams, ScaleParams, default_fast_substeps, solve_slow_fast
from .output import ArtifactWriter, path_to_csv, paths_to_csv, rows_to_csv, csv_to_path
from .systems import get_system

ENV_OUT = "SLOWFAST_LDP_OUT"


def _resolve_out(flag_value: str) -> str:
    return os.environ.get(ENV_OUT, flag_value)


def _covariance_diagnostic(batch: np.ndarray, grid: Grid, hurst: float) -> dict:
    """3-stderr gate for the empirical covariance on an 8-node sublattice."""
    n_paths = batch.shape[0]
    idx = np.linspace(grid.n_steps // 8, grid.n_steps, 8).astype(int)
    tt = grid.nodes[idx]
    samples = batch[:, idx, 0]
    emp = samples.T @ samples / n_paths
    theory = fbm_covariance(tt[:, None], tt[None, :], hurst)
    var_prod = np.outer(np.diag(theory), np.diag(theory))
    stderr = np.sqrt((var_prod + theory**2) / n_paths)
    z = np.abs(emp - theory) / stderr
    n_pass = int(np.count_nonzero(z <= 3.0))
    return {
        "lattice_times": [float(t) for t in tt],
        "n_paths": n_paths,
        "entries_total": int(z.size),
        "entries_within_3_stderr": n_pass,
        "worst_z": float(np.max(z)),
        "gate_passed": bool(n_pass >= 60),
    }


def cmd_sample_fbm(cfg: RunConfig, writer: ArtifactWriter, strict: bool) -> None:
    spec_sys = get_system(cfg.system)
    grid = Grid(cfg.horizon, cfg.n_steps)
    fspec = FbmSpec(cfg.hurst, spec_sys.dims.d1, grid, cfg.sample.method)
    batch = (
        sample_fbm_batch(fspec, RngStream(cfg.seed), cfg.sample.n_paths)
        if cfg.sample.n_paths > 0
        else np.zeros((0, grid.n_nodes, spec_sys.dims.d1))
    )
    writer.add_text("paths.csv", paths_to_csv(grid.nodes, batch))
    if cfg.sample.covariance_check and cfg.sample.n_paths > 0:
        writer.add_json("covariance_diagnostic.json", _covariance_diagnostic(batch, grid, cfg.hurst))


def cmd_solve(cfg: RunConfig, writer: ArtifactWriter, strict: bool) -> None:
    spec = get_system(cfg.system)
    grid = Grid(cfg.horizon, cfg.n_steps)
    substeps = cfg.scales.fast_substeps or default_fast_substeps(grid, cfg.scales.delta)
    scales = ScaleParams(cfg.scales.epsilon, cfg.scales.delta, substeps)
    wgrid = grid.subgrid_steps(substeps)
    slow, fast = [], []
    for k in range(cfg.solve.n_trajectories):
        bh = sample_fbm(FbmSpec(cfg.hurst, spec.dims.d1, grid), RngStream(cfg.seed, 2 * k))
        w_incr = sample_bm_increments(wgrid, spec.dims.d2, RngStream(cfg.seed, 2 * k + 1))
        wvals = np.zeros((wgrid.n_nodes, spec.dims.d2))
        wvals[1:] = np.cumsum(w_incr, axis=0)
        x, y = solve_slow_fast(spec, scales, bh, GridPath(wgrid, wvals), strict=strict)
        slow.append(x.values)
        fast.append(y.values)
    if cfg.solve.n_trajectories == 1:
        writer.add_text("slow.csv", path_to_csv(GridPath(grid, slow[0])))
        if cfg.solve.save_fast:
            writer.add_text("fast.csv", path_to_csv(GridPath(grid, fast[0])))
    else:
        writer.add_text("slow.csv", paths_to_csv(grid.nodes, np.stack(slow)))
        if cfg.solve.save_fast:
            writer.add_text("fast.csv", paths_to_csv(grid.nodes, np.stack(fast)))


def _drift_for(cfg: RunConfig, spec) -> AveragedDrift:
    if cfg.average.drift_source == "closed_form" and spec.bar_f1 is not None:
        return AveragedDrift.from_system(spec)
    params = ErgodicParams(
        burn_in=cfg.average.ergodic_burn_in,
        horizon=cfg.average.ergodic_horizon,
        replicas=cfg.average.ergodic_replicas,
    )
    return AveragedDrift.ergodic(spec, params, RngStream(cfg.seed, 1 << 48))


def cmd_average(cfg: RunConfig, writer: ArtifactWriter, strict: bool) -> None:
    spec = get_system(cfg.system)
    report = run_averaging_study(
        cfg.system,
        cfg.average.delta_schedule,
        cfg.average.n_replicas,
        cfg.seed,
        horizon=cfg.horizon,
        n_steps=cfg.n_steps,
        alpha=cfg.alpha,
        drift=_drift_for(cfg, spec),
    )
    writer.add_json("average_report.json", report.to_json_dict())
    writer.add_text("average_report.csv", rows_to_csv(report.csv_header(), report.csv_rows()))


def cmd_rate(cfg: RunConfig, writer: ArtifactWriter, strict: bool) -> None:
    spec = get_system(cfg.system)
    grid = Grid(cfg.horizon, cfg.n_steps)
    drift = _drift_for(cfg, spec)
    options = MinimizeOptions(
        penalty0=cfg.rate.penalty0,
        stages=cfg.rate.stages,
        endpoint_tol=cfg.rate.endpoint_tol,
    )
    rc = cfg.rate
    if rc.kind == "hit_endpoint":
        problem = RateProblem(
            spec, drift, HitEndpoint(np.array(rc.z)), grid, cfg.hurst, rc.ball_bound
        )
        result = minimize_rate_endpoint(problem, options)
        energy = result.energy
    elif rc.kind == "enter_set":
        problem = RateProblem(
            spec, drift, EnterSet(np.array(rc.direction), rc.offset), grid, cfg.hurst,
            rc.ball_bound,
        )
        energy, results = rate_lower_envelope(
            problem, [np.array(c) for c in rc.candidates], options, return_results=True
        )
        converged = [r for r in results if r.converged]
        result = min(converged or results, key=lambda r: r.energy)
    else:  # match_path
        with open(rc.target_csv, "r", encoding="utf-8") as fh:
            target = csv_to_path(fh.read())
        problem = RateProblem(
            spec, drift, MatchPath(target, rc.target_tol), grid, cfg.hurst, rc.ball_bound
        )
        result = forced_control_for_path(problem)
        energy = result.energy
    if not result.converged:
        raise NonConvergenceError(
            f"rate optimization did not converge (residual {result.constraint_residual:.3g})"
        )
    writer.add_text("du_star.csv", path_to_csv(result.du_star))
    payload = result.to_json_dict("du_star.csv")
    payload["energy"] = energy
    writer.add_json("rate.json", payload)


def cmd_mc(cfg: RunConfig, writer: ArtifactWriter, strict: bool) -> None:
    spec = get_system(cfg.system)
    mcc = cfg.mc
    if mcc.event.kind == "endpoint_exceeds":
        event = EndpointExceeds(np.array(mcc.event.direction), mcc.event.threshold)
    else:
        event = SupNormExceeds(mcc.event.radius)
    plan = ExperimentPlan(
        system=cfg.system,
        event=event,
        epsilon_schedule=mcc.epsilon_schedule,
        n_samples=mcc.n_samples,
        master_seed=cfg.seed,
        horizon=cfg.horizon,
        n_steps=cfg.n_steps,
        hurst=cfg.hurst,
        delta_rule=DeltaRule(mcc.delta_exponent, mcc.delta_coeff),
        n_workers=mcc.n_workers,
        batch_size=mcc.batch_size,
    )
    if mcc.rate_reference:
        if not isinstance(event, EndpointExceeds):
            raise UsageError("rate_reference needs an endpoint_exceeds event")
        problem = RateProblem(
            spec,
            _drift_for(cfg, spec),
            event.as_halfspace(),
            Grid(cfg.horizon, cfg.n_steps),
            cfg.hurst,
        )
        consistency = run_ldp_consistency(plan, problem)
        writer.add_json("mc_report.json", consistency.to_json_dict(mcc.include_timings))
        report = consistency.estimates
    else:
        report = run_rare_event(plan)
        writer.add_json("mc_report.json", report.to_json_dict(mcc.include_timings))
    writer.add_text("mc_report.csv", rows_to_csv(report.csv_header(), report.csv_rows()))


_COMMANDS = {
    "sample-fbm": cmd_sample_fbm,
    "solve": cmd_solve,
    "average": cmd_average,
    "rate": cmd_rate,
    "mc": cmd_mc,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slowfast-ldp",
        description=(
            "Slow-fast systems driven by mixed fractional Brownian motion: "
            "sampling, averaging, rate functions, and rare-event studies."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument(
            "--out",
            default="out",
            help=f"output directory (overridden by ${ENV_OUT} when set)",
        )
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--strict",
            action="store_true",
            help="escalate stability warnings to errors",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise DomainError("seed must be a non-negative integer")
            cfg = dataclasses.replace(cfg, seed=args.seed)
            cfg.validate()
        out_dir = _resolve_out(args.out)
        writer = ArtifactWriter(out_dir, emit_config(cfg), cfg.seed)
        _COMMANDS[args.command](cfg, writer, args.strict)
        manifest = writer.commit()
    except (DomainError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BlowUpError, StabilityError) as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, PrecisionError, IllConditionedError) as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3
    except SlowFastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
