"""Command-line entry point: config resolution, dispatch, artifact output.

One experiment per invocation, selected by subcommand. Primary outputs
(summary.json and the CSV series) are byte-identical for identical
(config, seed) regardless of --jobs; wall-clock facts live in a separate
run_metadata.json. Exit codes: 0 pass, 1 experiment fail, 2 schema error,
3 blow-up, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import logging
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_to_dict, validate_config
from .diagnostics import velocity_from_temperature
from .experiments import (
    lyapunov_spectrum,
    run_mixing,
    run_pullback,
    run_simulate,
    run_validation,
    verify_exponential_estimate,
    verify_lyapunov_structure,
)
from .fields import build_space, write_snapshot
from .forcing import H0DegenerateError, build_noise
from .stepping import BlowUpError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["main"]

log = logging.getLogger("pgvsim")

_COMMANDS = (
    "simulate",
    "pullback",
    "dimension",
    "mixing",
    "lyapunov-check",
    "validate",
)


def _configure_logging() -> None:
    level_name = os.environ.get("PGV_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pgvsim",
        description=(
            "Spectral simulator and verification suite for a stochastically"
            " forced planetary geostrophic model."
        ),
    )
    parser.add_argument("--version", action="version", version=_version_string())
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, default=None, help="TOML config file")
        p.add_argument(
            "--seed", type=int, default=None, help="master seed (overrides config)"
        )
        p.add_argument(
            "--jobs", type=int, default=1, help="worker processes for ensembles"
        )
        p.add_argument(
            "--out", type=Path, default=None, help="output directory (overrides config)"
        )
        p.add_argument(
            "--snapshot-every",
            type=int,
            default=None,
            help="write a PGVS snapshot every K steps (simulate only)",
        )
    return parser


def _version_string() -> str:
    root = Path(__file__).resolve().parents[2]
    tag = ""
    try:
        proc = subprocess.run(
            ["git", "-C", str(root), "describe", "--tags", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if proc.returncode == 0:
            tag = proc.stdout.strip().replace("-", ".")
    except (OSError, subprocess.SubprocessError):
        tag = ""
    return f"{__version__}+g{tag}" if tag else __version__


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config file: {err}") from err
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"config is not valid TOML: {err}") from err
    else:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")

    if args.seed is not None:
        data["seed"] = args.seed

    exp = data.get("experiment")
    if exp is None:
        data["experiment"] = {"kind": args.command}
    elif not isinstance(exp, dict):
        raise ConfigError("experiment: must be a table")
    else:
        kind = exp.setdefault("kind", args.command)
        if kind != args.command:
            raise ConfigError(
                f"experiment.kind: config selects {kind!r} but the command"
                f" line asked for {args.command!r}"
            )

    for key, value in (("dir", args.out), ("snapshot_every", args.snapshot_every)):
        if value is None:
            continue
        out_block = data.setdefault("output", {})
        if not isinstance(out_block, dict):
            raise ConfigError("output: must be a table")
        out_block[key] = str(value) if key == "dir" else value

    return validate_config(data)


def _dispatch(cfg: RunConfig, jobs: int, out_dir: Path) -> dict:
    exp = cfg.experiment
    seed = cfg.seed
    phys = cfg.physics
    if exp.kind == "validate":
        return run_validation(
            seed=seed, robin_alpha=phys.robin_alpha, f=phys.f, samples=exp.samples
        )

    res = cfg.resolution
    log.info(
        "building space %dx%dx%d (velocity %d)", res.nx, res.ny, res.nz_t, res.nz_v
    )
    space = build_space(
        cfg.domain.lx,
        cfg.domain.ly,
        res.nx,
        res.ny,
        res.nz_t,
        res.nz_v,
        phys.robin_alpha,
    )
    noise = build_noise(
        space.table,
        cfg.noise.sigma,
        cfg.noise.decay_q,
        cfg.noise.n_active,
        cfg.noise.ou_alpha,
    )
    integ = cfg.integrator
    common = dict(f=phys.f, dt=integ.dt, seed=seed)
    log.info("running %s", exp.kind)

    if exp.kind == "simulate":

        def snapshot_cb(step: int, t: float, that: np.ndarray) -> None:
            diag = velocity_from_temperature(space, that, phys.f)
            write_snapshot(
                out_dir / f"snap_{step:08d}.pgvs", space, that, diag.v1, diag.v2
            )

        return run_simulate(
            space,
            noise,
            **common,
            scheme=integ.scheme,
            dt_wiener=integ.dt_wiener,
            linear=integ.linear,
            horizon=exp.horizon,
            sample_every=exp.sample_every,
            t0_norm=exp.t0_norm,
            n_low=exp.n_low,
            snapshot_every=cfg.output.snapshot_every,
            snapshot_cb=snapshot_cb if cfg.output.snapshot_every else None,
        )
    if exp.kind == "pullback":
        return run_pullback(
            space,
            noise,
            **common,
            s_list=exp.s_list,
            members=exp.members,
            radius=exp.radius,
            n_low=exp.n_low,
            burn_in=exp.burn_in,
        )
    if exp.kind == "dimension":
        return lyapunov_spectrum(
            space,
            noise,
            **common,
            k=exp.k,
            spinup=exp.spinup,
            horizon=exp.horizon,
            reorth_every=exp.reorth_every,
            linear=integ.linear,
            t0_norm=exp.t0_norm,
            n_low=exp.n_low,
        )
    if exp.kind == "mixing":
        return run_mixing(
            space,
            noise,
            **common,
            k_gain=exp.k_gain,
            mu_min=exp.mu_min,
            pairs=exp.pairs,
            eps=exp.eps,
            horizon=exp.horizon,
            budget=exp.budget,
            sample_every=exp.sample_every,
            n_low=exp.n_low,
            jobs=jobs,
            wasserstein_members=exp.wasserstein_members,
            wasserstein_horizon=exp.wasserstein_horizon,
            wasserstein_dt=exp.wasserstein_dt,
            wasserstein_sample_every=exp.wasserstein_sample_every,
        )
    if exp.kind == "lyapunov-check":
        structure = verify_lyapunov_structure(
            space,
            noise,
            **common,
            members=exp.members,
            checkpoints=exp.checkpoints,
            t0_norm=exp.t0_norm,
            n_low=exp.n_low,
            jobs=jobs,
        )
        estimate = verify_exponential_estimate(
            space,
            noise,
            **common,
            members=exp.estimate_members,
            horizon=exp.estimate_horizon,
            t0_norm=exp.estimate_t0_norm,
            n_low=exp.n_low,
            jobs=jobs,
        )
        report = {
            "kind": "lyapunov-check",
            "passed": bool(structure["passed"] and estimate["passed"]),
            "structure": structure,
            "estimate": estimate,
        }
        report["series"] = structure.pop("series")
        estimate["series_name"] = "estimate"
        return report
    raise AssertionError(f"unhandled experiment kind {exp.kind!r}")


def _extract_series(report: dict, name: str, out: dict) -> None:
    series = report.pop("series", None)
    if series is not None:
        out[report.pop("series_name", name)] = series
    for key, value in report.items():
        if isinstance(value, dict):
            _extract_series(value, key, out)


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_outputs(out_dir: Path, report: dict, cfg: RunConfig) -> None:
    series_map: dict[str, dict] = {}
    _extract_series(report, "series", series_map)
    summary = dict(report)
    summary["config"] = config_to_dict(cfg)
    summary["version"] = _version_string()
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    for name, series in series_map.items():
        with open(out_dir / f"{name}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(series["columns"])
            for row in series["rows"]:
                writer.writerow([_format_cell(v) for v in row])
    log.info("wrote %s and %d series file(s)", out_dir / "summary.json", len(series_map))


def _write_metadata(out_dir: Path, started: float, finished: float, jobs: int) -> None:
    meta = {
        "started_at": datetime.datetime.fromtimestamp(
            started, tz=datetime.timezone.utc
        ).isoformat(),
        "finished_at": datetime.datetime.fromtimestamp(
            finished, tz=datetime.timezone.utc
        ).isoformat(),
        "duration_seconds": finished - started,
        "jobs": jobs,
        "argv": sys.argv[1:],
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    }
    with open(out_dir / "run_metadata.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")


def main(argv=None) -> int:
    _configure_logging()
    args = _build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    out_dir = Path(cfg.output.dir)
    started = time.time()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        report = _dispatch(cfg, max(1, args.jobs), out_dir)
    except H0DegenerateError as err:
        print(str(err), file=sys.stderr)
        return 1
    except BlowUpError as err:
        print(f"blow-up: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 4
    finished = time.time()

    passed = bool(report.get("passed", False))
    try:
        _write_outputs(out_dir, report, cfg)
        _write_metadata(out_dir, started, finished, max(1, args.jobs))
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 4
    print(f"{cfg.experiment.kind}: {'PASS' if passed else 'FAIL'} ({out_dir})")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
