"""Command-line experiment runner.

Usage::

    mfldp <kind> --config FILE [--seed S] [--out DIR]

Exit status is 0 on success, 1 for configuration errors and 2 for runtime
or numerical failures.  Each run writes its CSV files and a ``manifest.txt``
holding the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
from typing import Iterable, Sequence

import numpy as np

from .action import rate_j_infinity, rate_j_infinity_general, rate_j_n_closed, typical_companion_bound
from .config import KINDS, ExperimentConfig, parse_config
from .errors import BlowUpError, ConfigError, InputError, OptimizerError
from .flow import Path, solve_deterministic_flow
from .potentials import validate_hypotheses
from .simulate import DeviationEvent, SimConfig, estimate_deviation_probability
from .variational import OptimizerConfig, deviation_shell_infimum, minimize_companions

__all__ = ["run_experiment", "main", "ExperimentError"]


class ExperimentError(RuntimeError):
    """A library failure, annotated with the experiment kind and parameters."""


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def _path_csv(path: Path) -> str:
    header = ["t"] + [f"comp_{k}" for k in range(path.dimension)]
    return _csv(header, (np.concatenate([[t], row]) for t, row in zip(path.grid.nodes, path.values)))


def _optimizer(cfg: ExperimentConfig) -> OptimizerConfig:
    e = cfg.experiment
    return OptimizerConfig(
        max_iterations=e["max_iterations"],
        gradient_tolerance=e["gradient_tolerance"],
        symmetric_mode=e["symmetric"],
    )


def _validate(cfg: ExperimentConfig) -> dict[str, str]:
    e = cfg.experiment
    fi = cfg.interaction
    rep = validate_hypotheses(
        cfg.confining,
        fi if fi is not None else [1.0],
        a=cfg.interaction_flow,
        check_radius=e["check_radius"],
        samples=e["samples"],
    )
    rows = [("v2_ok", rep.v2_ok), ("f3_ok", rep.f3_ok), ("antisymmetry_ok", rep.antisymmetry_ok),
            ("all_ok", rep.all_ok), ("v2_check_radius", rep.v2_check_radius)]
    return {"validate.csv": _csv(["check", "value"], rows)}


def _flow(cfg: ExperimentConfig) -> dict[str, str]:
    psi = solve_deterministic_flow(cfg.confining, cfg.start, cfg.grid, a=cfg.interaction_flow, drive=cfg.drive)
    return {"flow.csv": _path_csv(psi)}


def _rate(cfg: ExperimentConfig) -> dict[str, str]:
    f = cfg.test_path
    v = cfg.confining
    out = {"path.csv": _path_csv(f)}
    flow = cfg.interaction_flow
    if flow is not None:
        drive = cfg.drive if cfg.drive is not None else Path.constant(cfg.grid, np.zeros(cfg.dimension))
        out["rate.csv"] = _csv(["J_infinity"], [[rate_j_infinity_general(v, flow, drive, f)]])
        return out
    fi = cfg.interaction
    j_inf = rate_j_infinity(v, fi, f)
    rows = [(n, rate_j_n_closed(v, fi, f, n), typical_companion_bound(v, fi, f, n), j_inf) for n in cfg.experiment["N"]]
    out["rate.csv"] = _csv(["N", "J_N_closed", "typical_bound", "J_infinity"], rows)
    return out


def _minimize(cfg: ExperimentConfig) -> dict[str, str]:
    f = cfg.test_path
    v, fi, flow = cfg.confining, cfg.interaction, cfg.interaction_flow
    opt = _optimizer(cfg)
    rows, out = [], {"path.csv": _path_csv(f)}
    for n in cfg.experiment["N"]:
        res = minimize_companions(v, fi, f, n, opt, flow=flow, drive=cfg.drive)
        closed = rate_j_n_closed(v, fi, f, n) if flow is None else math.nan
        rows.append((n, res.value, closed, res.iterations, res.final_gradient_norm, res.converged))
        out[f"companion_N{n}.csv"] = _path_csv(res.companions[0])
    out["minimize.csv"] = _csv(
        ["N", "value", "J_N_closed", "iterations", "final_gradient_norm", "converged"], rows)
    return out


def _convergence(cfg: ExperimentConfig) -> dict[str, str]:
    f = cfg.test_path
    v, fi = cfg.confining, cfg.interaction
    j_inf = rate_j_infinity(v, fi, f)
    opt = _optimizer(cfg)
    rows = []
    for n in cfg.experiment["N"]:
        closed = rate_j_n_closed(v, fi, f, n)
        var = minimize_companions(v, fi, f, n, opt).value
        gap = abs(closed - j_inf)
        rows.append((n, closed, var, j_inf, gap, gap * n))
    return {"convergence.csv": _csv(
        ["N", "J_N_closed", "J_N_variational", "J_infinity", "abs_gap", "gap_times_N"], rows)}


def _sim(cfg: ExperimentConfig, sigma: float, n: int) -> SimConfig:
    e = cfg.experiment
    return SimConfig(sigma=sigma, n_particles=n, grid=cfg.grid, master_seed=cfg.seed,
                     replicas=e["R"], proxy_size=e["M"])


def _slope(cfg: ExperimentConfig) -> dict[str, str]:
    e = cfg.experiment
    v, fi, x = cfg.confining, cfg.interaction, cfg.start
    n = e["N"][0]
    event = DeviationEvent(e["delta"])
    rows = []
    for s in e["sigma"]:
        est = estimate_deviation_probability(event, v, fi, x, _sim(cfg, s, n))
        per = 0.5 * s * s * math.log(est.p_hat) if est.p_hat > 0 else -math.inf
        rows.append((s, est.p_hat, est.ci_low, est.ci_high, per))
    shell = deviation_shell_infimum(v, fi, x, cfg.grid, e["delta"])
    small = min(rows, key=lambda r: r[0])
    return {
        "slope.csv": _csv(["sigma", "p_hat", "ci_low", "ci_high", "half_sigma2_log_p"], rows),
        "slope_oracle.csv": _csv(["J_star", "slope_at_smallest_sigma"], [[shell.value, small[4]]]),
    }


def _coupling(cfg: ExperimentConfig) -> dict[str, str]:
    e = cfg.experiment
    v, fi, x = cfg.confining, cfg.interaction, cfg.start
    event = DeviationEvent(e["delta"], which="coupling_distance")
    rows = []
    for n in e["N"]:
        for s in e["sigma"]:
            est = estimate_deviation_probability(event, v, fi, x, _sim(cfg, s, n))
            rows.append((s, n, est.p_hat, est.ci_low, est.ci_high))
    return {"coupling.csv": _csv(["sigma", "N", "p_hat", "ci_low", "ci_high"], rows)}


_RUNNERS = {
    "validate": _validate,
    "flow": _flow,
    "rate": _rate,
    "minimize": _minimize,
    "convergence": _convergence,
    "slope": _slope,
    "coupling": _coupling,
}


def _describe(cfg: ExperimentConfig) -> str:
    e = cfg.experiment
    keys = {"minimize": ("N",), "convergence": ("N",), "rate": ("N",),
            "slope": ("N", "sigma", "delta", "R"), "coupling": ("N", "sigma", "delta", "R", "M")}
    parts = [f"{k}={e[k]}" for k in keys.get(cfg.kind, ())]
    return " ".join([f"kind={cfg.kind}", *parts, f"seed={cfg.seed}"])


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None) -> list[str]:
    """Run the configured experiment and write its files; returns the written paths in order."""
    if cfg.kind is None:
        raise ConfigError("no experiment kind given")
    cfg.check()
    try:
        files = _RUNNERS[cfg.kind](cfg)
    except (BlowUpError, OptimizerError, InputError, FloatingPointError) as exc:
        raise ExperimentError(f"{_describe(cfg)}: {exc}") from exc
    files["manifest.txt"] = cfg.to_text()
    out_dir = out_dir if out_dir is not None else cfg.out
    written = []
    try:
        os.makedirs(out_dir, exist_ok=True)
        for name, text in files.items():
            target = os.path.join(out_dir, name)
            with open(target, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            written.append(target)
    except OSError as exc:
        raise ExperimentError(f"cannot write {exc.filename or out_dir}: {exc.strerror}") from exc
    return written


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfldp", description="Mean-field large-deviation experiments.")
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="experiment configuration file")
        p.add_argument("--seed", type=_u64, default=None, help="override [run] seed")
        p.add_argument("--out", default=None, help="override [run] out directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            with open(args.config, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        cfg = parse_config(text).with_overrides(kind=args.kind, seed=args.seed, out=args.out)
    except ConfigError as exc:
        print(f"mfldp: config error: {exc}", file=sys.stderr)
        return 1
    try:
        for path in run_experiment(cfg):
            print(path)
    except ConfigError as exc:
        print(f"mfldp: config error: {exc}", file=sys.stderr)
        return 1
    except ExperimentError as exc:
        print(f"mfldp: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"mfldp: {_describe(cfg)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
