"""Command-line entry point tying the modules into reproducible experiments.

Exit codes: 0 success, 1 runtime/IO failure, 2 usage error. Every
subcommand is deterministic given its arguments and input files; all
randomness flows from explicit --seed flags.

Value precedence per option: CLI flag > config file (--config, a JSON
object mirroring flag names with dashes as underscores) > built-in default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import io as l2p_io
from .core import L2PError
from .equivalence import (
    MAX_CONVERSION_SIZE,
    difference_coeffs_to_weights,
    weights_to_difference_coeffs,
)
from .learner import TrainConfig, eval_predictor, ridge_oracle, train
from .predictors import (
    foca_corrected_coefficients,
    parse_predictor_spec,
    taylor_coefficients,
)
from .projection import fidelity_profile
from .schedule import uniform_schedule
from .surrogate import SmoothSpec, gen_dataset

__all__ = ["main"]

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Maps to exit code 2."""


def _thread_cap() -> int:
    raw = os.environ.get("L2P_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad config file {path}: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return cfg


def _effective(args, config, name, default):
    """CLI flag > config value > default (flags parse with None sentinels)."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    if name in config:
        return config[name]
    return default


def _parse_seeds(text: str):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",") if s]


_SPEC_KEYS = ("poly_degree", "num_modes", "noise_scale", "amplitude_scale")


def _smooth_spec(args, config):
    """SmoothSpec override, or None when no spec flag was given anywhere.

    Passing None lets the generators use their kind-appropriate defaults
    (the toy denoiser's bias curves default to a lighter spec).
    """
    if all(getattr(args, k, None) is None and k not in config for k in _SPEC_KEYS):
        return None
    base = SmoothSpec()
    return SmoothSpec(
        poly_degree=int(_effective(args, config, "poly_degree", base.poly_degree)),
        num_modes=int(_effective(args, config, "num_modes", base.num_modes)),
        noise_scale=float(_effective(args, config, "noise_scale", base.noise_scale)),
        amplitude_scale=float(_effective(args, config, "amplitude_scale", base.amplitude_scale)),
    )


def cmd_gen(args, config) -> int:
    count = int(_effective(args, config, "count", 50))
    if count < 1:
        raise UsageError(f"--count must be >= 1, got {count}")
    kind = _effective(args, config, "kind", "smooth")
    if kind not in ("smooth", "denoiser"):
        raise UsageError(f"--kind must be smooth or denoiser, got {kind!r}")
    seed = int(_effective(args, config, "seed", 0))
    T = int(_effective(args, config, "steps", 50))
    D = int(_effective(args, config, "dim", 64))
    model_seed = int(_effective(args, config, "model_seed", 0))
    spec = _smooth_spec(args, config)
    dataset = gen_dataset(seed, count, T, D, kind=kind, spec=spec, model_seed=model_seed)
    extra = {
        "kind": kind, "base_seed": seed, "model_seed": model_seed,
        "spec": None if spec is None else {
            "poly_degree": spec.poly_degree, "num_modes": spec.num_modes,
            "noise_scale": spec.noise_scale, "amplitude_scale": spec.amplitude_scale},
    }
    manifest = l2p_io.save_dataset(dataset, args.out, extra=extra)
    print(f"wrote {count} trajectories and {manifest}")
    return EXIT_OK


def _manifest_hash(data_dir) -> str:
    path = Path(data_dir) / "manifest.json"
    return hashlib.sha256(path.read_bytes()).hexdigest()


def cmd_train(args, config) -> int:
    data_dir = Path(args.data)
    if not (data_dir / "manifest.json").exists():
        raise UsageError(f"{data_dir} is not a dataset directory (no manifest.json)")
    dataset = l2p_io.load_dataset(data_dir)
    cfg = TrainConfig(
        epochs=int(_effective(args, config, "epochs", 200)),
        learning_rate=float(_effective(args, config, "lr", 0.01)),
        ridge_lambda=float(_effective(args, config, "ridge_lambda", 1e-6)),
        loss_log_every=int(_effective(args, config, "log_every", 0)),
    )
    weights, report = train(dataset, cfg)
    provenance = {
        "dataset_manifest_sha256": _manifest_hash(data_dir),
        "train_config": {
            "epochs": cfg.epochs, "learning_rate": cfg.learning_rate,
            "ridge_lambda": cfg.ridge_lambda, "loss_log_every": cfg.loss_log_every,
            "rng_seed": cfg.rng_seed,
        },
    }
    l2p_io.save_weights(weights, args.out, provenance=provenance)
    if args.oracle:
        oracle = ridge_oracle(dataset, cfg.ridge_lambda)
        oracle_path = str(Path(args.out).with_suffix("")) + ".oracle.l2pw"
        l2p_io.save_weights(oracle, oracle_path,
                            provenance={**provenance, "solver": "ridge"})
    report_obj = {
        "final_train_mse": report.final_train_mse,
        "converged": report.converged,
        "epochs": cfg.epochs,
        "wall_time_s": report.wall_time_s,
    }
    print(l2p_io.render_metrics_json(report_obj), end="")
    return EXIT_OK


def _build_predictor(spec_text: str):
    try:
        return parse_predictor_spec(spec_text, load_weights=l2p_io.load_weights)
    except (ValueError, L2PError) as exc:
        raise UsageError(f"bad predictor spec {spec_text!r}: {exc}")


def cmd_eval(args, config) -> int:
    dataset = l2p_io.load_dataset(args.data)
    predictor = _build_predictor(args.predictor)
    interval = int(_effective(args, config, "interval", 5))
    mode = _effective(args, config, "mode", "closed")
    if mode not in ("open", "closed"):
        raise UsageError(f"--mode must be open or closed, got {mode!r}")
    fmt = _effective(args, config, "format", "csv")
    if fmt not in ("csv", "json"):
        raise UsageError(f"--format must be csv or json, got {fmt!r}")
    schedule = uniform_schedule(dataset.num_steps, interval)
    metrics = eval_predictor(predictor, dataset, schedule, mode=mode)
    if fmt == "json":
        print(l2p_io.render_metrics_json(metrics), end="")
    else:
        row = {
            "predictor": predictor.name, "N": interval,
            "seed": dataset.manifest[0].get("seed", 0),
            "aggregate_mse": metrics.aggregate_mse, "psnr_db": metrics.psnr_db,
            "flops_reduction": metrics.flops_reduction,
            "cache_bytes_peak": metrics.cache_bytes_peak,
        }
        print(l2p_io.render_sweep_csv([row]), end="")
    return EXIT_OK


def cmd_analyze(args, config) -> int:
    traj = l2p_io.load_trajectory(args.traj)
    profile = fidelity_profile(traj)
    payload = {
        "num_steps": profile.num_steps,
        "fidelity": list(profile.per_step_fidelity),
        "residual": list(profile.per_step_residual),
        "rank": list(profile.rank_history),
    }
    if args.out:
        l2p_io.export_metrics(payload, args.out, format="json")
        print(f"wrote {args.out}")
    else:
        print(l2p_io.render_metrics_json(payload), end="")
    return EXIT_OK


def cmd_coeffs(args, config) -> int:
    method = args.method
    interval = int(_effective(args, config, "interval", 1))
    if method == "taylor":
        order = int(_effective(args, config, "order", 2))
        if order < 0 or interval < 1:
            raise UsageError("taylor needs --order >= 0 and --interval >= 1")
        offset = int(_effective(args, config, "offset", 1))
        coeffs = taylor_coefficients(order, interval, offset)
    elif method == "foca":
        if interval < 1:
            raise UsageError("foca needs --interval >= 1")
        coeffs = foca_corrected_coefficients(interval)
    else:
        raise UsageError(f"--method must be taylor or foca, got {method!r}")
    payload = {
        "method": coeffs.normalization_tag,
        "terms": {str(off): w for off, w in coeffs.terms},
        "weight_sum": coeffs.weight_sum(),
    }
    print(l2p_io.render_metrics_json(payload), end="")
    return EXIT_OK


def cmd_convert(args, config) -> int:
    weights = l2p_io.load_weights(args.weights)
    t = int(args.row)
    if not 1 <= t <= weights.num_steps - 1:
        raise UsageError(f"--row must be in [1, {weights.num_steps - 1}], got {t}")
    if t > MAX_CONVERSION_SIZE:
        raise UsageError(
            f"--row {t} exceeds the conversion gate t <= {MAX_CONVERSION_SIZE} "
            "(binomial conditioning)"
        )
    row = weights.row(t)
    omega = weights_to_difference_coeffs(row)
    payload = {
        "row": t,
        "weights": [float(v) for v in row],
        "difference_coeffs": [float(v) for v in omega],
    }
    if args.inverse:
        payload["weights_roundtrip"] = [float(v) for v in difference_coeffs_to_weights(omega)]
    print(l2p_io.render_metrics_json(payload), end="")
    return EXIT_OK


def _bench_cell(dataset_by_seed, spec_text, predictor, N, seed, mode):
    dataset = dataset_by_seed[seed]
    schedule = uniform_schedule(dataset.num_steps, N)
    metrics = eval_predictor(predictor, dataset, schedule, mode=mode)
    return {
        "predictor": spec_text, "N": N, "seed": seed,
        "aggregate_mse": metrics.aggregate_mse, "psnr_db": metrics.psnr_db,
        "flops_reduction": metrics.flops_reduction,
        "cache_bytes_peak": metrics.cache_bytes_peak,
    }


def cmd_bench(args, config) -> int:
    from .core import TrajectorySet

    dataset = l2p_io.load_dataset(args.data)
    intervals = [int(s) for s in str(_effective(args, config, "intervals", "1,5,7,10")).split(",")]
    predictor_specs = str(_effective(args, config, "predictors", "naive,taylor:2,foca")).split(",")
    seeds = _parse_seeds(str(_effective(args, config, "seeds", "0..9")))
    mode = _effective(args, config, "mode", "closed")

    by_seed = {}
    for traj, meta in zip(dataset.trajectories, dataset.manifest):
        by_seed[meta.get("seed", traj.seed)] = TrajectorySet(trajectories=(traj,))
    missing = [s for s in seeds if s not in by_seed]
    if missing:
        raise UsageError(f"dataset has no trajectories for seeds {missing}")

    predictors = [(spec, _build_predictor(spec)) for spec in predictor_specs]
    cells = [(spec, pred, N, seed)
             for spec, pred in predictors for N in intervals for seed in seeds]
    workers = min(_thread_cap(), len(cells)) or 1
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(
                lambda c: _bench_cell(by_seed, c[0], c[1], c[2], c[3], mode), cells
            ))
    else:
        rows = [_bench_cell(by_seed, spec, pred, N, seed, mode)
                for spec, pred, N, seed in cells]
    rows.sort(key=lambda r: (r["predictor"], r["N"], r["seed"]))
    print(l2p_io.render_sweep_csv(rows), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l2p",
        description="Linear feature-forecast caching: surrogate data, training, "
                    "fidelity analysis, and cached-rollout benchmarks.",
    )
    parser.add_argument("--config", default=None,
                        help="JSON file of default option values (flags override)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a surrogate trajectory dataset")
    p.add_argument("--kind", choices=("smooth", "denoiser"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--model-seed", dest="model_seed", type=int, default=None)
    p.add_argument("--poly-degree", dest="poly_degree", type=int, default=None)
    p.add_argument("--num-modes", dest="num_modes", type=int, default=None)
    p.add_argument("--noise-scale", dest="noise_scale", type=float, default=None)
    p.add_argument("--amplitude-scale", dest="amplitude_scale", type=float, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train per-step weights on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--ridge-lambda", dest="ridge_lambda", type=float, default=None)
    p.add_argument("--log-every", dest="log_every", type=int, default=None)
    p.add_argument("--oracle", action="store_true",
                   help="also write the closed-form ridge solution")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a predictor on stored trajectories")
    p.add_argument("--data", required=True)
    p.add_argument("--predictor", required=True,
                   help="naive | taylor:m | foca | l2p:weights.l2pw")
    p.add_argument("--interval", type=int, default=None)
    p.add_argument("--mode", choices=("open", "closed"), default=None)
    p.add_argument("--format", choices=("csv", "json"), default=None)

    p = sub.add_parser("analyze", help="projection-fidelity profile of a trajectory")
    p.add_argument("--traj", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("coeffs", help="print consolidated forecast coefficients")
    p.add_argument("--method", required=True)
    p.add_argument("--order", type=int, default=None)
    p.add_argument("--interval", type=int, default=None)
    p.add_argument("--offset", type=int, default=None)

    p = sub.add_parser("convert", help="weight row <-> difference coefficients")
    p.add_argument("--weights", required=True)
    p.add_argument("--row", type=int, required=True)
    p.add_argument("--inverse", action="store_true",
                   help="also map the coefficients back and print the round trip")

    p = sub.add_parser("bench", help="full factorial sweep, CSV to stdout")
    p.add_argument("--data", required=True)
    p.add_argument("--intervals", default=None)
    p.add_argument("--predictors", default=None)
    p.add_argument("--seeds", default=None)
    p.add_argument("--mode", choices=("open", "closed"), default=None)

    return parser


_COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "coeffs": cmd_coeffs,
    "convert": cmd_convert,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return EXIT_USAGE if exc.code not in (0,) else EXIT_OK
    try:
        config = _load_config(args.config)
        return _COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (L2PError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
