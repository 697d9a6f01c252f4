"""Command-line interface.

Subcommands: ``synth`` (write a synthetic sample CSV), ``fit-corr`` (fit
the correlation model), ``krige`` (evaluate one Kriging method),
``matcomp`` (evaluate the hybrid completion method), ``bench`` (sweep all
methods into one results file). Exit codes: 0 success, 2 data errors,
3 solver non-convergence.
"""

import argparse
import sys

import numpy as np

from .antenna import isotropic_pattern, load_antenna_pattern
from .channel import Channel, TwoRayParams, detrend
from .correlation import CorrelationModel, empirical_correlation_from_samples, fit_correlation_model
from .errors import DataError, SolverError
from .experiments import (
    ALL_METHODS,
    ExperimentConfig,
    SceneSpec,
    emit_results,
    load_samples_csv,
    run_experiment,
    save_samples_csv,
    scene_fitted_model,
    scene_world,
)
from .geo import GeoPoint
from .kriging import NeighborSelector
from .matcomp import CompletionParams


def _parse_seeds(text: str) -> tuple:
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":")
        return tuple(range(int(lo), int(hi)))
    return tuple(int(t) for t in text.split(",") if t.strip())


def _parse_heights(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _add_scene_args(p):
    p.add_argument("--heights", default="50,70,90,110", help="scene flight altitudes, meters")
    p.add_argument("--skew", type=float, default=0.0, help="shadow skewing shape")
    p.add_argument("--noise-db", type=float, default=0.0, help="measurement noise std, dB")
    p.add_argument("--sigma-w-db", type=float, default=4.0, help="shadow std, dB")


def _add_channel_args(p):
    p.add_argument("--tx-power-db", type=float, default=30.0)
    p.add_argument("--wavelength-m", type=float, default=0.23)
    p.add_argument("--bs-lat", type=float)
    p.add_argument("--bs-lon", type=float)
    p.add_argument("--bs-height-m", type=float, default=10.0)
    p.add_argument("--eps-r", type=float, default=15.0)
    p.add_argument("--polarization", choices=["vertical", "horizontal"], default="vertical")
    p.add_argument("--bs-pattern", help="antenna pattern file (default isotropic)")
    p.add_argument("--uav-pattern", help="antenna pattern file (default isotropic)")


def _add_experiment_args(p, include_method=True):
    if include_method:
        p.add_argument("--method", choices=ALL_METHODS, default="ok")
    p.add_argument("--m", type=int, default=250, help="training samples per height")
    p.add_argument("--radius-m", type=float, help="fixed-radius neighbor selection")
    p.add_argument("--nearest-n", type=int, help="nearest-N neighbor selection")
    p.add_argument("--train-heights", default="D", help="height labels, e.g. CD")
    p.add_argument("--test-height", default="D")
    p.add_argument("--seeds", default="0:20", help="comma list or lo:hi range")
    p.add_argument("--mode", choices=["residual", "raw"], default="residual")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--tv", type=float, default=1000.0)
    p.add_argument("--tlambda", type=float, default=10.0)
    p.add_argument("--niter", type=int, default=600)
    p.add_argument("--grid-m", type=float, default=5.0)
    p.add_argument("--input", default="synth", help="'synth' or a sample CSV path")
    p.add_argument("--model-json", help="fitted correlation model (required for CSV input)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _add_scene_args(p)
    _add_channel_args(p)


def _scene_from_args(args) -> SceneSpec:
    return SceneSpec(heights_m=_parse_heights(args.heights), skew=args.skew,
                     noise_db=args.noise_db, sigma_w_db=args.sigma_w_db)


def _channel_from_args(args) -> Channel:
    if args.bs_lat is None or args.bs_lon is None:
        raise DataError("CSV input in residual mode needs --bs-lat/--bs-lon")
    params = TwoRayParams(
        wavelength_m=args.wavelength_m,
        tx_power_db=args.tx_power_db,
        bs=GeoPoint(args.bs_lat, args.bs_lon, args.bs_height_m),
        ground_rel_permittivity=args.eps_r,
        polarization=args.polarization,
    )
    g_bs = load_antenna_pattern(args.bs_pattern) if args.bs_pattern else isotropic_pattern()
    g_uav = load_antenna_pattern(args.uav_pattern) if args.uav_pattern else isotropic_pattern()
    return Channel(params, g_bs, g_uav)


def _selector_from_args(args, method: str) -> NeighborSelector:
    if args.radius_m is not None and args.nearest_n is not None:
        raise DataError("give either --radius-m or --nearest-n, not both")
    if args.radius_m is not None:
        return NeighborSelector.fixed_radius(args.radius_m)
    if args.nearest_n is not None:
        return NeighborSelector.nearest(args.nearest_n)
    return NeighborSelector.nearest(20)


def _config_from_args(args, method: str) -> ExperimentConfig:
    completion = CompletionParams(alpha=args.alpha, t_v=args.tv, t_lambda=args.tlambda,
                                  n_iter=args.niter,
                                  local_n=args.nearest_n if args.nearest_n else 20)
    return ExperimentConfig(
        method=method,
        m=args.m,
        selector=_selector_from_args(args, method),
        train_heights=args.train_heights,
        test_height=args.test_height,
        seeds=_parse_seeds(args.seeds),
        mode=args.mode,
        completion=completion,
        d_grid=args.grid_m,
    )


def _run_configs(args, methods) -> int:
    configs = [_config_from_args(args, m) for m in methods]
    if args.input == "synth":
        scene = _scene_from_args(args)
        rows = [run_experiment(cfg, scene=scene) for cfg in configs]
    else:
        samples = load_samples_csv(args.input)
        if args.model_json is None:
            raise DataError("CSV input needs --model-json")
        model = CorrelationModel.from_json(args.model_json)
        channel = None
        if args.mode == "residual" or any(c.method == "pathloss_baseline" for c in configs):
            channel = _channel_from_args(args)
        rows = [run_experiment(cfg, samples=samples, channel=channel, model=model)
                for cfg in configs]
    emit_results(rows, args.out, fmt=args.format)
    print(f"wrote {args.out}")
    return 0


def _cmd_synth(args) -> int:
    scene = _scene_from_args(args)
    world = scene_world(scene, args.seed)
    save_samples_csv(world, args.out)
    print(f"wrote {len(world)} samples to {args.out}")
    return 0


def _cmd_fit_corr(args) -> int:
    if args.input == "synth":
        scene = _scene_from_args(args)
        model = scene_fitted_model(scene)
    else:
        samples = load_samples_csv(args.input)
        channel = _channel_from_args(args)
        samples = detrend(samples, channel)
        bins = empirical_correlation_from_samples(
            samples, d_h_bin=args.dh_bin, d_v_bin=args.dv_bin,
            max_d_h=args.max_dh, min_count=args.min_count)
        model = fit_correlation_model(bins, float(np.var(samples.shadow_db)))
    model.to_json(args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radiomap",
                                     description="Radio-environment map reconstruction")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="write a synthetic sample CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_scene_args(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit-corr", help="fit the 3D correlation model")
    p.add_argument("--input", default="synth", help="'synth' or a sample CSV path")
    p.add_argument("--out", required=True)
    p.add_argument("--dh-bin", type=float, default=10.0)
    p.add_argument("--dv-bin", type=float, default=20.0)
    p.add_argument("--max-dh", type=float, default=500.0)
    p.add_argument("--min-count", type=int, default=30)
    _add_scene_args(p)
    _add_channel_args(p)
    p.set_defaults(func=_cmd_fit_corr)

    p = sub.add_parser("krige", help="evaluate one Kriging method")
    _add_experiment_args(p)
    p.set_defaults(func=lambda a: _run_configs(a, [a.method]))

    p = sub.add_parser("matcomp", help="evaluate hybrid matrix completion")
    _add_experiment_args(p, include_method=False)
    p.set_defaults(func=lambda a: _run_configs(a, ["matcomp"]))

    p = sub.add_parser("bench", help="sweep methods into one results file")
    _add_experiment_args(p, include_method=False)
    p.add_argument("--methods", default=",".join(ALL_METHODS),
                   help="comma-separated method subset")
    p.set_defaults(func=lambda a: _run_configs(a, [m for m in a.methods.split(",") if m]))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
