"""Experiment harness: synthetic scenes, dataset splits, multi-height
mixtures, and RMSE sweeps over all interpolation methods.

A scene describes a serpentine survey of a rectangular area at several
altitudes through a synthetic two-ray channel with correlated (optionally
skewed, optionally noisy) shadow fading. Scene worlds are deterministic
per seed, and the expensive pieces (trajectory pathloss, the shadow
covariance factor, the fitted correlation model) are cached per scene so
seed sweeps stay cheap.

Per seed, the dataset at the test height is split into M training samples
and a held-out test set; training data is the union of the per-height
splits named by the height labels (A=50 m, B=70 m, C=90 m, D=110 m).
Cross-height and mixed-height configurations therefore score against the
identical test points as the same-height baseline.
"""

import csv
import functools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import Channel, SampleSet, ShadowFieldSampler, TwoRayParams, detrend, synthesize_dataset
from .correlation import CorrelationModel, empirical_correlation_from_samples, fit_correlation_model
from .errors import DataError
from .geo import GeoPoint
from .kriging import KrigingPredictor, NeighborSelector
from .matcomp import CompletionParams, matrix_completion_pipeline
from .channel import ZigZagSpec

HEIGHT_LABELS = {"A": 50.0, "B": 70.0, "C": 90.0, "D": 110.0}
SCENE_FIT_SEED = 987654321  # reserved world used to fit each scene's correlation model
_SPLIT_TAG = 0x51137


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic measurement campaign."""

    lat0_deg: float = 40.0
    lon0_deg: float = -105.0
    extent_north_m: float = 785.0
    extent_east_m: float = 455.0
    line_spacing_m: float = 35.0
    sample_spacing_m: float = 15.0
    heights_m: tuple = (50.0, 70.0, 90.0, 110.0)
    bs_north_m: float = -150.0
    bs_east_m: float = -150.0
    bs_height_m: float = 10.0
    tx_power_db: float = 30.0
    wavelength_m: float = 0.23
    eps_r: float = 15.0
    polarization: str = "vertical"
    corr_a: float = 0.6
    corr_p1: float = 0.03
    corr_p2: float = 0.004
    corr_q: float = 0.03
    sigma_w_db: float = 4.0
    skew: float = 0.0
    noise_db: float = 0.0
    jitter_m: float = 2.0

    def true_model(self) -> CorrelationModel:
        return CorrelationModel(a=self.corr_a, p1=self.corr_p1, p2=self.corr_p2,
                                q=self.corr_q, sigma_w_sq=self.sigma_w_db**2)

    def trajectory(self) -> ZigZagSpec:
        return ZigZagSpec(
            origin=GeoPoint(self.lat0_deg, self.lon0_deg, 0.0),
            extent_north_m=self.extent_north_m,
            extent_east_m=self.extent_east_m,
            line_spacing_m=self.line_spacing_m,
            sample_spacing_m=self.sample_spacing_m,
            heights_m=tuple(float(h) for h in self.heights_m),
            jitter_m=self.jitter_m,
        )

    def channel(self) -> Channel:
        from .geo import LocalFrame

        frame = LocalFrame.at(GeoPoint(self.lat0_deg, self.lon0_deg, 0.0))
        bs_lat, bs_lon = frame.from_local_xy(self.bs_east_m, self.bs_north_m)
        params = TwoRayParams(
            wavelength_m=self.wavelength_m,
            tx_power_db=self.tx_power_db,
            bs=GeoPoint(float(bs_lat), float(bs_lon), self.bs_height_m),
            ground_rel_permittivity=self.eps_r,
            polarization=self.polarization,
        )
        return Channel.isotropic(params)


@functools.lru_cache(maxsize=8)
def _scene_sampler(scene: SceneSpec) -> ShadowFieldSampler:
    lat, lon, h = scene.trajectory().points()
    return ShadowFieldSampler(lat, lon, h, scene.true_model())


def scene_world(scene: SceneSpec, seed: int) -> SampleSet:
    """Deterministic synthetic dataset for one seed."""
    return synthesize_dataset(scene.trajectory(), scene.channel(), scene.true_model(),
                              seed, skew=scene.skew, noise_db=scene.noise_db,
                              sampler=_scene_sampler(scene))


@functools.lru_cache(maxsize=8)
def scene_fitted_model(scene: SceneSpec) -> CorrelationModel:
    """Correlation model fitted on a reserved world, the way a field
    campaign would fit it before interpolating."""
    world = scene_world(scene, SCENE_FIT_SEED)
    bins = empirical_correlation_from_samples(world)
    sigma_sq = float(np.var(world.shadow_db))
    return fit_correlation_model(bins, sigma_sq)


def group_by_height(samples: SampleSet, tol_m: float = 0.5):
    """Split a dataset into per-label subsets by flight altitude."""
    out = {}
    for label, height in HEIGHT_LABELS.items():
        idx = np.nonzero(np.abs(samples.height_m - height) <= tol_m)[0]
        if idx.size:
            out[label] = samples.subset(idx)
    return out


def split_train_test(samples: SampleSet, m: int, seed: int):
    """Uniform M-subset without replacement as train, remainder as test."""
    n = len(samples)
    if n <= m:
        raise DataError(f"need more than {m} samples to split, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SPLIT_TAG]))
    perm = rng.permutation(n)
    return samples.subset(np.sort(perm[:m])), samples.subset(np.sort(perm[m:]))


def mix_heights(datasets: dict, labels: str) -> SampleSet:
    """Concatenate per-height training sets named by a label string."""
    missing = [c for c in labels if c not in datasets]
    if missing:
        raise DataError(f"unknown or absent height label(s): {''.join(missing)}")
    return SampleSet.concat([datasets[c] for c in labels])


def rmse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape or p.size == 0:
        raise DataError("predictions and truths must have equal nonzero length")
    return float(np.sqrt(np.mean((p - t) ** 2)))


ALL_METHODS = ("ok", "sk", "tg_ok", "tg_sk", "matcomp", "pathloss_baseline")


@dataclass(frozen=True)
class ExperimentConfig:
    """One point of the evaluation protocol."""

    method: str
    m: int
    selector: NeighborSelector
    train_heights: str = "D"
    test_height: str = "D"
    seeds: tuple = tuple(range(20))
    mode: str = "residual"
    completion: CompletionParams = field(default_factory=CompletionParams)
    d_grid: float = 5.0

    def __post_init__(self):
        if self.method not in ALL_METHODS:
            raise DataError(f"unknown method {self.method!r}")
        if self.m < 1:
            raise DataError("m must be >= 1")
        if not self.train_heights:
            raise DataError("at least one training height required")
        if len(self.test_height) != 1:
            raise DataError("test_height must be a single label")
        if not self.seeds:
            raise DataError("seeds must be non-empty")
        if self.mode not in ("residual", "raw"):
            raise DataError(f"unknown mode {self.mode!r}")
        if self.method == "matcomp" and self.train_heights != self.test_height:
            raise DataError("matrix completion trains and tests at one height")

    def selector_label(self) -> str:
        if self.method == "matcomp":
            return f"N={self.completion.local_n}"
        if self.method == "pathloss_baseline":
            return "-"
        return self.selector.label()


@dataclass(frozen=True)
class ResultRow:
    config: ExperimentConfig
    rmse_db: tuple
    median: float
    q1: float
    q3: float


def _evaluate_seed(config: ExperimentConfig, datasets: dict, channel: Channel,
                   model: CorrelationModel, seed: int, backend=None) -> float:
    if config.test_height not in datasets:
        raise DataError(f"test height {config.test_height!r} absent from the dataset")
    split_parts = {}
    for label in set(config.train_heights) | {config.test_height}:
        split_parts[label] = split_train_test(datasets[label], config.m, seed)
    test = split_parts[config.test_height][1]
    train = SampleSet.concat([split_parts[c][0] for c in config.train_heights])

    if config.method == "matcomp":
        if config.mode == "residual":
            train = detrend(train, channel)
            values = train.shadow_db
        else:
            values = train.rsrp_db
        preds, _, _, _ = matrix_completion_pipeline(
            train, values, test.lat_deg, test.lon_deg, config.completion, model,
            d_grid=config.d_grid, backend=backend)
        if config.mode == "residual":
            preds = preds + channel.trend_db(test.lat_deg, test.lon_deg, test.height_m)
    else:
        predictor = KrigingPredictor(train, config.method, config.selector, model,
                                     channel=channel, mode=config.mode, backend=backend)
        preds, _ = predictor.predict(test.lat_deg, test.lon_deg, test.height_m)
    return rmse(preds, test.rsrp_db)


def run_experiment(config: ExperimentConfig, scene: SceneSpec = None,
                   samples: SampleSet = None, channel: Channel = None,
                   model: CorrelationModel = None, backend=None) -> ResultRow:
    """Evaluate one configuration across its seeds.

    Supply either a scene (worlds are synthesized per seed) or a fixed
    dataset plus its channel; the correlation model defaults to the
    scene's fitted model and must be given explicitly for CSV data.
    """
    if (scene is None) == (samples is None):
        raise DataError("provide exactly one of scene or samples")
    if scene is not None:
        channel = scene.channel()
        if model is None:
            model = scene_fitted_model(scene)
    else:
        if channel is None and (config.mode == "residual" or config.method == "pathloss_baseline"):
            raise DataError("CSV input in residual mode needs channel parameters")
        if model is None:
            raise DataError("CSV input needs a fitted correlation model")
        fixed_datasets = group_by_height(samples)

    scores = []
    for seed in config.seeds:
        if scene is not None:
            world = scene_world(scene, seed)
            datasets = group_by_height(world)
        else:
            datasets = fixed_datasets
        scores.append(_evaluate_seed(config, datasets, channel, model, seed, backend=backend))
    arr = np.asarray(scores)
    return ResultRow(config=config, rmse_db=tuple(scores),
                     median=float(np.median(arr)),
                     q1=float(np.percentile(arr, 25)),
                     q3=float(np.percentile(arr, 75)))


CSV_HEADER = ["method", "M", "R_or_N", "train_heights", "test_height", "seed", "rmse_db"]


def emit_results(rows, path, fmt: str = "csv") -> None:
    """Write per-seed scores plus an aggregate block (seed = median/q1/q3)."""
    path = Path(path)
    records, aggregates = [], []
    for row in rows:
        c = row.config
        base = [c.method, c.m, c.selector_label(), c.train_heights, c.test_height]
        for seed, score in zip(c.seeds, row.rmse_db):
            records.append(base + [seed, f"{score:.6f}"])
        for name, value in (("median", row.median), ("q1", row.q1), ("q3", row.q3)):
            aggregates.append(base + [name, f"{value:.6f}"])
    if fmt == "csv":
        lines = [",".join(CSV_HEADER)]
        lines += [",".join(str(v) for v in rec) for rec in records]
        lines += [",".join(str(v) for v in rec) for rec in aggregates]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    elif fmt == "json":
        payload = {
            "columns": CSV_HEADER,
            "rows": records,
            "aggregates": aggregates,
        }
        path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    else:
        raise DataError(f"unknown format {fmt!r}")


def load_samples_csv(path) -> SampleSet:
    """Read `lat_deg,lon_deg,height_m,rsrp_db` rows with validation."""
    path = Path(path)
    lat, lon, h, r = [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [c.strip() for c in header] != ["lat_deg", "lon_deg", "height_m", "rsrp_db"]:
            raise DataError(f"{path}:1: expected header lat_deg,lon_deg,height_m,rsrp_db")
        for lineno, rowv in enumerate(reader, start=2):
            if not rowv or (len(rowv) == 1 and not rowv[0].strip()):
                continue
            if len(rowv) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(rowv)}")
            try:
                vals = [float(x) for x in rowv]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if not -90.0 <= vals[0] <= 90.0:
                raise DataError(f"{path}:{lineno}: latitude {vals[0]} outside [-90, 90]")
            if not -180.0 <= vals[1] <= 180.0:
                raise DataError(f"{path}:{lineno}: longitude {vals[1]} outside [-180, 180]")
            if not np.isfinite(vals[2]) or vals[2] < 0:
                raise DataError(f"{path}:{lineno}: height {vals[2]} must be finite and >= 0")
            if not np.isfinite(vals[3]):
                raise DataError(f"{path}:{lineno}: rsrp must be finite")
            lat.append(vals[0])
            lon.append(vals[1])
            h.append(vals[2])
            r.append(vals[3])
    if not lat:
        raise DataError(f"{path}: no data rows")
    return SampleSet(lat, lon, h, r)


def save_samples_csv(samples: SampleSet, path) -> None:
    lines = ["lat_deg,lon_deg,height_m,rsrp_db"]
    for i in range(len(samples)):
        lines.append(f"{samples.lat_deg[i]:.10f},{samples.lon_deg[i]:.10f},"
                     f"{samples.height_m[i]:.3f},{samples.rsrp_db[i]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
