"""Sweeps over one hyperparameter or data condition, repeated over seeded trials."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import PairedDataset, generate_synthetic, load_dataset
from .errors import ConfigurationError, JeclError
from .trainer import JeclConfig, fit, run_single_view

log = logging.getLogger(__name__)

AXES = ("none", "lambda", "beta", "gamma", "missing-rate", "size-ratio")
METHODS = ("jecl", "image", "text")


@dataclass(frozen=True)
class ExperimentSpec:
    config: JeclConfig
    synthetic: dict | None = None  # keyword arguments of generate_synthetic
    files: dict | None = None  # images / texts / labels / mask paths
    axis: str = "none"
    values: tuple[float, ...] = (0.0,)
    trials: int = 5
    seed: int = 0
    method: str = "jecl"
    record_timing: bool = False

    def __post_init__(self) -> None:
        if (self.synthetic is None) == (self.files is None):
            raise ConfigurationError("give exactly one of a synthetic recipe or dataset files")
        if self.axis not in AXES:
            raise ConfigurationError(f"unknown sweep axis {self.axis!r}; choose from {AXES}")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.trials < 1 or not self.values:
            raise ConfigurationError("need at least one trial and one sweep value")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        for v in self.values:
            _check_value(self.axis, v)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_dict()
        d["values"] = list(self.values)
        return d


def _check_value(axis: str, v: float) -> None:
    ok = {
        "lambda": 0.0 <= v <= 1.0,
        "beta": v >= 0.0,
        "gamma": v >= 0.0,
        "missing-rate": 0.0 <= v < 1.0,
        "size-ratio": 0.0 < v <= 1.0,
    }.get(axis, True)
    if not ok:
        raise ConfigurationError(f"sweep value {v} is outside the legal range of {axis}")


def _stratified_subset(ds: PairedDataset, ratio: float, rng: np.random.Generator) -> PairedDataset:
    groups = [np.arange(ds.n)] if ds.labels is None else [np.flatnonzero(ds.labels == c) for c in np.unique(ds.labels)]
    keep = [rng.choice(g, size=max(1, int(round(ratio * g.size))), replace=False) for g in groups]
    return ds.subset(np.sort(np.concatenate(keep)))


def trial_dataset(spec: ExperimentSpec, value: float, trial_seed: int) -> PairedDataset:
    rng = np.random.default_rng(trial_seed)
    if spec.synthetic is not None:
        recipe = dict(spec.synthetic)
        recipe["seed"] = trial_seed
        if spec.axis == "missing-rate":
            recipe["missing_rate"] = value
        if spec.axis == "size-ratio":
            recipe["per_cluster_n"] = max(1, int(round(recipe.get("per_cluster_n", 200) * value)))
        return generate_synthetic(**recipe)
    ds = load_dataset(spec.files["images"], spec.files["texts"], spec.files.get("labels"), spec.files.get("mask"))
    if spec.axis == "missing-rate":
        ds = ds.with_missing_text(value, rng)
    if spec.axis == "size-ratio":
        ds = _stratified_subset(ds, value, rng)
    return ds


def trial_config(spec: ExperimentSpec, value: float, trial_seed: int) -> JeclConfig:
    cfg = spec.config.with_seed(trial_seed)
    key = {"lambda": "lam", "beta": "beta", "gamma": "gamma"}.get(spec.axis)
    if key is not None:
        cfg = cfg.with_loss(**{key: value})
    return cfg


def run_trial(spec: ExperimentSpec, value: float, trial: int) -> dict:
    seed = spec.seed + trial
    row = {"value": value, "trial": trial, "seed": seed}
    start = time.perf_counter()
    try:
        ds = trial_dataset(spec, value, seed)
        cfg = trial_config(spec, value, seed)
        if spec.method == "jecl":
            out = fit(ds, cfg)
        else:
            out = run_single_view(ds, spec.method, cfg)
        rep = out.report
        row.update(
            acc=rep.acc,
            nmi=rep.nmi,
            ari=rep.ari,
            empty_clusters=rep.empty_clusters,
            epochs=out.result.state.epoch,
            converged=out.result.state.converged,
        )
    except (JeclError, FloatingPointError) as exc:
        log.warning("trial %d at %s=%s aborted: %s", trial, spec.axis, value, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
    row["wall_seconds"] = round(time.perf_counter() - start, 3) if spec.record_timing else None
    return row


def _mean(rows: list[dict], key: str) -> float | None:
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def summarize(spec: ExperimentSpec, per_trial: list[dict]) -> list[dict]:
    means = []
    for v in spec.values:
        rows = [r for r in per_trial if r["value"] == v and "error" not in r]
        means.append(
            {
                "value": v,
                "acc": _mean(rows, "acc"),
                "nmi": _mean(rows, "nmi"),
                "ari": _mean(rows, "ari"),
                "empty_clusters": _mean(rows, "empty_clusters"),
                "completed": len(rows),
                "failed": sum(1 for r in per_trial if r["value"] == v and "error" in r),
            }
        )
    return means


def run_experiment(spec: ExperimentSpec, output_dir: str | Path | None = None, jobs: int = 1) -> dict:
    """Run every (value, trial) pair and return the report; also write it when ``output_dir`` is set."""
    tasks = [(v, t) for v in spec.values for t in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_trial = list(pool.map(run_trial, [spec] * len(tasks), *zip(*tasks)))
    else:
        per_trial = [run_trial(spec, v, t) for v, t in tasks]
    report = {"config": spec.to_dict(), "per_trial": per_trial, "means": summarize(spec, per_trial)}
    if output_dir is not None:
        write_report(report, output_dir)
    return report


def _fmt(x) -> str:
    return "   -  " if x is None else f"{x:6.3f}"


def format_table(report: dict) -> str:
    axis = report["config"]["axis"]
    lines = [f"{axis:>12} |  ACC    NMI    ARI   empty  trials", "-" * 52]
    for m in report["means"]:
        empty = "  -  " if m["empty_clusters"] is None else f"{m['empty_clusters']:5.2f}"
        lines.append(
            f"{m['value']:12.4g} | {_fmt(m['acc'])} {_fmt(m['nmi'])} {_fmt(m['ari'])}  {empty}  {m['completed']}"
            + (f" ({m['failed']} failed)" if m["failed"] else "")
        )
    return "\n".join(lines) + "\n"


def write_report(report: dict, output_dir: str | Path) -> tuple[Path, Path]:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    js = out / "report.json"
    txt = out / "report.txt"
    js.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    header = "# " + json.dumps(report["config"], sort_keys=True) + "\n"
    txt.write_text(header + format_table(report), encoding="utf-8")
    return js, txt


def spec_with(spec: ExperimentSpec, **changes) -> ExperimentSpec:
    return replace(spec, **changes)
