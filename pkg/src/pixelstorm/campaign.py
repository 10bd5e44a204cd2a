"""Campaign orchestration: image sampling, the worker pool, and artifacts.

A campaign attacks a sampled set of images and leaves a directory of
artifacts behind: one JSON record per attack (flushed as soon as the attack
finishes), a fitness-trace CSV next to each record, and the aggregated
report.  Image sampling and attack randomness use two independent seeds, and
every per-attack seed is derived from the attack's identity — results are
byte-identical for any worker-pool size.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import os
import re
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import metrics as metrics_mod
from .attack import (
    AttackOutcome,
    PixelPerturbation,
    filter_correctly_classified,
    make_spec,
    run_nontargeted_attack,
    run_targeted_attack,
)
from .de import DeConfig, trace_to_csv
from .errors import FormatError
from .imagery import LabeledImage, resize_nearest
from .metrics import MetricsReport, RandomBaselineConfig, build_report, random_one_pixel_attack
from .oracle import Oracle

REPORT_NAME = "report.json"


@dataclasses.dataclass(frozen=True)
class CampaignConfig:
    mode: str  # "targeted" | "nontargeted" | "baseline"
    preset: str = "kaggle_cifar10"
    pixel_count: int = 1
    num_images: Optional[int] = None  # None = the whole dataset
    sample_seed: int = 0
    de_seed: int = 0
    workers: Optional[int] = None  # None = one per processor
    baseline_attempts: int = 100

    def __post_init__(self):
        if self.mode not in ("targeted", "nontargeted", "baseline"):
            raise ValueError(f"unknown campaign mode {self.mode!r}")
        if self.num_images is not None and self.num_images < 1:
            raise ValueError("num_images must be positive")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be positive")


def sample_images(dataset: Sequence[LabeledImage], num_images, seed) -> list:
    """Sample without replacement; the drawn order is the campaign order."""
    if num_images is None or num_images >= len(dataset):
        return list(dataset)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    idx = rng.choice(len(dataset), size=num_images, replace=False)
    return [dataset[int(i)] for i in idx]


def _child_seed(master, *key):
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, np.uint64)[0])


def _fit_to_oracle(labeled: LabeledImage, oracle: Oracle) -> LabeledImage:
    info = oracle.info
    img = labeled.image
    if (img.width, img.height, img.channels) == (info.width, info.height, info.channels):
        return labeled
    if img.channels != info.channels:
        raise ValueError(
            f"{labeled.id}: image has {img.channels} channels, oracle expects {info.channels}"
        )
    resized = resize_nearest(img, info.width, info.height)
    return LabeledImage(image=resized, true_class=labeled.true_class, id=labeled.id)


@dataclasses.dataclass(frozen=True)
class _Unit:
    order: int
    labeled: LabeledImage
    target: Optional[int]
    seed: int


def _build_units(images, oracle, config: CampaignConfig) -> list:
    units = []
    order = 0
    for i, labeled in enumerate(images):
        if config.mode == "targeted":
            for target in range(oracle.info.num_classes):
                if target == labeled.true_class:
                    continue
                units.append(
                    _Unit(order, labeled, target, _child_seed(config.de_seed, i, target))
                )
                order += 1
        else:
            units.append(_Unit(order, labeled, None, _child_seed(config.de_seed, i)))
            order += 1
    return units


def run_campaign(
    oracle: Oracle,
    dataset: Sequence[LabeledImage],
    config: CampaignConfig,
    out_dir=None,
    render_figures=True,
):
    """Attack the sampled images and (optionally) write all artifacts.

    Returns ``(outcomes, report)`` with outcomes in deterministic campaign
    order.  Outcome files are flushed as each attack completes, so a crash or
    an unreachable oracle preserves everything finished so far.
    """
    if not dataset:
        raise ValueError("empty dataset")
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    pool = [_fit_to_oracle(lab, oracle) for lab in dataset]
    if config.preset == "original_cifar10" and config.mode != "baseline":
        pool = filter_correctly_classified(oracle, pool)
        if not pool:
            raise ValueError("no correctly classified images to attack")
    images = sample_images(pool, config.num_images, config.sample_seed)
    units = _build_units(images, oracle, config)

    def execute(unit: _Unit) -> AttackOutcome:
        if config.mode == "baseline":
            outcome = random_one_pixel_attack(
                oracle,
                unit.labeled,
                RandomBaselineConfig(attempts=config.baseline_attempts, seed=unit.seed),
            )
        else:
            spec = make_spec(config.preset, config.mode, config.pixel_count, unit.seed)
            if config.mode == "targeted":
                outcome = run_targeted_attack(oracle, unit.labeled, unit.target, spec)
            else:
                outcome = run_nontargeted_attack(oracle, unit.labeled, spec)
        if out_path is not None:
            write_outcome(out_path, outcome)
        return outcome

    workers = config.workers or os.cpu_count() or 1
    results = {}
    if workers == 1:
        for unit in units:
            results[unit.order] = execute(unit)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool_exec:
            futures = {pool_exec.submit(execute, unit): unit for unit in units}
            try:
                for future in concurrent.futures.as_completed(futures):
                    results[futures[future].order] = future.result()
            except BaseException:
                for future in futures:
                    future.cancel()
                raise

    outcomes = [results[i] for i in sorted(results)]
    report = build_report(outcomes, oracle.info.num_classes)
    if out_path is not None:
        write_report_artifacts(out_path, outcomes, report, render_figures=render_figures)
    return outcomes, report


# ---------------------------------------------------------------------------
# Artifact serialization

_SAFE = re.compile(r"[^A-Za-z0-9._-]")


def outcome_stem(outcome: AttackOutcome) -> str:
    base = _SAFE.sub("_", outcome.id)
    if outcome.mode == "targeted":
        return f"{base}_t{outcome.target_class}"
    if outcome.mode == "nontargeted":
        return f"{base}_nt"
    return f"{base}_rand"


def outcome_to_dict(outcome: AttackOutcome) -> dict:
    return {
        "id": outcome.id,
        "mode": outcome.mode,
        "target_class": outcome.target_class,
        "success": outcome.success,
        "predicted_class": outcome.predicted_class,
        "original_class": outcome.original_class,
        "pixels": [
            {"x": p.x, "y": p.y, "color": list(p.color)} for p in outcome.perturbation
        ],
        "final_probs": [float(v) for v in outcome.final_probs],
        "generations": outcome.generations_run,
        "evaluations": outcome.evaluations_used,
        "stopped_early": outcome.stopped_early,
        "distortion": outcome.distortion,
    }


def outcome_from_dict(body: dict) -> AttackOutcome:
    try:
        return AttackOutcome(
            id=body["id"],
            mode=body["mode"],
            success=bool(body["success"]),
            original_class=int(body["original_class"]),
            target_class=None if body["target_class"] is None else int(body["target_class"]),
            predicted_class=int(body["predicted_class"]),
            perturbation=[
                PixelPerturbation(x=p["x"], y=p["y"], color=tuple(p["color"]))
                for p in body["pixels"]
            ],
            final_probs=np.asarray(body["final_probs"], dtype=np.float64),
            generations_run=int(body["generations"]),
            evaluations_used=int(body["evaluations"]),
            stopped_early=bool(body.get("stopped_early", False)),
            distortion=float(body["distortion"]),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"outcome record invalid: {exc}") from exc


def write_outcome(out_dir, outcome: AttackOutcome):
    stem = outcome_stem(outcome)
    path = Path(out_dir) / f"{stem}.json"
    path.write_text(json.dumps(outcome_to_dict(outcome), indent=2) + "\n")
    if outcome.fitness_trace:
        (Path(out_dir) / f"{stem}.trace.csv").write_text(trace_to_csv(outcome.fitness_trace))


def load_outcomes(out_dir) -> list:
    """Read every stored attack record in a campaign directory."""
    out_dir = Path(out_dir)
    records = []
    for path in sorted(out_dir.glob("*.json")):
        if path.name == REPORT_NAME:
            continue
        try:
            body = json.loads(path.read_text())
        except ValueError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
        records.append(outcome_from_dict(body))
    return records


def load_traces(out_dir) -> list:
    """Read the per-attack fitness traces stored next to the outcome records."""
    traces = []
    for path in sorted(Path(out_dir).glob("*.trace.csv")):
        trace = []
        lines = path.read_text().splitlines()
        for line in lines[1:]:
            gen, best, mean = line.split(",")
            trace.append((int(gen), float(best), float(mean)))
        traces.append(trace)
    return traces


def write_report_artifacts(out_dir, outcomes, report: MetricsReport, render_figures=True, traces=None):
    """Write the report JSON plus plot-ready delimited views (and figures).

    ``traces`` overrides the per-outcome fitness traces (used when outcomes
    were reloaded from disk and the traces live in CSV sidecars instead).
    """
    out_dir = Path(out_dir)
    (out_dir / REPORT_NAME).write_text(report.to_json())

    k = len(report.pair_matrix)
    lines = ["original_class," + ",".join(f"target_{j}" for j in range(k))]
    for i, row in enumerate(report.pair_matrix):
        lines.append(f"{i}," + ",".join(str(v) for v in row))
    (out_dir / "pair_matrix.csv").write_text("\n".join(lines) + "\n")

    if report.target_class_histogram is not None:
        lines = ["num_target_classes,images"]
        for b, count in enumerate(report.target_class_histogram):
            lines.append(f"{b},{count}")
        (out_dir / "histogram.csv").write_text("\n".join(lines) + "\n")

    if traces is None:
        traces = [o.fitness_trace for o in outcomes if o.fitness_trace]
    if traces:
        mean_best = metrics_mod.aggregate_traces(traces)
        lines = ["generation,mean_best_fitness"]
        lines.extend(f"{g},{v!r}" for g, v in enumerate(mean_best))
        (out_dir / "aggregate_trace.csv").write_text("\n".join(lines) + "\n")

    if render_figures:
        from . import figures

        figures.render_report_figures(out_dir, report, traces=traces or None)
