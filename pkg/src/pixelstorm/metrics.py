"""Campaign measures: success rates, confidence, histograms, pair matrices,
distortion, the random one-pixel baseline, and fitness-trace aggregation.

Rates are fractions in [0, 1]; the report also carries raw counts so nothing
has to be reverse-engineered from a percentage.  Quantities that are undefined
without at least one success (confidence, average distortion) raise here and
are reported as absent by the report builder — never as 0.
"""
from __future__ import annotations

import dataclasses
import json
from typing import Optional, Sequence

import numpy as np

from .attack import AttackOutcome, PixelPerturbation, attack_distortion
from .imagery import ImageTensor, LabeledImage
from .oracle import Oracle


def realized_target(outcome: AttackOutcome) -> int:
    """The class the attack actually pushed the image into."""
    if outcome.mode == "targeted":
        return outcome.target_class
    return outcome.predicted_class


def success_rate(outcomes: Sequence[AttackOutcome]) -> float:
    if not outcomes:
        raise ValueError("success rate over zero outcomes is undefined")
    return sum(1 for o in outcomes if o.success) / len(outcomes)


def confidence(outcomes: Sequence[AttackOutcome]) -> float:
    """Mean probability of the realized target class, over successes only."""
    values = [
        float(o.final_probs[realized_target(o)]) for o in outcomes if o.success
    ]
    if not values:
        raise ValueError("confidence is undefined without at least one success")
    return float(np.mean(values))


def average_distortion(outcomes: Sequence[AttackOutcome]) -> float:
    """Mean per-attack distortion over successes only."""
    values = [o.distortion for o in outcomes if o.success]
    if not values:
        raise ValueError("average distortion is undefined without at least one success")
    return float(np.mean(values))


def average_evaluations(outcomes: Sequence[AttackOutcome]) -> float:
    if not outcomes:
        raise ValueError("average evaluations over zero outcomes is undefined")
    return float(np.mean([o.evaluations_used for o in outcomes]))


def _grouped_targeted(outcomes):
    """Group complete per-image targeted outcome sets by image id."""
    groups = {}
    for o in outcomes:
        groups.setdefault(o.id, []).append(o)
    for image_id, group in groups.items():
        num_classes = len(group[0].final_probs)
        true_class = group[0].original_class
        expected = [c for c in range(num_classes) if c != true_class]
        if any(o.mode != "targeted" for o in group):
            raise ValueError(f"{image_id}: non-targeted outcome in targeted group")
        if any(o.original_class != true_class for o in group):
            raise ValueError(f"{image_id}: outcomes disagree on the original class")
        if sorted(o.target_class for o in group) != expected:
            raise ValueError(
                f"{image_id}: need one outcome per non-true class, got "
                f"{sorted(o.target_class for o in group)}"
            )
    return groups


def target_class_histogram(outcomes: Sequence[AttackOutcome]) -> list:
    """How many target classes each image could be pushed into.

    Takes the pooled targeted outcomes (K-1 per image) and returns K counts:
    bin b is the number of images perturbable to exactly b target classes.
    """
    if not outcomes:
        raise ValueError("histogram over zero outcomes is undefined")
    groups = _grouped_targeted(outcomes)
    num_classes = len(outcomes[0].final_probs)
    bins = [0] * num_classes
    for group in groups.values():
        bins[sum(1 for o in group if o.success)] += 1
    return bins


def pair_matrix(outcomes: Sequence[AttackOutcome], num_classes) -> np.ndarray:
    """K x K counts of successful attacks: row original class, column realized
    target class.  The diagonal stays zero by construction."""
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for o in outcomes:
        if not o.success:
            continue
        target = realized_target(o)
        if target == o.original_class:
            raise ValueError(
                f"{o.id}: success with realized target equal to the original class"
            )
        matrix[o.original_class, target] += 1
    return matrix


def class_totals(matrix) -> tuple:
    """Per-class totals of the pair matrix: (as-origin, as-target)."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"pair matrix must be square, got {matrix.shape}")
    return matrix.sum(axis=1).tolist(), matrix.sum(axis=0).tolist()


def aggregate_traces(traces: Sequence[list]) -> list:
    """Mean best-fitness per generation over several runs.

    Shorter traces (early-stopped runs) are padded with their final value, so
    a run that stopped keeps contributing its achieved level.
    """
    if not traces:
        raise ValueError("no traces to aggregate")
    bests = []
    for i, trace in enumerate(traces):
        if not trace:
            raise ValueError(f"trace {i} is empty")
        bests.append([point[1] for point in trace])
    length = max(len(b) for b in bests)
    padded = np.array([b + [b[-1]] * (length - len(b)) for b in bests], dtype=np.float64)
    return padded.mean(axis=0).tolist()


@dataclasses.dataclass(frozen=True)
class RandomBaselineConfig:
    attempts: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.attempts < 1:
            raise ValueError("attempts must be positive")


def random_one_pixel_attack(
    oracle: Oracle, labeled: LabeledImage, config: RandomBaselineConfig
) -> AttackOutcome:
    """The no-optimization control: overwrite one uniformly random pixel with a
    uniformly random colour, a fixed number of independent times.

    Every attempt always runs (no early exit).  Success iff any attempt moves
    the argmax off the true class; the reported probabilities come from the
    attempt with the highest best non-true-class probability.
    """
    info = oracle.info
    image = labeled.image
    oracle._check_image(image)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n = config.attempts

    xs = rng.integers(0, info.width, size=n)
    ys = rng.integers(0, info.height, size=n)
    colors = rng.integers(0, 256, size=(n, info.channels))

    batch = np.tile(image.data, (n, 1))
    rows = np.arange(n)
    base = (ys * info.width + xs) * info.channels
    for c in range(info.channels):
        batch[rows, base + c] = colors[:, c]

    probs = oracle.predict_raw(batch)
    true_class = labeled.true_class
    non_true = probs.copy()
    non_true[:, true_class] = -np.inf
    best_non_true = non_true.max(axis=1)
    flipped = probs.argmax(axis=1) != true_class

    best_attempt = int(best_non_true.argmax())
    perturbation = [
        PixelPerturbation(
            x=int(xs[best_attempt]),
            y=int(ys[best_attempt]),
            color=tuple(colors[best_attempt]),
        )
    ]
    final_probs = probs[best_attempt].copy()
    return AttackOutcome(
        id=labeled.id,
        mode="random_baseline",
        success=bool(flipped.any()),
        original_class=true_class,
        target_class=None,
        predicted_class=int(np.argmax(final_probs)),
        perturbation=perturbation,
        final_probs=final_probs,
        generations_run=0,
        evaluations_used=n,
        stopped_early=False,
        distortion=attack_distortion(image, perturbation),
        fitness_trace=None,
        adversarial_image=ImageTensor(
            info.width, info.height, info.channels, batch[best_attempt]
        ),
    )


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    num_images: int
    num_outcomes: int
    num_successes: int
    success_rate_targeted: Optional[float]
    success_rate_nontargeted: Optional[float]
    derived_nontargeted_success_rate: Optional[float]
    confidence: Optional[float]
    target_class_histogram: Optional[list]
    pair_matrix: list
    class_totals_origin: list
    class_totals_target: list
    avg_evaluations: float
    avg_distortion: Optional[float]

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def build_report(outcomes: Sequence[AttackOutcome], num_classes) -> MetricsReport:
    """Aggregate a homogeneous campaign's outcomes into one report.

    Targeted-only measures (histogram, derived non-targeted rate) appear only
    when the outcomes form complete per-image targeted sets; undefined
    measures are null, never zero.
    """
    if not outcomes:
        raise ValueError("cannot build a report from zero outcomes")
    targeted = [o for o in outcomes if o.mode == "targeted"]
    untargeted = [o for o in outcomes if o.mode in ("nontargeted", "random_baseline")]

    derived_rate = None
    histogram = None
    if targeted and not untargeted:
        try:
            groups = _grouped_targeted(targeted)
        except ValueError:
            groups = None
        if groups:
            derived_rate = sum(
                1 for g in groups.values() if any(o.success for o in g)
            ) / len(groups)
            histogram = target_class_histogram(targeted)

    matrix = pair_matrix(outcomes, num_classes)
    origin_totals, target_totals = class_totals(matrix)

    def optional(fn, subset):
        try:
            return fn(subset)
        except ValueError:
            return None

    return MetricsReport(
        num_images=len({o.id for o in outcomes}),
        num_outcomes=len(outcomes),
        num_successes=sum(1 for o in outcomes if o.success),
        success_rate_targeted=optional(success_rate, targeted),
        success_rate_nontargeted=optional(success_rate, untargeted),
        derived_nontargeted_success_rate=derived_rate,
        confidence=optional(confidence, outcomes),
        target_class_histogram=histogram,
        pair_matrix=matrix.tolist(),
        class_totals_origin=origin_totals,
        class_totals_target=target_totals,
        avg_evaluations=average_evaluations(outcomes),
        avg_distortion=optional(average_distortion, outcomes),
    )
