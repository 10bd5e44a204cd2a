"""Few-pixel attacks: genome encoding, perturbation semantics, attack runners.

A candidate solution encodes ``d`` pixel overwrites as consecutive
``(x, y, v_1..v_C)`` tuples of reals.  Decoding rounds half-up and clamps
coordinates to the image and intensities to [0, 255]; applying a perturbation
overwrites whole pixels (it never adds), with later entries winning on
duplicate coordinates.  Fitness is always a class probability of the
perturbed image: the target class (maximized) in targeted mode, the true
class (minimized) in non-targeted mode.
"""
from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np

from . import de
from .errors import AttackError, PixelstormError
from .imagery import ImageTensor, LabeledImage
from .oracle import Oracle

TARGETED_STOP = 0.5  # stop once the target class exceeds this probability
NONTARGETED_STOP = 0.05  # stop once the true class drops below this

COLOR_MU = 128.0
COLOR_SIGMA = 127.0

# preset name -> (population_size, max_generations)
PRESETS = {
    "kaggle_cifar10": (400, 100),
    "original_cifar10": (300, 50),
    "imagenet": (400, 100),
}


@dataclasses.dataclass(frozen=True)
class PixelPerturbation:
    """One pixel overwrite: coordinates plus the full replacement colour."""

    x: int
    y: int
    color: tuple

    def __post_init__(self):
        object.__setattr__(self, "color", tuple(int(v) for v in self.color))


@dataclasses.dataclass(frozen=True)
class AttackSpec:
    mode: str  # "targeted" | "nontargeted"
    pixel_count: int
    de: de.DeConfig
    targeted_stop: float = TARGETED_STOP
    nontargeted_stop: float = NONTARGETED_STOP
    preset: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("targeted", "nontargeted"):
            raise ValueError(f"unknown attack mode {self.mode!r}")
        if self.pixel_count < 1:
            raise ValueError("pixel_count must be positive")
        if self.preset is not None and self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.preset == "imagenet" and self.mode == "targeted":
            raise ValueError("the imagenet preset runs non-targeted attacks only")


def make_spec(preset, mode, pixel_count, seed, scale_f=0.5) -> AttackSpec:
    """Build an AttackSpec from a named preset."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
    population, generations = PRESETS[preset]
    config = de.DeConfig(
        population_size=population,
        scale_f=scale_f,
        max_generations=generations,
        seed=seed,
        direction="maximize" if mode == "targeted" else "minimize",
    )
    return AttackSpec(mode=mode, pixel_count=pixel_count, de=config, preset=preset)


@dataclasses.dataclass(frozen=True)
class AttackOutcome:
    id: str
    mode: str
    success: bool
    original_class: int
    target_class: Optional[int]
    predicted_class: int
    perturbation: list  # list[PixelPerturbation]
    final_probs: np.ndarray
    generations_run: int
    evaluations_used: int
    stopped_early: bool
    distortion: float
    fitness_trace: Optional[list] = None
    adversarial_image: Optional[ImageTensor] = None


def genome_dims(channels, pixel_count) -> int:
    return pixel_count * (2 + channels)


def perturbation_init(width, height, channels, pixel_count) -> list:
    """Initialization marginals: uniform coordinates over the image, Gaussian
    N(128, 127) intensities per channel."""
    spec = []
    for _ in range(pixel_count):
        spec.append(de.Uniform(0.0, float(width)))
        spec.append(de.Uniform(0.0, float(height)))
        spec.extend(de.Gaussian(COLOR_MU, COLOR_SIGMA) for _ in range(channels))
    return spec


def _round_half_up(values):
    return np.floor(np.asarray(values, np.float64) + 0.5).astype(np.int64)


def decode_batch(genomes, width, height, channels):
    """Vectorized decode of a (n, d*(2+C)) genome block.

    Returns int arrays ``xs, ys`` of shape (n, d) and ``colors`` of shape
    (n, d, C), already rounded half-up and clamped.
    """
    genomes = np.atleast_2d(np.asarray(genomes, np.float64))
    stride = 2 + channels
    if genomes.shape[1] == 0 or genomes.shape[1] % stride != 0:
        raise ValueError(
            f"genome length {genomes.shape[1]} is not a positive multiple of {stride}"
        )
    tuples = genomes.reshape(len(genomes), -1, stride)
    xs = np.clip(_round_half_up(tuples[:, :, 0]), 0, width - 1)
    ys = np.clip(_round_half_up(tuples[:, :, 1]), 0, height - 1)
    colors = np.clip(_round_half_up(tuples[:, :, 2:]), 0, 255)
    return xs, ys, colors


def decode_perturbation(genome, width, height, channels) -> list:
    """Decode one genome into its list of pixel overwrites."""
    xs, ys, colors = decode_batch(np.asarray(genome, np.float64)[None, :], width, height, channels)
    return [
        PixelPerturbation(x=int(xs[0, j]), y=int(ys[0, j]), color=tuple(colors[0, j]))
        for j in range(xs.shape[1])
    ]


def apply_perturbation(image: ImageTensor, perturbation: Sequence[PixelPerturbation]) -> ImageTensor:
    """Overwrite the listed pixels on a copy of the image (last write wins)."""
    data = image.data.copy()
    for p in perturbation:
        if not (0 <= p.x < image.width and 0 <= p.y < image.height):
            raise ValueError(f"pixel ({p.x}, {p.y}) outside {image.width}x{image.height}")
        if len(p.color) != image.channels:
            raise ValueError(f"colour {p.color} has {len(p.color)} channels, image has {image.channels}")
        base = (p.y * image.width + p.x) * image.channels
        data[base : base + image.channels] = p.color
    return ImageTensor(image.width, image.height, image.channels, data)


def apply_batch(base_flat, xs, ys, colors, width, channels):
    """Apply decoded perturbation batches to copies of one flat base image."""
    n, d = xs.shape
    out = np.tile(base_flat, (n, 1))
    rows = np.arange(n)
    for j in range(d):  # later tuples overwrite earlier ones
        base = (ys[:, j] * width + xs[:, j]) * channels
        for c in range(channels):
            out[rows, base + c] = colors[:, j, c]
    return out


def attack_distortion(original: ImageTensor, perturbation: Sequence[PixelPerturbation]) -> float:
    """Mean over modified pixels of the per-channel mean |new - original|."""
    last = {}
    for p in perturbation:
        last[(p.x, p.y)] = p.color
    if not last:
        return 0.0
    per_pixel = []
    for (x, y), color in last.items():
        orig = original.pixel(x, y)
        per_pixel.append(
            sum(abs(c - o) for c, o in zip(color, orig)) / original.channels
        )
    return float(sum(per_pixel) / len(per_pixel))


def fitness_targeted(oracle: Oracle, original: ImageTensor, genome, target_class) -> float:
    """Probability of ``target_class`` after applying the decoded genome."""
    perturbation = decode_perturbation(genome, original.width, original.height, original.channels)
    probs = oracle.predict(apply_perturbation(original, perturbation))
    return float(probs[target_class])


def fitness_nontargeted(oracle: Oracle, original: ImageTensor, genome, true_class) -> float:
    """Probability of the true class after applying the decoded genome."""
    perturbation = decode_perturbation(genome, original.width, original.height, original.channels)
    probs = oracle.predict(apply_perturbation(original, perturbation))
    return float(probs[true_class])


class _BestTracker:
    """Best evaluated candidate so far (strict improvements only, so the first
    achiever of the final best fitness is kept — matching selection's tie rule)."""

    __slots__ = ("maximize", "fitness", "genome", "image_row", "probs")

    def __init__(self, maximize):
        self.maximize = maximize
        self.fitness = None
        self.genome = None
        self.image_row = None
        self.probs = None

    def offer(self, values, genomes, images, probs):
        i = int(values.argmax() if self.maximize else values.argmin())
        v = float(values[i])
        if (
            self.fitness is None
            or (self.maximize and v > self.fitness)
            or (not self.maximize and v < self.fitness)
        ):
            self.fitness = v
            self.genome = genomes[i].copy()
            self.image_row = images[i].copy()
            self.probs = probs[i].copy()


def _run_attack(oracle, labeled, spec, mode, watched_class, target_class):
    info = oracle.info
    image = labeled.image
    oracle._check_image(image)
    if not 0 <= labeled.true_class < info.num_classes:
        raise ValueError(f"true class {labeled.true_class} outside 0..{info.num_classes - 1}")

    maximize = mode == "targeted"
    config = dataclasses.replace(spec.de, direction="maximize" if maximize else "minimize")
    init = perturbation_init(info.width, info.height, info.channels, spec.pixel_count)
    tracker = _BestTracker(maximize)
    base = image.data
    evaluations = 0

    def fitness(genomes):
        nonlocal evaluations
        xs, ys, colors = decode_batch(genomes, info.width, info.height, info.channels)
        images = apply_batch(base, xs, ys, colors, info.width, info.channels)
        try:
            probs = oracle.predict_raw(images)
        except PixelstormError:
            raise
        except Exception as exc:
            raise AttackError(
                f"oracle failed mid-attack on {labeled.id}: {exc}",
                evaluations_used=evaluations,
            ) from exc
        evaluations += len(images)
        values = probs[:, watched_class]
        tracker.offer(values, genomes, images, probs)
        return values

    if maximize:
        threshold = spec.targeted_stop
        early_stop = lambda best: best > threshold  # noqa: E731
    else:
        threshold = spec.nontargeted_stop
        early_stop = lambda best: best < threshold  # noqa: E731

    result = de.evolve(fitness, init, config, early_stop=early_stop)
    assert evaluations == result.evaluations_used
    assert tracker.fitness == result.best_fitness

    final_probs = tracker.probs
    predicted = int(np.argmax(final_probs))  # ties resolve to the lowest index
    success = predicted == target_class if maximize else predicted != labeled.true_class
    perturbation = decode_perturbation(tracker.genome, info.width, info.height, info.channels)
    adversarial = ImageTensor(info.width, info.height, info.channels, tracker.image_row)

    return AttackOutcome(
        id=labeled.id,
        mode=mode,
        success=bool(success),
        original_class=labeled.true_class,
        target_class=target_class,
        predicted_class=predicted,
        perturbation=perturbation,
        final_probs=final_probs,
        generations_run=result.generations_run,
        evaluations_used=result.evaluations_used,
        stopped_early=result.stopped_early,
        distortion=attack_distortion(image, perturbation),
        fitness_trace=result.fitness_trace,
        adversarial_image=adversarial,
    )


def run_targeted_attack(oracle: Oracle, labeled: LabeledImage, target_class, spec: AttackSpec) -> AttackOutcome:
    """Drive the target class's probability up; success iff it wins the argmax."""
    if spec.mode != "targeted":
        raise ValueError("run_targeted_attack needs a targeted AttackSpec")
    if not 0 <= target_class < oracle.info.num_classes:
        raise ValueError(f"target class {target_class} outside 0..{oracle.info.num_classes - 1}")
    if target_class == labeled.true_class:
        raise ValueError("target class must differ from the true class")
    return _run_attack(oracle, labeled, spec, "targeted", target_class, target_class)


def run_nontargeted_attack(oracle: Oracle, labeled: LabeledImage, spec: AttackSpec) -> AttackOutcome:
    """Drive the true class's probability down; success iff any other class wins."""
    if spec.mode != "nontargeted":
        raise ValueError("run_nontargeted_attack needs a nontargeted AttackSpec")
    return _run_attack(oracle, labeled, spec, "nontargeted", labeled.true_class, None)


def derive_nontargeted_from_targeted(outcomes: Sequence[AttackOutcome]) -> bool:
    """An image is non-targeted-perturbable iff any of its K-1 targeted runs won.

    Expects exactly one targeted outcome per non-true class of one image.
    """
    if not outcomes:
        raise ValueError("no outcomes given")
    ids = {o.id for o in outcomes}
    if len(ids) != 1:
        raise ValueError(f"outcomes span several images: {sorted(ids)}")
    if any(o.mode != "targeted" for o in outcomes):
        raise ValueError("all outcomes must be targeted")
    true_classes = {o.original_class for o in outcomes}
    if len(true_classes) != 1:
        raise ValueError("outcomes disagree on the original class")
    true_class = true_classes.pop()
    num_classes = len(outcomes[0].final_probs)
    expected = [c for c in range(num_classes) if c != true_class]
    got = sorted(o.target_class for o in outcomes)
    if got != expected:
        raise ValueError(
            f"need one outcome per non-true class {expected}, got targets {got}"
        )
    return any(o.success for o in outcomes)


def filter_correctly_classified(oracle: Oracle, images: Sequence[LabeledImage]) -> list:
    """Keep only images whose clean prediction matches their label."""
    if not images:
        return []
    kept = []
    probs = oracle.predict_batch([lab.image for lab in images])
    for lab, p in zip(images, probs):
        if int(np.argmax(p)) == lab.true_class:
            kept.append(lab)
    return kept
