"""Differential evolution, DE/rand/1 flavour, with strict budget accounting.

The scheme is deliberately minimal: each child is ``x_r1 + F * (x_r2 - x_r3)``
with the three donors pairwise distinct and distinct from the target slot, no
crossover step, and one-to-one selection where the child replaces its parent
only on a strict improvement (ties keep the parent).

Randomness contract: everything derives from one master seed.  Initialization
uses its own stream, and each generation's mutation randomness comes from a
stream keyed by ``(seed, generation)`` that is consumed in slot order before
any fitness evaluation happens.  Evaluation parallelism therefore cannot
change results, and identical config yields identical results, trace included.
"""
from __future__ import annotations

import dataclasses
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import EvaluationError

# A genome is a fixed-length 1-D float64 array.
Genome = np.ndarray

_INIT_STREAM = 0
_MUTATION_STREAM = 1


@dataclasses.dataclass(frozen=True)
class Uniform:
    """Uniform initialization over [lo, hi) for one genome dimension."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"uniform bounds out of order: [{self.lo}, {self.hi})")

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=size)


@dataclasses.dataclass(frozen=True)
class Gaussian:
    """Gaussian initialization for one genome dimension."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"negative sigma: {self.sigma}")

    def sample(self, rng, size):
        return rng.normal(self.mu, self.sigma, size=size)


# One marginal distribution per genome dimension.
InitSpec = Sequence[Union[Uniform, Gaussian]]


@dataclasses.dataclass(frozen=True)
class DeConfig:
    population_size: int = 400
    scale_f: float = 0.5
    max_generations: int = 100
    seed: int = 0
    direction: str = "maximize"

    def __post_init__(self):
        if self.population_size < 4:
            raise ValueError("population_size must be at least 4 (three donors + target)")
        if not 0.0 <= self.scale_f <= 2.0:
            raise ValueError(f"scale_f {self.scale_f} outside [0, 2]")
        if self.max_generations < 0:
            raise ValueError("max_generations must be non-negative")
        if self.direction not in ("maximize", "minimize"):
            raise ValueError(f"direction must be maximize or minimize, got {self.direction!r}")


@dataclasses.dataclass(frozen=True)
class EvolveResult:
    best_genome: Genome
    best_fitness: float
    generations_run: int
    evaluations_used: int
    # One (generation, population_best, population_mean) triple per recorded
    # generation, starting with generation 0 (the initial population).
    fitness_trace: list
    stopped_early: bool


def _stream(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def initialize_population(init: InitSpec, population_size, seed) -> np.ndarray:
    """Draw the initial population, one marginal distribution per dimension."""
    if len(init) == 0:
        raise ValueError("init spec has no dimensions")
    rng = _stream(seed, _INIT_STREAM)
    pop = np.empty((population_size, len(init)), dtype=np.float64)
    for j, dist in enumerate(init):
        pop[:, j] = dist.sample(rng, population_size)
    return pop


def de_combine(base, a, b, scale_f):
    """The DE/rand/1 arithmetic: ``base + F * (a - b)``.  No crossover."""
    base = np.asarray(base, dtype=np.float64)
    return base + scale_f * (np.asarray(a, np.float64) - np.asarray(b, np.float64))


def draw_donors(rng, population_size, target_index):
    """Three donor indices, pairwise distinct and distinct from the target."""
    if population_size < 4:
        raise ValueError("need at least 4 members to pick three distinct donors")
    picks = []
    while len(picks) < 3:
        c = int(rng.integers(0, population_size))
        if c != target_index and c not in picks:
            picks.append(c)
    return tuple(picks)


def mutate(population, target_index, scale_f, rng) -> Genome:
    """Build one child for the given slot from three random distinct donors."""
    pop = np.asarray(population, dtype=np.float64)
    r1, r2, r3 = draw_donors(rng, len(pop), target_index)
    return de_combine(pop[r1], pop[r2], pop[r3], scale_f)


def _draw_donor_matrix(rng, population_size):
    """Donor indices for every slot of one generation, drawn in slot order.

    Vectorized equivalent of calling :func:`draw_donors` per slot: resample
    until each row is pairwise distinct and avoids its own slot index.
    """
    targets = np.arange(population_size)
    donors = np.empty((population_size, 3), dtype=np.int64)
    for k in range(3):
        col = rng.integers(0, population_size, size=population_size)
        while True:
            clash = col == targets
            for prev in range(k):
                clash |= col == donors[:, prev]
            bad = np.nonzero(clash)[0]
            if bad.size == 0:
                break
            col[bad] = rng.integers(0, population_size, size=bad.size)
        donors[:, k] = col
    return donors


def select(parent_fitness, child_fitness, direction) -> bool:
    """One-to-one selection: True iff the child strictly improves on the parent."""
    if direction == "maximize":
        return child_fitness > parent_fitness
    if direction == "minimize":
        return child_fitness < parent_fitness
    raise ValueError(f"unknown direction {direction!r}")


def _evaluate(fitness, genomes):
    values = np.asarray(fitness(genomes), dtype=np.float64)
    if values.shape != (len(genomes),):
        raise ValueError(
            f"fitness returned shape {values.shape}, expected ({len(genomes)},)"
        )
    finite = np.isfinite(values)
    if not finite.all():
        i = int(np.nonzero(~finite)[0][0])
        raise EvaluationError(
            f"non-finite fitness {values[i]!r} for genome at slot {i}: {genomes[i].tolist()}",
            genome=genomes[i].copy(),
            index=i,
        )
    return values


def evolve(
    fitness: Callable[[np.ndarray], np.ndarray],
    init: InitSpec,
    config: DeConfig,
    early_stop: Optional[Callable[[float], bool]] = None,
    on_generation: Optional[Callable[[int, np.ndarray, np.ndarray], None]] = None,
) -> EvolveResult:
    """Run the evolution loop and account for every fitness evaluation.

    ``fitness`` maps a ``(n, dims)`` batch of genomes to ``(n,)`` fitness
    values; the whole population is evaluated in one call per generation.
    ``early_stop``, if given, sees the population-best fitness after each
    completed generation (including generation 0) and stops the run by
    returning True.  ``on_generation`` observes ``(generation, population,
    fitnesses)`` after each recorded generation.

    ``evaluations_used`` always equals ``population_size * (generations_run + 1)``.
    """
    n = config.population_size
    maximize = config.direction == "maximize"

    pop = initialize_population(init, n, config.seed)
    fit = _evaluate(fitness, pop)
    trace = []
    stopped_early = False

    def record(g):
        best = float(fit.max() if maximize else fit.min())
        trace.append((g, best, float(fit.mean())))
        if on_generation is not None:
            on_generation(g, pop.copy(), fit.copy())
        return best

    best = record(0)
    if early_stop is not None and early_stop(best):
        stopped_early = True
    else:
        for generation in range(1, config.max_generations + 1):
            rng = _stream(config.seed, _MUTATION_STREAM, generation)
            donors = _draw_donor_matrix(rng, n)
            children = (
                pop[donors[:, 0]]
                + config.scale_f * (pop[donors[:, 1]] - pop[donors[:, 2]])
            )
            child_fit = _evaluate(fitness, children)
            wins = child_fit > fit if maximize else child_fit < fit
            pop[wins] = children[wins]
            fit[wins] = child_fit[wins]
            best = record(generation)
            if early_stop is not None and early_stop(best):
                stopped_early = True
                break

    generations_run = trace[-1][0]
    best_index = int(fit.argmax() if maximize else fit.argmin())
    return EvolveResult(
        best_genome=pop[best_index].copy(),
        best_fitness=float(fit[best_index]),
        generations_run=generations_run,
        evaluations_used=n * (generations_run + 1),
        fitness_trace=trace,
        stopped_early=stopped_early,
    )


def trace_to_csv(trace) -> str:
    """Render a fitness trace as ``generation,best_fitness,mean_fitness`` CSV."""
    lines = ["generation,best_fitness,mean_fitness"]
    for generation, best, mean in trace:
        lines.append(f"{generation},{best!r},{mean!r}")
    return "\n".join(lines) + "\n"
