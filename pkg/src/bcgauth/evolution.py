"""Genetic search over CNN genomes.

Each generation holds ``population`` genomes scored by ``far**2 + frr**2``
on held-out tuning data (lower is better). The next generation keeps the
best quarter as elites, adds ``random_parents`` drawn from the rest, and
fills up with children made by uniform trait crossover of two random
parents followed by per-trait mutation. Parents carry their scores
forward, so they are not retrained.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .neuralnet import (
    DEFAULT_EPOCHS,
    TRAIT_DOMAINS,
    CnnGenome,
    InvalidGenomeError,
    TrainSet,
    build_model,
    train,
)
from .seeds import substream_seed

log = logging.getLogger(__name__)

TRAIT_NAMES = tuple(TRAIT_DOMAINS)


class GaConfigError(ValueError):
    pass


@dataclass(frozen=True)
class GaConfig:
    population: int = 20
    generations: int = 10
    elite_fraction: float = 0.25
    random_parents: int = 3
    children_per_gen: int = 12
    mutation_rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        n_elite = self.population * self.elite_fraction
        if abs(n_elite - round(n_elite)) > 1e-9 or round(n_elite) < 1:
            raise GaConfigError(
                f"population*elite_fraction = {n_elite} must be a positive integer"
            )
        if self.random_parents < 0 or self.random_parents > self.population - round(n_elite):
            raise GaConfigError("random_parents must fit in the non-elite remainder")
        if self.n_parents + self.children_per_gen != self.population:
            raise GaConfigError(
                f"parents ({self.n_parents}) + children ({self.children_per_gen}) "
                f"must equal population ({self.population})"
            )
        if self.n_parents < 2:
            raise GaConfigError("need at least two parents for crossover")
        if self.generations < 1:
            raise GaConfigError("generations must be at least 1")
        if not 0.0 <= self.mutation_rate <= 1.0:
            raise GaConfigError("mutation_rate must lie in [0, 1]")

    @property
    def n_elites(self) -> int:
        return int(round(self.population * self.elite_fraction))

    @property
    def n_parents(self) -> int:
        return self.n_elites + self.random_parents


@dataclass(frozen=True)
class ScoredGenome:
    genome: CnnGenome
    far: float
    frr: float

    @property
    def score(self) -> float:
        return self.far ** 2 + self.frr ** 2


WORST = (1.0, 1.0)


def far_frr(confidence: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> tuple[float, float]:
    confidence = np.asarray(confidence)
    labels = np.asarray(labels).astype(bool)
    accept = confidence > threshold
    far = float(np.mean(accept[~labels])) if np.any(~labels) else 0.0
    frr = float(np.mean(~accept[labels])) if np.any(labels) else 0.0
    return far, frr


def evaluate_genome(genome: CnnGenome, train_set: TrainSet, tune_x: np.ndarray, tune_y: np.ndarray,
                    w_s: int = 3, seed: int = 0, epochs: int = DEFAULT_EPOCHS) -> ScoredGenome:
    """Build, train and score one genome at threshold 0.5.

    A genome that cannot be built (trait out of domain, or a time axis that
    collapses) gets the worst score, ``far = frr = 1``.
    """
    if len(tune_x) == 0:
        raise ValueError("tune set is empty")
    try:
        model = build_model(genome, w_s, seed=substream_seed(seed, "init"))
    except InvalidGenomeError as exc:
        log.info("invalid genome scored as worst: %s", exc)
        return ScoredGenome(genome, *WORST)
    train(model, train_set, seed=substream_seed(seed, "shuffle"), epochs=epochs)
    far, frr = far_frr(model.predict(tune_x), tune_y)
    return ScoredGenome(genome, far, frr)


def random_genome(rng: np.random.Generator) -> CnnGenome:
    return CnnGenome(**{name: _draw(rng, TRAIT_DOMAINS[name]) for name in TRAIT_NAMES})


def _draw(rng: np.random.Generator, domain: tuple):
    v = domain[int(rng.integers(len(domain)))]
    return v.item() if isinstance(v, np.generic) else v


def crossover(a: CnnGenome, b: CnnGenome, rng: np.random.Generator) -> CnnGenome:
    """Uniform crossover: each trait comes from ``a`` or ``b`` with probability 1/2."""
    ta, tb = a.traits(), b.traits()
    return CnnGenome(**{n: ta[n] if rng.random() < 0.5 else tb[n] for n in TRAIT_NAMES})


def mutate(g: CnnGenome, rate: float, rng: np.random.Generator) -> CnnGenome:
    """Redraw each trait from its full domain with probability ``rate``.

    A redraw may land on the current value, so the chance a trait actually
    changes is ``rate * (1 - 1/|domain|)``.
    """
    t = g.traits()
    for name in TRAIT_NAMES:
        if rng.random() < rate:
            t[name] = _draw(rng, TRAIT_DOMAINS[name])
    return CnnGenome(**t)


def select_parents(scored: Sequence[ScoredGenome], cfg: GaConfig,
                   rng: np.random.Generator) -> list[ScoredGenome]:
    """Elites (lowest scores, ties by position) plus distinct random picks from the rest.

    ``scored`` must be in creation order; the returned list holds the
    elites in rank order followed by the random picks.
    """
    if len(scored) != cfg.population:
        raise GaConfigError(f"expected a population of {cfg.population}, got {len(scored)}")
    order = sorted(range(len(scored)), key=lambda i: (scored[i].score, i))
    elites = order[: cfg.n_elites]
    rest = order[cfg.n_elites :]
    picks = rng.choice(len(rest), size=cfg.random_parents, replace=False)
    return [scored[i] for i in elites] + [scored[rest[int(j)]] for j in picks]


@dataclass
class GaResult:
    best: ScoredGenome
    history: list[list[float]]
    log_records: list[dict] = field(default_factory=list)

    def best_so_far(self) -> list[float]:
        out, cur = [], float("inf")
        for gen in self.history:
            cur = min(cur, min(gen))
            out.append(cur)
        return out


Evaluator = Callable[[CnnGenome, int], ScoredGenome]


def run_ga(cfg: GaConfig, train_set: TrainSet | None = None, tune_x: np.ndarray | None = None,
           tune_y: np.ndarray | None = None, w_s: int = 3, epochs: int = DEFAULT_EPOCHS,
           evaluator: Evaluator | None = None) -> GaResult:
    """Run the search and return the best genome seen in any generation.

    ``evaluator(genome, seed)`` replaces training-based scoring when given;
    otherwise ``train_set``/``tune_x``/``tune_y`` are required. Every random
    draw comes from a stream keyed by ``(cfg.seed, generation, index)``.
    """
    if evaluator is None:
        if train_set is None or tune_x is None or tune_y is None:
            raise ValueError("run_ga needs either an evaluator or train/tune data")

        def evaluator(genome: CnnGenome, seed: int) -> ScoredGenome:
            return evaluate_genome(genome, train_set, tune_x, tune_y, w_s=w_s, seed=seed, epochs=epochs)

    rng0 = np.random.default_rng(substream_seed(cfg.seed, "population"))
    population = [random_genome(rng0) for _ in range(cfg.population)]
    cached: list[ScoredGenome | None] = [None] * cfg.population

    history: list[list[float]] = []
    records: list[dict] = []
    best: ScoredGenome | None = None
    for gen in range(cfg.generations):
        scored: list[ScoredGenome] = []
        for idx, genome in enumerate(population):
            hit = cached[idx]
            sg = hit if hit is not None else evaluator(genome, substream_seed(cfg.seed, "eval", gen, idx))
            scored.append(sg)
            records.append({
                "generation": gen, "index": idx, "genome": genome.traits(),
                "far": sg.far, "frr": sg.frr, "score": sg.score, "cached": hit is not None,
            })
            if best is None or sg.score < best.score:
                best = sg
        history.append([sg.score for sg in scored])
        log.info("generation %d: best %.4f, best so far %.4f", gen, min(history[-1]), best.score)
        if gen == cfg.generations - 1:
            break
        rng = np.random.default_rng(substream_seed(cfg.seed, "breed", gen))
        parents = select_parents(scored, cfg, rng)
        children = []
        for _ in range(cfg.children_per_gen):
            i, j = rng.choice(len(parents), size=2, replace=False)
            child = crossover(parents[int(i)].genome, parents[int(j)].genome, rng)
            children.append(mutate(child, cfg.mutation_rate, rng))
        population = [p.genome for p in parents] + children
        cached = list(parents) + [None] * len(children)
    assert best is not None
    return GaResult(best=best, history=history, log_records=records)


def write_ga_outputs(result: GaResult, log_path: str | Path, best_path: str | Path) -> None:
    from .io_utils import atomic_write_text

    lines = [json.dumps(r, sort_keys=True) for r in result.log_records]
    atomic_write_text(log_path, "\n".join(lines) + "\n")
    best = {
        "genome": result.best.genome.traits(),
        "far": result.best.far,
        "frr": result.best.frr,
        "score": result.best.score,
    }
    atomic_write_text(best_path, json.dumps(best, indent=2, sort_keys=True) + "\n")
