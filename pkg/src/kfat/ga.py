"""Real-coded genetic algorithm baseline on the normalised search box.

Each generation keeps the ``ceil(elite_fraction * P)`` best individuals
unchanged and fills the remaining slots with children: a share
``crossover_fraction`` (rounded) by blend crossover of two rank-selected
parents, the rest by Gaussian mutation of one rank-selected parent.
Children are clipped to the unit cube. The whole population, elites
included, is evaluated every generation, so a run costs exactly
``population_size * max_generations`` objective calls.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, TuningError
from .result import TraceEntry, TuningResult
from .tsbo import BoxSpace, denormalize

BLX_ALPHA = 0.5
MUTATION_HALVING = 5  # generations between halvings of the mutation std


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 15
    max_generations: int = 15
    elite_fraction: float = 0.75
    crossover_fraction: float = 0.8
    mutation_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.max_generations < 1:
            raise ConfigError("max_generations must be >= 1")
        for name in ("elite_fraction", "crossover_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if not self.mutation_std > 0:
            raise ConfigError("mutation_std must be > 0")

    @property
    def n_elite(self) -> int:
        return min(self.population_size, math.ceil(self.elite_fraction * self.population_size - 1e-9))

    @property
    def n_crossover(self) -> int:
        return int(round(self.crossover_fraction * (self.population_size - self.n_elite)))

    @property
    def budget(self) -> int:
        return self.population_size * self.max_generations

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GaConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ga key(s): {', '.join(sorted(unknown))}")
        return cls(**d)


def rank_weights(n: int) -> np.ndarray:
    """Selection probabilities proportional to reversed rank (best = n)."""
    w = np.arange(n, 0, -1, dtype=float)
    return w / w.sum()


def blend_crossover(a, b, rng: np.random.Generator, alpha: float = BLX_ALPHA) -> np.ndarray:
    lo = np.minimum(a, b)
    span = np.abs(a - b)
    return rng.uniform(lo - alpha * span, lo + (1 + alpha) * span)


def next_generation(pop: np.ndarray, fitness: np.ndarray, generation: int, cfg: GaConfig, rng: np.random.Generator) -> np.ndarray:
    order = np.argsort(fitness, kind="stable")
    ranked = pop[order]
    probs = rank_weights(len(pop))
    children = [ranked[i].copy() for i in range(cfg.n_elite)]
    std = cfg.mutation_std * 0.5 ** (generation // MUTATION_HALVING)
    n_child = cfg.population_size - cfg.n_elite
    for k in range(n_child):
        if k < cfg.n_crossover:
            i, j = rng.choice(len(pop), size=2, replace=False, p=probs)
            child = blend_crossover(ranked[i], ranked[j], rng)
        else:
            i = rng.choice(len(pop), p=probs)
            child = ranked[i] + rng.normal(0.0, std, size=pop.shape[1])
        children.append(np.clip(child, 0.0, 1.0))
    return np.array(children)


def ga_minimize(objective, space: BoxSpace | None = None, cfg: GaConfig = GaConfig()) -> TuningResult:
    space = space or BoxSpace.default()
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    trace: list[TraceEntry] = []

    def evaluate(u, generation):
        q = denormalize(u, space)
        try:
            j = float(objective(q))
        except Exception as exc:
            raise TuningError(f"objective failed at q={q.tolist()}: {exc}", trace) from exc
        if not math.isfinite(j):
            raise TuningError(f"objective returned non-finite value at q={q.tolist()}", trace)
        trace.append(TraceEntry(len(trace) + 1, f"gen{generation}", "", tuple(q.tolist()), tuple(u.tolist()), j))
        return j

    pop = rng.uniform(0.0, 1.0, size=(cfg.population_size, space.dim))
    fitness = np.array([evaluate(u, 0) for u in pop])
    for g in range(1, cfg.max_generations):
        pop = next_generation(pop, fitness, g, cfg, rng)
        fitness = np.array([evaluate(u, g) for u in pop])

    best = int(np.argmin([e.j for e in trace]))
    return TuningResult(
        method="ga",
        best_q=trace[best].q,
        best_j=trace[best].j,
        trace=trace,
        counts={"generations": cfg.max_generations, "evaluations": len(trace)},
        wall_time=time.perf_counter() - t0,
        seed=cfg.seed,
        space=space.to_dict(),
        config=cfg.to_dict(),
    )
