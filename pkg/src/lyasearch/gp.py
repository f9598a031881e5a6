"""Genetic-programming refinement of sampled candidate expressions.

The policy batch seeds the population; subtree mutation and subtree crossover
vary it, fitness is the bounded Lyapunov-risk reward over the training set,
and tournament selection fills each next generation.  Expressions are kept in
their raw (pre-origin-shift) form so the refined token sequences stay inside
the decoder vocabulary; fitness internally applies the origin shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .dynamics import DynamicalSystem
from .errors import NonFiniteAtOrigin
from .reward import lyapunov_risk, reward_from_risk


@dataclass(frozen=True)
class GPConfig:
    mutation_prob: float = 0.5
    crossover_prob: float = 0.5
    tournament_size: int | None = None   # None -> 2n + 3
    generations: int | None = None       # None -> 2n; 0 runs no evolution
    elite_frac: float = 0.1
    max_subtree_depth: int = 3
    constants: bool = False        # let mutation inject integer coefficients
    elitism: bool = True           # carry the best member into each generation
    k_max: int = 30

    def resolved_tournament(self, dim: int) -> int:
        return self.tournament_size if self.tournament_size is not None else 2 * dim + 3

    def resolved_generations(self, dim: int) -> int:
        return self.generations if self.generations is not None else 2 * dim


def mutate(e: ex.Expr, rng: np.random.Generator, dim: int,
           cfg: GPConfig = GPConfig()) -> ex.Expr:
    """Replace a uniformly chosen subtree with a fresh random one.

    Retries up to 10 times if the result exceeds the complexity cap, then
    returns the input unchanged.
    """
    for _ in range(10):
        pos = int(rng.integers(0, e.complexity))
        repl = ex.random_expr(rng, dim, cfg.max_subtree_depth, cfg.constants)
        out = ex.replace_subtree(e, pos, repl)
        if out.complexity <= cfg.k_max:
            return out
    return e


def crossover(a: ex.Expr, b: ex.Expr, rng: np.random.Generator,
              k_max: int = 30) -> tuple[ex.Expr, ex.Expr]:
    """Swap uniformly chosen subtrees between two parents (complexity-capped)."""
    for _ in range(10):
        pa = int(rng.integers(0, a.complexity))
        pb = int(rng.integers(0, b.complexity))
        sa = ex.subtree_at(a, pa)
        sb = ex.subtree_at(b, pb)
        na = ex.replace_subtree(a, pa, sb)
        nb = ex.replace_subtree(b, pb, sa)
        if na.complexity <= k_max and nb.complexity <= k_max:
            return na, nb
    return a, b


def tournament_select(population: list[ex.Expr], fitness: np.ndarray, l: int,
                      rng: np.random.Generator) -> ex.Expr:
    """Best member of a random l-subset; ties broken by lower complexity,
    then earlier index."""
    n = len(population)
    if n == 0:
        raise ValueError("empty population")
    idx = rng.choice(n, size=min(l, n), replace=False)
    best = min(idx, key=lambda i: (-fitness[i], population[i].complexity, i))
    return population[best]


def _fitness_of(e: ex.Expr, system: DynamicalSystem, X: np.ndarray,
                cache: dict) -> float:
    if e in cache:
        return cache[e]
    value = 0.0
    if ex.depends_on_all_vars(e, system.dim):
        try:
            shifted = ex.subtract_origin(e, system.dim)
            value = reward_from_risk(lyapunov_risk(shifted, system, X), True)
        except NonFiniteAtOrigin:
            value = 0.0
    cache[e] = value
    return value


def evolve(initial: list[ex.Expr], system: DynamicalSystem, X: np.ndarray,
           cfg: GPConfig, rng: np.random.Generator):
    """Run the evolutionary loop; returns (population, fitness array).

    Per generation: each member mutates w.p. mutation_prob, consecutive pairs
    cross over w.p. crossover_prob, fitness is evaluated, and tournament
    selection refills the population at constant size.  With elitism on, the
    best individual seen so far survives verbatim, which makes the best
    fitness non-decreasing.
    """
    if not initial:
        raise ValueError("empty initial population")
    dim = system.dim
    size = len(initial)
    l = cfg.resolved_tournament(dim)
    cache: dict = {}
    population = list(initial)
    fitness = np.array([_fitness_of(e, system, X, cache) for e in population])
    best_e, best_f = max(zip(population, fitness), key=lambda t: t[1])

    for _gen in range(cfg.resolved_generations(dim)):
        varied = list(population)
        for i in range(size):
            if rng.random() < cfg.mutation_prob:
                varied[i] = mutate(varied[i], rng, dim, cfg)
        for i in range(0, size - 1, 2):
            if rng.random() < cfg.crossover_prob:
                varied[i], varied[i + 1] = crossover(varied[i], varied[i + 1],
                                                     rng, cfg.k_max)
        vfit = np.array([_fitness_of(e, system, X, cache) for e in varied])
        population = [tournament_select(varied, vfit, l, rng) for _ in range(size)]
        fitness = np.array([cache[e] for e in population])
        gen_best = int(np.argmax(vfit))
        if vfit[gen_best] > best_f:
            best_e, best_f = varied[gen_best], float(vfit[gen_best])
        if cfg.elitism:
            worst = int(np.argmin(fitness))
            population[worst] = best_e
            fitness[worst] = best_f
    return population, fitness


def elite_set(population: list[ex.Expr], fitness: np.ndarray, fraction: float,
              quota_base: int | None = None):
    """Top ceil(fraction * Q) members by fitness as (expression, fitness) pairs.

    Ties break toward lower complexity, then earlier index.  The quota is
    honored even when every fitness is zero (the guidance loss then weights
    those members to nothing on its own).
    """
    if not population:
        raise ValueError("empty population")
    Q = quota_base if quota_base is not None else len(population)
    quota = min(len(population), max(1, math.ceil(fraction * Q)))
    order = sorted(range(len(population)),
                   key=lambda i: (-fitness[i], population[i].complexity, i))
    return [(population[i], float(fitness[i])) for i in order[:quota]]
