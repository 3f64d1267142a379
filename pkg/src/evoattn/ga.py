"""Genetic search over classifier-head architectures.

Chromosomes are hidden-layer width lists. Each generation evaluates every
new individual (fitness = validation accuracy in [0, 1]), carries the top
`elitism` individuals forward unchanged, then refills the population with
children produced by roulette-wheel parent selection, random pairing,
per-layer crossover, and structural plus per-layer width mutation.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FitnessError, ValidationError
from .network import Architecture

CONVERGENCE_DELTA = 1e-6
CONVERGENCE_PATIENCE = 5


@dataclass(frozen=True)
class GaConfig:
    population_size: int
    generations: int
    l_max: int = 5
    n_min: int = 16
    n_max: int = 1024
    p_add: float = 0.2
    p_remove: float = 0.2
    p_neuron: float = 0.3
    elitism: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError(f"population_size must be >= 2, got {self.population_size}")
        if self.generations < 1:
            raise ConfigError(f"generations must be >= 1, got {self.generations}")
        if self.l_max < 1:
            raise ConfigError(f"l_max must be >= 1, got {self.l_max}")
        if not 1 <= self.n_min <= self.n_max:
            raise ConfigError(f"need 1 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        for name in ("p_add", "p_remove", "p_neuron"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if self.p_add + self.p_remove > 1.0:
            raise ConfigError("p_add + p_remove must be <= 1")
        if not 0 <= self.elitism < self.population_size:
            raise ConfigError(f"elitism must be in [0, population_size), got {self.elitism}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")


@dataclass
class Individual:
    chromosome: Architecture
    fitness: float | None = None
    eval_seed: int | None = None


@dataclass(frozen=True)
class GaRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    best_chromosome: Architecture


GA_HISTORY_HEADER = "generation,best_fitness,mean_fitness,best_chromosome"


def ga_history_to_csv(history: list[GaRecord]) -> str:
    lines = [GA_HISTORY_HEADER]
    for rec in history:
        lines.append(f"{rec.generation},{rec.best_fitness!r},{rec.mean_fitness!r},{rec.best_chromosome}")
    return "\n".join(lines) + "\n"


def derive_seed(master_seed: int, *key: int) -> int:
    """Stable 64-bit seed from a master seed and an integer key path."""
    seq = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, np.uint64)[0])


def init_population(config: GaConfig, rng: np.random.Generator) -> list[Individual]:
    """Layer counts uniform in [1, l_max], widths uniform in [n_min, n_max]."""
    population = []
    for _ in range(config.population_size):
        layers = int(rng.integers(1, config.l_max + 1))
        widths = tuple(int(w) for w in rng.integers(config.n_min, config.n_max + 1, size=layers))
        population.append(Individual(Architecture(widths)))
    return population


def roulette_select(population: list[Individual], rng) -> int:
    """Fitness-proportional index draw; uniform fallback when all fitness is 0."""
    if not population:
        raise ValidationError("cannot select from an empty population")
    fitness = []
    for ind in population:
        if ind.fitness is None:
            raise ValidationError("roulette selection requires evaluated individuals")
        if ind.fitness < 0:
            raise ValidationError(f"fitness must be >= 0, got {ind.fitness}")
        fitness.append(ind.fitness)
    total = float(sum(fitness))
    r = float(rng.random())
    if total == 0.0:
        return int(r * len(population)) % len(population)
    cumulative = np.cumsum(np.asarray(fitness, dtype=np.float64) / total)
    cumulative[-1] = 1.0
    # first index i with cumulative[i] >= r, i.e. C_{i-1} < r <= C_i
    return int(np.searchsorted(cumulative, r, side="left"))


def pair_parents(parent_pool: list[Individual], rng) -> list[tuple[Individual, Individual]]:
    """Shuffle the pool, pair sequentially; an odd leftover is paired with a
    uniformly chosen member of the already-paired pool."""
    n = len(parent_pool)
    if n < 2:
        raise ValidationError(f"parent pool must have >= 2 members, got {n}")
    order = [int(i) for i in rng.permutation(n)]
    pairs = [
        (parent_pool[order[i]], parent_pool[order[i + 1]])
        for i in range(0, n - 1, 2)
    ]
    if n % 2 == 1:
        partner = order[int(rng.integers(0, n - 1))]
        pairs.append((parent_pool[order[-1]], parent_pool[partner]))
    return pairs


def crossover(p1: Architecture, p2: Architecture, rng) -> Architecture:
    """Child takes its layer count from either parent (p = 0.5); shared-depth
    layers flip a coin per layer, deeper layers copy from the longer parent."""
    w1, w2 = p1.hidden_widths, p2.hidden_widths
    n1, n2 = len(w1), len(w2)
    n_child = n1 if rng.random() < 0.5 else n2
    longer = w1 if n1 >= n2 else w2
    shared = min(n1, n2)
    child = []
    for i in range(n_child):
        if i < shared:
            child.append(w1[i] if rng.random() < 0.5 else w2[i])
        else:
            child.append(longer[i])
    return Architecture(tuple(child))


def mutate(child: Architecture, config: GaConfig, rng) -> Architecture:
    """One add/remove/keep draw on the layer count (out-of-bounds results are
    a no-op), then each layer's width is independently redrawn with
    probability p_neuron from [n_min, n_max]."""
    widths = list(child.hidden_widths)
    r = rng.random()
    if r < config.p_add:
        if len(widths) < config.l_max:
            widths.append(int(rng.integers(config.n_min, config.n_max + 1)))
    elif r < config.p_add + config.p_remove:
        if len(widths) > 1:
            del widths[int(rng.integers(0, len(widths)))]
    for i in range(len(widths)):
        if rng.random() < config.p_neuron:
            widths[i] = int(rng.integers(config.n_min, config.n_max + 1))
    return Architecture(tuple(widths))


def _evaluate_generation(population, generation, config, fitness_fn, cache, parallel):
    pending = [(slot, ind) for slot, ind in enumerate(population) if ind.fitness is None]
    jobs = {}  # chromosome -> (architecture, derived seed), first occurrence wins
    for slot, ind in pending:
        key = ind.chromosome.hidden_widths
        if key not in cache and key not in jobs:
            jobs[key] = (ind.chromosome, derive_seed(config.seed, generation, slot))

    def run(job):
        arch, seed = job
        try:
            value = fitness_fn(arch, seed)
        except FitnessError:
            raise
        except Exception as exc:
            raise FitnessError(arch, exc) from exc
        if not 0.0 <= value <= 1.0:
            raise FitnessError(arch, f"fitness {value} outside [0, 1]")
        return float(value)

    job_list = list(jobs.items())
    if parallel and parallel > 1 and len(job_list) > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(run, (job for _, job in job_list)))
    else:
        results = [run(job) for _, job in job_list]
    for (key, (_, seed)), value in zip(job_list, results):
        cache[key] = (value, seed)
    for _, ind in pending:
        ind.fitness, ind.eval_seed = cache[ind.chromosome.hidden_widths]


def _next_generation(population, config, rng):
    n = config.population_size
    by_fitness = sorted(range(n), key=lambda i: (-population[i].fitness, i))
    elites = [
        Individual(population[i].chromosome, population[i].fitness, population[i].eval_seed)
        for i in by_fitness[:config.elitism]
    ]
    parents = [population[roulette_select(population, rng)] for _ in range(n)]
    children = []
    for a, b in pair_parents(parents, rng):
        for _ in range(2):  # each pair emits two independently drawn children
            chromo = mutate(crossover(a.chromosome, b.chromosome, rng), config, rng)
            children.append(Individual(chromo))
    return elites + children[:n - config.elitism]


def run_ga(config: GaConfig, fitness_fn, parallel: int | None = None):
    """Run the generational loop; returns (best individual, history).

    fitness_fn(architecture, seed) must be pure and deterministic for a
    given pair; results are cached by chromosome so duplicates are never
    re-evaluated. Search stops after `generations` rounds, or earlier once
    the best fitness has not improved by more than 1e-6 for 5 consecutive
    generations.
    """
    rng = np.random.default_rng(config.seed)
    population = init_population(config, rng)
    cache: dict[tuple[int, ...], tuple[float, int]] = {}
    history: list[GaRecord] = []
    best: Individual | None = None
    stagnant = 0
    for generation in range(1, config.generations + 1):
        _evaluate_generation(population, generation, config, fitness_fn, cache, parallel)
        gen_best = max(population, key=lambda ind: ind.fitness)
        mean_fitness = sum(ind.fitness for ind in population) / len(population)
        history.append(GaRecord(generation, gen_best.fitness, mean_fitness, gen_best.chromosome))
        if best is None:
            best = Individual(gen_best.chromosome, gen_best.fitness, gen_best.eval_seed)
        elif gen_best.fitness > best.fitness + CONVERGENCE_DELTA:
            best = Individual(gen_best.chromosome, gen_best.fitness, gen_best.eval_seed)
            stagnant = 0
        else:
            if gen_best.fitness > best.fitness:
                best = Individual(gen_best.chromosome, gen_best.fitness, gen_best.eval_seed)
            stagnant += 1
            if stagnant >= CONVERGENCE_PATIENCE:
                break
        if generation < config.generations:
            population = _next_generation(population, config, rng)
    return best, history
