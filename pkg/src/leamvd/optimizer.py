"""LEA-MVD: a linear-memory evolutionary optimizer.

Each generation fits a diagonal Normal model to the rank-weighted
population, translates fresh samples along a combination of two main
variance directions (see :mod:`leamvd.directions`), keeps the ``n_elite``
best individuals unchanged and adapts two step sizes from the success of the
best individual.

Memory stays O(lambda * n_var): the population matrix is reused in place and
every other buffer is a handful of length-n vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np

from leamvd.directions import DirectionState, update_directions

SELECTION_EXPONENT = 1.5
RESTART_BETA1 = 0.1
INIT_BETA1 = 1.0
INIT_BETA2 = 0.9


class NonFiniteObjectiveError(ArithmeticError):
    def __init__(self, generation: int, index: int, value: float):
        super().__init__(
            f"objective returned {value!r} for individual {index} at generation {generation}"
        )
        self.generation = generation
        self.index = index
        self.value = value


def make_rng(seed: int) -> np.random.Generator:
    """The single PRNG stream used by a run (PCG64 seeded with ``seed``)."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class UniformBounds:
    pass


@dataclass(frozen=True)
class GaussianAroundSeed:
    seed: np.ndarray
    sigma: float = 0.1


InitMode = Union[UniformBounds, GaussianAroundSeed]


@dataclass
class OptimizerConfig:
    n_var: int
    lam: int = 24
    n_elite: int = 4
    x_inf: Union[float, np.ndarray] = -0.1
    x_sup: Union[float, np.ndarray] = 0.1
    n_gen: int = 50
    sigma_min_scale: float = 1e-4
    stagnation_limit: int = 10
    perturb_prob: float = 0.02
    worst_sample_count: int = 4
    rng_seed: int = 0
    init_mode: InitMode = field(default_factory=UniformBounds)
    clamp_to_bounds: bool = False
    reevaluate_elite: bool = False

    def __post_init__(self):
        if self.n_var < 1 or self.lam < 2 or self.n_gen < 1:
            raise ValueError("n_var, n_gen must be >= 1 and lam >= 2")
        if not 1 <= self.n_elite < self.lam:
            raise ValueError(f"need 1 <= n_elite < lam, got n_elite={self.n_elite}, lam={self.lam}")
        if not 1 <= self.worst_sample_count <= self.lam - 1:
            raise ValueError(
                f"worst_sample_count must be in [1, lam-1], got {self.worst_sample_count}"
            )
        if not 0.0 <= self.perturb_prob <= 1.0:
            raise ValueError(f"perturb_prob must be a probability, got {self.perturb_prob}")
        if self.stagnation_limit < 1 or self.sigma_min_scale <= 0:
            raise ValueError("stagnation_limit and sigma_min_scale must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in 64 unsigned bits")
        lo, hi = self.bounds()
        # equal bounds are a legal degenerate box
        if np.any(lo > hi):
            raise ValueError("x_inf must not exceed x_sup")
        if isinstance(self.init_mode, GaussianAroundSeed):
            if np.shape(self.init_mode.seed) != (self.n_var,):
                raise ValueError(
                    f"seed vector has shape {np.shape(self.init_mode.seed)}, "
                    f"expected ({self.n_var},)"
                )

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(np.asarray(self.x_inf, dtype=float), (self.n_var,))
        hi = np.broadcast_to(np.asarray(self.x_sup, dtype=float), (self.n_var,))
        return lo, hi

    @property
    def sigma_min(self) -> float:
        return self.sigma_min_scale * math.sqrt(self.n_var)


@dataclass
class Population:
    X: np.ndarray
    F: Optional[np.ndarray] = None
    generation: int = 0


@dataclass(frozen=True)
class EsdWeights:
    G: np.ndarray


@dataclass(frozen=True)
class StepSizes:
    beta1: float = INIT_BETA1
    beta2: float = INIT_BETA2
    count_felite: int = 0


@dataclass
class DiagonalModel:
    mu: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    f_best: float
    sigma_norm: float
    beta1: float
    beta2: float
    restarted: bool
    evals_cumulative: int


@dataclass
class RunResult:
    x_best: np.ndarray
    f_best: float
    generations_used: int
    stop_reason: str
    history: list[GenerationRecord]

    @property
    def restarts(self) -> int:
        return sum(r.restarted for r in self.history)


GENERATION_BUDGET = "GenerationBudget"
SIGMA_CONVERGED = "SigmaConverged"


def initial_population(config: OptimizerConfig, rng: np.random.Generator) -> Population:
    """Sample the first lambda x n_var population.

    Rows are drawn one after another so no temporary of population size is
    created. In seeded mode row 0 is the seed itself.
    """
    n, lam = config.n_var, config.lam
    X = np.empty((lam, n))
    mode = config.init_mode
    if isinstance(mode, GaussianAroundSeed):
        seed = np.asarray(mode.seed, dtype=float)
        X[0] = seed
        for row in X[1:]:
            rng.standard_normal(out=row)
            row *= mode.sigma
            row += seed
    else:
        lo, hi = config.bounds()
        width = hi - lo
        for row in X:
            rng.random(out=row)
            row *= width
            row += lo
    return Population(X=X, generation=1)


def selection(F: np.ndarray, n_elite: int) -> tuple[np.ndarray, np.ndarray]:
    """Best-first ranking (ascending objective, ties by index) and the elite prefix."""
    F = np.asarray(F)
    if not np.all(np.isfinite(F)):
        bad = int(np.flatnonzero(~np.isfinite(F))[0])
        raise ValueError(f"non-finite fitness {F[bad]!r} at index {bad}")
    ix = np.argsort(F, kind="stable")
    return ix, ix[:n_elite]


@lru_cache(maxsize=32)
def _esd(lam: int) -> np.ndarray:
    ranks = np.arange(lam, 0, -1, dtype=float)
    g = ranks**SELECTION_EXPONENT
    g /= math.fsum(g)
    g.flags.writeable = False
    return g


def esd_weights(lam: int) -> EsdWeights:
    """Rank weights (lam - k)^1.5 normalized to sum 1, best rank first."""
    if lam < 1:
        raise ValueError(f"lambda must be >= 1, got {lam}")
    return EsdWeights(G=_esd(lam))


def weighted_mean_std(X: np.ndarray, ix: np.ndarray, G: EsdWeights) -> DiagonalModel:
    """Per-variable weighted mean and standard deviation.

    Weight ``G[k]`` applies to the rank-k individual ``X[ix[k]]``. Works row
    by row with a single length-n scratch buffer.
    """
    g = G.G
    lam, n = X.shape
    if len(ix) != lam or len(g) != lam:
        raise ValueError(f"population has {lam} rows but ranking/weights have {len(ix)}/{len(g)}")
    mu = np.zeros(n)
    tmp = np.empty(n)
    for k, r in enumerate(ix):
        np.multiply(X[r], g[k], out=tmp)
        mu += tmp
    var = np.zeros(n)
    for k, r in enumerate(ix):
        np.subtract(X[r], mu, out=tmp)
        tmp *= tmp
        tmp *= g[k]
        var += tmp
    np.sqrt(var, out=var)
    return DiagonalModel(mu=mu, sigma=var)


def search_shift(dirs: DirectionState, beta2: float) -> np.ndarray:
    """v = beta2 * P + (1 - beta2) * mu_ani * C_ani."""
    v = np.multiply(dirs.P, beta2)
    v += ((1.0 - beta2) * dirs.mu_ani) * dirs.C_ani
    return v


def repopulate(
    model: DiagonalModel,
    dirs: DirectionState,
    steps: StepSizes,
    elite_rows: np.ndarray,
    config: OptimizerConfig,
    rng: np.random.Generator,
    out: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Elite rows followed by lam - n_elite freshly sampled rows.

    Per generated row the stream supplies n standard normals, then (if
    perturbation is on) n uniforms for the perturbation mask and one uniform
    factor per hit. ``out`` may alias the current population; its first
    ``n_elite`` rows are overwritten by ``elite_rows`` first.
    """
    n, lam = config.n_var, config.lam
    if model.mu.shape != (n,) or model.sigma.shape != (n,) or dirs.P.shape != (n,):
        raise ValueError("model/direction length does not match n_var")
    n_elite = elite_rows.shape[0]
    if elite_rows.shape != (config.n_elite, n):
        raise ValueError(f"elite_rows has shape {elite_rows.shape}, expected ({config.n_elite}, {n})")
    if out is None:
        out = np.empty((lam, n))
    if out[:n_elite] is not elite_rows:
        out[:n_elite] = elite_rows

    center = search_shift(dirs, steps.beta2)
    center *= steps.beta1
    center += model.mu
    p = config.perturb_prob
    lo, hi = config.bounds()
    mask_buf = np.empty(n) if p > 0 else None
    for row in out[n_elite:]:
        rng.standard_normal(out=row)
        row *= model.sigma
        row += center
        if p > 0:
            rng.random(out=mask_buf)
            hits = np.flatnonzero(mask_buf < p)
            row[hits] *= 1.0 + rng.uniform(-0.5, 0.5, hits.size)
        if config.clamp_to_bounds:
            np.clip(row, lo, hi, out=row)
    return out


def adapt_step_sizes(steps: StepSizes, improved: bool) -> StepSizes:
    b1, b2 = steps.beta1, steps.beta2
    if improved:
        b2 = min(1.0, b2 + 0.2)
        b1 = min(3.0, 1.1 * b1) if b1 > 1.0 else 1.4 * b1
        return StepSizes(beta1=b1, beta2=b2, count_felite=0)
    b2 = max(0.0, b2 - 0.1)
    b1 = 0.8 * b1 if b1 < 1.0 else 0.5 * b1
    return StepSizes(beta1=b1, beta2=b2, count_felite=steps.count_felite + 1)


def maybe_restart(
    steps: StepSizes, model: DiagonalModel, config: OptimizerConfig
) -> tuple[StepSizes, DiagonalModel, bool]:
    """After ``stagnation_limit`` stagnant generations, reset sigma to ones and beta1 to 0.1."""
    if steps.count_felite != config.stagnation_limit:
        return steps, model, False
    model = DiagonalModel(mu=model.mu, sigma=np.ones_like(model.sigma))
    return replace(steps, beta1=RESTART_BETA1, count_felite=0), model, True


Objective = Callable[[np.ndarray], float]


def _evaluate_rows(objective, X: np.ndarray, F: np.ndarray, start: int, generation: int) -> None:
    batch = getattr(objective, "batch", None)
    if batch is not None:
        F[start:] = batch(X[start:])
    else:
        for i in range(start, X.shape[0]):
            F[i] = objective(X[i])
    bad = np.flatnonzero(~np.isfinite(F[start:]))
    if bad.size:
        i = start + int(bad[0])
        raise NonFiniteObjectiveError(generation, i, float(F[i]))


def run(
    config: OptimizerConfig,
    objective: Objective,
    callback: Optional[Callable[[GenerationRecord], None]] = None,
) -> RunResult:
    """Minimize ``objective`` and return the best point seen.

    One history record is produced per generation, the initial population
    being generation 1. The run stops after ``n_gen`` generations or once the
    norm of the sampling standard deviations drops below ``sigma_min``.

    Stream order per generation: direction sampling, then repopulation.
    """
    rng = make_rng(config.rng_seed)
    lam, n_elite = config.lam, config.n_elite
    G = esd_weights(lam)

    pop = initial_population(config, rng)
    X = pop.X
    F = np.empty(lam)
    t = 1
    _evaluate_rows(objective, X, F, 0, t)
    evals = lam
    ix, _ = selection(F, n_elite)
    f_best = float(F[ix[0]])
    x_best_prev = X[ix[0]].copy()
    dirs = DirectionState.zeros(config.n_var)
    steps = StepSizes()
    history: list[GenerationRecord] = []

    def record(sigma_norm: float, restarted: bool) -> None:
        rec = GenerationRecord(t, f_best, sigma_norm, steps.beta1, steps.beta2, restarted, evals)
        history.append(rec)
        if callback is not None:
            callback(rec)

    while True:
        if t >= config.n_gen:
            model = weighted_mean_std(X, ix, G)
            record(float(np.linalg.norm(model.sigma)), False)
            stop = GENERATION_BUDGET
            break
        # directions before the model: same stream order, lower peak memory
        x_best = X[ix[0]]
        dirs = update_directions(
            dirs, X, ix, x_best, x_best_prev, config.worst_sample_count, rng
        )
        x_best_prev[:] = x_best
        model = weighted_mean_std(X, ix, G)
        steps, model, restarted = maybe_restart(steps, model, config)
        sigma_norm = float(np.linalg.norm(model.sigma))
        record(sigma_norm, restarted)
        if sigma_norm < config.sigma_min:
            stop = SIGMA_CONVERGED
            break

        # move the elite to the top rows, best first; the rest is overwritten
        elite = ix[:n_elite]
        X[:n_elite] = X[elite]
        F[:n_elite] = F[elite]
        repopulate(model, dirs, steps, X[:n_elite], config, rng, out=X)
        del model
        t += 1
        start = 0 if config.reevaluate_elite else n_elite
        _evaluate_rows(objective, X, F, start, t)
        evals += lam - start
        ix, _ = selection(F, n_elite)
        new_best = float(F[ix[0]])
        improved = new_best < f_best
        if config.reevaluate_elite:
            improved = new_best != f_best
        f_best = new_best
        steps = adapt_step_sizes(steps, improved)

    return RunResult(
        x_best=X[ix[0]].copy(),
        f_best=f_best,
        generations_used=t,
        stop_reason=stop,
        history=history,
    )
