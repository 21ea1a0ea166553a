"""EDA engine over adjacency-matrix genomes.

One generation: select the ``h`` best individuals, estimate a model over arc
indicators (univariate probability matrix, PBIL's persistent matrix, or a
MIMIC chain), sample ``d - e`` offspring from it, mutate, repair cycles, and
carry the ``e`` elites over unchanged.

Randomness is split by draw site: every (run seed, generation, site) triple
gets its own generator, so a run depends only on its seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from edabnsl.bayesnet import Dataset, is_acyclic
from edabnsl.mutation import TRANSPOSE_MODES, mutate, offdiag_indices

ALGORITHMS = ("univariate", "pbil", "mimic")
MUTATIONS = ("none", "bitwise", "transpose")
_ALIASES = {"umda": "univariate"}

_SITES = {"init": 0, "sample": 1, "mutate": 2, "repair": 3}


class ConfigError(ValueError):
    pass


class AcyclicityViolation(AssertionError):
    """A cyclic genome was about to enter a population."""


def site_rng(seed: int, generation: int, site: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(generation, _SITES[site])))


@dataclass
class Individual:
    genome: np.ndarray
    fitness: float | None = None


@dataclass(frozen=True)
class MimicChain:
    """Chain model over the off-diagonal arc positions.

    ``order`` indexes the row-major off-diagonal cells; ``cond[t]`` holds
    ``P(bit_t = 1 | previous bit = 0)`` and ``P(bit_t = 1 | previous bit = 1)``
    for chain position ``t >= 1`` (row 0 is unused and set to ``head_p``).
    """

    n: int
    order: np.ndarray
    head_p: float
    cond: np.ndarray


@dataclass
class EdaConfig:
    algorithm: str = "univariate"
    d: int = 50
    h: int | None = None
    generations: int = 200
    mutation: str = "none"
    rate: float = 0.0
    pbil_rate: float = 0.5
    elitism: int = 1
    seed: int = 0
    p0: float | None = None
    transpose_mode: str = "pair"
    check_acyclic: bool = True

    def __post_init__(self):
        self.algorithm = _ALIASES.get(self.algorithm, self.algorithm)
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.mutation not in MUTATIONS:
            raise ConfigError(f"mutation must be one of {MUTATIONS}, got {self.mutation!r}")
        if self.transpose_mode not in TRANSPOSE_MODES:
            raise ConfigError(f"transpose_mode must be one of {TRANSPOSE_MODES}")
        if self.d < 1:
            raise ConfigError("population size d must be >= 1")
        if self.h is None:
            self.h = max(1, self.d // 2)
        if not 1 <= self.h <= self.d:
            raise ConfigError(f"selection size h={self.h} must satisfy 1 <= h <= d={self.d}")
        if self.generations < 0:
            raise ConfigError("generations must be >= 0")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"mutation rate {self.rate} outside [0, 1]")
        if not 0.0 < self.pbil_rate <= 1.0:
            raise ConfigError(f"PBIL learning rate {self.pbil_rate} outside (0, 1]")
        if not 0 <= self.elitism <= self.d:
            raise ConfigError(f"elitism e={self.elitism} must satisfy 0 <= e <= d={self.d}")
        if self.p0 is not None and not 0.0 <= self.p0 <= 1.0:
            raise ConfigError("initial arc probability p0 outside [0, 1]")


@dataclass
class RunResult:
    best_per_generation: list[float]
    best: Individual
    final_population: list[Individual]
    wall_time: float
    seed: int
    evaluations: int = 0
    initial_best: float = field(default=float("nan"))


def default_p0(n: int) -> float:
    return min(1.0, 2.0 / n) if n > 1 else 0.0


def repair_acyclic(m, rng=None) -> np.ndarray:
    """Drop arcs until ``m`` is a DAG.

    Arcs are visited in an order shuffled by ``rng`` and re-inserted into an
    empty graph, skipping any arc that would close a cycle. Arcs are never
    added, so an acyclic input comes back unchanged.
    """
    rng = np.random.default_rng(rng)
    m = np.asarray(m, dtype=np.uint8)
    n = m.shape[0]
    rows, cols = np.nonzero(m)
    perm = rng.permutation(rows.size)
    if is_acyclic(m):
        return m.copy()
    out = np.zeros_like(m)
    # reach[w]: bitmask of nodes reachable from w, w included
    reach = [1 << w for w in range(n)]
    for k in perm.tolist():
        u = int(rows[k])
        v = int(cols[k])
        if reach[v] >> u & 1:
            continue
        out[u, v] = 1
        rv = reach[v]
        bit = 1 << u
        for w in range(n):
            if reach[w] & bit:
                reach[w] |= rv
    return out


def _draw_cells(p: np.ndarray, rng: np.random.Generator, size: int | None) -> np.ndarray:
    """Fire every off-diagonal cell whose probability beats a fresh uniform, row-major."""
    n = p.shape[0]
    rows, cols = offdiag_indices(n)
    shape = () if size is None else (size,)
    fire = p[rows, cols] > rng.random(shape + (rows.size,))
    out = np.zeros(shape + (n, n), dtype=np.uint8)
    out[..., rows, cols] = fire
    return out


def init_population(d: int, n: int, seed, p0: float | None = None) -> list[Individual]:
    """``d`` random DAGs: cells drawn with arc probability ``p0`` (default ``2/n``), then repaired."""
    if d < 1 or n < 1:
        raise ValueError("d and n must be >= 1")
    rng = np.random.default_rng(seed)
    p = np.full((n, n), default_p0(n) if p0 is None else p0)
    np.fill_diagonal(p, 0.0)
    raw = _draw_cells(p, rng, d)
    return [Individual(repair_acyclic(g, rng)) for g in raw]


def _ranking(pop: Sequence[Individual]) -> list[int]:
    for ind in pop:
        if ind.fitness is None:
            raise ValueError("every individual needs a fitness before selection")
    return sorted(range(len(pop)), key=lambda k: (-pop[k].fitness, k))


def select(pop: Sequence[Individual], h: int) -> list[Individual]:
    """Truncation selection: the ``h`` fittest, best first, ties to the lower index."""
    if not 0 <= h <= len(pop):
        raise ValueError(f"cannot select {h} of {len(pop)} individuals")
    return [pop[k] for k in _ranking(pop)[:h]]


def _stack(sel: Sequence[Individual]) -> np.ndarray:
    if not sel:
        raise ValueError("selection is empty")
    return np.stack([ind.genome for ind in sel])


def estimate_univariate(sel: Sequence[Individual]) -> np.ndarray:
    """Probability matrix: the cellwise mean of the selected genomes."""
    genomes = _stack(sel)
    return genomes.sum(axis=0, dtype=np.int64) / genomes.shape[0]


def pbil_update(prev: np.ndarray, sel_estimate: np.ndarray, a: float) -> np.ndarray:
    """Move ``prev`` toward ``sel_estimate`` by learning rate ``a``."""
    if not 0.0 < a <= 1.0:
        raise ValueError(f"learning rate {a} outside (0, 1]")
    if prev.shape != sel_estimate.shape:
        raise ValueError("probability matrices differ in size")
    if a == 1.0:
        return np.array(sel_estimate, dtype=float)
    out = prev + a * (sel_estimate - prev)
    np.clip(out, 0.0, 1.0, out=out)
    np.fill_diagonal(out, 0.0)
    return out


def _binary_entropy(p: np.ndarray) -> np.ndarray:
    return -(p * np.log(p) + (1.0 - p) * np.log1p(-p))


def estimate_mimic_chain(sel: Sequence[Individual]) -> MimicChain:
    """Greedy entropy chain over arc positions with add-one smoothing.

    The head is the position of lowest marginal entropy; each next position
    minimises its conditional entropy given the one appended last. Ties go to
    the lower position index. A conditional whose parent value never occurs in
    the selection falls back to the child's smoothed marginal.
    """
    genomes = _stack(sel)
    h, n = genomes.shape[0], genomes.shape[1]
    rows, cols = offdiag_indices(n)
    x = genomes[:, rows, cols].astype(np.int64)
    length = x.shape[1]
    ones = x.sum(axis=0)
    marginal = (ones + 1) / (h + 2)

    # co-occurrence counts, first axis = conditioning position b, second = c
    n11 = x.T @ x
    n_b1 = ones[:, None]
    n_b0 = h - n_b1
    n01 = ones[None, :] - n11
    fallback = np.broadcast_to(marginal[None, :], (length, length))
    with np.errstate(divide="ignore", invalid="ignore"):
        p1_given1 = np.where(n_b1 > 0, (n11 + 1) / (n_b1 + 2), fallback)
        p1_given0 = np.where(n_b0 > 0, (n01 + 1) / (n_b0 + 2), fallback)
    cond_entropy = (
        marginal[:, None] * _binary_entropy(p1_given1)
        + (1.0 - marginal[:, None]) * _binary_entropy(p1_given0)
    )

    order = np.empty(length, dtype=np.int64)
    cond = np.empty((length, 2))
    used = np.zeros(length, dtype=bool)
    head = int(np.argmin(_binary_entropy(marginal)))
    order[0] = head
    used[head] = True
    cond[0] = marginal[head]
    last = head
    for t in range(1, length):
        candidates = np.where(used, np.inf, cond_entropy[last])
        nxt = int(np.argmin(candidates))
        order[t] = nxt
        used[nxt] = True
        cond[t] = (p1_given0[last, nxt], p1_given1[last, nxt])
        last = nxt
    return MimicChain(n, order, float(marginal[head]), cond)


def sample_model(model, rng=None, size: int | None = None) -> np.ndarray:
    """Draw genomes from a probability matrix or MIMIC chain, before repair.

    Probability matrix: cell ``(i, j)`` is 1 iff ``P(i, j) > u`` for a fresh
    ``u ~ U[0, 1)``, cells in row-major order. Chain: one draw per position,
    along the chain. With ``size`` a stack of genomes is returned.
    """
    rng = np.random.default_rng(rng)
    if isinstance(model, MimicChain):
        n = model.n
        rows, cols = offdiag_indices(n)
        shape = () if size is None else (size,)
        u = rng.random(shape + (model.order.size,))
        bits = np.empty(u.shape, dtype=np.int64)
        bits[..., 0] = model.head_p > u[..., 0]
        for t in range(1, model.order.size):
            bits[..., t] = model.cond[t][bits[..., t - 1]] > u[..., t]
        out = np.zeros(shape + (n, n), dtype=np.uint8)
        out[..., rows[model.order], cols[model.order]] = bits
        return out
    p = np.asarray(model, dtype=float)
    return _draw_cells(p, rng, size)


def sample_offspring(model, rng=None) -> np.ndarray:
    """One offspring drawn from ``model`` and repaired to a DAG."""
    rng = np.random.default_rng(rng)
    return repair_acyclic(sample_model(model, rng), rng)


def run_eda(
    config: EdaConfig,
    data: Dataset | None = None,
    fitness: Callable[[np.ndarray], float] | None = None,
    n: int | None = None,
) -> RunResult:
    """Run ``config.generations`` generations and return the trace.

    ``fitness`` maps a genome to a score to maximise; it defaults to the
    cached BDeu score of ``data``. ``n`` is only needed when no data is given.
    The returned ``best`` is the fittest genome seen over the whole run.
    """
    if fitness is None:
        if data is None:
            raise ConfigError("run_eda needs data or a fitness function")
        from edabnsl.scoring import BDeScorer

        fitness = BDeScorer(data)
    if n is None:
        if data is None:
            raise ConfigError("run_eda needs the node count when no data is given")
        n = data.n_vars

    start = time.perf_counter()
    cfg = config
    evaluations = 0

    def admit(genomes) -> list[Individual]:
        nonlocal evaluations
        batch = []
        for g in genomes:
            if cfg.check_acyclic and not is_acyclic(g):
                raise AcyclicityViolation("cyclic genome entering the population")
            batch.append(Individual(g, float(fitness(g))))
        evaluations += len(batch)
        return batch

    pop = admit(ind.genome for ind in init_population(cfg.d, n, site_rng(cfg.seed, 0, "init"), cfg.p0))
    best = max(pop, key=lambda ind: ind.fitness)
    initial_best = best.fitness
    trace: list[float] = []
    model = np.full((n, n), 0.5)
    np.fill_diagonal(model, 0.0)

    for g in range(1, cfg.generations + 1):
        ranking = _ranking(pop)
        sel = [pop[k] for k in ranking[: cfg.h]]
        if cfg.algorithm == "univariate":
            model = estimate_univariate(sel)
        elif cfg.algorithm == "pbil":
            model = pbil_update(model, estimate_univariate(sel), cfg.pbil_rate)
        else:
            model = estimate_mimic_chain(sel)

        k = cfg.d - cfg.elitism
        children = []
        if k:
            sample_rng = site_rng(cfg.seed, g, "sample")
            repair_rng = site_rng(cfg.seed, g, "repair")
            sampled = np.stack([repair_acyclic(c, repair_rng) for c in sample_model(model, sample_rng, k)])
            mutated = mutate(sampled, cfg.mutation, cfg.rate, site_rng(cfg.seed, g, "mutate"), cfg.transpose_mode)
            children = admit(repair_acyclic(c, repair_rng) for c in mutated)
        elites = [pop[k] for k in sorted(ranking[: cfg.elitism])]
        pop = elites + children

        gen_best = max(pop, key=lambda ind: ind.fitness)
        trace.append(gen_best.fitness)
        if gen_best.fitness > best.fitness:
            best = gen_best

    return RunResult(
        best_per_generation=trace,
        best=best,
        final_population=pop,
        wall_time=time.perf_counter() - start,
        seed=cfg.seed,
        evaluations=evaluations,
        initial_best=initial_best,
    )

