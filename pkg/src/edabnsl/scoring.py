"""BDeu marginal likelihood of a structure given complete discrete data.

The score decomposes over families (a node and its parent set), so each
family score is cached per dataset. Everything is computed in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import gammaln

from edabnsl.bayesnet import CyclicGraph, Dataset, is_acyclic, parent_masks

DEFAULT_ESS = 1.0

# dense count tables above this many cells are built from observed configurations only
_DENSE_LIMIT = 1 << 20


class CyclicStructure(CyclicGraph):
    """Raised when asked to score a cyclic matrix."""


class FamilyKey(NamedTuple):
    """A node plus its parent set, the parent set packed as a bitmask."""

    child: int
    mask: int

    @classmethod
    def of(cls, child: int, parents: Sequence[int]) -> "FamilyKey":
        parents = sorted(parents)
        if child in parents:
            raise ValueError(f"node {child} cannot be its own parent")
        if len(set(parents)) != len(parents):
            raise ValueError("parents must be distinct")
        return cls(child, sum(1 << p for p in parents))

    @property
    def parents(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.mask.bit_length()) if self.mask >> i & 1)


@dataclass(frozen=True)
class FamilyCounts:
    """Sufficient statistics N_ijk of one family.

    ``counts`` holds only the parent configurations that occur in the data
    (``configs`` gives their row-major indices); unobserved rows are all-zero
    and contribute nothing to the score. :meth:`dense` rebuilds the full
    ``q x r`` table.
    """

    r: int
    q: int
    configs: np.ndarray
    counts: np.ndarray

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def dense(self) -> np.ndarray:
        table = np.zeros((self.q, self.r), dtype=np.int64)
        table[self.configs] = self.counts
        return table


def family_counts(data: Dataset, child: int, parents: Sequence[int]) -> FamilyCounts:
    """Count child states per joint parent configuration (parents sorted, last varies fastest)."""
    parents = sorted(parents)
    if child in parents or len(set(parents)) != len(parents):
        raise ValueError("parents must be distinct and exclude the child")
    records = data.records
    r = data.cardinalities[child]
    q = math.prod(data.cardinalities[p] for p in parents)
    config = np.zeros(data.n_records, dtype=np.int64)
    for p in parents:
        config = config * data.cardinalities[p] + records[:, p]
    cell = config * r + records[:, child]
    if q * r <= _DENSE_LIMIT:
        table = np.bincount(cell, minlength=q * r).reshape(q, r)
        configs = np.flatnonzero(table.any(axis=1))
        return FamilyCounts(r, q, configs, table[configs])
    cells, n = np.unique(cell, return_counts=True)
    configs, row = np.unique(cells // r, return_inverse=True)
    table = np.zeros((configs.size, r), dtype=np.int64)
    table[row, cells % r] = n
    return FamilyCounts(r, q, configs, table)


def bde_family_score(counts: FamilyCounts, ess: float = DEFAULT_ESS) -> float:
    """Log BDeu score of one family with equivalent sample size ``ess``."""
    if not ess > 0:
        raise ValueError("ess must be positive")
    if counts.counts.size == 0:
        return 0.0
    a_ij = ess / counts.q
    a_ijk = a_ij / counts.r
    n_ijk = counts.counts
    n_ij = n_ijk.sum(axis=1)
    score = np.sum(gammaln(a_ij) - gammaln(a_ij + n_ij))
    score += np.sum(gammaln(a_ijk + n_ijk) - gammaln(a_ijk))
    return float(score)


class ScoreCache:
    """Family-score cache bound to one dataset and one ess.

    Safe to share between threads: values are deterministic, so a racing
    duplicate insertion writes the same float.
    """

    def __init__(self, data: Dataset, ess: float = DEFAULT_ESS):
        self.data = data
        self.ess = float(ess)
        self._scores: dict[FamilyKey, float] = {}

    def __len__(self):
        return len(self._scores)

    def __contains__(self, key):
        return key in self._scores

    def family_score(self, key: FamilyKey) -> float:
        value = self._scores.get(key)
        if value is None:
            counts = family_counts(self.data, key.child, key.parents)
            value = self._scores[key] = bde_family_score(counts, self.ess)
        return value

    def clear(self) -> None:
        self._scores.clear()


def bde_score(data: Dataset, m, ess: float = DEFAULT_ESS, cache: ScoreCache | None = None) -> float:
    """Total log BDeu of structure ``m``: the sum of its family scores.

    Raises
    ------
    CyclicStructure
        If ``m`` is not a DAG.
    """
    m = np.asarray(m)
    if m.shape != (data.n_vars, data.n_vars):
        raise ValueError(f"structure is {m.shape[0]}x{m.shape[1]}, data has {data.n_vars} variables")
    if cache is None:
        cache = ScoreCache(data, ess)
    elif cache.data is not data or cache.ess != float(ess):
        raise ValueError("cache belongs to a different dataset or ess")
    if not is_acyclic(m):
        raise CyclicStructure("cannot score a cyclic structure")
    return sum(cache.family_score(FamilyKey(i, mask)) for i, mask in enumerate(parent_masks(m)))


class BDeScorer:
    """Callable fitness: ``scorer(m)`` returns the cached log BDeu of ``m``."""

    def __init__(self, data: Dataset, ess: float = DEFAULT_ESS):
        self.data = data
        self.ess = float(ess)
        self.cache = ScoreCache(data, self.ess)

    def __call__(self, m) -> float:
        return bde_score(self.data, m, self.ess, self.cache)

    def family_scores(self, m) -> list[float]:
        return [self.cache.family_score(FamilyKey(i, mask)) for i, mask in enumerate(parent_masks(np.asarray(m)))]
