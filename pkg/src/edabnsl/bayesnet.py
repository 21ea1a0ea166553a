"""Directed graphs as adjacency matrices, discrete Bayesian networks and data.

A structure over ``n`` variables is an ``(n, n)`` ``uint8`` array where cell
``(i, j)`` is 1 iff there is an arc ``i -> j``. Networks are immutable once
built; sampling owns its generator.
"""

from __future__ import annotations

import csv
import heapq
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class CyclicGraph(ValueError):
    """The matrix contains a directed cycle and is not a legal structure."""


class ParseError(ValueError):
    """A network file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ValueError):
    """A network parsed fine but violates a structural or CPT invariant."""


CPT_TOLERANCE = 1e-9


def as_matrix(m) -> np.ndarray:
    """Coerce ``m`` into a square ``uint8`` adjacency matrix with zero diagonal."""
    a = np.asarray(m)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"adjacency matrix must be square and non-empty, got shape {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise ValueError("adjacency matrix cells must be 0 or 1")
    a = a.astype(np.uint8)
    if a.diagonal().any():
        raise ValueError("adjacency matrix has a self-loop on the diagonal")
    return a


@lru_cache(maxsize=None)
def _bit_weights(n: int) -> np.ndarray:
    return np.left_shift(np.int64(1), np.arange(n, dtype=np.int64))


def parent_masks(m: np.ndarray) -> list[int]:
    """Bitmask of the parents of every node (bit ``i`` of entry ``j`` set iff ``i -> j``)."""
    n = m.shape[0]
    if n < 63:
        return np.dot(_bit_weights(n), m).tolist()
    return [sum(1 << int(i) for i in np.flatnonzero(m[:, j])) for j in range(n)]


def parents_of(m: np.ndarray, child: int) -> list[int]:
    return np.flatnonzero(m[:, child]).tolist()


def is_acyclic(m) -> bool:
    """True iff the directed graph encoded by ``m`` has no directed cycle."""
    m = np.asarray(m)
    n = m.shape[0]
    parents = parent_masks(m)
    remaining = (1 << n) - 1
    while remaining:
        before = remaining
        # peel off every node whose remaining parents are already gone
        for j in range(n):
            if remaining >> j & 1 and not parents[j] & remaining:
                remaining ^= 1 << j
        if remaining == before:
            return False
    return True


def topological_order(m) -> list[int]:
    """Kahn elimination, ties broken by ascending node index.

    Raises
    ------
    CyclicGraph
        If ``m`` contains a directed cycle.
    """
    m = np.asarray(m)
    n = m.shape[0]
    indegree = m.sum(axis=0).astype(int).tolist()
    heap = [j for j in range(n) if indegree[j] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        i = heapq.heappop(heap)
        order.append(i)
        for j in np.flatnonzero(m[i]).tolist():
            indegree[j] -= 1
            if indegree[j] == 0:
                heapq.heappush(heap, j)
    if len(order) != n:
        raise CyclicGraph("graph contains a directed cycle")
    return order


def arcs_of(m) -> list[tuple[int, int]]:
    rows, cols = np.nonzero(np.asarray(m))
    return list(zip(rows.tolist(), cols.tolist()))


def matrix_from_arcs(n: int, arcs: Iterable[tuple[int, int]]) -> np.ndarray:
    m = np.zeros((n, n), dtype=np.uint8)
    for i, j in arcs:
        m[i, j] = 1
    return m


@dataclass(frozen=True)
class Dataset:
    """Complete discrete records, one column per variable."""

    records: np.ndarray
    cardinalities: tuple[int, ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        records = np.ascontiguousarray(self.records, dtype=np.int64)
        if records.ndim != 2:
            raise ValueError("records must be a 2-d array")
        card = tuple(int(c) for c in self.cardinalities)
        if records.shape[1] != len(card):
            raise ValueError(
                f"records have {records.shape[1]} columns but {len(card)} cardinalities were given"
            )
        if records.size and ((records < 0).any() or (records >= np.array(card)).any()):
            bad = np.flatnonzero(((records < 0) | (records >= np.array(card))).any(axis=0))
            raise ValueError(f"record values out of range for variable(s) {bad.tolist()}")
        records.setflags(write=False)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "cardinalities", card)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_vars(self) -> int:
        return len(self.cardinalities)

    @property
    def n_records(self) -> int:
        return self.records.shape[0]


@dataclass(frozen=True, eq=False)
class BayesNetwork:
    """A DAG with one conditional probability table per node.

    ``cpts[i]`` has shape ``(q_i, r_i)``: one row per joint configuration of
    node ``i``'s parents, enumerated row-major over the parents sorted by node
    index (the last parent varies fastest).
    """

    structure: np.ndarray
    cardinalities: tuple[int, ...]
    cpts: tuple[np.ndarray, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        structure = as_matrix(self.structure)
        structure.setflags(write=False)
        object.__setattr__(self, "structure", structure)
        n = structure.shape[0]
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        names = tuple(self.names) if self.names else tuple(f"X{i}" for i in range(n))
        object.__setattr__(self, "names", names)
        cpts = tuple(np.array(t, dtype=float) for t in self.cpts)
        for t in cpts:
            t.setflags(write=False)
        object.__setattr__(self, "cpts", cpts)
        self.validate()

    @property
    def n(self) -> int:
        return self.structure.shape[0]

    def parents(self, i: int) -> list[int]:
        return parents_of(self.structure, i)

    def validate(self) -> None:
        n = self.n
        if len(self.cardinalities) != n:
            raise ValidationError(f"{len(self.cardinalities)} cardinalities for {n} nodes")
        if len(self.names) != n or len(set(self.names)) != n:
            raise ValidationError("node names must be unique, one per node")
        if len(self.cpts) != n:
            raise ValidationError(f"{len(self.cpts)} CPTs for {n} nodes")
        for name, card in zip(self.names, self.cardinalities):
            if card < 2:
                raise ValidationError(f"node {name!r}: cardinality {card} < 2")
        if not is_acyclic(self.structure):
            raise ValidationError("structure is cyclic")
        for i, (name, table) in enumerate(zip(self.names, self.cpts)):
            q = math.prod(self.cardinalities[p] for p in self.parents(i))
            expected = (q, self.cardinalities[i])
            if table.shape != expected:
                raise ValidationError(
                    f"node {name!r}: CPT shape {table.shape}, expected {expected} "
                    "(parent configurations x states)"
                )
            if (table < 0).any() or not np.isfinite(table).all():
                row = int(np.flatnonzero(((table < 0) | ~np.isfinite(table)).any(axis=1))[0])
                raise ValidationError(f"node {name!r}, row {row}: invalid probability")
            sums = table.sum(axis=1)
            bad = np.flatnonzero(np.abs(sums - 1.0) > CPT_TOLERANCE)
            if bad.size:
                row = int(bad[0])
                raise ValidationError(
                    f"node {name!r}, row {row}: CPT row sums to {sums[row]!r}, not 1"
                )

    def __eq__(self, other):
        if not isinstance(other, BayesNetwork):
            return NotImplemented
        return (
            self.names == other.names
            and self.cardinalities == other.cardinalities
            and np.array_equal(self.structure, other.structure)
            and all(np.array_equal(a, b) for a, b in zip(self.cpts, other.cpts))
        )

    __hash__ = None


def forward_sample(net: BayesNetwork, count: int, seed: int) -> Dataset:
    """Draw ``count`` complete records ancestrally in topological order."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    records = np.zeros((count, net.n), dtype=np.int64)
    for i in topological_order(net.structure):
        config = np.zeros(count, dtype=np.int64)
        for p in net.parents(i):
            config = config * net.cardinalities[p] + records[:, p]
        cumulative = np.cumsum(net.cpts[i], axis=1)[config]
        u = rng.random(count)
        # state k is chosen when cum[k-1] <= u < cum[k]
        state = (u[:, None] >= cumulative[:, :-1]).sum(axis=1)
        records[:, i] = state
    return Dataset(records, net.cardinalities, net.names)


# Asia network (Lauritzen & Spiegelhalter, 1988), state 0 = "no", 1 = "yes".
# Parameters are the standard published ones, as distributed e.g. with the
# bnlearn repository's asia.bif:
#   asia:   P(yes) = 0.01
#   tub:    P(yes | asia=yes) = 0.05, P(yes | asia=no) = 0.01
#   smoke:  P(yes) = 0.5
#   lung:   P(yes | smoke=yes) = 0.1, P(yes | smoke=no) = 0.01
#   bronc:  P(yes | smoke=yes) = 0.6, P(yes | smoke=no) = 0.3
#   either: deterministic OR of tub and lung
#   xray:   P(yes | either=yes) = 0.98, P(yes | either=no) = 0.05
#   dysp:   P(yes | bronc, either) = 0.9 (y,y), 0.8 (y,n), 0.7 (n,y), 0.1 (n,n)
ASIA_NAMES = ("asia", "tub", "smoke", "lung", "bronc", "either", "xray", "dysp")
ASIA_ARCS = (
    ("asia", "tub"),
    ("smoke", "lung"),
    ("smoke", "bronc"),
    ("tub", "either"),
    ("lung", "either"),
    ("either", "xray"),
    ("either", "dysp"),
    ("bronc", "dysp"),
)


def _binary_rows(p_yes: Sequence[float]) -> list[list[float]]:
    return [[round(1.0 - p, 12), p] for p in p_yes]


def asia_fixture() -> BayesNetwork:
    """The 8-node, 8-arc Asia network with its published CPTs."""
    index = {name: k for k, name in enumerate(ASIA_NAMES)}
    structure = matrix_from_arcs(8, ((index[a], index[b]) for a, b in ASIA_ARCS))
    cpts = [
        _binary_rows([0.01]),  # asia
        _binary_rows([0.01, 0.05]),  # tub | asia
        _binary_rows([0.5]),  # smoke
        _binary_rows([0.01, 0.1]),  # lung | smoke
        _binary_rows([0.3, 0.6]),  # bronc | smoke
        _binary_rows([0.0, 1.0, 1.0, 1.0]),  # either | tub, lung
        _binary_rows([0.05, 0.98]),  # xray | either
        _binary_rows([0.1, 0.7, 0.8, 0.9]),  # dysp | bronc, either
    ]
    return BayesNetwork(structure, (2,) * 8, tuple(cpts), ASIA_NAMES)


# ---------------------------------------------------------------------------
# network file format

_SECTION = re.compile(r"^\[(\w+)\]$")
_ARC = re.compile(r"^(\S+)\s*->\s*(\S+)$")


def parse_network(text: str) -> BayesNetwork:
    """Parse the plain-text network format (see ``docs/network_format.md``)."""
    section = None
    names: list[str] = []
    cards: list[int] = []
    arcs: list[tuple[str, str, int]] = []
    rows: dict[str, list[list[float]]] = {}
    current = None
    seen = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _SECTION.match(line)
        if match:
            section = match.group(1).lower()
            if section not in ("nodes", "arcs", "cpts"):
                raise ParseError(f"unknown section [{section}]", lineno)
            if section in seen:
                raise ParseError(f"duplicate section [{section}]", lineno)
            seen.add(section)
            current = None
            continue
        if section is None:
            raise ParseError("content before the first section header", lineno)
        if section == "nodes":
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected '<name> <cardinality>', got {line!r}", lineno)
            try:
                card = int(parts[1])
            except ValueError:
                raise ParseError(f"cardinality {parts[1]!r} is not an integer", lineno) from None
            if parts[0] in names:
                raise ParseError(f"duplicate node {parts[0]!r}", lineno)
            names.append(parts[0])
            cards.append(card)
        elif section == "arcs":
            match = _ARC.match(line)
            if not match:
                raise ParseError(f"expected '<parent> -> <child>', got {line!r}", lineno)
            arcs.append((match.group(1), match.group(2), lineno))
        else:
            if line.endswith(":"):
                current = line[:-1].strip()
                if current not in names:
                    raise ParseError(f"CPT for unknown node {current!r}", lineno)
                if current in rows:
                    raise ParseError(f"duplicate CPT for node {current!r}", lineno)
                rows[current] = []
                continue
            if current is None:
                raise ParseError("probability row outside a '<node>:' block", lineno)
            try:
                rows[current].append([float(v) for v in line.split()])
            except ValueError:
                raise ParseError(f"non-numeric probability row {line!r}", lineno) from None

    for required in ("nodes", "cpts"):
        if required not in seen:
            raise ParseError(f"missing [{required}] section")
    if not names:
        raise ParseError("no nodes declared")

    index = {name: k for k, name in enumerate(names)}
    structure = np.zeros((len(names), len(names)), dtype=np.uint8)
    for parent, child, lineno in arcs:
        for name in (parent, child):
            if name not in index:
                raise ParseError(f"arc references unknown node {name!r}", lineno)
        if parent == child:
            raise ValidationError(f"node {parent!r}: self-loop")
        structure[index[parent], index[child]] = 1

    cpts = []
    for name in names:
        if name not in rows:
            raise ValidationError(f"node {name!r}: missing CPT")
        widths = {len(r) for r in rows[name]}
        if len(widths) > 1:
            raise ValidationError(f"node {name!r}: CPT rows have differing lengths")
        cpts.append(np.array(rows[name], dtype=float).reshape(len(rows[name]), -1))
    if not is_acyclic(structure):
        raise ValidationError("cyclic structure")
    return BayesNetwork(structure, tuple(cards), tuple(cpts), tuple(names))


def load_network(path) -> BayesNetwork:
    return parse_network(Path(path).read_text(encoding="utf-8"))


def format_network(net: BayesNetwork) -> str:
    lines = ["[nodes]"]
    lines += [f"{name} {card}" for name, card in zip(net.names, net.cardinalities)]
    lines += ["", "[arcs]"]
    lines += [f"{net.names[i]} -> {net.names[j]}" for i, j in arcs_of(net.structure)]
    lines += ["", "[cpts]"]
    for name, table in zip(net.names, net.cpts):
        lines.append(f"{name}:")
        lines += ["  " + " ".join(repr(float(v)) for v in row) for row in table]
    return "\n".join(lines) + "\n"


def save_network(net: BayesNetwork, path) -> None:
    Path(path).write_text(format_network(net), encoding="utf-8")


def write_dataset(data: Dataset, path) -> None:
    names = data.names or tuple(f"X{i}" for i in range(data.n_vars))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        writer.writerows(data.records.tolist())


def read_dataset(path, cardinalities: Sequence[int], names: Sequence[str] | None = None) -> Dataset:
    """Read a CSV of integer states; when ``names`` is given, columns are matched by header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty data file")
        try:
            body = np.array([[int(v) for v in row] for row in reader if row], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"{path}: non-integer state ({exc})") from None
    header = [h.strip() for h in header]
    if names is not None:
        missing = [n for n in names if n not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {missing}")
        body = body[:, [header.index(n) for n in names]]
        header = list(names)
    if body.size == 0:
        body = body.reshape(0, len(header))
    return Dataset(body, tuple(cardinalities), tuple(header))
