"""Experiment grid: seeded repeated runs, aggregation and CSV reports.

``runs.csv`` carries every run and is the source of truth; ``precision.csv``,
``arcs.csv`` and ``best_cells.csv`` are deterministic folds over it.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from edabnsl.bayesnet import BayesNetwork, Dataset, asia_fixture, forward_sample, load_network
from edabnsl.eda import ALGORITHMS, MUTATIONS, EdaConfig, run_eda
from edabnsl.metrics import ArcClassification, classify_arcs, proportion_report
from edabnsl.scoring import DEFAULT_ESS, BDeScorer

log = logging.getLogger(__name__)

FULL_RATES = (0.0, 0.01, 0.05, 0.1, 0.15, 0.2)
FULL_POP_SIZES = (10, 25, 50, 75, 100)
FULL_PBIL_RATES = (0.1, 0.3, 0.5, 0.7, 0.9)

PROFILES = {
    "desk": dict(
        rates=(0.0, 0.05, 0.1),
        pop_sizes=(25, 50),
        pbil_rates=(0.5,),
        repeats=10,
        generations=200,
    ),
    "paper": dict(
        rates=FULL_RATES,
        pop_sizes=FULL_POP_SIZES,
        pbil_rates=FULL_PBIL_RATES,
        repeats=30,
        generations=400,
    ),
}

# spawn-key slot reserved for the shared dataset draw
_DATA_KEY = 1 << 30


@dataclass
class ExperimentGrid:
    algorithms: tuple[str, ...] = ALGORITHMS
    mutations: tuple[str, ...] = MUTATIONS
    rates: tuple[float, ...] = PROFILES["desk"]["rates"]
    pop_sizes: tuple[int, ...] = PROFILES["desk"]["pop_sizes"]
    pbil_rates: tuple[float, ...] = PROFILES["desk"]["pbil_rates"]
    repeats: int = PROFILES["desk"]["repeats"]
    generations: int = PROFILES["desk"]["generations"]
    network: str | None = None  # None = bundled Asia
    data_size: int = 1000
    ess: float = DEFAULT_ESS
    elitism: int = 1
    selection_frac: float = 0.5
    seed: int = 0
    workers: int = 1
    transpose_mode: str = "pair"

    def __post_init__(self):
        for name in ("algorithms", "mutations", "rates", "pop_sizes", "pbil_rates"):
            value = tuple(getattr(self, name))
            if not value:
                raise ValueError(f"{name} must not be empty")
            setattr(self, name, value)
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    def load_network(self) -> BayesNetwork:
        return asia_fixture() if self.network is None else load_network(self.network)


@dataclass(frozen=True)
class Cell:
    """One grid point. ``pbil_rate`` is None for algorithms that do not use it."""

    algorithm: str
    mutation: str
    rate: float
    d: int
    pbil_rate: float | None

    def sort_key(self):
        return (self.algorithm, self.mutation, self.rate, self.d, -1.0 if self.pbil_rate is None else self.pbil_rate)

    def coordinates(self) -> tuple[int, ...]:
        return (
            ALGORITHMS.index(self.algorithm),
            MUTATIONS.index(self.mutation),
            round(self.rate * 1_000_000),
            self.d,
            0 if self.pbil_rate is None else round(self.pbil_rate * 1_000_000),
        )


def grid_cells(grid: ExperimentGrid) -> list[Cell]:
    """Expand the grid. ``none`` mutation ignores the rate list and runs at rate 0 only."""
    cells = set()
    for algorithm in grid.algorithms:
        pbil_rates = grid.pbil_rates if algorithm == "pbil" else (None,)
        for mutation in grid.mutations:
            rates = (0.0,) if mutation == "none" else grid.rates
            for rate in rates:
                for d in grid.pop_sizes:
                    for a in pbil_rates:
                        cells.add(Cell(algorithm, mutation, float(rate), int(d), a if a is None else float(a)))
    return sorted(cells, key=Cell.sort_key)


def child_seed(master: int, coordinates: Sequence[int]) -> int:
    """63-bit seed derived from the master seed and a coordinate tuple via SeedSequence spawn keys."""
    hi, lo = np.random.SeedSequence(master, spawn_key=tuple(coordinates)).generate_state(2, np.uint32)
    return (int(hi) << 32 | int(lo)) & ((1 << 63) - 1)


def dataset_seed(master: int) -> int:
    return child_seed(master, (_DATA_KEY,))


@dataclass
class RunRecord:
    algorithm: str
    mutation: str
    rate: float
    d: int
    pbil_rate: float | None
    repeat: int
    seed: int
    status: str = "ok"
    precision: float | None = None
    skeleton_precision: float | None = None
    correct: int = 0
    reverse: int = 0
    additional: int = 0
    missing: int = 0
    best_bde: float = float("nan")
    evaluations: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def cell(self) -> Cell:
        return Cell(self.algorithm, self.mutation, self.rate, self.d, self.pbil_rate)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def classification(self) -> ArcClassification:
        return ArcClassification(self.correct, self.reverse, self.additional, self.missing)


@dataclass
class AggregateRow:
    cell: Cell
    runs: int
    failures: int
    undefined: int
    mean_precision: float
    sd_precision: float
    mean_skeleton_precision: float
    correct: float
    reverse: float
    additional: float
    arcs_excluded: int
    mean_best_bde: float
    failure_messages: tuple[str, ...] = ()


@dataclass
class RunTask:
    cell: Cell
    repeat: int
    seed: int
    generations: int
    elitism: int
    selection_frac: float
    transpose_mode: str


def plan_runs(grid: ExperimentGrid) -> list[RunTask]:
    tasks = []
    for cell in grid_cells(grid):
        for repeat in range(grid.repeats):
            seed = child_seed(grid.seed, cell.coordinates() + (repeat,))
            tasks.append(
                RunTask(cell, repeat, seed, grid.generations, grid.elitism, grid.selection_frac, grid.transpose_mode)
            )
    seeds = [t.seed for t in tasks]
    if len(set(seeds)) != len(seeds):
        raise RuntimeError("child seed collision in experiment grid")
    return tasks


# per-process state: dataset, scorer (with its family cache) and the true structure
_WORKER: dict = {}


def _init_worker(data: Dataset, truth: np.ndarray, ess: float) -> None:
    _WORKER["scorer"] = BDeScorer(data, ess)
    _WORKER["truth"] = truth
    _WORKER["data"] = data


def _execute(task: RunTask) -> RunRecord:
    cell = task.cell
    record = RunRecord(cell.algorithm, cell.mutation, cell.rate, cell.d, cell.pbil_rate, task.repeat, task.seed)
    try:
        config = EdaConfig(
            algorithm=cell.algorithm,
            d=cell.d,
            h=max(1, math.floor(cell.d * task.selection_frac)),
            generations=task.generations,
            mutation=cell.mutation,
            rate=cell.rate,
            pbil_rate=0.5 if cell.pbil_rate is None else cell.pbil_rate,
            elitism=min(task.elitism, cell.d),
            seed=task.seed,
            transpose_mode=task.transpose_mode,
            check_acyclic=True,
        )
        result = run_eda(config, _WORKER["data"], _WORKER["scorer"])
    except Exception as exc:  # recorded in the row, never aborts the grid
        record.status = f"error: {type(exc).__name__}: {exc}"
        log.warning("run %s repeat %d failed: %s", cell, task.repeat, record.status)
        return record
    c = classify_arcs(result.best.genome, _WORKER["truth"])
    record.correct, record.reverse, record.additional, record.missing = c.correct, c.reverse, c.additional, c.missing
    if c.inferred:
        record.precision = c.correct / c.inferred
        record.skeleton_precision = (c.correct + c.reverse) / c.inferred
    record.best_bde = result.best.fitness
    record.evaluations = result.evaluations
    record.wall_time = result.wall_time
    return record


def execute_runs(tasks: Sequence[RunTask], data: Dataset, truth: np.ndarray, ess: float, workers: int = 1) -> list[RunRecord]:
    """Run every task; results come back in task order whatever the worker count."""
    if workers <= 1:
        _init_worker(data, truth, ess)
        return [_execute(t) for t in tasks]
    chunksize = max(1, len(tasks) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(data, truth, ess)) as pool:
        return list(pool.map(_execute, tasks, chunksize=chunksize))


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else float("nan")


def aggregate(records: Iterable[RunRecord]) -> list[AggregateRow]:
    """Fold run records into one row per cell, rows in lexicographic cell order."""
    by_cell: dict[Cell, list[RunRecord]] = {}
    for r in records:
        by_cell.setdefault(r.cell, []).append(r)
    rows = []
    for cell in sorted(by_cell, key=Cell.sort_key):
        runs = sorted(by_cell[cell], key=lambda r: r.repeat)
        ok = [r for r in runs if r.ok]
        failed = [r for r in runs if not r.ok]
        precisions = [r.precision for r in ok if r.precision is not None]
        skeleton = [r.skeleton_precision for r in ok if r.skeleton_precision is not None]
        if ok:
            report = proportion_report([r.classification for r in ok])
            arcs = (report.correct, report.reverse, report.additional, report.excluded)
        else:
            arcs = (float("nan"),) * 3 + (0,)
        rows.append(
            AggregateRow(
                cell=cell,
                runs=len(ok),
                failures=len(failed),
                undefined=len(ok) - len(precisions),
                mean_precision=_mean(precisions),
                sd_precision=statistics.stdev(precisions) if len(precisions) > 1 else float("nan"),
                mean_skeleton_precision=_mean(skeleton),
                correct=arcs[0],
                reverse=arcs[1],
                additional=arcs[2],
                arcs_excluded=arcs[3],
                mean_best_bde=_mean([r.best_bde for r in ok]),
                failure_messages=tuple(f"repeat {r.repeat}: {r.status}" for r in failed),
            )
        )
    return rows


def run_grid(grid: ExperimentGrid) -> tuple[list[AggregateRow], list[RunRecord]]:
    net = grid.load_network()
    data = forward_sample(net, grid.data_size, dataset_seed(grid.seed))
    tasks = plan_runs(grid)
    log.info("running %d runs over %d cells on %d worker(s)", len(tasks), len(grid_cells(grid)), grid.workers)
    records = execute_runs(tasks, data, np.asarray(net.structure), grid.ess, grid.workers)
    return aggregate(records), records


# ---------------------------------------------------------------------------
# CSV reports

CELL_COLUMNS = ["algorithm", "mutation", "rate", "d", "a"]
PRECISION_COLUMNS = CELL_COLUMNS + [
    "mean_precision",
    "sd_precision",
    "n",
    "undefined",
    "failures",
    "mean_best_bde",
    "mean_skeleton_precision",
]
ARCS_COLUMNS = CELL_COLUMNS + ["correct", "reverse", "additional", "n_used", "excluded"]
BEST_COLUMNS = ["algorithm", "mutation", "rate", "best_mean_precision", "d", "a"]
RUN_COLUMNS = CELL_COLUMNS + [
    "repeat",
    "seed",
    "status",
    "precision",
    "skeleton_precision",
    "correct",
    "reverse",
    "additional",
    "missing",
    "best_bde",
    "evaluations",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _cell_fields(cell: Cell) -> list[str]:
    return [cell.algorithm, cell.mutation, _fmt(cell.rate), str(cell.d), _fmt(cell.pbil_rate)]


def best_cells(rows: Sequence[AggregateRow]) -> list[tuple]:
    """Per (algorithm, mutation, rate): the cell with the highest mean precision."""
    best: dict[tuple, AggregateRow] = {}
    for row in rows:
        if math.isnan(row.mean_precision):
            continue
        key = (row.cell.algorithm, row.cell.mutation, row.cell.rate)
        if key not in best or row.mean_precision > best[key].mean_precision:
            best[key] = row
    return [(*key, best[key].mean_precision, best[key].cell.d, best[key].cell.pbil_rate) for key in sorted(best)]


def write_reports(rows: Sequence[AggregateRow], records: Sequence[RunRecord], out_dir, timestamp: bool = True) -> list[Path]:
    if not rows:
        raise ValueError("no aggregate rows to write")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    stamp = f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}" if timestamp else None

    tables = {
        "precision.csv": (
            PRECISION_COLUMNS,
            [
                _cell_fields(r.cell)
                + [_fmt(v) for v in (r.mean_precision, r.sd_precision, r.runs, r.undefined, r.failures, r.mean_best_bde, r.mean_skeleton_precision)]
                for r in rows
            ],
        ),
        "arcs.csv": (
            ARCS_COLUMNS,
            [
                _cell_fields(r.cell)
                + [_fmt(v) for v in (r.correct, r.reverse, r.additional, r.runs - r.arcs_excluded, r.arcs_excluded)]
                for r in rows
            ],
        ),
        "best_cells.csv": (BEST_COLUMNS, [[_fmt(v) for v in row] for row in best_cells(rows)]),
        "runs.csv": (
            RUN_COLUMNS,
            [
                _cell_fields(r.cell)
                + [_fmt(v) for v in (r.repeat, r.seed, r.status, r.precision, r.skeleton_precision, r.correct,
                                     r.reverse, r.additional, r.missing, r.best_bde, r.evaluations)]
                for r in sorted(records, key=lambda r: (r.cell.sort_key(), r.repeat))
            ],
        ),
    }
    written = []
    for name, (header, body) in tables.items():
        path = out / name
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                if stamp:
                    fh.write(stamp + "\n")
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(body)
        except OSError as exc:
            raise OSError(f"cannot write report {path}: {exc}") from exc
        written.append(path)
    return written


def _opt_float(text: str) -> float | None:
    return float(text) if text != "" else None


def read_runs(path) -> list[RunRecord]:
    """Load ``runs.csv`` back into records (timestamp comment line skipped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    records = []
    for row in csv.DictReader(lines):
        records.append(
            RunRecord(
                algorithm=row["algorithm"],
                mutation=row["mutation"],
                rate=float(row["rate"]),
                d=int(row["d"]),
                pbil_rate=_opt_float(row["a"]),
                repeat=int(row["repeat"]),
                seed=int(row["seed"]),
                status=row["status"],
                precision=_opt_float(row["precision"]),
                skeleton_precision=_opt_float(row["skeleton_precision"]),
                correct=int(row["correct"]),
                reverse=int(row["reverse"]),
                additional=int(row["additional"]),
                missing=int(row["missing"]),
                best_bde=float(row["best_bde"]),
                evaluations=int(row["evaluations"]),
            )
        )
    return records


def default_workers() -> int:
    return os.cpu_count() or 1


GRID_FIELDS = {f.name for f in fields(ExperimentGrid)}
