"""Desk-scale experiment harness: throughput, accuracy, standard error and holes.

Every experiment returns a list of row dicts whose keys follow a fixed column
order (the ``*_COLUMNS`` tuples), so CSV and JSON outputs stay diffable.
Throughput timings exclude stream generation. After each workload the sketch
is audited and :class:`InvariantViolation` is raised if any update went
missing.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import sys
import threading
import time
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Optional, Sequence

import numpy as np

from .analysis import eh_total_bound, simulate_holes
from .config import ConfigError, SketchConfig
from .sequential import SequentialSketch
from .sketch import ConcurrentSketch, ingest

log = logging.getLogger(__name__)

__all__ = [
    "ACCURACY_COLUMNS",
    "HOLES_COLUMNS",
    "OUT_ENV",
    "PHI_GRID",
    "STDERR_COLUMNS",
    "THROUGHPUT_COLUMNS",
    "ResultRow",
    "WorkloadSpec",
    "make_stream",
    "rank_error",
    "run_accuracy",
    "run_holes",
    "run_stderr",
    "run_throughput",
    "default_out",
    "write_rows",
]

OUT_ENV = "CQSKETCH_OUT"
MODES = ("update-only", "query-only", "mixed")
DISTRIBUTIONS = ("uniform", "normal")
PHI_GRID = np.round(np.arange(1, 100) / 100, 2)


@dataclass(frozen=True)
class WorkloadSpec:
    mode: str = "update-only"
    update_threads: int = 1
    query_threads: int = 0
    n: int = 1_000_000
    prefill: int = 0
    k: int = 4096
    b: int = 16
    numa_nodes: int = 1
    rho: float = 0.0
    dist: str = "uniform"
    seed: Optional[int] = 0
    runs: int = 15
    duration: float = 1.0  # seconds of querying in query-only mode

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.dist not in DISTRIBUTIONS:
            raise ConfigError(f"dist must be one of {DISTRIBUTIONS}")
        if self.mode == "query-only" and self.prefill <= 0:
            raise ConfigError("query-only needs a positive prefill")
        if self.mode == "query-only" and self.query_threads < 1:
            raise ConfigError("query-only needs at least one query thread")
        if self.mode == "mixed" and (self.query_threads < 1 or self.update_threads < 1):
            raise ConfigError("mixed needs update and query threads")
        if self.mode == "update-only" and self.update_threads < 1:
            raise ConfigError("update-only needs at least one update thread")
        if min(self.n, self.prefill) < 0 or self.runs < 1 or self.duration <= 0:
            raise ConfigError("n, prefill, runs and duration must be positive")
        self.sketch_config()  # validates k, b, numa_nodes and rho

    def sketch_config(self, seed: Optional[int] = None, **extra) -> SketchConfig:
        return SketchConfig(k=self.k, b=self.b, numa_nodes=self.numa_nodes,
                            update_threads=max(self.update_threads, self.numa_nodes),
                            rho=self.rho, seed=seed, **extra)


@dataclass
class ResultRow:
    run: str
    mode: str
    k: int
    b: int
    numa_nodes: int
    update_threads: int
    query_threads: int
    rho: float
    dist: str
    seed: Optional[int]
    n: int
    prefill: int
    elapsed_s: float = 0.0
    updates: int = 0
    queries: int = 0
    update_tput: float = 0.0
    query_tput: float = 0.0
    miss_rate: float = 0.0
    holes: int = 0
    stream_size: int = 0
    audit_ok: bool = True

    def as_dict(self) -> dict:
        return asdict(self)


THROUGHPUT_COLUMNS = tuple(f.name for f in fields(ResultRow))
ACCURACY_COLUMNS = ("k", "b", "threads", "dist", "seed", "n", "represented", "phi",
                    "estimate", "rank_error", "seq_estimate", "seq_rank_error")
STDERR_COLUMNS = ("k", "b", "threads", "dist", "n", "runs", "phi", "stderr", "seq_stderr")
HOLES_COLUMNS = ("b", "k", "regions", "trials", "sim_mean", "sim_ci_low", "sim_ci_high",
                 "bound", "e2e_threads", "e2e_batches", "e2e_holes", "e2e_holes_per_batch")


def make_stream(n: int, dist: str, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if dist == "uniform":
        return rng.random(n)
    if dist == "normal":
        return rng.normal(0.0, 1.0, n)
    raise ConfigError(f"unknown distribution {dist!r}")


def rank_error(sorted_stream: np.ndarray, estimate: float, phi: float) -> float:
    """Signed distance from the target rank to the estimate's rank range, over n."""
    n = sorted_stream.shape[0]
    target = int(np.floor(phi * n))
    lo = int(np.searchsorted(sorted_stream, estimate, side="left"))
    hi = max(lo, int(np.searchsorted(sorted_stream, estimate, side="right")) - 1)
    if target < lo:
        return (lo - target) / n
    if target > hi:
        return (hi - target) / n
    return 0.0


def _pin(slot: int) -> None:
    """Round-robin core pinning where the platform allows it."""
    if not hasattr(os, "sched_setaffinity"):
        return
    try:
        cores = sorted(os.sched_getaffinity(0))
        os.sched_setaffinity(0, {cores[slot % len(cores)]})
    except OSError:
        pass


def _warn_oversubscribed(threads: int) -> None:
    cores = os.cpu_count() or 1
    if threads > cores:
        log.warning("%d threads on %d cores; timings will be oversubscribed", threads, cores)


def _seeds(seed: Optional[int], count: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1)[0]) for c in ss.spawn(count)]


def _prefilled(spec: WorkloadSpec, sketch_seed: int, data: np.ndarray) -> ConcurrentSketch:
    sketch = ConcurrentSketch(spec.sketch_config(sketch_seed))
    if spec.prefill:
        ingest(sketch, np.array_split(data[:spec.prefill], max(spec.update_threads, 1)))
    return sketch


def _one_run(spec: WorkloadSpec, run: int, stream_seed: int, sketch_seed: int) -> ResultRow:
    data = make_stream(spec.prefill + spec.n, spec.dist, stream_seed)
    sketch = _prefilled(spec, sketch_seed, data)
    fresh = data[spec.prefill:]
    updaters = [sketch.register_updater() for _ in range(spec.update_threads)] \
        if spec.mode != "query-only" else []
    parts = np.array_split(fresh, len(updaters)) if updaters else []
    n_threads = len(updaters) + spec.query_threads
    _warn_oversubscribed(n_threads)
    barrier = threading.Barrier(n_threads + 1)
    stop = threading.Event()
    query_counts: list[int] = []
    contexts = []
    errors: list[BaseException] = []
    lock = threading.Lock()

    def updater(slot, u, xs):
        _pin(slot)
        barrier.wait()
        try:
            u.extend(xs)
        except BaseException as exc:
            errors.append(exc)

    def querier(slot, qseed):
        _pin(slot)
        ctx = sketch.querier(spec.rho)
        rng = np.random.default_rng(qseed)
        phis = rng.random(1024)
        count = 0
        barrier.wait()
        try:
            while not stop.is_set():
                ctx.query(float(phis[count & 1023]))
                count += 1
        except BaseException as exc:
            errors.append(exc)
        with lock:
            query_counts.append(count)
            contexts.append(ctx)

    threads = [threading.Thread(target=updater, args=(i, u, xs))
               for i, (u, xs) in enumerate(zip(updaters, parts))]
    qseeds = _seeds(sketch_seed, max(spec.query_threads, 1))
    threads += [threading.Thread(target=querier, args=(len(updaters) + i, qseeds[i]))
                for i in range(spec.query_threads)]
    for t in threads:
        t.start()
    barrier.wait()
    start = time.perf_counter()
    if spec.mode == "query-only":
        time.sleep(spec.duration)
    else:
        for t in threads[:len(updaters)]:
            t.join()
    stop.set()
    elapsed = time.perf_counter() - start
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    audit = sketch.check()
    queries = sum(query_counts)
    hits = sum(c.hits for c in contexts)
    misses = sum(c.misses for c in contexts)
    updates = sum(u.calls for u in updaters)
    return ResultRow(
        run=str(run), mode=spec.mode, k=spec.k, b=spec.b, numa_nodes=spec.numa_nodes,
        update_threads=len(updaters), query_threads=spec.query_threads, rho=spec.rho,
        dist=spec.dist, seed=spec.seed, n=spec.n, prefill=spec.prefill,
        elapsed_s=elapsed, updates=updates, queries=queries,
        update_tput=updates / elapsed if elapsed > 0 else 0.0,
        query_tput=queries / elapsed if elapsed > 0 else 0.0,
        miss_rate=misses / (hits + misses) if hits + misses else 0.0,
        holes=audit.holes, stream_size=audit.stream_size, audit_ok=audit.ok,
    )


def run_throughput(spec: WorkloadSpec) -> list[dict]:
    """One row per run followed by an aggregate row whose ``run`` is ``mean``."""
    seeds = _seeds(spec.seed, 2 * spec.runs)
    rows = [_one_run(spec, r, seeds[2 * r], seeds[2 * r + 1]) for r in range(spec.runs)]
    mean = ResultRow(**{**rows[0].as_dict(), "run": "mean"})
    for name in ("elapsed_s", "update_tput", "query_tput", "miss_rate"):
        setattr(mean, name, float(np.mean([getattr(r, name) for r in rows])))
    for name in ("updates", "queries", "holes", "stream_size"):
        setattr(mean, name, int(round(np.mean([getattr(r, name) for r in rows]))))
    mean.audit_ok = all(r.audit_ok for r in rows)
    return [r.as_dict() for r in rows + [mean]]


def _concurrent_estimates(spec: WorkloadSpec, data: np.ndarray, sketch_seed: int,
                          grid: Sequence[float]) -> tuple[list[float], int]:
    sketch = ConcurrentSketch(spec.sketch_config(sketch_seed))
    ingest(sketch, np.array_split(data, spec.update_threads))
    sketch.check()
    snap = sketch.collect_snapshot()
    return [snap.query(float(p)) for p in grid], snap.represented_size


def _sequential_estimates(k: int, data: np.ndarray, seed: int, grid: Sequence[float]) -> list[float]:
    seq = SequentialSketch(k, seed=seed)
    seq.extend(data.tolist())
    return [seq.query(float(p)) for p in grid]


def run_accuracy(spec: WorkloadSpec, grid: Sequence[float] = PHI_GRID,
                 baseline: bool = True) -> list[dict]:
    """Quiescent estimates on a phi grid, scored against the exact stream."""
    stream_seed, sketch_seed, seq_seed = _seeds(spec.seed, 3)
    data = make_stream(spec.n, spec.dist, stream_seed)
    ordered = np.sort(data)
    est, represented = _concurrent_estimates(spec, data, sketch_seed, grid)
    seq = _sequential_estimates(spec.k, data, seq_seed, grid) if baseline else [None] * len(grid)
    rows = []
    for phi, e, s in zip(grid, est, seq):
        rows.append({
            "k": spec.k, "b": spec.b, "threads": spec.update_threads, "dist": spec.dist,
            "seed": spec.seed, "n": spec.n, "represented": represented, "phi": float(phi),
            "estimate": e, "rank_error": rank_error(ordered, e, phi),
            "seq_estimate": s,
            "seq_rank_error": None if s is None else rank_error(ordered, s, phi),
        })
    return rows


def run_stderr(spec: WorkloadSpec, runs: Optional[int] = None, grid: Sequence[float] = PHI_GRID,
               baseline: bool = False) -> list[dict]:
    """Root-mean-square normalized rank error per phi across seeded runs."""
    runs = spec.runs if runs is None else runs
    if runs < 2:
        raise ConfigError("stderr needs at least two runs")
    seeds = _seeds(spec.seed, 3 * runs)
    errs = np.zeros((runs, len(grid)))
    seq_errs = np.zeros((runs, len(grid)))
    for r in range(runs):
        data = make_stream(spec.n, spec.dist, seeds[3 * r])
        ordered = np.sort(data)
        est, _ = _concurrent_estimates(spec, data, seeds[3 * r + 1], grid)
        errs[r] = [rank_error(ordered, e, p) for e, p in zip(est, grid)]
        if baseline:
            seq = _sequential_estimates(spec.k, data, seeds[3 * r + 2], grid)
            seq_errs[r] = [rank_error(ordered, e, p) for e, p in zip(seq, grid)]
    se = np.sqrt(np.mean(errs**2, axis=0))
    seq_se = np.sqrt(np.mean(seq_errs**2, axis=0)) if baseline else [None] * len(grid)
    return [{"k": spec.k, "b": spec.b, "threads": spec.update_threads, "dist": spec.dist,
             "n": spec.n, "runs": runs, "phi": float(p), "stderr": float(s),
             "seq_stderr": None if q is None else float(q)}
            for p, s, q in zip(grid, se, seq_se)]


def run_holes(spec: WorkloadSpec, trials: int = 100_000,
              bs: Optional[Iterable[int]] = None) -> list[dict]:
    """Simulated worst-case holes, the closed-form bound and an instrumented count."""
    rows = []
    for b in (bs or [spec.b]):
        if (2 * spec.k) % b:
            raise ConfigError(f"b={b} must divide 2k={2 * spec.k}")
        regions = 2 * spec.k // b
        est = simulate_holes(b, regions, trials, seed=spec.seed)
        row = {"b": b, "k": spec.k, "regions": regions, "trials": trials,
               "sim_mean": est.mean, "sim_ci_low": est.ci95[0], "sim_ci_high": est.ci95[1],
               "bound": eh_total_bound(b, spec.k), "e2e_threads": spec.update_threads,
               "e2e_batches": 0, "e2e_holes": 0, "e2e_holes_per_batch": 0.0}
        if spec.n > 0:
            cfg = SketchConfig(k=spec.k, b=b, numa_nodes=spec.numa_nodes,
                               seed=spec.seed, instrumented=True)
            sketch = ConcurrentSketch(cfg)
            data = make_stream(spec.n, spec.dist, spec.seed)
            ingest(sketch, np.array_split(data, spec.update_threads))
            sketch.check()
            batches = sum(u.batches for u in sketch.units)
            row.update(e2e_batches=batches, e2e_holes=sketch.holes,
                       e2e_holes_per_batch=sketch.holes / batches if batches else 0.0)
        rows.append(row)
    return rows


def default_out(command: str, fmt: str) -> Optional[str]:
    directory = os.environ.get(OUT_ENV)
    if not directory:
        return None
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, f"{command}.{fmt}")


def write_rows(rows: list[dict], columns: Sequence[str], out: Optional[str] = None,
               fmt: str = "csv") -> None:
    """Write rows as CSV (header first) or a JSON list, to ``out`` or stdout."""
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        if fmt == "csv":
            w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                               lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({c: "" if row.get(c) is None else row[c] for c in columns})
        elif fmt == "json":
            json.dump([{c: row.get(c) for c in columns} for row in rows], fh, indent=1)
            fh.write("\n")
        else:
            raise ConfigError(f"unknown format {fmt!r}")
    finally:
        if out:
            fh.close()
