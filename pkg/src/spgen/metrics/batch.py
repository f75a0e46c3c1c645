"""Order-preserving parallel evaluation of metric pairs."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

from .multimatch import multimatch
from .saliency import congruency, nss

METRIC_KINDS = ("multimatch", "nss", "congruency", "all")


@dataclass(frozen=True)
class BatchRow:
    index: int
    values: tuple[float, ...] | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def columns(metric_kind: str) -> tuple[str, ...]:
    if metric_kind == "multimatch":
        return ("shape", "direction", "length", "position", "mm_score")
    if metric_kind == "nss":
        return ("nss",)
    if metric_kind == "congruency":
        return ("congruency",)
    if metric_kind == "all":
        return ("nss", "congruency")
    raise ValueError(f"metric_kind must be one of {METRIC_KINDS}, got {metric_kind!r}")


def evaluate_pair(pair, metric_kind: str, screen_diag: float = 2 ** 0.5) -> tuple[float, ...]:
    a, b = pair
    if metric_kind == "multimatch":
        return multimatch(a, b, screen_diag=screen_diag).as_tuple()
    if metric_kind == "nss":
        return (nss(a, b),)
    if metric_kind == "congruency":
        return (congruency(a, b),)
    if metric_kind == "all":
        return (nss(a, b), congruency(a, b))
    raise ValueError(f"metric_kind must be one of {METRIC_KINDS}, got {metric_kind!r}")


def _run_chunk(args) -> list[BatchRow]:
    start, chunk, metric_kind, screen_diag = args
    rows = []
    for k, pair in enumerate(chunk):
        try:
            rows.append(BatchRow(start + k, evaluate_pair(pair, metric_kind, screen_diag)))
        except Exception as exc:  # one bad pair must not sink the batch
            rows.append(BatchRow(start + k, None, f"{type(exc).__name__}: {exc}"))
    return rows


def worker_cap(requested: int) -> int:
    """``requested`` capped by the SPGEN_THREADS environment variable."""
    cap = os.environ.get("SPGEN_THREADS")
    if cap:
        try:
            return max(1, min(requested, int(cap)))
        except ValueError:
            raise ValueError(f"SPGEN_THREADS must be an integer, got {cap!r}") from None
    return requested


def batch_evaluate(pairs, metric_kind: str, workers: int = 1, screen_diag: float = 2 ** 0.5,
                   chunk_size: int | None = None) -> list[BatchRow]:
    """Evaluate every pair, in order, optionally across worker processes.

    Pairs are ``(scanpath, scanpath)`` for multimatch and
    ``(scanpath, saliency map)`` otherwise.  Failures become rows with an
    ``error`` string.  Output is identical for any ``workers``.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    columns(metric_kind)
    pairs = list(pairs)
    if not pairs:
        return []
    workers = worker_cap(workers)
    if workers == 1:
        return _run_chunk((0, pairs, metric_kind, screen_diag))
    if chunk_size is None:
        chunk_size = max(1, -(-len(pairs) // (workers * 4)))
    jobs = [(s, pairs[s:s + chunk_size], metric_kind, screen_diag) for s in range(0, len(pairs), chunk_size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        rows = [row for chunk in pool.map(_run_chunk, jobs) for row in chunk]
    return rows
