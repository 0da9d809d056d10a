"""Link-prediction ranking with time-aware filtering and MRR/Hits@k.

Each test fact yields up to two queries: object-side (s, p, ?, t) scored
directly, and subject-side (?, p, o, t) scored through the reciprocal
relation row. Candidates that form a *different* true fact at the same
timestamp (anywhere in train/valid/test) are removed before ranking; the
query's own answer is always kept. Ties use the mid-rank convention
rank = 1 + #strictly_greater + floor(#equal_others / 2). Subject-side and
object-side queries are pooled: each side counts as one query.

Interval facts are evaluated at a time point sampled uniformly from the
dataset time points inside the (normalized) interval; sampling is seeded, so
a report is reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from bisect import bisect_left, bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .data import Dataset, Quadruple, TimeInterval
from .model import ModelState, score_all_objects

__all__ = [
    "FilterIndex",
    "RankingReport",
    "rank_query",
    "sample_interval_time",
    "evaluate",
]

Side = Literal["subject", "object"]

TIE_RULE = "mid-rank: 1 + #greater + floor(#equal_others / 2)"


class FilterIndex:
    """All true facts keyed for time-aware filtering.

    For point datasets the keys are exact (s, p, t) / (o, p, t) triples; for
    interval datasets each (s, p) pair keeps its facts' normalized time-id
    ranges and membership is containment of the query time point.
    """

    def __init__(self, kind: str):
        self.kind = kind
        self._objects: dict = {}
        self._subjects: dict = {}
        self.n_facts = 0

    @classmethod
    def from_dataset(cls, ds: Dataset) -> "FilterIndex":
        index = cls(ds.kind)
        time_id = {v: i for i, v in enumerate(ds.times)}
        for name in ("train", "valid", "test"):
            facts = ds.split(name)
            ivals = ds.intervals(name)
            for row_i, (s, p, o, t) in enumerate(map(tuple, facts)):
                if ds.kind == "point":
                    index._objects.setdefault((s, p, t), set()).add(o)
                    index._subjects.setdefault((o, p, t), set()).add(s)
                else:
                    iv = ivals[row_i]
                    lo = 0 if iv.begin is None else time_id[iv.begin]
                    hi = ds.n_times - 1 if iv.end is None else time_id[iv.end]
                    index._objects.setdefault((s, p), []).append((lo, hi, o))
                    index._subjects.setdefault((o, p), []).append((lo, hi, s))
                index.n_facts += 1
        return index

    def true_objects(self, s: int, p: int, t: int) -> set:
        if self.kind == "point":
            return self._objects.get((s, p, t), set())
        return {o for lo, hi, o in self._objects.get((s, p), []) if lo <= t <= hi}

    def true_subjects(self, o: int, p: int, t: int) -> set:
        if self.kind == "point":
            return self._subjects.get((o, p, t), set())
        return {s for lo, hi, s in self._subjects.get((o, p), []) if lo <= t <= hi}


def _rank_from_scores(scores: np.ndarray, answer: int, excluded: set) -> int:
    target = scores[answer]
    keep = np.ones(scores.size, dtype=bool)
    if excluded:
        keep[list(excluded)] = False
        keep[answer] = True
    kept = scores[keep]
    greater = int(np.sum(kept > target))
    equal_others = int(np.sum(kept == target)) - 1
    return 1 + greater + equal_others // 2


def rank_query(
    m: ModelState,
    q: Quadruple,
    side: Side,
    filter_index: Optional[FilterIndex] = None,
) -> int:
    """Filtered rank of the query's answer among all candidate entities.

    With filter_index None the raw (unfiltered) rank is returned.
    """
    if side == "object":
        scores = score_all_objects(m, q.s, q.p, q.t)
        answer = q.o
        excluded = filter_index.true_objects(q.s, q.p, q.t) if filter_index else set()
    elif side == "subject":
        scores = score_all_objects(m, q.o, m.reciprocal(q.p), q.t)
        answer = q.s
        excluded = filter_index.true_subjects(q.o, q.p, q.t) if filter_index else set()
    else:
        raise ValueError(f"side must be 'subject' or 'object', got {side!r}")
    return _rank_from_scores(scores, answer, excluded - {answer})


def sample_interval_time(
    interval: TimeInterval, ds: Dataset, rng: np.random.Generator
) -> int:
    """Uniform dataset time point (as id) inside the interval; open ends are
    normalized to the dataset's first/last time point."""
    lo = 0 if interval.begin is None else bisect_left(ds.times, interval.begin)
    hi = ds.n_times - 1 if interval.end is None else bisect_right(ds.times, interval.end) - 1
    if lo > hi or lo >= ds.n_times:
        raise ValueError(f"no dataset time point inside {interval}")
    return int(rng.integers(lo, hi + 1))


@dataclass
class RankingReport:
    """Per-query filtered ranks plus aggregate MRR and Hits@k."""

    count: int
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    ranks: list = field(default_factory=list)  # (s, p, o, t, side, rank)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, ranks: list, meta: dict) -> "RankingReport":
        if not ranks:
            raise ValueError("cannot aggregate an empty rank list")
        rr = np.asarray([r[-1] for r in ranks], dtype=np.float64)
        return cls(
            count=len(ranks),
            mrr=float(np.mean(1.0 / rr)),
            hits1=float(np.mean(rr <= 1)),
            hits3=float(np.mean(rr <= 3)),
            hits10=float(np.mean(rr <= 10)),
            ranks=ranks,
            meta=dict(meta),
        )

    def summary(self) -> str:
        return (
            f"queries={self.count} MRR={self.mrr:.4f} "
            f"Hits@1={self.hits1:.4f} Hits@3={self.hits3:.4f} Hits@10={self.hits10:.4f}"
        )

    def to_json(self, include_per_query: bool = False) -> str:
        payload = {
            "count": self.count,
            "MRR": self.mrr,
            "hits@1": self.hits1,
            "hits@3": self.hits3,
            "hits@10": self.hits10,
            "meta": self.meta,
        }
        if include_per_query:
            payload["ranks"] = [
                {"s": s, "p": p, "o": o, "t": t, "side": side, "rank": rank}
                for s, p, o, t, side, rank in self.ranks
            ]
        return json.dumps(payload, indent=2)


def evaluate(
    m: ModelState,
    ds: Dataset,
    split: str = "test",
    filter_index: Optional[FilterIndex] = None,
    sides: str = "both",
    seed: int = 0,
    workers: int = 1,
) -> RankingReport:
    """Rank every fact of the split on the requested sides and aggregate.

    Interval facts get one sampled time point per query per run (seeded).
    ``workers`` > 1 fans queries out over threads against the read-only
    model; results are merged in query order either way.
    """
    side_list = ("subject", "object") if sides == "both" else (sides,)
    for side in side_list:
        if side not in ("subject", "object"):
            raise ValueError(f"unknown side {side!r}")
    facts = ds.split(split)
    if not len(facts):
        raise ValueError(f"split {split!r} is empty")
    ivals = ds.intervals(split)
    rng = np.random.default_rng(seed)

    queries = []
    for i, (s, p, o, t) in enumerate(map(tuple, facts)):
        if ivals is not None:
            t = sample_interval_time(ivals[i], ds, rng)
        for side in side_list:
            queries.append((s, p, o, t, side))

    def run(item):
        s, p, o, t, side = item
        rank = rank_query(m, Quadruple(s, p, o, t), side, filter_index)
        return (s, p, o, t, side, rank)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ranks = list(pool.map(run, queries))
    else:
        ranks = [run(item) for item in queries]

    meta = {
        "split": split,
        "sides": list(side_list),
        "pooling": "subject and object queries pooled (one query each)",
        "tie_rule": TIE_RULE,
        "filtered": filter_index is not None,
        "seed": seed,
        "variant": m.variant.value,
    }
    return RankingReport.from_ranks(ranks, meta)
