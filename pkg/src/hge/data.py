"""Quadruple dataset ingestion: TSV loaders, vocabularies, time intervals.

Point datasets are 4-column UTF-8 TSV files (subject, relation, object, date)
named train.txt / valid.txt / test.txt (the bare names train / valid / test
are also accepted). Interval datasets carry five columns (subject, relation,
object, begin, end) where begin or end may be an empty-token sentinel for a
half-open interval.

Id assignment is deterministic: vocabularies are collected over all three
splits and then sorted, so reloading the same files always yields the same
ids and checkpoints stay portable. Dates sort lexicographically, which is
chronological for ISO dates and zero-padded tokens.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "TimeInterval",
    "Quadruple",
    "Dataset",
    "AllenRelation",
    "allen_relation",
    "load_pointwise",
    "load_interval",
]

SPLITS = ("train", "valid", "test")

#: Tokens treated as an absent interval endpoint.
EMPTY_TOKENS = ("", "-", "####", "null", "none", "None", "NA")


@dataclass(frozen=True)
class TimeInterval:
    """A closed interval [begin, end]; either endpoint may be None (open).

    Endpoints are time-point keys (ints or strings) that must be mutually
    comparable within one dataset.
    """

    begin: object = None
    end: object = None

    def __post_init__(self):
        if self.begin is not None and self.end is not None and self.begin > self.end:
            raise ValueError(f"interval begin {self.begin!r} exceeds end {self.end!r}")

    @property
    def bounded(self) -> bool:
        return self.begin is not None and self.end is not None


@dataclass(frozen=True)
class Quadruple:
    """An (s, p, o, t) fact with integer ids; interval facts keep the raw interval."""

    s: int
    p: int
    o: int
    t: int
    interval: Optional[TimeInterval] = None


class AllenRelation(Enum):
    BEFORE = "before"
    AFTER = "after"
    MEETS = "meets"
    MET_BY = "met_by"
    OVERLAPS = "overlaps"
    OVERLAPPED_BY = "overlapped_by"
    STARTS = "starts"
    STARTED_BY = "started_by"
    DURING = "during"
    CONTAINS = "contains"
    FINISHES = "finishes"
    FINISHED_BY = "finished_by"
    EQUALS = "equals"

    @property
    def converse(self) -> "AllenRelation":
        return _CONVERSE[self]


_CONVERSE = {
    AllenRelation.BEFORE: AllenRelation.AFTER,
    AllenRelation.AFTER: AllenRelation.BEFORE,
    AllenRelation.MEETS: AllenRelation.MET_BY,
    AllenRelation.MET_BY: AllenRelation.MEETS,
    AllenRelation.OVERLAPS: AllenRelation.OVERLAPPED_BY,
    AllenRelation.OVERLAPPED_BY: AllenRelation.OVERLAPS,
    AllenRelation.STARTS: AllenRelation.STARTED_BY,
    AllenRelation.STARTED_BY: AllenRelation.STARTS,
    AllenRelation.DURING: AllenRelation.CONTAINS,
    AllenRelation.CONTAINS: AllenRelation.DURING,
    AllenRelation.FINISHES: AllenRelation.FINISHED_BY,
    AllenRelation.FINISHED_BY: AllenRelation.FINISHES,
    AllenRelation.EQUALS: AllenRelation.EQUALS,
}


def allen_relation(t1: TimeInterval, t2: TimeInterval) -> AllenRelation:
    """Classify the relation between two closed, bounded intervals.

    Exactly one of the 13 labels is returned for every pair with
    begin <= end. The classic definitions are unambiguous only for proper
    intervals (begin < end); degenerate point intervals are resolved by a
    fixed priority — EQUALS, then BEFORE/AFTER, then MEETS/MET_BY, before the
    starts/finishes/during/overlaps families — which keeps the classification
    total, disjoint and converse-consistent (e.g. [2,2] vs [2,3] is MEETS).
    """
    if not t1.bounded or not t2.bounded:
        raise ValueError("Allen relations are defined over bounded intervals only")
    m1, n1 = t1.begin, t1.end
    m2, n2 = t2.begin, t2.end
    if m1 == m2 and n1 == n2:
        return AllenRelation.EQUALS
    if n1 < m2:
        return AllenRelation.BEFORE
    if n2 < m1:
        return AllenRelation.AFTER
    if n1 == m2:
        return AllenRelation.MEETS
    if n2 == m1:
        return AllenRelation.MET_BY
    if m1 == m2:
        return AllenRelation.STARTS if n1 < n2 else AllenRelation.STARTED_BY
    if n1 == n2:
        return AllenRelation.FINISHES if m1 > m2 else AllenRelation.FINISHED_BY
    if m2 < m1 and n1 < n2:
        return AllenRelation.DURING
    if m1 < m2 and n2 < n1:
        return AllenRelation.CONTAINS
    if m1 < m2:
        return AllenRelation.OVERLAPS
    return AllenRelation.OVERLAPPED_BY


@dataclass
class Dataset:
    """An indexed temporal knowledge graph with train/valid/test splits.

    Facts are (N, 4) int64 arrays of (subject, relation, object, time) ids.
    For interval datasets each split also carries the raw intervals, aligned
    row for row, and the fact's time id is its normalized begin point.
    Datasets are immutable after load and safe to share between threads.
    """

    kind: str  # "point" or "interval"
    entities: list
    relations: list
    times: list
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    train_intervals: Optional[list] = None
    valid_intervals: Optional[list] = None
    test_intervals: Optional[list] = None
    _snapshots: dict = field(default_factory=dict, repr=False)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_times(self) -> int:
        return len(self.times)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def intervals(self, name: str) -> Optional[list]:
        return getattr(self, f"{name}_intervals")

    def quads(self, name: str) -> Iterator[Quadruple]:
        facts = self.split(name)
        ivals = self.intervals(name)
        for i, (s, p, o, t) in enumerate(facts):
            yield Quadruple(int(s), int(p), int(o), int(t),
                            ivals[i] if ivals is not None else None)

    def all_facts(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)

    def snapshot(self, t: int) -> np.ndarray:
        """Row indices of train facts at time id ``t``."""
        if not self._snapshots:
            order = {}
            for i, row in enumerate(self.train):
                order.setdefault(int(row[3]), []).append(i)
            self._snapshots.update({t: np.asarray(ix) for t, ix in order.items()})
        return self._snapshots.get(t, np.empty(0, dtype=np.int64))

    def stats(self) -> dict:
        return {
            "kind": self.kind,
            "entities": self.n_entities,
            "relations": self.n_relations,
            "times": self.n_times,
            "train": len(self.train),
            "valid": len(self.valid),
            "test": len(self.test),
        }

    def save_stats(self, path) -> None:
        Path(path).write_text(json.dumps(self.stats(), indent=2) + "\n")

    def save_tsv(self, directory) -> None:
        """Write the splits back out in the input TSV format (round-trips)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in SPLITS:
            ivals = self.intervals(name)
            with open(directory / f"{name}.txt", "w", encoding="utf-8") as fh:
                for i, (s, p, o, t) in enumerate(self.split(name)):
                    cols = [self.entities[s], self.relations[p], self.entities[o]]
                    if self.kind == "point":
                        cols.append(str(self.times[t]))
                    else:
                        iv = ivals[i]
                        cols.append("" if iv.begin is None else str(iv.begin))
                        cols.append("" if iv.end is None else str(iv.end))
                    fh.write("\t".join(cols) + "\n")


def _split_path(directory: Path, name: str) -> Path:
    for candidate in (directory / f"{name}.txt", directory / name):
        if candidate.is_file():
            return candidate
    raise FileNotFoundError(f"no {name} split found in {directory}")


def _read_rows(path: Path, n_columns: int) -> list[list[str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != n_columns:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_columns} tab-separated "
                    f"columns, got {len(cols)}"
                )
            rows.append(cols)
    return rows


def _build_vocab(values) -> tuple[list, dict]:
    ordered = sorted(set(values))
    return ordered, {v: i for i, v in enumerate(ordered)}


def load_pointwise(directory) -> Dataset:
    """Load a time-point dataset from train/valid/test TSV files."""
    directory = Path(directory)
    raw = {name: _read_rows(_split_path(directory, name), 4) for name in SPLITS}
    if not any(raw.values()):
        raise ValueError(f"dataset at {directory} contains no facts")

    entities, relations, dates = [], [], []
    for rows in raw.values():
        for s, p, o, d in rows:
            entities += [s, o]
            relations.append(p)
            dates.append(d)
    ents, ent_id = _build_vocab(entities)
    rels, rel_id = _build_vocab(relations)
    times, time_id = _build_vocab(dates)

    arrays = {}
    for name, rows in raw.items():
        arr = np.asarray(
            [[ent_id[s], rel_id[p], ent_id[o], time_id[d]] for s, p, o, d in rows],
            dtype=np.int64,
        ).reshape(-1, 4)
        arrays[name] = arr
    return Dataset(kind="point", entities=ents, relations=rels, times=times, **arrays)


def _parse_endpoint(token: str, empty_tokens) -> Optional[str]:
    return None if token.strip() in empty_tokens else token.strip()


def _coerce_time_keys(tokens: set) -> dict:
    """Map raw endpoint tokens to comparable keys (ints when all numeric)."""
    try:
        return {t: int(t) for t in tokens}
    except ValueError:
        return {t: t for t in tokens}


def load_interval(
    directory,
    columns: Sequence[str] = ("s", "p", "o", "begin", "end"),
    empty_tokens: Sequence[str] = EMPTY_TOKENS,
) -> Dataset:
    """Load a time-interval dataset (5 TSV columns per fact).

    ``columns`` declares the on-disk column order (layouts differ between
    releases); it must name exactly s, p, o, begin, end. A missing begin
    means (-inf, end], a missing end means [begin, +inf); both endpoints
    missing is rejected. Fact time ids are the normalized begin point (the
    dataset's first time point when begin is open).
    """
    if sorted(columns) != sorted(("s", "p", "o", "begin", "end")):
        raise ValueError(f"column map must name s,p,o,begin,end; got {columns!r}")
    col = {name: i for i, name in enumerate(columns)}
    directory = Path(directory)
    raw = {name: _read_rows(_split_path(directory, name), 5) for name in SPLITS}
    if not any(raw.values()):
        raise ValueError(f"dataset at {directory} contains no facts")

    empty = set(empty_tokens)
    entities, relations, endpoints = [], [], set()
    parsed: dict[str, list] = {name: [] for name in SPLITS}
    for name, rows in raw.items():
        for cols in rows:
            s, p, o = cols[col["s"]], cols[col["p"]], cols[col["o"]]
            begin = _parse_endpoint(cols[col["begin"]], empty)
            end = _parse_endpoint(cols[col["end"]], empty)
            if begin is None and end is None:
                raise ValueError(f"fact ({s}, {p}, {o}) has no bounded endpoint")
            entities += [s, o]
            relations.append(p)
            endpoints.update(tok for tok in (begin, end) if tok is not None)
            parsed[name].append((s, p, o, begin, end))

    key_of = _coerce_time_keys(endpoints)
    ents, ent_id = _build_vocab(entities)
    rels, rel_id = _build_vocab(relations)
    times, time_id = _build_vocab(key_of.values())

    arrays, interval_lists = {}, {}
    for name, rows in parsed.items():
        facts, ivals = [], []
        for s, p, o, begin, end in rows:
            iv = TimeInterval(
                None if begin is None else key_of[begin],
                None if end is None else key_of[end],
            )
            t = time_id[iv.begin] if iv.begin is not None else 0
            facts.append([ent_id[s], rel_id[p], ent_id[o], t])
            ivals.append(iv)
        arrays[name] = np.asarray(facts, dtype=np.int64).reshape(-1, 4)
        interval_lists[f"{name}_intervals"] = ivals
    return Dataset(
        kind="interval", entities=ents, relations=rels, times=times,
        **arrays, **interval_lists,
    )
