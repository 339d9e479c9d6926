"""Interaction ingestion, temporal splitting and sparse binary matrices."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp


class ConfigError(ValueError):
    """Input configuration does not match the data (e.g. missing column)."""


class ParseError(ValueError):
    """A data line could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    user_key: str
    item_key: str
    timestamp: int

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise ValueError("user_key and item_key must be non-empty")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class FormatConfig:
    """Column names to read; ``delimiter=None`` sniffs comma vs tab from the header."""

    user_col: str = "user"
    item_col: str = "item"
    time_col: str = "timestamp"
    delimiter: str | None = None


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    valid_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        fr = (self.train_fraction, self.valid_fraction, self.test_fraction)
        if not all(0.0 < f < 1.0 for f in fr):
            raise ValueError(f"split fractions must lie in (0, 1), got {fr}")
        if abs(sum(fr) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must sum to 1, got {sum(fr)!r}")


def _detect_delimiter(header: str) -> str:
    return "\t" if header.count("\t") > header.count(",") else ","


def parse_interactions(stream: IO[bytes] | IO[str] | bytes | str,
                       config: FormatConfig | None = None) -> list[InteractionRecord]:
    """Read delimiter-separated interaction rows.

    Line numbers in :class:`ParseError` count data lines from 1 (the header
    is line 0). Blank lines are skipped but still counted.
    """
    config = config or FormatConfig()
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8")
    if isinstance(stream, str):
        text = io.StringIO(stream)
    elif isinstance(stream, io.TextIOBase):
        text = stream
    else:
        text = io.TextIOWrapper(stream, encoding="utf-8", newline="")

    header_line = text.readline()
    if not header_line.strip():
        raise ConfigError("missing header line")
    delim = config.delimiter or _detect_delimiter(header_line)
    header = [h.strip() for h in next(csv.reader([header_line], delimiter=delim))]
    try:
        cols = [header.index(c) for c in (config.user_col, config.item_col, config.time_col)]
    except ValueError:
        missing = [c for c in (config.user_col, config.item_col, config.time_col)
                   if c not in header]
        raise ConfigError(f"header {header} lacks column(s) {missing}") from None
    width = max(cols) + 1

    records = []
    for lineno, row in enumerate(csv.reader(text, delimiter=delim), start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) < width:
            raise ParseError(lineno, f"expected at least {width} fields, got {len(row)}")
        user, item, ts = (row[c].strip() for c in cols)
        try:
            t = int(ts)
        except ValueError:
            raise ParseError(lineno, f"non-integer timestamp {ts!r}") from None
        try:
            records.append(InteractionRecord(user, item, t))
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
    return records


def write_interactions(records: Iterable[InteractionRecord], stream: IO[str],
                       delimiter: str = ",") -> None:
    w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    w.writerow(["user", "item", "timestamp"])
    for r in records:
        w.writerow([r.user_key, r.item_key, r.timestamp])


def temporal_split(records: Sequence[InteractionRecord], spec: SplitSpec | None = None):
    """Global cut by event time into (train, valid, test).

    Records are stably sorted on timestamp, then cut at
    ``floor(n * train)`` and ``floor(n * (train + valid))``.
    """
    spec = spec or SplitSpec()
    n = len(records)
    if n == 0:
        raise ValueError("cannot split an empty record sequence")
    ordered = sorted(records, key=lambda r: r.timestamp)  # sorted() is stable
    a = math.floor(n * spec.train_fraction)
    b = math.floor(n * (spec.train_fraction + spec.valid_fraction))
    return ordered[:a], ordered[a:b], ordered[b:]


def recency_filter(records: Sequence[InteractionRecord], window_seconds: int | None,
                   reference_time: int) -> list[InteractionRecord]:
    """Keep records with timestamp in ``(reference_time - window, reference_time]``.

    ``window_seconds=None`` means unbounded and returns the input unchanged.
    """
    if window_seconds is None:
        return list(records)
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive or None")
    lo = reference_time - window_seconds
    return [r for r in records if lo < r.timestamp <= reference_time]


@dataclass(frozen=True)
class DropCounts:
    unknown_user: int = 0
    unknown_item: int = 0

    @property
    def total(self) -> int:
        return self.unknown_user + self.unknown_item


@dataclass(frozen=True, eq=False)
class FeedbackMatrix:
    """Binary user x item consumption matrix in CSR layout.

    Row ``u`` holds the sorted item indices ``indices[indptr[u]:indptr[u+1]]``.
    """

    indptr: np.ndarray
    indices: np.ndarray
    user_keys: tuple[str, ...]
    item_keys: tuple[str, ...]
    user_index: Mapping[str, int] = field(repr=False)
    item_index: Mapping[str, int] = field(repr=False)

    def __post_init__(self):
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @property
    def num_users(self) -> int:
        return len(self.user_keys)

    @property
    def num_items(self) -> int:
        return len(self.item_keys)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def contains(self, u: int, i: int) -> bool:
        """The indicator: True iff user ``u`` consumed item ``i``."""
        r = self.row(u)
        j = np.searchsorted(r, i)
        return bool(j < len(r) and r[j] == i)

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.num_items)

    def pairs(self) -> set[tuple[int, int]]:
        return {(u, int(i)) for u in range(self.num_users) for i in self.row(u)}

    def to_csr(self) -> sp.csr_matrix:
        data = np.ones(self.nnz, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr),
                             shape=(self.num_users, self.num_items))

    def to_dense(self, dtype=np.int8) -> np.ndarray:
        out = np.zeros((self.num_users, self.num_items), dtype=dtype)
        rows = np.repeat(np.arange(self.num_users), self.row_lengths())
        out[rows, self.indices] = 1
        return out

    @classmethod
    def from_dense(cls, dense, user_keys=None, item_keys=None) -> "FeedbackMatrix":
        dense = np.asarray(dense) != 0
        n_u, n_i = dense.shape
        user_keys = tuple(user_keys or (f"u{u}" for u in range(n_u)))
        item_keys = tuple(item_keys or (f"i{i}" for i in range(n_i)))
        rows, cols = np.nonzero(dense)
        indptr = np.zeros(n_u + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_u), out=indptr[1:])
        return cls(indptr, cols.astype(np.int64), user_keys, item_keys,
                   {k: i for i, k in enumerate(user_keys)},
                   {k: i for i, k in enumerate(item_keys)})


def _key_index(keys: Iterable[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for k in keys:
        out.setdefault(k, len(out))
    return out


def build_matrix(records: Sequence[InteractionRecord],
                 user_index: Mapping[str, int] | Sequence[str] | None = None,
                 item_index: Mapping[str, int] | Sequence[str] | None = None,
                 ) -> tuple[FeedbackMatrix, DropCounts]:
    """Collapse records into a binary matrix.

    Without supplied indices, keys are numbered in order of first appearance.
    With supplied indices, records naming unknown keys are dropped and counted
    (an unknown user takes precedence when both keys are unknown).
    """
    if user_index is not None and not isinstance(user_index, Mapping):
        user_index = {k: i for i, k in enumerate(user_index)}
    if item_index is not None and not isinstance(item_index, Mapping):
        item_index = {k: i for i, k in enumerate(item_index)}
    uidx = dict(user_index) if user_index is not None else _key_index(r.user_key for r in records)
    iidx = dict(item_index) if item_index is not None else _key_index(r.item_key for r in records)

    drop_u = drop_i = 0
    us, its = [], []
    for r in records:
        u = uidx.get(r.user_key)
        if u is None:
            drop_u += 1
            continue
        i = iidx.get(r.item_key)
        if i is None:
            drop_i += 1
            continue
        us.append(u)
        its.append(i)

    n_u, n_i = len(uidx), len(iidx)
    user_keys = tuple(sorted(uidx, key=uidx.__getitem__))
    item_keys = tuple(sorted(iidx, key=iidx.__getitem__))
    if us:
        pairs = np.unique(np.array(us, dtype=np.int64) * max(n_i, 1)
                          + np.array(its, dtype=np.int64))
        rows, cols = np.divmod(pairs, max(n_i, 1))
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    indptr = np.zeros(n_u + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n_u), out=indptr[1:])
    mat = FeedbackMatrix(indptr, cols.astype(np.int64), user_keys, item_keys, uidx, iidx)
    return mat, DropCounts(drop_u, drop_i)
