"""Account-update data on disk: ranked frequency tables and update traces.

Two CSV schemas, both UTF-8 with a mandatory header row::

    rank,updates,total_blocks      one row per ranked account
    account_index,block_number     one row per (account, block) update event

Loaders validate the whole file before returning; any problem raises
:class:`DataError` with the offending line number.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import REFERENCE_FIT, AccountModel, PowerLawParams

FREQUENCY_HEADER = ["rank", "updates", "total_blocks"]
TRACE_HEADER = ["account_index", "block_number"]


@dataclass(frozen=True)
class FrequencyTable:
    updates: np.ndarray
    total_blocks: int

    def __post_init__(self):
        u = np.asarray(self.updates, dtype=np.int64)
        if u.ndim != 1 or u.size == 0:
            raise DataError("frequency table needs at least one row")
        if np.any(u < 0):
            raise DataError("update counts must be non-negative")
        if np.any(np.diff(u) > 0):
            raise DataError(f"update counts increase at rank {int(np.flatnonzero(np.diff(u) > 0)[0]) + 2}")
        if self.total_blocks < u.max():
            raise DataError(f"total_blocks {self.total_blocks} below the largest count {u.max()}")
        object.__setattr__(self, "updates", u)

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, self.updates.size + 1)

    @property
    def rows(self) -> list[tuple[int, int]]:
        return list(zip(self.ranks.tolist(), self.updates.tolist()))

    @property
    def frequencies(self) -> np.ndarray:
        return self.updates / self.total_blocks

    def __len__(self):
        return self.updates.size


def _int(text: str, what: str, line: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise DataError(f"{what} is not an integer: {text!r}", line) from None


def _rows(path, header):
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [c.strip() for c in first] != header:
            raise DataError(f"expected header {','.join(header)}", 1)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", reader.line_num)
            yield reader.line_num, row


def load_frequency_csv(path) -> FrequencyTable:
    counts = []
    total = None
    prev = None
    for line, (rank, updates, blocks) in _rows(path, FREQUENCY_HEADER):
        r = _int(rank, "rank", line)
        u = _int(updates, "updates", line)
        b = _int(blocks, "total_blocks", line)
        if r != len(counts) + 1:
            raise DataError(f"ranks must be contiguous from 1, expected {len(counts) + 1} got {r}", line)
        if u < 0:
            raise DataError("updates must be non-negative", line)
        if prev is not None and u > prev:
            raise DataError(f"counts must be non-increasing: rank {r} has {u} > {prev}", line)
        if total is None:
            total = b
        elif b != total:
            raise DataError(f"total_blocks changes from {total} to {b}", line)
        counts.append(u)
        prev = u
    if not counts:
        raise DataError("no data rows")
    if total < counts[0]:
        raise DataError(f"total_blocks {total} below the largest count {counts[0]}")
    return FrequencyTable(np.asarray(counts), total)


def load_trace_csv(path) -> dict[int, np.ndarray]:
    """Per-account arrays of strictly increasing block numbers.

    Several rows for the same (account, block) count as one update.
    """
    traces: dict[int, list[int]] = {}
    last = None
    for line, (acct, block) in _rows(path, TRACE_HEADER):
        key = (_int(acct, "account_index", line), _int(block, "block_number", line))
        if last is not None and key < last:
            raise DataError(f"rows must be sorted by account then block: {key} after {last}", line)
        if key != last:
            traces.setdefault(key[0], []).append(key[1])
        last = key
    return {j: np.asarray(b, dtype=np.int64) for j, b in traces.items()}


def write_frequency_csv(table: FrequencyTable, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FREQUENCY_HEADER)
        for r, u in table.rows:
            w.writerow([r, u, table.total_blocks])


def write_trace_csv(traces: dict[int, np.ndarray], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for j in sorted(traces):
            for b in traces[j]:
                w.writerow([j, int(b)])


def synthetic_frequencies(params: PowerLawParams = REFERENCE_FIT, n: int = 10_000,
                          noise: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Relative frequencies of ranks 1..n, optionally with log-normal noise."""
    f = AccountModel.from_power_law(params, n).probabilities
    if noise:
        if rng is None:
            raise ValueError("noise needs an rng")
        f = f * rng.lognormal(0.0, noise, size=n)
    return f


def synthetic_frequency_table(params: PowerLawParams = REFERENCE_FIT, n: int = 10_000,
                              total_blocks: int = 1_300_000, noise: float = 0.0,
                              rng: np.random.Generator | None = None) -> FrequencyTable:
    """Integer counts over ``total_blocks`` blocks, sorted into rank order."""
    f = synthetic_frequencies(params, n, noise, rng)
    counts = np.minimum(np.rint(f * total_blocks), total_blocks).astype(np.int64)
    return FrequencyTable(np.sort(counts)[::-1], total_blocks)


def synthetic_trace(probabilities, n_blocks: int, rng: np.random.Generator) -> dict[int, np.ndarray]:
    """Independent per-block updates for accounts 1..len(probabilities)."""
    p = np.asarray(probabilities, dtype=float)
    hits = rng.random((n_blocks, p.size)) < p
    return {j + 1: np.flatnonzero(hits[:, j]) for j in range(p.size)}
