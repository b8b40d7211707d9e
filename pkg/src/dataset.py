"""
Recorded shots per query, the remaining-shot ledger, and the JSONL file format

File layout: one header object, then one record per shot:
    {"version": 1, "n_queries": ..., "shots_per_query": ..., "readout_kind": ..., "n_records": ...}
    {"m": "X", "u": 0, "t": 1e-07, "y": 0}
    {"m": "Z", "u": 1, "t": 1e-07, "c_re": 0.93, "c_im": -0.12}
"""
import json
import os
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np

from src.errors import DomainError, ExhaustedQueryError, ParseError
from src.models import MEAS_ORDER, Meas
from src.query_space import QuerySpace

FORMAT_VERSION = 1
READOUT_KINDS = ("bit_flip", "gaussian")


class Dataset:
    """Per-query shot lists over a QuerySpace with a remaining-shot ledger"""

    def __init__(self, space: QuerySpace, readout_kind: str = "bit_flip"):
        if readout_kind not in READOUT_KINDS:
            raise DomainError(f"unknown readout kind '{readout_kind}'")
        self.space = space
        self.readout_kind = readout_kind
        dtype = np.int8 if readout_kind == "bit_flip" else complex
        self._shots: List[np.ndarray] = [np.zeros(0, dtype=dtype) for _ in range(space.size)]
        self.ledger = np.zeros(space.size, dtype=np.int64)

    @property
    def is_signal(self) -> bool:
        return self.readout_kind == "gaussian"

    @property
    def total_shots(self) -> int:
        return int(self.ledger.sum())

    def add_shots(self, index: int, outcomes: Iterable):
        """Append outcomes to query `index`; shots beyond the ledger are dropped first"""
        current = self._shots[index][: self.ledger[index]]
        new = np.asarray(list(outcomes) if not isinstance(outcomes, np.ndarray) else outcomes,
                         dtype=current.dtype)
        self._shots[index] = np.concatenate([current, new])
        self.ledger[index] = self._shots[index].size

    def add_batch(self, indices: np.ndarray, outcomes: np.ndarray):
        indices = np.asarray(indices, dtype=int)
        for index in np.unique(indices):
            self.add_shots(int(index), outcomes[indices == index])

    def shots(self, index: int) -> np.ndarray:
        """Unused shots of query `index`"""
        return self._shots[index][: self.ledger[index]]

    def draw(self, index: int, rng) -> Any:
        """Remove a uniformly chosen unused shot (swap-to-tail keeps the stored multiset)"""
        remaining = int(self.ledger[index])
        if remaining <= 0:
            raise ExhaustedQueryError(f"no shots left for query {self.space.query(index).key()}")
        pick = int(rng.integers(remaining))
        shots = self._shots[index]
        shots[pick], shots[remaining - 1] = shots[remaining - 1], shots[pick]
        self.ledger[index] = remaining - 1
        return shots[remaining - 1]

    def counts(self) -> Tuple[np.ndarray, np.ndarray]:
        """(shots, zeros) per query; zeros uses the midpoint classifier bit for signals"""
        n = self.ledger.astype(float)
        if self.is_signal:
            raise DomainError("zero counts need bit outcomes; classify signals first")
        zeros = np.array([np.count_nonzero(self.shots(i) == 0) for i in range(self.space.size)], dtype=float)
        return n, zeros

    def shot_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """All unused shots flattened: (query index per shot, outcome per shot)"""
        index = np.repeat(np.arange(self.space.size), self.ledger)
        outcomes = np.concatenate([self.shots(i) for i in range(self.space.size)]) if index.size else \
            np.zeros(0, dtype=self._shots[0].dtype)
        return index, outcomes

    def copy(self) -> "Dataset":
        clone = Dataset(self.space, self.readout_kind)
        clone._shots = [shots.copy() for shots in self._shots]
        clone.ledger = self.ledger.copy()
        return clone

    def regrid(self, space: QuerySpace) -> "Dataset":
        """Same shots re-indexed onto another space that contains every query with data"""
        moved = Dataset(space, self.readout_kind)
        targets = space.indices_of(self.space.meas_idx, self.space.prep_idx, self.space.t)
        for old, new in enumerate(targets):
            if self.ledger[old] == 0:
                continue
            if new < 0:
                raise DomainError(f"query {self.space.query(old).key()} missing from the new space")
            moved.add_shots(int(new), self.shots(old))
        return moved

    def summary(self) -> Dict[str, Any]:
        return {
            "n_queries": self.space.size,
            "total_shots": self.total_shots,
            "min_shots": int(self.ledger.min()) if self.space.size else 0,
            "max_shots": int(self.ledger.max()) if self.space.size else 0,
            "empty_queries": int(np.count_nonzero(self.ledger == 0)),
            "readout_kind": self.readout_kind,
        }


def _record(space: QuerySpace, index: int, outcome, is_signal: bool) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        "m": MEAS_ORDER[space.meas_idx[index]].value,
        "u": int(space.prep_idx[index]),
        "t": float(space.t[index]),
    }
    if is_signal:
        record["c_re"] = float(np.real(outcome))
        record["c_im"] = float(np.imag(outcome))
    else:
        record["y"] = int(outcome)
    return record


def save_dataset(d: Dataset, path: str, extra_header: Optional[Dict[str, Any]] = None):
    """Write the unused shots of a dataset as UTF-8 JSONL"""
    per_query = np.unique(d.ledger)
    header: Dict[str, Any] = {
        "version": FORMAT_VERSION,
        "n_queries": d.space.size,
        "shots_per_query": int(per_query[0]) if per_query.size == 1 else None,
        "readout_kind": d.readout_kind,
        "n_records": d.total_shots,
        "time_grid": {"t_min": d.space.t_min, "spacing": d.space.spacing, "n_times": d.space.n_times},
    }
    header.update(extra_header or {})
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header) + "\n")
        for index in range(d.space.size):
            for outcome in d.shots(index):
                f.write(json.dumps(_record(d.space, index, outcome, d.is_signal)) + "\n")


def _space_from_header(header: Dict[str, Any]) -> QuerySpace:
    grid = header["time_grid"]
    spacing = float(grid["spacing"])
    times = float(grid["t_min"]) + np.arange(int(grid["n_times"])) * spacing
    return QuerySpace(times, spacing=spacing)


def load_dataset(path: str) -> Dataset:
    """Read a dataset file, checking every record and the header's record count"""
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty dataset file", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ParseError(f"header is not valid JSON ({e.msg})", 1)
    for key in ("version", "n_queries", "readout_kind", "n_records", "time_grid"):
        if key not in header:
            raise ParseError(f"header missing '{key}'", 1)
    if header["version"] != FORMAT_VERSION:
        raise ParseError(f"unsupported dataset version {header['version']}", 1)
    if header["readout_kind"] not in READOUT_KINDS:
        raise ParseError(f"unknown readout kind {header['readout_kind']!r}", 1)
    try:
        space = _space_from_header(header)
    except (KeyError, TypeError, ValueError, DomainError) as e:
        raise ParseError(f"bad time_grid ({e})", 1)
    if space.size != header["n_queries"]:
        raise ParseError(f"time_grid implies {space.size} queries, header says {header['n_queries']}", 1)

    d = Dataset(space, header["readout_kind"])
    is_signal = d.is_signal
    buckets: Dict[int, list] = {}
    for line_number, line in enumerate(lines[1:], start=2):
        try:
            record = json.loads(line)
            meas = Meas(record["m"]).index
            prep = int(record["u"])
            t = float(record["t"])
            outcome = complex(record["c_re"], record["c_im"]) if is_signal else int(record["y"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed record ({e})", line_number)
        if prep not in (0, 1) or (not is_signal and outcome not in (0, 1)):
            raise ParseError("record out of range", line_number)
        index = int(space.indices_of([meas], [prep], [t])[0])
        if index < 0:
            raise ParseError(f"time {t} is not on the header grid", line_number)
        buckets.setdefault(index, []).append(outcome)

    n_records = sum(len(v) for v in buckets.values())
    if n_records != header["n_records"]:
        raise ParseError(
            f"found {n_records} records, header declares {header['n_records']}", len(lines) + 1
        )
    for index in sorted(buckets):
        d.add_shots(index, buckets[index])
    return d


def read_header(path: str) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    try:
        return json.loads(first)
    except json.JSONDecodeError as e:
        raise ParseError(f"header is not valid JSON ({e.msg})", 1)
