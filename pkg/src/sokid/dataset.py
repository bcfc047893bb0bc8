"""Snapshot ensembles: data model, validation, file I/O and increment statistics.

An ensemble holds trajectories of a scalar SDE observed at shared times
``t_0 < t_1 < ... < t_n``.  Trajectories are grouped by initial condition; each
group stores a ``(k, n + 1)`` matrix whose rows are trajectories and whose
columns are observation times.

Intervals are indexed ``i = 1 ... n`` and span ``[t_{i-1}, t_i]``.  Every
per-interval vector in the package is ordered group-major, interval-minor, so
entry ``u * n + (i - 1)`` belongs to group ``u`` and interval ``i``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "EnsembleError",
    "EnsembleParseError",
    "EnsembleValidationError",
    "TimeGrid",
    "TrajectoryGroup",
    "SnapshotEnsemble",
    "IncrementStats",
    "load_ensemble",
    "save_ensemble",
    "dumps_ensemble",
    "mean_increments",
    "file_sha256",
]

FORMATS = ("csv", "json")


class EnsembleError(ValueError):
    """Base class for dataset errors."""


class EnsembleParseError(EnsembleError):
    """The file could not be parsed in the declared format."""


class EnsembleValidationError(EnsembleError):
    """The data parsed but violates an ensemble invariant."""


def _fmt(value: float) -> str:
    # 17 significant digits round-trips every IEEE double
    return format(float(value), ".17g")


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing observation times shared by all trajectories."""

    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        if times.size < 2:
            raise EnsembleValidationError(
                f"time grid needs at least 2 points, got {times.size}")
        for i, t in enumerate(times):
            if not math.isfinite(t):
                raise EnsembleValidationError(f"non-finite time at index {i}: {t!r}")
        steps = np.diff(times)
        bad = np.flatnonzero(~(steps > 0))
        if bad.size:
            i = int(bad[0]) + 1
            raise EnsembleValidationError(
                f"non-monotone time grid at index {i}: "
                f"t[{i - 1}]={times[i - 1]!r}, t[{i}]={times[i]!r}")
        if not np.all(np.isfinite(steps)):
            raise EnsembleValidationError("time grid has non-finite interval widths")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.times.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.times)

    @classmethod
    def uniform(cls, start: float, stop: float, num: int) -> "TimeGrid":
        return cls(np.linspace(start, stop, num))

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return np.array_equal(self.times, other.times)


@dataclass(frozen=True, eq=False)
class TrajectoryGroup:
    """``k`` trajectories started from one initial condition.

    ``snapshots[j, i]`` is trajectory ``j`` observed at time ``t_i``.  Column 0
    holds copies of the initial condition.
    """

    initial_condition: float
    snapshots: np.ndarray

    def __post_init__(self):
        snaps = np.array(self.snapshots, dtype=float)
        if snaps.ndim != 2 or snaps.shape[0] < 1 or snaps.shape[1] < 2:
            raise EnsembleValidationError(
                f"snapshots must be a (k >= 1, n + 1 >= 2) matrix, got shape {snaps.shape}")
        ic = float(self.initial_condition)
        if not math.isfinite(ic):
            raise EnsembleValidationError(f"non-finite initial condition {ic!r}")
        bad = np.argwhere(~np.isfinite(snaps))
        if bad.size:
            j, i = (int(v) for v in bad[0])
            raise EnsembleValidationError(
                f"non-finite snapshot at trajectory {j}, time index {i}: {snaps[j, i]!r}")
        off = np.flatnonzero(snaps[:, 0] != ic)
        if off.size:
            j = int(off[0])
            raise EnsembleValidationError(
                f"trajectory {j} starts at {snaps[j, 0]!r}, "
                f"not at the initial condition {ic!r}")
        snaps.setflags(write=False)
        object.__setattr__(self, "initial_condition", ic)
        object.__setattr__(self, "snapshots", snaps)

    @property
    def k(self) -> int:
        return self.snapshots.shape[0]

    def __eq__(self, other):
        if not isinstance(other, TrajectoryGroup):
            return NotImplemented
        return (self.initial_condition == other.initial_condition
                and np.array_equal(self.snapshots, other.snapshots))


@dataclass(frozen=True, eq=False)
class SnapshotEnsemble:
    """Observation grid plus one or more trajectory groups."""

    grid: TimeGrid
    groups: tuple[TrajectoryGroup, ...]

    def __post_init__(self):
        groups = tuple(self.groups)
        if not groups:
            raise EnsembleValidationError("ensemble has no trajectory groups")
        width = self.grid.times.size
        for u, grp in enumerate(groups):
            if grp.snapshots.shape[1] != width:
                raise EnsembleValidationError(
                    f"group {u} has {grp.snapshots.shape[1]} time columns, "
                    f"grid has {width}")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def from_arrays(cls, times, groups: Sequence) -> "SnapshotEnsemble":
        """Build from raw times and a list of ``(k, n + 1)`` snapshot arrays.

        The initial condition of each group is read from column 0.
        """
        built = []
        for snaps in groups:
            snaps = np.asarray(snaps, dtype=float)
            if snaps.ndim != 2 or snaps.shape[1] == 0:
                raise EnsembleValidationError(
                    f"snapshots must be 2-D, got shape {snaps.shape}")
            built.append(TrajectoryGroup(snaps[0, 0], snaps))
        return cls(TimeGrid(times), tuple(built))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    @property
    def num_functionals(self) -> int:
        """Total interval count ``N = g * n`` across groups."""
        return self.num_groups * self.n

    def functional_index(self, group: int, interval: int) -> int:
        """Row of ``(group, interval)`` with ``interval`` in ``1..n``."""
        if not (0 <= group < self.num_groups and 1 <= interval <= self.n):
            raise IndexError(f"no functional for group {group}, interval {interval}")
        return group * self.n + interval - 1

    def functional_location(self, index: int) -> tuple[int, int]:
        """Inverse of :meth:`functional_index`."""
        if not 0 <= index < self.num_functionals:
            raise IndexError(f"functional index {index} out of range")
        u, r = divmod(index, self.n)
        return u, r + 1

    def all_states(self) -> np.ndarray:
        return np.concatenate([g.snapshots.ravel() for g in self.groups])

    def __eq__(self, other):
        if not isinstance(other, SnapshotEnsemble):
            return NotImplemented
        return (self.grid == other.grid and len(self.groups) == len(other.groups)
                and all(a == b for a, b in zip(self.groups, other.groups)))


@dataclass(frozen=True)
class IncrementStats:
    mean_increments: np.ndarray
    index: tuple[tuple[int, int], ...] = field(repr=False)


def mean_increments(ensemble: SnapshotEnsemble) -> IncrementStats:
    """Across-trajectory mean of ``y_i - y_{i-1}`` for every (group, interval)."""
    parts = [np.diff(g.snapshots, axis=1).mean(axis=0) for g in ensemble.groups]
    index = tuple((u, i) for u in range(ensemble.num_groups)
                  for i in range(1, ensemble.n + 1))
    return IncrementStats(np.concatenate(parts), index)


# -- serialization ----------------------------------------------------------

def _dumps_csv(ensemble: SnapshotEnsemble) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "traj"] + [f"t={_fmt(t)}" for t in ensemble.grid.times])
    for u, grp in enumerate(ensemble.groups):
        for j, row in enumerate(grp.snapshots):
            writer.writerow([u, j] + [_fmt(v) for v in row])
    return buf.getvalue()


def _dumps_json(ensemble: SnapshotEnsemble) -> str:
    doc = {
        "times": [float(t) for t in ensemble.grid.times],
        "groups": [
            {"initial_condition": grp.initial_condition,
             "snapshots": grp.snapshots.tolist()}
            for grp in ensemble.groups
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def dumps_ensemble(ensemble: SnapshotEnsemble, format: str = "csv") -> str:
    """Canonical text form of ``ensemble``."""
    if not isinstance(ensemble, SnapshotEnsemble):
        raise EnsembleValidationError("expected a SnapshotEnsemble")
    if not ensemble.groups:
        raise EnsembleValidationError("ensemble has no trajectory groups")
    if format == "csv":
        return _dumps_csv(ensemble)
    if format == "json":
        return _dumps_json(ensemble)
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


def save_ensemble(ensemble: SnapshotEnsemble, path, format: str = "csv") -> None:
    text = dumps_ensemble(ensemble, format)
    Path(path).write_text(text, encoding="utf-8")


def _parse_float(text: str, where: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise EnsembleParseError(f"{where}: cannot parse {text!r} as a number") from None


def _loads_csv(text: str) -> SnapshotEnsemble:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise EnsembleParseError("empty CSV file")
    header = rows[0]
    if header[:2] != ["group", "traj"] or len(header) < 3:
        raise EnsembleParseError(
            "CSV header must start with 'group,traj,' followed by time columns")
    times = []
    for c, name in enumerate(header[2:]):
        if not name.startswith("t="):
            raise EnsembleParseError(f"header column {c + 2}: expected 't=<time>', got {name!r}")
        times.append(_parse_float(name[2:], f"header column {c + 2}"))
    grid = TimeGrid(times)

    width = len(header)
    by_group: dict[int, list[tuple[int, list[float]]]] = {}
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise EnsembleValidationError(
                f"line {r}: ragged row with {len(row)} fields, expected {width}")
        try:
            u, j = int(row[0]), int(row[1])
        except ValueError:
            raise EnsembleParseError(f"line {r}: group/traj must be integers") from None
        values = [_parse_float(v, f"line {r}, column {c + 2}") for c, v in enumerate(row[2:])]
        for i, v in enumerate(values):
            if not math.isfinite(v):
                raise EnsembleValidationError(
                    f"non-finite snapshot at group {u}, trajectory {j}, time index {i}")
        by_group.setdefault(u, []).append((j, values))

    if sorted(by_group) != list(range(len(by_group))):
        raise EnsembleValidationError(
            f"group ids must be 0..g-1, got {sorted(by_group)}")
    groups = []
    for u in range(len(by_group)):
        entries = by_group[u]
        ids = [j for j, _ in entries]
        if ids != list(range(len(ids))):
            raise EnsembleValidationError(
                f"group {u}: trajectory ids must be 0..k-1 in order, got {ids}")
        snaps = np.array([v for _, v in entries], dtype=float)
        try:
            groups.append(TrajectoryGroup(snaps[0, 0], snaps))
        except EnsembleValidationError as exc:
            raise EnsembleValidationError(f"group {u}: {exc}") from None
    return SnapshotEnsemble(grid, tuple(groups))


def _loads_json(text: str) -> SnapshotEnsemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EnsembleParseError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: "
                                 f"{exc.msg}") from None
    if not isinstance(doc, dict) or "times" not in doc or "groups" not in doc:
        raise EnsembleParseError("JSON ensemble needs 'times' and 'groups' keys")
    grid = TimeGrid(doc["times"])
    groups = []
    for u, g in enumerate(doc["groups"]):
        try:
            ic = g["initial_condition"]
            rows = g["snapshots"]
        except (KeyError, TypeError):
            raise EnsembleParseError(
                f"group {u}: needs 'initial_condition' and 'snapshots'") from None
        for j, row in enumerate(rows):
            if len(row) != grid.times.size:
                raise EnsembleValidationError(
                    f"group {u}, trajectory {j}: ragged row with {len(row)} entries, "
                    f"expected {grid.times.size}")
            for i, v in enumerate(row):
                if v is None or not math.isfinite(float(v)):
                    raise EnsembleValidationError(
                        f"non-finite snapshot at group {u}, trajectory {j}, time index {i}")
        try:
            groups.append(TrajectoryGroup(ic, np.array(rows, dtype=float)))
        except EnsembleValidationError as exc:
            raise EnsembleValidationError(f"group {u}: {exc}") from None
    return SnapshotEnsemble(grid, tuple(groups))


def loads_ensemble(text: str, format: str = "csv") -> SnapshotEnsemble:
    if format == "csv":
        return _loads_csv(text)
    if format == "json":
        return _loads_json(text)
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


def load_ensemble(path, format: str | None = None) -> SnapshotEnsemble:
    """Read and validate an ensemble file.

    ``format`` defaults to the file suffix (``.csv`` or ``.json``).
    """
    path = Path(path)
    if format is None:
        format = path.suffix.lstrip(".").lower() or "csv"
    text = path.read_text(encoding="utf-8")
    return loads_ensemble(text, format)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
