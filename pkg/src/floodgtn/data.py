"""Hourly observation frames, CSV I/O, sliding windows, splitting and scaling.

A frame is the raw T x F table of channels.  Windowing turns it into samples
``(x_past, x_cov_future, y_true)``: ``x_past`` holds every channel for hours
``t-w+1 .. t``, ``x_cov_future`` the covariate channels for ``t+1 .. t+k`` and
``y_true`` the target water levels for ``t+1 .. t+k``.
"""

from __future__ import annotations

import csv
import re
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .graph import StationGraph

CHANNEL_UNITS = {
    "water-level": "ft",
    "rainfall": "in/hr",
    "tide": "ft",
    "gate-opening": "1",
    "pump-flow": "cfs",
}
# node kind each channel kind must sit on
_CHANNEL_NODE_KIND = {
    "water-level": "water-level-station",
    "rainfall": "rain-gauge",
    "tide": "tide-boundary",
    "gate-opening": "gate",
    "pump-flow": "pump",
}
MAX_INTERPOLATED_GAP = 3
STD_FLOOR = 1e-8
_TIMESTAMP = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:00:00Z$")
_HOUR = timedelta(hours=1)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelSpec:
    name: str
    node_id: str
    kind: str

    @property
    def unit(self) -> str:
        return CHANNEL_UNITS[self.kind]

    @property
    def is_level(self) -> bool:
        return self.kind == "water-level"


def parse_timestamp(text: str) -> datetime:
    if not _TIMESTAMP.match(text):
        raise DataError(f"timestamp {text!r} is not ISO-8601 UTC on the hour (YYYY-MM-DDTHH:00:00Z)")
    return datetime.strptime(text, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:00:00Z")


@dataclass(frozen=True)
class TimeSeriesFrame:
    start_time: datetime
    channels: tuple[ChannelSpec, ...]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] < 1:
            raise DataError("frame needs at least one row")
        if self.values.shape[1] != len(self.channels):
            raise DataError(f"{self.values.shape[1]} value columns for {len(self.channels)} channels")
        if self.missing.shape != self.values.shape:
            raise DataError("missing-mask shape differs from values")
        if not np.isfinite(self.values).all():
            raise DataError("frame values must be finite")
        self.values.setflags(write=False)
        self.missing.setflags(write=False)

    @property
    def n_hours(self) -> int:
        return self.values.shape[0]

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channels]

    def timestamp(self, row: int) -> datetime:
        return self.start_time + row * _HOUR

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.channel_names.index(name)]

    def slice_hours(self, start: int, stop: int) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.timestamp(start), self.channels,
                               self.values[start:stop].copy(), self.missing[start:stop].copy())


@dataclass(frozen=True)
class Layout:
    """Column roles of a frame with respect to a graph."""

    graph: StationGraph
    channels: tuple[ChannelSpec, ...]
    level_columns: tuple[int, ...] = field(init=False)
    covariate_columns: tuple[int, ...] = field(init=False)
    target_columns: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        seen = set()
        for c in self.channels:
            if c.kind not in CHANNEL_UNITS:
                raise DataError(f"channel {c.name!r}: unknown kind {c.kind!r}")
            if c.node_id not in self.graph:
                raise DataError(f"channel {c.name!r} references unknown node {c.node_id!r}")
            node_kind = self.graph.node(c.node_id).kind
            if _CHANNEL_NODE_KIND[c.kind] != node_kind:
                raise DataError(f"channel {c.name!r} of kind {c.kind} cannot sit on {node_kind} node {c.node_id!r}")
            if (c.node_id, c.kind) in seen:
                raise DataError(f"node {c.node_id!r} has more than one {c.kind} channel")
            seen.add((c.node_id, c.kind))
        levels = tuple(i for i, c in enumerate(self.channels) if c.is_level)
        covs = tuple(i for i, c in enumerate(self.channels) if not c.is_level)
        by_node = {self.channels[i].node_id: i for i in levels}
        missing = [t for t in self.graph.targets if t not in by_node]
        if missing:
            raise DataError(f"targets without a water-level channel: {missing}")
        object.__setattr__(self, "level_columns", levels)
        object.__setattr__(self, "covariate_columns", covs)
        object.__setattr__(self, "target_columns", tuple(by_node[t] for t in self.graph.targets))

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def covariate_names(self) -> list[str]:
        return [self.channels[i].name for i in self.covariate_columns]

    @property
    def target_names(self) -> list[str]:
        return [self.channels[i].name for i in self.target_columns]

    def to_dict(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "channels": [[c.name, c.node_id, c.kind] for c in self.channels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Layout":
        from .graph import build_graph

        return cls(build_graph(d["graph"]), tuple(ChannelSpec(*c) for c in d["channels"]))


# -- CSV I/O -------------------------------------------------------------------

def manifest_path_for(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".channels.csv")


def read_channel_manifest(path) -> dict[str, ChannelSpec]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["channel", "node_id", "kind", "unit"]:
            raise DataError(f"{path}: manifest header must be channel,node_id,kind,unit")
        for row in reader:
            kind = row["kind"]
            if kind not in CHANNEL_UNITS:
                raise DataError(f"{path}: channel {row['channel']!r} has unknown kind {kind!r}")
            if row["unit"] != CHANNEL_UNITS[kind]:
                raise DataError(f"{path}: channel {row['channel']!r} unit {row['unit']!r} != {CHANNEL_UNITS[kind]!r}")
            out[row["channel"]] = ChannelSpec(row["channel"], row["node_id"], kind)
    return out


def _format_value(v: float) -> str:
    return repr(float(v))


def write_frame(frame: TimeSeriesFrame, path, manifest_path=None) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *frame.channel_names])
        for r in range(frame.n_hours):
            writer.writerow([format_timestamp(frame.timestamp(r)), *map(_format_value, frame.values[r])])
    with open(manifest_path or manifest_path_for(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["channel", "node_id", "kind", "unit"])
        for c in frame.channels:
            writer.writerow([c.name, c.node_id, c.kind, c.unit])


def read_table(path, channels: dict[str, ChannelSpec]) -> tuple[datetime, list[ChannelSpec], np.ndarray]:
    """Parse a data CSV into (start time, channels, T x F array with NaN for empty cells)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["timestamp"]:
        raise DataError(f"{path}: header must start with 'timestamp'")
    names = rows[0][1:]
    if len(set(names)) != len(names):
        raise DataError(f"{path}: duplicate channel names in header")
    unknown = [n for n in names if n not in channels]
    if unknown:
        raise DataError(f"{path}: channels missing from manifest: {unknown}")
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    start = parse_timestamp(body[0][0])
    values = np.empty((len(body), len(names)))
    for r, row in enumerate(body):
        if len(row) != len(names) + 1:
            raise DataError(f"{path}: row {r + 2} has {len(row)} cells, expected {len(names) + 1}")
        if parse_timestamp(row[0]) != start + r * _HOUR:
            raise DataError(f"{path}: non-hourly timestamps at row {r + 2} ({row[0]})")
        try:
            values[r] = [float(cell) if cell.strip() else np.nan for cell in row[1:]]
        except ValueError as exc:
            raise DataError(f"{path}: row {r + 2}: {exc}") from None
    return start, [channels[n] for n in names], values


def fill_gaps(values: np.ndarray, limit: int = MAX_INTERPOLATED_GAP) -> tuple[np.ndarray, np.ndarray]:
    """Linearly interpolate runs of NaN no longer than ``limit`` hours.

    Runs touching either end of the series take the nearest observed value.
    Returns the filled copy and a mask of the filled cells.
    """
    out = values.copy()
    missing = np.isnan(values)
    n = len(values)
    for col in range(values.shape[1]):
        gaps = missing[:, col]
        if gaps.all():
            raise DataError(f"column {col} has no observed values")
        r = 0
        while r < n:
            if not gaps[r]:
                r += 1
                continue
            end = r
            while end < n and gaps[end]:
                end += 1
            if end - r > limit:
                raise DataError(f"gap exceeds interpolation limit: {end - r} missing hours in column {col} from row {r}")
            if r == 0:
                out[r:end, col] = values[end, col]
            elif end == n:
                out[r:end, col] = values[r - 1, col]
            else:
                lo, hi = values[r - 1, col], values[end, col]
                frac = np.arange(1, end - r + 1) / (end - r + 1)
                out[r:end, col] = lo + frac * (hi - lo)
            r = end
    return out, missing


def load_frame(path, graph: StationGraph, manifest_path=None) -> TimeSeriesFrame:
    channels = read_channel_manifest(manifest_path or manifest_path_for(path))
    start, specs, values = read_table(path, channels)
    Layout(graph, tuple(specs))
    filled, missing = fill_gaps(values)
    return TimeSeriesFrame(start, tuple(specs), filled, missing)


# -- windows -------------------------------------------------------------------

@dataclass(frozen=True)
class WindowedSample:
    x_past: np.ndarray
    x_cov_future: np.ndarray
    y_true: np.ndarray
    anchor: datetime
    covariate_columns: tuple[int, ...]


@dataclass(frozen=True)
class WindowSet(Sequence):
    """Stacked windows: ``x_past`` (N, w, F), ``x_cov_future`` (N, k, C), ``y_true`` (N, k, M).

    ``anchors`` are frame row indices of hour ``t``; indexing with an int yields a
    :class:`WindowedSample`, with a slice or index array another ``WindowSet``.
    """

    x_past: np.ndarray
    x_cov_future: np.ndarray
    y_true: np.ndarray
    anchors: np.ndarray
    start_time: datetime
    layout: Layout

    def __post_init__(self):
        for arr in (self.x_past, self.x_cov_future, self.y_true, self.anchors):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.anchors)

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return WindowedSample(self.x_past[index], self.x_cov_future[index], self.y_true[index],
                                  self.anchor_time(index), self.layout.covariate_columns)
        return replace(self, x_past=self.x_past[index], x_cov_future=self.x_cov_future[index],
                       y_true=self.y_true[index], anchors=self.anchors[index])

    @property
    def w(self) -> int:
        return self.x_past.shape[1]

    @property
    def k(self) -> int:
        return self.x_cov_future.shape[1]

    def anchor_time(self, i: int) -> datetime:
        return self.start_time + int(self.anchors[i]) * _HOUR

    @classmethod
    def from_sample(cls, sample: WindowedSample, layout: Layout) -> "WindowSet":
        return cls(sample.x_past[None], sample.x_cov_future[None], sample.y_true[None],
                   np.array([0]), sample.anchor, layout)


def sliding_windows(frame: TimeSeriesFrame, w: int, k: int, graph: StationGraph) -> WindowSet:
    """All stride-1 windows, in chronological anchor order."""
    if w < 1 or k < 1:
        raise DataError(f"window lengths must be positive (w={w}, k={k})")
    n_hours = frame.n_hours
    if n_hours < w + k:
        raise DataError(f"frame too short: {n_hours} hours < w + k = {w + k}")
    layout = Layout(graph, frame.channels)
    view = np.lib.stride_tricks.sliding_window_view(frame.values, w + k, axis=0)  # (N, F, w+k)
    view = view.transpose(0, 2, 1)
    x_past = np.ascontiguousarray(view[:, :w, :])
    x_cov = np.ascontiguousarray(view[:, w:, list(layout.covariate_columns)])
    y = np.ascontiguousarray(view[:, w:, list(layout.target_columns)])
    anchors = np.arange(w - 1, n_hours - k)
    return WindowSet(x_past, x_cov, y, anchors, frame.start_time, layout)


def split_train_test(samples: WindowSet, ratio: float) -> tuple[WindowSet, WindowSet]:
    """Chronological split at ``floor(ratio * N)``.

    Training windows whose forecast hours reach into the first test forecast
    hour are dropped, so no target hour is shared across the split.
    """
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    n = len(samples)
    cut = int(np.floor(ratio * n))
    if cut == 0 or cut == n:
        side = "train" if cut == 0 else "test"
        raise DataError(f"empty {side} side after split (N={n}, ratio={ratio})")
    test = samples[cut:]
    first_test_hour = int(test.anchors[0]) + 1
    keep = samples.anchors[:cut] + samples.k < first_test_hour
    train = samples[np.flatnonzero(keep)]
    if len(train) == 0:
        raise DataError(f"empty train side after dropping windows that overlap the test period (N={n})")
    return train, test


def mask_future_covariates(sample):
    """Replace future covariates by their value at the last observed hour (hold-last).

    Works on a :class:`WindowedSample` or a :class:`WindowSet`.
    """
    if isinstance(sample, WindowSet):
        cols = list(sample.layout.covariate_columns)
        last = sample.x_past[:, -1:, cols]
        held = np.ascontiguousarray(np.broadcast_to(last, sample.x_cov_future.shape))
        return replace(sample, x_cov_future=held)
    cols = list(sample.covariate_columns)
    held = np.ascontiguousarray(np.broadcast_to(sample.x_past[-1:, cols], sample.x_cov_future.shape))
    held.setflags(write=False)
    return replace(sample, x_cov_future=held)


# -- scaling -------------------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    covariate_columns: tuple[int, ...]
    target_columns: tuple[int, ...]

    def transform(self, samples: WindowSet) -> WindowSet:
        cov, tgt = list(self.covariate_columns), list(self.target_columns)
        return replace(
            samples,
            x_past=(samples.x_past - self.mean) / self.std,
            x_cov_future=(samples.x_cov_future - self.mean[cov]) / self.std[cov],
            y_true=(samples.y_true - self.mean[tgt]) / self.std[tgt],
        )

    def inverse_targets(self, y: np.ndarray) -> np.ndarray:
        tgt = list(self.target_columns)
        return y * self.std[tgt] + self.mean[tgt]

    def inverse(self, samples: WindowSet) -> WindowSet:
        cov = list(self.covariate_columns)
        return replace(
            samples,
            x_past=samples.x_past * self.std + self.mean,
            x_cov_future=samples.x_cov_future * self.std[cov] + self.mean[cov],
            y_true=self.inverse_targets(samples.y_true),
        )

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "covariate_columns": list(self.covariate_columns),
                "target_columns": list(self.target_columns)}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float),
                   tuple(d["covariate_columns"]), tuple(d["target_columns"]))


def fit_scaler(train: WindowSet) -> Scaler:
    """Per-channel statistics over the distinct frame hours covered by training inputs."""
    if len(train) == 0:
        raise DataError("cannot fit a scaler on an empty training set")
    w = train.w
    hours = (train.anchors[:, None] - (w - 1) + np.arange(w)[None, :]).reshape(-1)
    rows = train.x_past.reshape(-1, train.x_past.shape[-1])
    _, first = np.unique(hours, return_index=True)
    distinct = rows[first]
    std = np.maximum(distinct.std(axis=0), STD_FLOOR)
    return Scaler(distinct.mean(axis=0), std, train.layout.covariate_columns, train.layout.target_columns)


def fit_apply_scaler(train: WindowSet, samples: WindowSet) -> tuple[Scaler, WindowSet]:
    scaler = fit_scaler(train)
    return scaler, scaler.transform(samples)
