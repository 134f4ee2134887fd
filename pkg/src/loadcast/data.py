"""Smart-meter data ingestion, windowing, splitting and scaling.

Raw input follows the Kaggle per-household CSV layout: columns ``LCLid``,
``tstp`` (ISO-8601, half-hour aligned) and ``energy(kWh/hh)``. Rows whose
energy field does not parse (the dataset contains literal ``Null``) or whose
timestamp is malformed/misaligned are dropped and counted; duplicate
timestamps keep the later row and are counted separately.

Cleaned series are cached one CSV per household with header ``timestamp,kwh``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Optional, TextIO

import numpy as np

from .errors import EmptyInputError, SchemaError
from .rng import make_rng

__all__ = [
    "MeterReading",
    "MeterSeries",
    "WindowedDataset",
    "MinMaxScaler",
    "ParseResult",
    "parse_readings",
    "make_windows",
    "split_train_test",
    "fit_apply_scaler",
    "save_series_cache",
    "load_series_cache",
    "list_cached_households",
    "synthetic_household_series",
]

RAW_HOUSEHOLD_COLUMN = "LCLid"
RAW_TIMESTAMP_COLUMN = "tstp"
RAW_ENERGY_COLUMN = "energy(kWh/hh)"

HALF_HOUR = timedelta(minutes=30)


@dataclass(frozen=True)
class MeterReading:
    """One half-hourly consumption reading."""

    household_id: str
    timestamp: datetime
    kwh: float


@dataclass
class MeterSeries:
    """One household's chronologically ordered readings."""

    household_id: str
    readings: list[MeterReading]

    def __len__(self) -> int:
        return len(self.readings)

    def values(self) -> np.ndarray:
        return np.array([r.kwh for r in self.readings], dtype=np.float64)

    def timestamps(self) -> list[datetime]:
        return [r.timestamp for r in self.readings]

    def truncate(self, max_readings: int) -> "MeterSeries":
        return MeterSeries(self.household_id, self.readings[:max_readings])


@dataclass
class ParseResult:
    """Outcome of ingesting a raw CSV: per-household series plus row counts."""

    series: dict[str, MeterSeries]
    dropped_count: int = 0
    duplicate_count: int = 0
    row_count: int = 0


def _parse_timestamp(text: str) -> Optional[datetime]:
    """Parse an ISO-ish timestamp; None if malformed or not on :00/:30.

    The Kaggle export uses 7 fractional digits (e.g. ``.0000000``), which
    ``fromisoformat`` rejects, so any fractional part is cut off first.
    """
    text = text.strip()
    if "." in text:
        text = text.split(".", 1)[0]
    try:
        ts = datetime.fromisoformat(text)
    except ValueError:
        return None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    else:
        ts = ts.astimezone(timezone.utc)
    if ts.minute not in (0, 30) or ts.second != 0 or ts.microsecond != 0:
        return None
    return ts


def parse_readings(stream: TextIO) -> ParseResult:
    """Group raw CSV rows by household into sorted, de-duplicated series."""
    reader = csv.DictReader(stream)
    header = reader.fieldnames or []
    for column in (RAW_HOUSEHOLD_COLUMN, RAW_TIMESTAMP_COLUMN, RAW_ENERGY_COLUMN):
        if column not in header:
            raise SchemaError(f"missing required column {column!r}")

    per_house: dict[str, dict[datetime, float]] = {}
    dropped = 0
    duplicates = 0
    rows = 0
    for row in reader:
        rows += 1
        house = (row[RAW_HOUSEHOLD_COLUMN] or "").strip()
        ts = _parse_timestamp(row[RAW_TIMESTAMP_COLUMN] or "")
        try:
            kwh = float((row[RAW_ENERGY_COLUMN] or "").strip())
        except ValueError:
            kwh = math.nan
        if not house or ts is None or not math.isfinite(kwh) or kwh < 0.0:
            dropped += 1
            continue
        bucket = per_house.setdefault(house, {})
        if ts in bucket:
            duplicates += 1
        bucket[ts] = kwh  # later row wins

    if not per_house:
        raise EmptyInputError("no valid readings in input")

    series = {}
    for house, bucket in sorted(per_house.items()):
        readings = [
            MeterReading(house, ts, kwh) for ts, kwh in sorted(bucket.items())
        ]
        series[house] = MeterSeries(house, readings)
    return ParseResult(series, dropped_count=dropped, duplicate_count=duplicates, row_count=rows)


@dataclass
class MinMaxScaler:
    """Min-max scaling to [0, 1] fitted on the training portion only.

    A degenerate fit (lo == hi) maps everything to 0 and is flagged; its
    inverse maps back to the constant.
    """

    lo: float
    hi: float

    @property
    def degenerate(self) -> bool:
        return self.hi == self.lo

    @classmethod
    def fit(cls, values: np.ndarray) -> "MinMaxScaler":
        return cls(lo=float(np.min(values)), hi=float(np.max(values)))

    def transform(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.degenerate:
            return np.zeros_like(values)
        return (values - self.lo) / (self.hi - self.lo)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        if self.degenerate:
            return np.full_like(values, self.lo)
        return values * (self.hi - self.lo) + self.lo


@dataclass
class WindowedDataset:
    """Supervised pairs: n consecutive readings -> the following reading.

    ``inputs`` is [m, n], ``targets`` [m]; pair i spans readings i..i+n.
    ``target_times`` (when built from a real series) gives each target's
    timestamp for chronology checks and trace alignment.
    """

    n: int
    inputs: np.ndarray
    targets: np.ndarray
    target_times: Optional[tuple[datetime, ...]] = None
    scaler: Optional[MinMaxScaler] = field(default=None)

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[1] != self.n:
            raise ValueError(f"inputs must be [m, {self.n}], got {self.inputs.shape}")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError(f"targets must be [{self.inputs.shape[0]}], got {self.targets.shape}")
        if self.target_times is not None and len(self.target_times) != len(self.targets):
            raise ValueError("target_times length disagrees with targets")

    def __len__(self) -> int:
        return len(self.targets)

    def pairs(self) -> list[tuple[list[float], float]]:
        return [(list(self.inputs[i]), float(self.targets[i])) for i in range(len(self))]


def windows_from_values(values: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 sliding windows over a plain value array."""
    values = np.asarray(values, dtype=np.float64)
    if n < 1:
        raise ValueError(f"window length must be >= 1, got {n}")
    if len(values) <= n:
        raise EmptyInputError(
            f"series of {len(values)} readings is too short for n={n} "
            f"(needs at least {n + 1})"
        )
    m = len(values) - n
    inputs = np.stack([values[i:i + n] for i in range(m)])
    targets = values[n:].copy()
    return inputs, targets


def make_windows(series: MeterSeries, n: int, *, strict_grid: bool = False) -> WindowedDataset:
    """Window a series into supervised pairs.

    By default windows run over consecutive *stored* readings, so gaps in the
    half-hourly grid do not break them. With ``strict_grid=True``, any pair
    whose n+1 readings are not exactly 30 minutes apart is skipped.
    """
    inputs, targets = windows_from_values(series.values(), n)
    times = series.timestamps()
    target_times = tuple(times[n:])
    if strict_grid:
        keep = []
        for i in range(len(targets)):
            span = times[i:i + n + 1]
            if all(span[j + 1] - span[j] == HALF_HOUR for j in range(n)):
                keep.append(i)
        if not keep:
            raise EmptyInputError(f"no gap-free windows of length n={n} in series")
        inputs = inputs[keep]
        targets = targets[keep]
        target_times = tuple(target_times[i] for i in keep)
    return WindowedDataset(n=n, inputs=inputs, targets=targets, target_times=target_times)


def split_train_test(ds: WindowedDataset, ratio: float = 0.8) -> tuple[WindowedDataset, WindowedDataset]:
    """Chronological split at floor(ratio * count); train precedes test."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    cut = int(math.floor(ratio * len(ds)))
    if cut == 0 or cut == len(ds):
        raise EmptyInputError(
            f"split ratio {ratio} leaves an empty side for {len(ds)} pairs"
        )

    def piece(lo: int, hi: int) -> WindowedDataset:
        times = ds.target_times[lo:hi] if ds.target_times is not None else None
        return WindowedDataset(
            n=ds.n,
            inputs=ds.inputs[lo:hi].copy(),
            targets=ds.targets[lo:hi].copy(),
            target_times=times,
        )

    return piece(0, cut), piece(cut, len(ds))


def fit_apply_scaler(
    train: WindowedDataset, test: WindowedDataset
) -> tuple[WindowedDataset, WindowedDataset, MinMaxScaler]:
    """Fit a min-max scaler on train inputs+targets only; apply to both.

    Test values outside the train range scale outside [0, 1]; no clipping.
    """
    if len(train) == 0:
        raise EmptyInputError("cannot fit a scaler on an empty training set")
    scaler = MinMaxScaler.fit(np.concatenate([train.inputs.reshape(-1), train.targets]))

    def apply(ds: WindowedDataset) -> WindowedDataset:
        return WindowedDataset(
            n=ds.n,
            inputs=scaler.transform(ds.inputs),
            targets=scaler.transform(ds.targets),
            target_times=ds.target_times,
            scaler=scaler,
        )

    return apply(train), apply(test), scaler


# --- cleaned-series cache -------------------------------------------------

_CACHE_HEADER = ["timestamp", "kwh"]


def save_series_cache(series: MeterSeries, directory) -> str:
    """Write one ``timestamp,kwh`` CSV per household; returns the path."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(str(directory), f"{series.household_id}.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_CACHE_HEADER)
        for r in series.readings:
            writer.writerow([r.timestamp.strftime("%Y-%m-%d %H:%M:%S"), repr(r.kwh)])
    return path


def load_series_cache(directory, household_id: str) -> MeterSeries:
    path = os.path.join(str(directory), f"{household_id}.csv")
    if not os.path.exists(path):
        raise EmptyInputError(f"no cached series for household {household_id!r} in {directory}")
    readings = []
    with open(path, "r", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _CACHE_HEADER:
            raise SchemaError(f"{path}: expected header {_CACHE_HEADER}, got {header}")
        for row in reader:
            ts = _parse_timestamp(row[0])
            if ts is None:
                raise SchemaError(f"{path}: bad timestamp {row[0]!r}")
            readings.append(MeterReading(household_id, ts, float(row[1])))
    if not readings:
        raise EmptyInputError(f"{path}: cached series is empty")
    return MeterSeries(household_id, readings)


def list_cached_households(directory) -> list[str]:
    if not os.path.isdir(directory):
        return []
    return sorted(
        os.path.splitext(name)[0]
        for name in os.listdir(directory)
        if name.endswith(".csv")
    )


# --- synthetic stand-in ---------------------------------------------------

def synthetic_household_series(
    household_id: str,
    days: int,
    seed: int,
    *,
    start: Optional[datetime] = None,
) -> MeterSeries:
    """Generate a household-like half-hourly kWh series for tests and demos.

    The profile mixes a base load, morning and evening peaks, a weekly
    weekday/weekend shift, lognormal-ish noise and occasional appliance
    spikes, seeded so it reproduces exactly. Values stay strictly positive.
    """
    if start is None:
        start = datetime(2013, 1, 7, tzinfo=timezone.utc)  # a Monday
    rng = make_rng(seed, "synthetic", household_id)
    count = days * 48
    t = np.arange(count)
    hour = (t % 48) / 2.0
    weekday = ((t // 48) % 7) < 5

    base = 0.12 + 0.05 * np.sin(2.0 * np.pi * (hour - 4.0) / 24.0)
    morning = 0.25 * np.exp(-0.5 * ((hour - 7.5) / 1.2) ** 2)
    evening = 0.55 * np.exp(-0.5 * ((hour - 19.0) / 2.0) ** 2)
    weekend_lift = np.where(weekday, 0.0, 0.10 * np.exp(-0.5 * ((hour - 12.0) / 3.0) ** 2))
    profile = base + morning + evening + weekend_lift

    noise = rng.lognormal(mean=0.0, sigma=0.25, size=count)
    spikes = (rng.random(count) < 0.02) * rng.uniform(0.3, 1.2, size=count)
    kwh = np.maximum(profile * noise + spikes, 0.01)

    readings = [
        MeterReading(household_id, start + i * HALF_HOUR, float(kwh[i])) for i in range(count)
    ]
    return MeterSeries(household_id, readings)
