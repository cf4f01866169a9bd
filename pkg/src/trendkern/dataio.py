"""Trend datasets: loading, serialization, windowing and synthetic generation."""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ValidationError

FORMATS = ("trendkern-json", "geostyle-raw")
SEASON = 52
NOISE_STD = 0.01


@dataclass
class TrendSeries:
    series_id: int
    group_id: int
    element_id: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, TrendSeries):
            return NotImplemented
        return (
            (self.series_id, self.group_id, self.element_id)
            == (other.series_id, other.group_id, other.element_id)
            and np.array_equal(self.values, other.values)
        )


@dataclass
class Dataset:
    series: list
    group_vocab_size: int
    element_vocab_size: int
    bin_duration: str = "week"

    def __post_init__(self):
        self.validate()

    @property
    def length(self):
        return len(self.series[0].values) if self.series else 0

    def validate(self):
        bad = []
        for s in self.series:
            v = s.values
            if v.ndim != 1 or v.size == 0 or not np.isfinite(v).all() or (v < 0).any():
                bad.append(s.series_id)
        if bad:
            raise ValidationError(f"series with empty, non-finite or negative values: {bad}")
        if self.series:
            length = len(self.series[0].values)
            uneven = [s.series_id for s in self.series if len(s.values) != length]
            if uneven:
                raise ValidationError(
                    f"series lengths differ from {length} (series {self.series[0].series_id}): {uneven}"
                )
        seen = {}
        for s in self.series:
            key = (s.group_id, s.element_id)
            if key in seen:
                raise ValidationError(
                    f"duplicate (group_id, element_id) {key} in series {seen[key]} and {s.series_id}"
                )
            seen[key] = s.series_id
            if not 0 <= s.group_id < self.group_vocab_size:
                raise ValidationError(
                    f"series {s.series_id}: group_id {s.group_id} outside vocab {self.group_vocab_size}"
                )
            if not 0 <= s.element_id < self.element_vocab_size:
                raise ValidationError(
                    f"series {s.series_id}: element_id {s.element_id} outside vocab {self.element_vocab_size}"
                )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.group_vocab_size == other.group_vocab_size
            and self.element_vocab_size == other.element_vocab_size
            and self.bin_duration == other.bin_duration
            and self.series == other.series
        )


@dataclass
class TrendSample:
    sample_id: int
    series_id: int
    input: np.ndarray
    target: np.ndarray
    group_id: int
    element_id: int
    window_start: int


@dataclass
class SampleSet:
    samples: list
    role: str
    _arrays: dict = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def arrays(self):
        """Stacked numpy views: inputs, targets, sample/series/group/element ids."""
        if self._arrays is None:
            s = self.samples
            self._arrays = {
                "inputs": np.array([x.input for x in s], dtype=np.float64),
                "targets": np.array([x.target for x in s], dtype=np.float64),
                "sample_ids": np.array([x.sample_id for x in s], dtype=np.int64),
                "series_ids": np.array([x.series_id for x in s], dtype=np.int64),
                "group_ids": np.array([x.group_id for x in s], dtype=np.int64),
                "element_ids": np.array([x.element_id for x in s], dtype=np.int64),
            }
        return self._arrays


# ------------------------------------------------------------------ loading


def load_dataset(path, format="trendkern-json"):
    if format == "trendkern-json":
        return _load_trendkern_json(Path(path))
    if format == "geostyle-raw":
        return load_geostyle_raw(path)
    raise DataFormatError(f"unknown dataset format {format!r}; expected one of {FORMATS}")


def _load_trendkern_json(path):
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: top level must be an object")
    for key in ("group_vocab_size", "element_vocab_size", "series"):
        if key not in doc:
            raise DataFormatError(f"{path}: missing top-level field {key!r}")
    series = []
    for n, rec in enumerate(doc["series"]):
        try:
            values = rec["values"]
            if not isinstance(values, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in values
            ):
                raise TypeError("values must be an array of numbers")
            series.append(
                TrendSeries(
                    series_id=_as_int(rec["series_id"]),
                    group_id=_as_int(rec["group_id"]),
                    element_id=_as_int(rec["element_id"]),
                    values=np.array(values, dtype=np.float64),
                )
            )
        except (KeyError, TypeError) as exc:
            raise DataFormatError(f"{path}: series record {n}: {exc}") from None
    return Dataset(
        series=series,
        group_vocab_size=_as_int(doc["group_vocab_size"]),
        element_vocab_size=_as_int(doc["element_vocab_size"]),
        bin_duration=doc.get("bin_duration", "week"),
    )


def _as_int(x):
    if isinstance(x, bool) or not isinstance(x, int):
        raise TypeError(f"expected integer, got {x!r}")
    return x


def save_dataset(dataset, path):
    """Write ``dataset`` as trendkern-json (floats round-trip exactly)."""
    doc = {
        "group_vocab_size": dataset.group_vocab_size,
        "element_vocab_size": dataset.element_vocab_size,
        "bin_duration": dataset.bin_duration,
        "series": [
            {
                "series_id": s.series_id,
                "group_id": s.group_id,
                "element_id": s.element_id,
                "values": s.values.tolist(),
            }
            for s in dataset.series
        ],
    }
    Path(path).write_text(json.dumps(doc) + "\n")


# GeoStyle long-format CSV. Accepted header aliases per role.
GEOSTYLE_COLUMNS = {
    "city": ("city", "location"),
    "style": ("style", "attribute", "attribute_label"),
    "week": ("week", "date", "time"),
    "value": ("positive_fraction", "fraction", "value", "trend"),
}


def load_geostyle_raw(path):
    """Ingest a GeoStyle long-format CSV (one row per city, style, week).

    Cities and styles are mapped to dense ids in sorted order; series follow
    the first appearance of each (city, style) pair in the file. All series
    are trimmed to the week range every pair covers; a gap inside that range
    is a validation error.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        cols = {}
        for role, aliases in GEOSTYLE_COLUMNS.items():
            hit = [header.index(a) for a in aliases if a in header]
            if not hit:
                raise DataFormatError(f"{path}: no column for {role}; expected one of {aliases}")
            cols[role] = hit[0]
        rows = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                key = (row[cols["city"]].strip(), row[cols["style"]].strip())
                week = row[cols["week"]].strip()
                value = float(row[cols["value"]])
            except (IndexError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
            if key not in rows:
                rows[key] = {}
                order.append(key)
            rows[key][_week_key(week)] = value
    if not order:
        raise DataFormatError(f"{path}: no data rows")

    lo = max(min(weeks) for weeks in rows.values())
    hi = min(max(weeks) for weeks in rows.values())
    common = sorted({w for weeks in rows.values() for w in weeks if lo <= w <= hi})
    cities = {c: i for i, c in enumerate(sorted({k[0] for k in order}))}
    styles = {s: i for i, s in enumerate(sorted({k[1] for k in order}))}
    series, gaps = [], []
    for sid, key in enumerate(order):
        weeks = rows[key]
        missing = [w for w in common if w not in weeks]
        if missing:
            gaps.append(sid)
            continue
        series.append(
            TrendSeries(sid, cities[key[0]], styles[key[1]], np.array([weeks[w] for w in common]))
        )
    if gaps:
        raise ValidationError(f"series with gaps inside the common week range: {gaps}")
    return Dataset(series, len(cities), len(styles), "week")


def _week_key(week):
    try:
        return (0, int(week))
    except ValueError:
        return (1, week)  # ISO dates sort lexicographically


# ---------------------------------------------------------------- windowing


def make_samples(dataset, input_len, output_len):
    """Stride-1 windows; the final window of each series is its test sample."""
    if input_len < 1 or output_len < 1:
        raise ValueError("input_len and output_len must be >= 1")
    span = input_len + output_len
    short = [s.series_id for s in dataset.series if len(s.values) < span + 1]
    if short:
        raise ValidationError(
            f"series too short for input_len={input_len}, output_len={output_len} "
            f"(need length >= {span + 1}): {short}"
        )
    train, test = [], []
    next_id = 0
    for s in dataset.series:
        n_windows = len(s.values) - span + 1
        for start in range(n_windows):
            sample = TrendSample(
                sample_id=next_id,
                series_id=s.series_id,
                input=s.values[start:start + input_len],
                target=s.values[start + input_len:start + span],
                group_id=s.group_id,
                element_id=s.element_id,
                window_start=start,
            )
            next_id += 1
            (test if start == n_windows - 1 else train).append(sample)
    return SampleSet(train, "train"), SampleSet(test, "test")


# ---------------------------------------------------------------- synthetic


def generate_synthetic(num_groups, num_elements, length, seed, num_categories=None):
    """Seasonal popularity series, one per (group, element) pair.

    ``clip(base + amp*sin(2*pi*(t + phase)/52) + slope*t + noise, 0, 1)``.
    Phase is shared by elements with the same parent category
    (``element_id % num_categories``); base, amplitude and slope are drawn per
    series. Noise is Gaussian with standard deviation 0.01.
    """
    if min(num_groups, num_elements, length) < 1:
        raise ValueError("num_groups, num_elements and length must all be >= 1")
    num_categories = num_categories or min(4, num_elements)
    if num_categories < 1:
        raise ValueError("num_categories must be >= 1")
    rng = np.random.default_rng(seed)
    n = num_groups * num_elements
    phase = rng.uniform(0.0, SEASON, num_categories)
    base = rng.uniform(0.2, 0.6, n)
    amp = rng.uniform(0.05, 0.2, n)
    slope = rng.uniform(-1e-3, 1e-3, n)
    noise = rng.normal(0.0, NOISE_STD, (n, length))

    t = np.arange(length, dtype=np.float64)
    series = []
    for k in range(n):
        g, e = divmod(k, num_elements)
        curve = base[k] + amp[k] * np.sin(2 * np.pi * (t + phase[e % num_categories]) / SEASON)
        values = np.clip(curve + slope[k] * t + noise[k], 0.0, 1.0)
        series.append(TrendSeries(k, g, e, values))
    return Dataset(series, num_groups, num_elements, "week")
