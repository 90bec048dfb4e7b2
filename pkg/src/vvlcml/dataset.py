"""Sample schemas, CSV ingestion, outlier filtering, feature scaling and splits.

Two dataset flavors are handled: RSS-based path-loss records (DS2 style,
one scalar response per row) and frequency-sweep records (DS1 style, a
19-point channel-loss magnitude vector per row). Datasets are plain tuples
of frozen samples; every operation here is a pure function over them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

# Channel-loss magnitude grid, kHz. 19 points covering 200 kHz to 2 MHz in
# 100 kHz steps; contains the three tabulated columns (200 kHz, 1 MHz, 2 MHz).
FREQ_GRID_KHZ: tuple[int, ...] = tuple(range(200, 2001, 100))

DS2_COLUMNS = (
    "distance_m", "ambient_mv", "rx_angle_deg", "same_lane", "turbulence",
    "path_loss_db", "accel_x", "accel_y", "accel_z",
)
DS2_HEADER = ",".join(DS2_COLUMNS)
DS2_HEADER_WITH_REGION = DS2_HEADER + ",variance_region"

DS1_COLUMNS = ("distance_m", "sunload_mv", "rx_angle_deg", "vna_model") + tuple(
    f"pl_{k}khz" for k in FREQ_GRID_KHZ
)
DS1_HEADER = ",".join(DS1_COLUMNS)

# Canonical predictor orders used when building model matrices.
PATHLOSS_FEATURES = (
    "distance_m", "ambient_mv", "rx_angle_deg", "same_lane", "turbulence",
    "variance_region",
)
CFR_FEATURES = ("distance_m", "sunload_mv", "rx_angle_deg", "vna_model")


@dataclass(frozen=True)
class PathLossSample:
    """One labeled RSS observation: predictors plus path loss in dB.

    Acceleration values are opaque validation fields used only by the
    outlier filter; ``variance_region`` is assigned by clustering, never
    ingested from raw data.
    """

    distance_m: float
    ambient_mv: float
    rx_angle_deg: float
    same_lane: int
    turbulence: int
    path_loss_db: float
    accel: tuple[float, float, float] | None = None
    variance_region: int | None = None


@dataclass(frozen=True)
class CfrSample:
    """One frequency-sweep observation with a 19-point loss vector in dB."""

    distance_m: float
    sunload_mv: float
    rx_angle_deg: float
    vna_model: int
    cfr_db: tuple[float, ...]

    def __post_init__(self):
        if len(self.cfr_db) != len(FREQ_GRID_KHZ):
            raise ValueError(
                f"cfr_db must have {len(FREQ_GRID_KHZ)} entries, got {len(self.cfr_db)}"
            )


@dataclass(frozen=True)
class IngestReport:
    """Result of a CSV ingestion: accepted samples plus rejected row log."""

    samples: tuple
    rejected: tuple  # (1-based data row number, reason) pairs

    def __len__(self):
        return len(self.samples)


def _parse_float(text: str, column: str):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"{column} is not finite")
    return value


def _parse_flag(text: str, column: str) -> int:
    value = _parse_float(text, column)
    if value not in (0.0, 1.0):
        raise ValueError(f"{column} must be 0 or 1, got {text}")
    return int(value)


def _parse_ds2_row(cells: list[str], has_region: bool) -> PathLossSample:
    distance = _parse_float(cells[0], "distance_m")
    if distance <= 0:
        raise ValueError("distance_m must be positive")
    angle = _parse_float(cells[2], "rx_angle_deg")
    if angle not in (0.0, 30.0):
        raise ValueError(f"rx_angle_deg must be 0 or 30, got {cells[2]}")
    accel_cells = cells[6:9]
    if all(c == "" for c in accel_cells):
        accel = None
    else:
        accel = tuple(_parse_float(c, name) for c, name in
                      zip(accel_cells, ("accel_x", "accel_y", "accel_z")))
    region = _parse_flag(cells[9], "variance_region") if has_region else None
    return PathLossSample(
        distance_m=distance,
        ambient_mv=_parse_float(cells[1], "ambient_mv"),
        rx_angle_deg=angle,
        same_lane=_parse_flag(cells[3], "same_lane"),
        turbulence=_parse_flag(cells[4], "turbulence"),
        path_loss_db=_parse_float(cells[5], "path_loss_db"),
        accel=accel,
        variance_region=region,
    )


def _parse_ds1_row(cells: list[str]) -> CfrSample:
    distance = _parse_float(cells[0], "distance_m")
    if distance <= 0:
        raise ValueError("distance_m must be positive")
    cfr = tuple(_parse_float(c, f"pl_{k}khz")
                for c, k in zip(cells[4:], FREQ_GRID_KHZ))
    return CfrSample(
        distance_m=distance,
        sunload_mv=_parse_float(cells[1], "sunload_mv"),
        rx_angle_deg=_parse_float(cells[2], "rx_angle_deg"),
        vna_model=_parse_flag(cells[3], "vna_model"),
        cfr_db=cfr,
    )


def ingest_csv(path, schema: str) -> IngestReport:
    """Read a DS1- or DS2-style CSV and return accepted samples.

    The header must match the canonical column spec exactly (the DS2 schema
    also accepts the clustering-augmented header with a trailing
    ``variance_region`` column). Rows with a missing response, non-finite
    numbers, or out-of-domain flag values are rejected and reported by row
    number; they never abort the ingestion.

    Raises ``FileNotFoundError`` for a missing file and ``ValueError`` for a
    header mismatch, an unknown schema, or a file with zero valid rows.
    """
    if schema not in ("pathloss", "cfr"):
        raise ValueError(f"unknown schema {schema!r}; expected 'pathloss' or 'cfr'")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ValueError(f"{path}: empty file")

    header = lines[0]
    if schema == "pathloss":
        if header == DS2_HEADER:
            has_region = False
        elif header == DS2_HEADER_WITH_REGION:
            has_region = True
        else:
            raise ValueError(f"{path}: header does not match DS2 schema")
        n_cols = 10 if has_region else 9
    else:
        if header != DS1_HEADER:
            raise ValueError(f"{path}: header does not match DS1 schema")
        n_cols = len(DS1_COLUMNS)

    samples = []
    rejected = []
    for row_no, line in enumerate(lines[1:], start=1):
        cells = line.split(",")
        if len(cells) != n_cols:
            rejected.append((row_no, f"expected {n_cols} columns, got {len(cells)}"))
            continue
        try:
            if schema == "pathloss":
                samples.append(_parse_ds2_row(cells, has_region))
            else:
                samples.append(_parse_ds1_row(cells))
        except ValueError as exc:
            rejected.append((row_no, str(exc)))
    if not samples:
        raise ValueError(f"{path}: no valid rows")
    return IngestReport(samples=tuple(samples), rejected=tuple(rejected))


def _fmt(value) -> str:
    # repr of a Python float is the shortest string that round-trips, which
    # keeps serialize -> ingest bit-exact.
    return repr(float(value))


def write_ds2_csv(path, samples, include_region: bool = False) -> None:
    """Serialize path-loss samples using the canonical DS2 encoding."""
    lines = [DS2_HEADER_WITH_REGION if include_region else DS2_HEADER]
    for s in samples:
        accel = ("", "", "") if s.accel is None else tuple(_fmt(a) for a in s.accel)
        cells = [
            _fmt(s.distance_m), _fmt(s.ambient_mv), _fmt(s.rx_angle_deg),
            str(int(s.same_lane)), str(int(s.turbulence)), _fmt(s.path_loss_db),
            *accel,
        ]
        if include_region:
            cells.append("" if s.variance_region is None else str(int(s.variance_region)))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_ds1_csv(path, samples) -> None:
    """Serialize CFR samples using the canonical DS1 encoding."""
    lines = [DS1_HEADER]
    for s in samples:
        cells = [
            _fmt(s.distance_m), _fmt(s.sunload_mv), _fmt(s.rx_angle_deg),
            str(int(s.vna_model)),
        ]
        cells.extend(_fmt(v) for v in s.cfr_db)
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class FilterResult:
    kept: tuple
    removed_indices: tuple

    @property
    def removed_count(self) -> int:
        return len(self.removed_indices)


def filter_outliers(samples, accel_threshold: float = 3.0) -> FilterResult:
    """Drop samples whose acceleration deviates too far from the dataset mean.

    A sample is removed when any axis deviates from that axis' mean by more
    than ``accel_threshold`` standard deviations. Samples without
    acceleration fields pass through untouched; statistics are computed over
    the samples that carry them.
    """
    if accel_threshold <= 0:
        raise ValueError("accel_threshold must be positive")
    samples = tuple(samples)
    with_accel = [i for i, s in enumerate(samples) if s.accel is not None]
    if len(with_accel) < 2:
        return FilterResult(kept=samples, removed_indices=())
    accel = np.array([samples[i].accel for i in with_accel], dtype=float)
    mean = accel.mean(axis=0)
    std = accel.std(axis=0)
    # A zero-variance axis can never flag anything.
    deviant = np.abs(accel - mean) > accel_threshold * std
    removed = {with_accel[j] for j in np.nonzero(deviant.any(axis=1))[0]}
    kept = tuple(s for i, s in enumerate(samples) if i not in removed)
    return FilterResult(kept=kept, removed_indices=tuple(sorted(removed)))


@dataclass(frozen=True)
class ScalingSpec:
    """Per-feature affine map sending observed [min, max] onto [-1, +1].

    Constant features are flagged and passed through unscaled.
    """

    mins: np.ndarray
    maxs: np.ndarray
    constant: np.ndarray
    feature_names: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "mins": [float(v) for v in self.mins],
            "maxs": [float(v) for v in self.maxs],
            "constant": [bool(v) for v in self.constant],
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScalingSpec":
        return cls(
            mins=np.asarray(data["mins"], dtype=float),
            maxs=np.asarray(data["maxs"], dtype=float),
            constant=np.asarray(data["constant"], dtype=bool),
            feature_names=tuple(data.get("feature_names", ())),
        )


def fit_scaler(values, feature_names=()) -> ScalingSpec:
    """Fit the min/max scaling spec on a (n, p) matrix or (n,) vector."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("cannot fit a scaler on an empty dataset")
    if x.ndim == 1:
        x = x[:, None]
    mins = x.min(axis=0)
    maxs = x.max(axis=0)
    constant = maxs == mins
    return ScalingSpec(mins=mins, maxs=maxs, constant=constant,
                       feature_names=tuple(feature_names))


def apply_scaler(spec: ScalingSpec, values):
    """Map raw values onto [-1, 1] per feature; out-of-range values extrapolate."""
    x = np.asarray(values, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    span = np.where(spec.constant, 1.0, spec.maxs - spec.mins)
    scaled = (x - spec.mins) / span * 2.0 - 1.0
    scaled = np.where(spec.constant, x, scaled)
    return scaled[:, 0] if squeeze else scaled


def invert_scaler(spec: ScalingSpec, values):
    """Inverse of :func:`apply_scaler`; exact round trip up to rounding."""
    y = np.asarray(values, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    span = np.where(spec.constant, 1.0, spec.maxs - spec.mins)
    raw = (y + 1.0) / 2.0 * span + spec.mins
    raw = np.where(spec.constant, y, raw)
    return raw[:, 0] if squeeze else raw


def out_of_range(spec: ScalingSpec, values) -> np.ndarray:
    """Boolean mask of rows holding at least one value outside the fit range."""
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    outside = (x < spec.mins) | (x > spec.maxs)
    return outside.any(axis=1)


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/validation/test fractions plus RNG seed."""

    train: float = 0.6
    validation: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name, frac in (("train", self.train), ("validation", self.validation),
                           ("test", self.test)):
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"{name} fraction must be in [0, 1]")
        if abs(self.train + self.validation + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def split(n: int, spec: SplitSpec):
    """Partition range(n) into disjoint, exhaustive train/val/test index sets.

    Validation and test sizes are floor-rounded; the remainder goes to the
    training partition. The same (n, spec) always yields the same partition.
    """
    if n <= 0:
        raise ValueError("cannot split an empty dataset")
    n_val = int(n * spec.validation)
    n_test = int(n * spec.test)
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    val = np.sort(perm[:n_val])
    test = np.sort(perm[n_val:n_val + n_test])
    train = np.sort(perm[n_val + n_test:])
    return train, val, test


def with_variance_region(samples, labels) -> tuple:
    """Return copies of path-loss samples with the region flag populated."""
    samples = tuple(samples)
    if len(labels) != len(samples):
        raise ValueError("label count does not match sample count")
    return tuple(replace(s, variance_region=int(l)) for s, l in zip(samples, labels))


def pathloss_features(samples, feature_names=PATHLOSS_FEATURES) -> np.ndarray:
    """Build the (n, p) predictor matrix in canonical feature order.

    ``variance_region`` defaults to 0 when the clustering stage has not run.
    """
    rows = np.empty((len(samples), len(feature_names)))
    for i, s in enumerate(samples):
        for j, name in enumerate(feature_names):
            if name == "variance_region":
                rows[i, j] = 0.0 if s.variance_region is None else s.variance_region
            else:
                rows[i, j] = getattr(s, name)
    return rows


def pathloss_targets(samples) -> np.ndarray:
    return np.array([s.path_loss_db for s in samples], dtype=float)


def cfr_features(samples, include_vna: bool = True) -> np.ndarray:
    names = CFR_FEATURES if include_vna else CFR_FEATURES[:3]
    return np.array([[getattr(s, n) for n in names] for s in samples], dtype=float)


def cfr_targets(samples) -> np.ndarray:
    return np.array([s.cfr_db for s in samples], dtype=float)
