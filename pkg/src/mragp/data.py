"""CSV ingestion: typed columns, covariate engineering, transform reuse.

Training ingestion learns a Transform (centering constants for continuous
covariates, level sets for categorical ones, the day origin); prediction
ingestion replays that transform so both designs live in the same column
space. All failures carry 1-based data row numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .errors import ConfigError, DataError
from .geo import PointSet


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    kind: str  # "continuous" or "categorical"
    reference: str | None = None

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical"):
            raise ConfigError(f"covariate {self.name}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and not self.reference:
            raise ConfigError(
                f"covariate {self.name}: categorical needs a reference level"
            )


def parse_covariate_specs(text: str):
    """Parse 'elev,cover:cat:water' into CovariateSpec entries.

    Bare names are continuous; 'name:cat:REF' declares a categorical with
    reference level REF.
    """
    specs = []
    for raw in text.split(","):
        item = raw.strip()
        if not item:
            continue
        if ":" in item:
            parts = item.split(":")
            if len(parts) != 3 or parts[1] != "cat":
                raise ConfigError(
                    f"bad covariate spec {item!r}; expected name or name:cat:REF"
                )
            specs.append(CovariateSpec(parts[0], "categorical", parts[2]))
        else:
            specs.append(CovariateSpec(item, "continuous"))
    return specs


@dataclass(frozen=True)
class TableSchema:
    lon: str = "lon"
    lat: str = "lat"
    time: str = "day"
    response: str = "y"
    covariates: tuple = ()


@dataclass
class Transform:
    """Everything learned at training time that prediction must replay."""

    time_origin: int
    centers: dict = field(default_factory=dict)  # continuous col -> training mean
    levels: dict = field(default_factory=dict)  # categorical col -> ordered non-ref levels
    column_names: tuple = ()


@dataclass
class Dataset:
    points: PointSet
    X: np.ndarray
    y: np.ndarray | None
    column_names: tuple

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _parse_day(raw: str, row: int):
    text = raw.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return date.fromisoformat(text).toordinal()
    except ValueError:
        raise DataError(
            f"row {row}: time value {raw!r} is neither an integer day nor YYYY-MM-DD"
        ) from None


def _parse_float(raw: str, row: int, col: str) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise DataError(f"row {row}: column {col!r} value {raw!r} is not numeric") from None
    if not np.isfinite(v):
        raise DataError(f"row {row}: column {col!r} value {raw!r} is not finite")
    return v


def ingest_csv(
    path,
    schema: TableSchema,
    transform: Transform | None = None,
    require_response: bool = True,
):
    """Read one CSV into a Dataset, learning or replaying a Transform.

    Returns (dataset, transform). With transform=None this is a training
    read: continuous covariates are centered at their column means, each
    categorical column's levels are collected (sorted, reference dropped),
    and day indices are rebased to the minimum observed day. Passing a
    learned transform replays those choices verbatim; a categorical level
    never seen in training is an error, not a silent zero row.
    """
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")

    col_index = {}
    for name in header:
        if name in col_index:
            raise DataError(f"{path}: duplicate column {name!r}")
        col_index[name] = header.index(name)

    needed = [schema.lon, schema.lat, schema.time]
    has_response = schema.response in col_index
    if require_response and not has_response:
        raise DataError(f"{path}: missing response column {schema.response!r}")
    for spec in schema.covariates:
        needed.append(spec.name)
    for name in needed:
        if name not in col_index:
            raise DataError(f"{path}: missing column {name!r}")

    n = len(rows)
    lon = np.empty(n)
    lat = np.empty(n)
    day_raw = np.empty(n, dtype=np.int64)
    y = np.empty(n) if has_response else None
    cont_cols = {s.name: np.empty(n) for s in schema.covariates if s.kind == "continuous"}
    cat_cols = {s.name: [] for s in schema.covariates if s.kind == "categorical"}

    for i, row in enumerate(rows):
        rownum = i + 2  # 1-based, counting the header line
        if len(row) != len(header):
            raise DataError(
                f"{path}: row {rownum} has {len(row)} fields, header has {len(header)}"
            )
        lon[i] = _parse_float(row[col_index[schema.lon]], rownum, schema.lon)
        lat[i] = _parse_float(row[col_index[schema.lat]], rownum, schema.lat)
        day_raw[i] = _parse_day(row[col_index[schema.time]], rownum)
        if y is not None:
            y[i] = _parse_float(row[col_index[schema.response]], rownum, schema.response)
        for name, arr in cont_cols.items():
            arr[i] = _parse_float(row[col_index[name]], rownum, name)
        for name, vals in cat_cols.items():
            vals.append(row[col_index[name]].strip())

    learning = transform is None
    if learning:
        transform = Transform(time_origin=int(day_raw.min()))
    day = day_raw - transform.time_origin
    if day.min() < 0:
        raise DataError(
            f"{path}: day index {int(day_raw.min())} precedes the training origin "
            f"{transform.time_origin}"
        )
    try:
        points = PointSet(lon, lat, day)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None

    columns = [np.ones(n)]
    names = ["intercept"]
    for spec in schema.covariates:
        if spec.kind == "continuous":
            arr = cont_cols[spec.name]
            if learning:
                transform.centers[spec.name] = float(arr.mean())
            columns.append(arr - transform.centers[spec.name])
            names.append(spec.name)
        else:
            vals = cat_cols[spec.name]
            if learning:
                seen = sorted(set(vals))
                if spec.reference not in seen:
                    raise DataError(
                        f"{path}: categorical {spec.name!r} never takes its "
                        f"declared reference level {spec.reference!r}"
                    )
                transform.levels[spec.name] = [
                    lv for lv in seen if lv != spec.reference
                ]
            known = transform.levels[spec.name]
            allowed = set(known) | {spec.reference}
            for i, v in enumerate(vals):
                if v not in allowed:
                    raise DataError(
                        f"{path}: row {i + 2}: categorical {spec.name!r} has "
                        f"unseen level {v!r}"
                    )
            for lv in known:
                columns.append(np.array([1.0 if v == lv else 0.0 for v in vals]))
                names.append(f"{spec.name}_{lv}")
    X = np.column_stack(columns)
    if learning:
        transform.column_names = tuple(names)
    elif tuple(names) != transform.column_names:
        raise DataError(
            f"{path}: design columns {tuple(names)} do not match training "
            f"columns {transform.column_names}"
        )
    return Dataset(points=points, X=X, y=y, column_names=tuple(names)), transform
