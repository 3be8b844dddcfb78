"""CSV ingestion and result emission.

Input schemas (header row required, empty cell = missing):

=============  =====================================  =========================
model          columns                                missing allowed in
=============  =====================================  =========================
meta           ``y, s``                               none
mean           ``x``                                  ``x``
longitudinal   ``visit_1, ..., visit_M``              visits 2..M, monotone
regression     ``t, x1, x2, x3, x4``                  ``x2``
=============  =====================================  =========================

Row numbers in error messages count data rows from 0.
"""

import csv
import json
import math
import os
import re
import tempfile

import numpy as np
import pandas as pd

from .exceptions import InvalidArgumentError, InvalidDataError
from .models.longitudinal import PanelDataset
from .models.mean import UnivariateIncomplete
from .models.meta import MetaDataset
from .models.regression import COLUMNS as REGRESSION_COLUMNS
from .models.regression import RegressionDataset

MODELS = ("meta", "mean", "longitudinal", "regression")
_VISIT = re.compile(r"^visit_(\d+)$")


def _read_numeric(path, required=None, optional_missing=(), blank_rows=False):
    """Read a CSV into a float frame, checking columns, numbers and missing cells.

    With ``blank_rows`` an empty line is a row of empty cells, which is how a
    missing value looks in a one-column file.
    """
    if not os.path.isfile(path):
        raise InvalidDataError(f"data file not found: {path}")
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                          skip_blank_lines=not blank_rows)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise InvalidDataError(f"cannot parse {path}: {exc}") from exc
    raw.columns = [c.strip() for c in raw.columns]
    if required is not None:
        missing = [c for c in required if c not in raw.columns]
        if missing:
            raise InvalidDataError(f"{path}: missing column(s) {missing}; found {list(raw.columns)}")
        raw = raw[list(required)]
    if raw.empty:
        raise InvalidDataError(f"{path}: no data rows")
    out = {}
    for col in raw.columns:
        text = raw[col].str.strip()
        empty = text == ""
        bad = np.flatnonzero(empty.to_numpy()) if col not in optional_missing else []
        if len(bad):
            raise InvalidDataError(f"{path}: row {bad[0]}, column {col!r} is empty")
        values = pd.to_numeric(text.where(~empty), errors="coerce")
        bad = np.flatnonzero((values.isna() & ~empty).to_numpy())
        if len(bad):
            raise InvalidDataError(
                f"{path}: row {bad[0]}, column {col!r} is not a number: {text.iloc[bad[0]]!r}")
        vals = values.to_numpy(dtype=float)
        bad = np.flatnonzero(np.isinf(vals))
        if len(bad):
            raise InvalidDataError(f"{path}: row {bad[0]}, column {col!r} is not finite")
        out[col] = vals
    return pd.DataFrame(out)


def load_meta(path):
    df = _read_numeric(path, ["y", "s"])
    return MetaDataset(df["y"].to_numpy(), df["s"].to_numpy())


def load_mean(path, lam=0.0):
    df = _read_numeric(path, ["x"], optional_missing=("x",), blank_rows=True)
    return UnivariateIncomplete.from_array(df["x"].to_numpy(), lam)


def _visit_columns(path):
    header = pd.read_csv(path, nrows=0).columns
    visits = sorted((int(m.group(1)), c) for c in header
                    if (m := _VISIT.match(c.strip())) is not None)
    numbers = [v for v, _ in visits]
    if len(numbers) < 2 or numbers != list(range(1, len(numbers) + 1)):
        raise InvalidDataError(
            f"{path}: expected columns visit_1..visit_M with M >= 2, found {list(header)}")
    return [f"visit_{v}" for v in numbers]


def load_panel(path):
    if not os.path.isfile(path):
        raise InvalidDataError(f"data file not found: {path}")
    cols = _visit_columns(path)
    df = _read_numeric(path, cols, optional_missing=cols[1:])
    return PanelDataset(df.to_numpy())


def load_regression(path):
    df = _read_numeric(path, list(REGRESSION_COLUMNS), optional_missing=("x2",))
    return RegressionDataset(df["t"].to_numpy(), df[["x1", "x2", "x3", "x4"]].to_numpy())


def validate_dataset(path, model, **kwargs):
    """Load and schema-check ``path`` for ``model``; raises :class:`InvalidDataError`."""
    loaders = {"meta": load_meta, "mean": load_mean, "longitudinal": load_panel,
               "regression": load_regression}
    if model not in loaders:
        raise InvalidArgumentError(f"unknown model {model!r}; expected one of {MODELS}")
    return loaders[model](path, **kwargs)


def fmt(value):
    """17 significant digits so that doubles round-trip exactly."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else format(float(value), ".17g")
    return str(value)


def jsonable(obj):
    """Plain JSON types; NaN and infinities become ``null``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def cell_records(cells, names):
    """Flat rows: grid coordinates, estimates, distance, ASL, plausibility, error."""
    est_keys = []
    for c in cells:
        for key in c.estimates:
            if key not in est_keys:
                est_keys.append(key)
    header = list(names) + est_keys + ["mean_distance", "asl", "plausible", "error"]
    rows = []
    for c in cells:
        est = c.estimates
        rows.append([c.eta[n] for n in names] + [est.get(k, float("nan")) for k in est_keys]
                    + [c.mean_distance, c.asl, c.plausible, c.error or ""])
    return header, rows


class AtomicWriter:
    """Stage files in a temporary directory and move them into place together."""

    def __init__(self, output_dir):
        self.output_dir = output_dir
        self._staged = []

    def __enter__(self):
        os.makedirs(self.output_dir, exist_ok=True)
        self._tmp = tempfile.mkdtemp(prefix=".simsens-", dir=self.output_dir)
        return self

    def path(self, name):
        self._staged.append(name)
        return os.path.join(self._tmp, name)

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is None:
                for name in self._staged:
                    os.replace(os.path.join(self._tmp, name), os.path.join(self.output_dir, name))
        finally:
            for name in os.listdir(self._tmp):
                os.remove(os.path.join(self._tmp, name))
            os.rmdir(self._tmp)
        return False


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_cells(path, cells, names):
    write_table(path, *cell_records(cells, names))


def write_contour(path, cells, names):
    """Cells of a 2-D grid sorted by (first axis, second axis) for contour plotting."""
    if len(names) != 2:
        raise InvalidArgumentError("contour output needs a 2-D grid")
    header, rows = cell_records(cells, names)
    write_table(path, header, sorted(rows, key=lambda r: (r[0], r[1])))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def read_cells(path):
    """Read ``cells.csv`` back into a DataFrame."""
    return pd.read_csv(path, keep_default_na=False, na_values=["nan"], float_precision="round_trip",
                       converters={"plausible": lambda v: v == "true"})
