"""CSV ingestion with line-numbered errors, and atomic writers for every artifact."""

from __future__ import annotations

import csv
import io
import os
import tempfile

import numpy as np

from .data import Dataset

_MISSING_TOKENS = ("", "na", "nan", "null")


class SchemaError(ValueError):
    """Malformed input file; the message carries the offending line number."""


def fmt(v) -> str:
    """17 significant digits, enough to round-trip any double."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, payload: bytes) -> None:
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write_text(path, csv_text(header, rows))


def _rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: line 1: empty file") from None
        header = [h.strip() for h in header]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}: line {lineno}: expected {len(header)} fields, "
                                  f"found {len(row)}")
            yield header, lineno, [c.strip() for c in row]


def _number(text, path, lineno, column):
    try:
        v = float(text)
    except ValueError:
        raise SchemaError(f"{path}: line {lineno}: column {column!r} is not a number: "
                          f"{text!r}") from None
    if not np.isfinite(v):
        raise SchemaError(f"{path}: line {lineno}: column {column!r} is not finite")
    return v


def read_dataset_csv(path) -> Dataset:
    """Read ``x1[,x2],y,delta``; ``y`` may be blank or NA where ``delta`` is 0."""
    xs, ys, ds = [], [], []
    header = None
    for header, lineno, row in _rows(path):
        if header[-2:] != ["y", "delta"] or header[:-2] not in (["x1"], ["x1", "x2"]):
            raise SchemaError(f"{path}: line 1: header must be x1[,x2],y,delta, got "
                              f"{','.join(header)}")
        cols = dict(zip(header, row))
        if cols["delta"] not in ("0", "1"):
            raise SchemaError(f"{path}: line {lineno}: delta must be 0 or 1, got "
                              f"{cols['delta']!r}")
        d = cols["delta"] == "1"
        x = [_number(cols[c], path, lineno, c) for c in header[:-2]]
        if any(v < 0 or v > 1 for v in x):
            raise SchemaError(f"{path}: line {lineno}: covariates must lie in [0, 1]")
        if d:
            y = _number(cols["y"], path, lineno, "y")
        elif cols["y"].lower() in _MISSING_TOKENS:
            y = np.nan
        else:
            # a value recorded for a nonrespondent is kept out of every estimator
            _number(cols["y"], path, lineno, "y")
            y = np.nan
        xs.append(x)
        ys.append(y)
        ds.append(d)
    if header is None:
        with open(path, newline="") as fh:
            first = fh.readline().strip()
        if first.split(",")[-2:] != ["y", "delta"]:
            raise SchemaError(f"{path}: line 1: header must be x1[,x2],y,delta, got {first}")
        raise SchemaError(f"{path}: no data rows")
    return Dataset(np.array(xs, dtype=float), np.array(ys, dtype=float), np.array(ds))


def dataset_rows(data: Dataset):
    header = [f"x{k + 1}" for k in range(data.d_x)] + ["y", "delta"]
    rows = []
    for i in range(data.n):
        y = data.y[i] if data.delta[i] else ""
        rows.append(list(data.x[i]) + [y, bool(data.delta[i])])
    return header, rows


def write_dataset_csv(path, data: Dataset) -> None:
    header, rows = dataset_rows(data)
    write_csv(path, header, rows)


CASE_COLUMNS = ("age", "log_income")
_CASE_ALIASES = {"log.income": "log_income"}


def read_case_csv(path):
    """``(age, log_income)`` arrays from a CSV with those two named columns."""
    age, inc = [], []
    for header, lineno, row in _rows(path):
        names = [_CASE_ALIASES.get(h, h) for h in header]
        if not set(CASE_COLUMNS) <= set(names):
            raise SchemaError(f"{path}: line 1: expected columns age and log_income, got "
                              f"{','.join(header)}")
        cols = dict(zip(names, row))
        age.append(_number(cols["age"], path, lineno, "age"))
        inc.append(_number(cols["log_income"], path, lineno, "log_income"))
    if len(age) < 2:
        raise SchemaError(f"{path}: need at least two data rows")
    age, inc = np.array(age), np.array(inc)
    if np.ptp(age) == 0:
        raise SchemaError(f"{path}: age column is constant")
    return age, inc
