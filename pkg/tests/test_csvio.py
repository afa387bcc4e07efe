import os

import numpy as np
import pytest

from conftest import make_dataset
from sqri.csvio import (SchemaError, atomic_write_text, fmt, read_case_csv, read_dataset_csv,
                        write_dataset_csv)


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_round_trip_is_exact(tmp_path, bivariate_obs):
    p = tmp_path / "obs.csv"
    write_dataset_csv(p, bivariate_obs)
    back = read_dataset_csv(p)
    np.testing.assert_array_equal(back.x, bivariate_obs.x)
    np.testing.assert_array_equal(back.delta, bivariate_obs.delta)
    r = bivariate_obs.delta
    np.testing.assert_array_equal(back.y[r], bivariate_obs.y[r])
    assert np.all(np.isnan(back.y[~r]))


def test_fmt_round_trips_doubles():
    for v in (0.1, 1 / 3, np.pi * 1e-300, -2.5e17, np.nextafter(1.0, 2.0)):
        assert float(fmt(v)) == v
    assert fmt(True) == "1" and fmt(np.int64(7)) == "7"


def test_missing_tokens(tmp_path):
    p = _write(tmp_path, "x1,y,delta\n0.1,1.5,1\n0.2,NA,0\n0.3,,0\n0.4,nan,0\n0.5,9.0,0\n")
    d = read_dataset_csv(p)
    assert d.n == 5 and d.delta.tolist() == [True, False, False, False, False]
    assert np.all(np.isnan(d.y[1:]))


@pytest.mark.parametrize("body,line,match", [
    ("x1,y,delta\n0.1,1.0,1\n0.2,abc,1\n", 3, "not a number"),
    ("x1,y,delta\n0.1,1.0,2\n", 2, "delta must be 0 or 1"),
    ("x1,y,delta\n0.1,1.0\n", 2, "expected 3 fields"),
    ("x1,y,delta\n1.5,1.0,1\n", 2, r"\[0, 1\]"),
    ("x1,y,delta\n0.1,NA,1\n", 2, "not a number"),
    ("x1,y,delta\n0.1,inf,1\n", 2, "not finite"),
    ("a,b,c\n0.1,1.0,1\n", 1, "header"),
])
def test_schema_errors_carry_line_numbers(tmp_path, body, line, match):
    p = _write(tmp_path, body)
    with pytest.raises(SchemaError, match=match) as err:
        read_dataset_csv(p)
    assert f"line {line}" in str(err.value)


def test_empty_inputs(tmp_path):
    with pytest.raises(SchemaError, match="empty file"):
        read_dataset_csv(_write(tmp_path, ""))
    with pytest.raises(SchemaError, match="no data rows"):
        read_dataset_csv(_write(tmp_path, "x1,y,delta\n"))


def test_case_csv_alias_and_checks(tmp_path):
    age, inc = read_case_csv(_write(tmp_path, "age,log.income\n21,13.1\n40,13.9\n"))
    np.testing.assert_array_equal(age, [21, 40])
    np.testing.assert_array_equal(inc, [13.1, 13.9])
    with pytest.raises(SchemaError, match="constant"):
        read_case_csv(_write(tmp_path, "age,log_income\n30,13\n30,14\n"))
    with pytest.raises(SchemaError, match="expected columns"):
        read_case_csv(_write(tmp_path, "years,income\n30,13\n31,14\n"))
    with pytest.raises(SchemaError, match="line 3"):
        read_case_csv(_write(tmp_path, "age,log_income\n30,13\n31,x\n"))


def test_atomic_write_replaces_and_cleans(tmp_path):
    p = tmp_path / "out.txt"
    atomic_write_text(p, "old\n")
    atomic_write_text(p, "new\n")
    assert p.read_text() == "new\n"
    assert os.listdir(tmp_path) == ["out.txt"]


def test_atomic_write_failure_keeps_old_file(tmp_path):
    p = tmp_path / "out.txt"
    atomic_write_text(p, "old\n")
    with pytest.raises(TypeError):
        atomic_write_text(p, 12345)  # not text: the write fails after the temp file exists
    assert p.read_text() == "old\n"
    assert os.listdir(tmp_path) == ["out.txt"]


def test_dataset_writer_leaves_missing_blank(tmp_path):
    d = make_dataset([0.25, 0.5], [1.0, np.nan], [1, 0])
    p = tmp_path / "d.csv"
    write_dataset_csv(p, d)
    assert p.read_text() == "x1,y,delta\n0.25,1,1\n0.5,,0\n"
