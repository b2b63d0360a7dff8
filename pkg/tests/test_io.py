"""Tests for stream readers/writers and the flag record format."""

import json
import math

import numpy as np
import pytest

from othin.engine import ScoredObservation
from othin.stream_io import read_stream, write_binary, write_flags


def write_csv(path, X, header=False, times=None):
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(f"c{j}" for j in range(X.shape[0])) + "\n")
        for i in range(X.shape[1]):
            row = ",".join(repr(float(v)) for v in X[:, i])
            if times is not None:
                row = f"{times[i]}," + row
            fh.write(row + "\n")


class TestCsv:
    def test_batch_sizes(self, tmp_path):
        X = np.arange(30, dtype=float).reshape(3, 10)
        path = tmp_path / "s.csv"
        write_csv(path, X)
        batches = list(read_stream(path, "csv", batch_size=4))
        assert [b.data.shape[1] for b in batches] == [4, 4, 2]
        np.testing.assert_allclose(np.hstack([b.data for b in batches]), X)
        assert [b.time_index for b in batches] == [0, 1, 2]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        assert list(read_stream(path, "csv", batch_size=4)) == []

    def test_header_skipped(self, tmp_path):
        X = np.ones((2, 3))
        path = tmp_path / "h.csv"
        write_csv(path, X, header=True)
        batches = list(read_stream(path, "csv", batch_size=10, header=True))
        assert batches[0].data.shape == (2, 3)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1.0,2.0\n1.0,oops\n")
        with pytest.raises(ValueError, match="line 2"):
            list(read_stream(path, "csv", batch_size=4))

    def test_dimension_drift_rejected(self, tmp_path):
        path = tmp_path / "drift.csv"
        path.write_text("1.0,2.0\n1.0,2.0,3.0\n")
        with pytest.raises(ValueError, match="drift"):
            list(read_stream(path, "csv", batch_size=4))

    def test_time_column_batching(self, tmp_path):
        X = np.arange(12, dtype=float).reshape(2, 6)
        times = [3, 3, 3, 7, 7, 9]
        path = tmp_path / "t.csv"
        write_csv(path, X, times=times)
        batches = list(read_stream(path, "csv", time_col=True))
        assert [b.time_index for b in batches] == [3, 7, 9]
        assert [b.data.shape[1] for b in batches] == [3, 2, 1]
        np.testing.assert_allclose(batches[1].data, X[:, 3:5])


class TestBinary:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((5, 17))
        path = tmp_path / "s.bin"
        write_binary(path, X)
        batches = list(read_stream(path, "bin", batch_size=6))
        assert [b.data.shape[1] for b in batches] == [6, 6, 5]
        back = np.hstack([b.data for b in batches])
        assert back.tobytes() == X.tobytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            list(read_stream(path, "bin", batch_size=4))

    def test_truncated_record(self, tmp_path):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((4, 3))
        path = tmp_path / "s.bin"
        write_binary(path, X)
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(ValueError, match="truncated"):
            list(read_stream(path, "bin", batch_size=8))


class TestFlags:
    def test_only_flagged_written_in_order(self, tmp_path):
        records = [
            ScoredObservation(0, 0, 1.5, 2, False),
            ScoredObservation(0, 1, 9.5, 3, True),
            ScoredObservation(1, 0, math.inf, -1, True),
        ]
        path = tmp_path / "flags.jsonl"
        assert write_flags(path, records) == 2
        lines = path.read_text().splitlines()
        first = json.loads(lines[0])
        assert first == {"t": 0, "i": 1, "score": 9.5, "leaf": 3}
        assert list(first) == ["t", "i", "score", "leaf"]
        assert json.loads(lines[1])["score"] == math.inf
