"""Stream readers and writers: CSV, raw binary, JSON-lines flag records.

Binary layout: magic "OTHN", u32 version, u32 p, then little-endian
float64 observations stored contiguously (column after column).
"""

import struct

import numpy as np

from .engine import ObservationBatch

BINARY_MAGIC = b"OTHN"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sII")


def write_binary(path, X):
    """Write a p x N matrix as a binary observation stream."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a p x N matrix")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, X.shape[0]))
        fh.write(np.asfortranarray(X).astype("<f8").tobytes(order="F"))


def _read_binary_batches(path, batch_size):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) < _HEADER.size:
            raise ValueError(f"{path}: truncated or missing binary header")
        magic, version, p = _HEADER.unpack(header)
        if magic != BINARY_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != BINARY_VERSION:
            raise ValueError(f"{path}: unsupported binary version {version}")
        t = 0
        while True:
            raw = fh.read(8 * p * batch_size)
            if not raw:
                return
            if len(raw) % (8 * p) != 0:
                raise ValueError(f"{path}: truncated observation record")
            n = len(raw) // (8 * p)
            block = np.frombuffer(raw, dtype="<f8").reshape(p, n, order="F")
            yield ObservationBatch(t, block.astype(np.float64))
            t += 1


def _parse_csv_row(line, lineno, path):
    try:
        return [float(tok) for tok in line.split(",")]
    except ValueError as exc:
        raise ValueError(f"{path}: malformed row at line {lineno}: {exc}") from exc


def _read_csv_batches(path, batch_size, header, time_col):
    with open(path) as fh:
        rows = []
        p = None
        current_time = None
        lineno = 0
        pending_time = 0
        for raw_line in fh:
            lineno += 1
            if header and lineno == 1:
                continue
            line = raw_line.strip()
            if not line:
                continue
            values = _parse_csv_row(line, lineno, path)
            if time_col:
                t, obs = values[0], values[1:]
            else:
                t, obs = None, values
            if p is None:
                p = len(obs)
            elif len(obs) != p:
                raise ValueError(
                    f"{path}: dimension drift at line {lineno}: "
                    f"expected {p} values, got {len(obs)}"
                )
            if time_col:
                if current_time is not None and t != current_time:
                    yield ObservationBatch(int(current_time), np.array(rows).T)
                    rows = []
                current_time = t
                rows.append(obs)
            else:
                rows.append(obs)
                if len(rows) == batch_size:
                    yield ObservationBatch(pending_time, np.array(rows).T)
                    pending_time += 1
                    rows = []
        if rows:
            t_out = int(current_time) if time_col else pending_time
            yield ObservationBatch(t_out, np.array(rows).T)


def read_stream(path, fmt="csv", batch_size=100, header=False, time_col=False):
    """Iterate ObservationBatch values from a CSV or binary file.

    CSV holds one observation per row; batches are cut every `batch_size`
    rows, or at changes of the leading time-index column when `time_col`
    is set. Binary files ignore `header`/`time_col`.
    """
    if batch_size is not None and batch_size < 1:
        raise ValueError("batch_size must be positive")
    if fmt == "csv":
        return _read_csv_batches(path, batch_size, header, time_col)
    if fmt == "bin":
        return _read_binary_batches(path, batch_size)
    raise ValueError(f"unknown stream format {fmt!r}")


def write_flags(path, records):
    """Write flagged records as JSON lines; returns the number written."""
    count = 0
    with open(path, "w") as fh:
        for rec in records:
            if rec.flagged:
                fh.write(rec.to_json() + "\n")
                count += 1
    return count
