"""
Event stream ingestion: the evs1 binary format, the CSV text format, and
stream statistics.

evs1 layout (little endian):
    header  16 bytes  magic "EVS1", width u16, height u16, count u64
    record  16 bytes  x u16, y u16, t u64, p i8, 3 zero pad bytes
"""
from __future__ import annotations

import logging
import os
import struct

import numpy as np

from models import EventFormatError, EventStream, ParseDiagnostics, StreamStats

logger = logging.getLogger(__name__)

EVS1_MAGIC = b"EVS1"
EVS1_HEADER = struct.Struct("<4sHHQ")
EVS1_RECORD = np.dtype([
    ("x", "<u2"),
    ("y", "<u2"),
    ("t", "<u8"),
    ("p", "i1"),
    ("pad", "u1", (3,)),
])
CSV_HEADER = "x,y,t,p"
FORMATS = ("csv", "evs1")

HIST_COLS = 16
HIST_ROWS = 9
INT64_MAX = np.iinfo(np.int64).max


def detect_format(path):
    """Pick the event format from a file extension."""
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        return "csv"
    if ext in (".evs1", ".evs", ".bin"):
        return "evs1"
    raise EventFormatError(f"cannot infer event format from {path!r}; use .csv or .evs1")


def _check_geometry(width, height):
    if not (0 < width <= 0xFFFF and 0 < height <= 0xFFFF):
        raise EventFormatError(f"sensor geometry {width}x{height} is outside 1..65535")


def _first_bad(mask):
    return int(np.flatnonzero(mask)[0]) + 1


def _validate_and_build(x, y, t, p, width, height, source_id, n_header_lines=0, had_header=False):
    """Shared range checks; record numbers in messages are 1-based."""
    bad_p = (p != 1) & (p != -1)
    if bad_p.any():
        raise EventFormatError(f"invalid polarity at record {_first_bad(bad_p)}")
    bad_x = x >= width
    if bad_x.any():
        i = _first_bad(bad_x)
        raise EventFormatError(f"x={int(x[i - 1])} out of range [0, {width}) at record {i}")
    bad_y = y >= height
    if bad_y.any():
        i = _first_bad(bad_y)
        raise EventFormatError(f"y={int(y[i - 1])} out of range [0, {height}) at record {i}")

    resorted = False
    if len(t) > 1 and np.any(t[1:] < t[:-1]):
        order = np.argsort(t, kind="stable")
        x, y, t, p = x[order], y[order], t[order], p[order]
        resorted = True
        logger.warning("events in %s were not sorted by t; applied a stable sort", source_id or "<stream>")

    diag = ParseDiagnostics(resorted=resorted, n_records=len(t), had_header=had_header)
    return EventStream(width, height, x, y, t, p, source_id, diag)


def _parse_evs1(data, source_id):
    if len(data) < EVS1_HEADER.size:
        raise EventFormatError(f"truncated evs1 header: {len(data)} of {EVS1_HEADER.size} bytes")
    magic, width, height, count = EVS1_HEADER.unpack_from(data, 0)
    if magic != EVS1_MAGIC:
        raise EventFormatError(f"bad evs1 magic {magic!r}, expected {EVS1_MAGIC!r}")
    _check_geometry(width, height)

    body = len(data) - EVS1_HEADER.size
    expected = count * EVS1_RECORD.itemsize
    if body < expected:
        complete = body // EVS1_RECORD.itemsize
        raise EventFormatError(
            f"truncated evs1 record {complete + 1}: header declares {count} records, "
            f"file holds {body} payload bytes"
        )
    if body > expected:
        raise EventFormatError(f"{body - expected} trailing bytes after {count} evs1 records")

    rec = np.frombuffer(data, dtype=EVS1_RECORD, count=count, offset=EVS1_HEADER.size)
    if count:
        nonzero = rec["pad"].any(axis=1)
        if nonzero.any():
            raise EventFormatError(f"non-zero pad bytes at record {_first_bad(nonzero)}")
        big = rec["t"] > INT64_MAX
        if big.any():
            raise EventFormatError(f"timestamp overflow at record {_first_bad(big)}")

    return _validate_and_build(
        rec["x"], rec["y"], rec["t"].astype(np.int64), rec["p"], width, height, source_id
    )


def _parse_csv(data, width, height, source_id):
    try:
        text = data.decode("ascii") if isinstance(data, (bytes, bytearray, memoryview)) else data
    except UnicodeDecodeError as e:
        raise EventFormatError(f"CSV event files must be ASCII (byte {e.start})") from e

    lines = text.splitlines()
    had_header = False
    if lines and lines[0].strip().replace(" ", "") == CSV_HEADER:
        lines = lines[1:]
        had_header = True

    xs, ys, ts, ps = [], [], [], []
    record = 0
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        record += 1
        fields = line.split(",")
        if len(fields) != 4:
            raise EventFormatError(f"expected 4 fields at record {record}, got {len(fields)}")
        try:
            x, y, t, p = (int(f.strip()) for f in fields)
        except ValueError as e:
            raise EventFormatError(f"non-integer field at record {record}") from e
        if p not in (1, -1):
            raise EventFormatError(f"invalid polarity at record {record}")
        if x < 0 or y < 0 or t < 0:
            raise EventFormatError(f"negative field at record {record}")
        if t > INT64_MAX:
            raise EventFormatError(f"timestamp overflow at record {record}")
        if x >= width:
            raise EventFormatError(f"x={x} out of range [0, {width}) at record {record}")
        if y >= height:
            raise EventFormatError(f"y={y} out of range [0, {height}) at record {record}")
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(p)

    return _validate_and_build(
        np.array(xs, dtype=np.int64),
        np.array(ys, dtype=np.int64),
        np.array(ts, dtype=np.int64),
        np.array(ps, dtype=np.int64),
        width,
        height,
        source_id,
        had_header=had_header,
    )


def parse_events(data, fmt, width=None, height=None, source_id=""):
    """
    Parse an event file body into an EventStream.
    evs1 carries its own geometry (width/height arguments are ignored);
    CSV needs them. Unsorted input is stable-sorted and flagged in
    stream.diagnostics.resorted.
    """
    if fmt == "evs1":
        return _parse_evs1(bytes(data), source_id)
    if fmt == "csv":
        if width is None or height is None:
            raise EventFormatError("CSV event input needs --width and --height")
        _check_geometry(width, height)
        return _parse_csv(data, width, height, source_id)
    raise EventFormatError(f"unsupported event format {fmt!r}; expected one of {', '.join(FORMATS)}")


def serialize_events(stream, fmt):
    """Encode a stream as evs1 or CSV bytes."""
    if fmt == "evs1":
        header = EVS1_HEADER.pack(EVS1_MAGIC, stream.width, stream.height, len(stream))
        rec = np.zeros(len(stream), dtype=EVS1_RECORD)
        rec["x"] = stream.x
        rec["y"] = stream.y
        rec["t"] = stream.t
        rec["p"] = stream.p
        return header + rec.tobytes()
    if fmt == "csv":
        lines = [CSV_HEADER]
        lines.extend(
            f"{x},{y},{t},{p}"
            for x, y, t, p in zip(stream.x.tolist(), stream.y.tolist(), stream.t.tolist(), stream.p.tolist())
        )
        return ("\n".join(lines) + "\n").encode("ascii")
    raise EventFormatError(f"unsupported event format {fmt!r}")


def read_events(path, fmt=None, width=None, height=None):
    fmt = fmt or detect_format(path)
    with open(path, "rb") as f:
        data = f.read()
    return parse_events(data, fmt, width=width, height=height, source_id=os.path.basename(path))


def write_events(stream, path, fmt=None):
    fmt = fmt or detect_format(path)
    with open(path, "wb") as f:
        f.write(serialize_events(stream, fmt))


def compute_stats(stream):
    n = len(stream)
    n_pos = int(np.count_nonzero(stream.p == 1))
    duration = int(stream.t[-1] - stream.t[0]) if n > 1 else 0
    rate = n / (duration / 1e6) if duration > 0 else 0.0

    cols = stream.x.astype(np.int64) * HIST_COLS // stream.width
    rows = stream.y.astype(np.int64) * HIST_ROWS // stream.height
    hist = np.bincount(rows * HIST_COLS + cols, minlength=HIST_ROWS * HIST_COLS)
    hist = hist.reshape(HIST_ROWS, HIST_COLS)

    return StreamStats(
        n_events=n,
        n_positive=n_pos,
        n_negative=n - n_pos,
        duration_us=duration,
        events_per_second=float(rate),
        spatial_histogram=tuple(tuple(int(v) for v in row) for row in hist),
    )
