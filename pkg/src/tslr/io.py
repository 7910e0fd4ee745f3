"""Plain-file formats: event logs, matrix CSVs, model directories, graymaps.

Every writer goes through :func:`atomic_write`, so an interrupted run never
leaves a half-written file behind.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .core import BasisSet, CoefficientSet, Dataset, FactorModel, SeriesMatrix
from .errors import EmptyDataset, MalformedLog, ShapeMismatch
from .ingest import EventLog

__all__ = [
    "atomic_write",
    "read_events",
    "write_events",
    "read_matrix",
    "write_matrix",
    "read_dataset",
    "write_dataset",
    "read_model",
    "write_model",
    "heatmap",
    "write_pgm",
    "read_pgm",
    "file_digest",
    "write_manifest",
]

MISSING_GRAY = 128


def atomic_write(path, data: str | bytes) -> Path:
    """Write ``data`` to a temporary sibling, then rename it over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fixed(v: float) -> str:
    s = f"{v:.6f}"
    return "0.000000" if s == "-0.000000" else s


def _exact(v: float) -> str:
    return repr(float(v))


# ---- event logs -----------------------------------------------------------


def read_events(path) -> list[EventLog]:
    """Read ``subject_id,timestamp_minutes,kind`` rows, grouped per subject.

    Rows of a subject keep file order; subjects appear in order of first row.
    """
    groups: OrderedDict[str, list] = OrderedDict()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["subject_id", "timestamp_minutes", "kind"]:
            raise MalformedLog(f"{path}: expected header subject_id,timestamp_minutes,kind")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedLog(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            sid, ts, kind = (c.strip() for c in row)
            try:
                t = float(ts)
            except ValueError:
                raise MalformedLog(f"{path}:{lineno}: bad timestamp {ts!r}") from None
            groups.setdefault(sid, []).append((t, kind))
    return [EventLog(sid, ev) for sid, ev in groups.items()]


def write_events(path, logs) -> Path:
    rows = [(log.subject_id, repr(float(t)) if not float(t).is_integer() else int(t), kind)
            for log in logs for t, kind in log.events]
    return atomic_write(path, _csv_text(["subject_id", "timestamp_minutes", "kind"], rows))


# ---- matrices -------------------------------------------------------------


def matrix_csv(m: SeriesMatrix) -> str:
    header = ["day"] + [f"c{i + 1}" for i in range(m.row_len)]
    rows = ([int(d)] + [_fixed(v) for v in row] for d, row in zip(m.days, m.observed_values))
    return _csv_text(header, rows)


def write_matrix(path, m: SeriesMatrix) -> Path:
    """One row per observed day, 6 fractional digits; missing days omitted."""
    return atomic_write(path, matrix_csv(m))


def read_matrix(path, subject_id: str | None = None, num_rows: int | None = None) -> SeriesMatrix:
    """Inverse of :func:`write_matrix`; the series ends at the last listed day
    unless ``num_rows`` is given."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "day" or len(header) < 3:
            raise ShapeMismatch(f"{path}: expected header day,c1..cL")
        ell = len(header) - 1
        days, vals = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ell + 1:
                raise ShapeMismatch(f"{path}:{lineno}: expected {ell + 1} fields")
            days.append(int(row[0]))
            vals.append([float(v) for v in row[1:]])
    days = np.asarray(days, dtype=np.int64)
    if days.size and (days.min() < 1 or np.any(np.diff(days) <= 0)):
        raise ShapeMismatch(f"{path}: days must be positive and strictly increasing")
    T = int(days.max()) if days.size else 0
    T = T if num_rows is None else num_rows
    out = np.full((T, ell), np.nan)
    if days.size:
        out[days - 1] = np.asarray(vals)
    return SeriesMatrix(subject_id or path.stem, out)


def write_dataset(directory, d: Dataset) -> list[Path]:
    directory = Path(directory)
    return [write_matrix(directory / f"{y.subject_id}.csv", y) for y in d]


def read_dataset(directory) -> Dataset:
    """All ``*.csv`` files of a directory, in sorted file-name order."""
    directory = Path(directory)
    files = sorted(p for p in directory.glob("*.csv") if p.is_file())
    if not files:
        raise EmptyDataset(f"{directory}: no matrix files")
    return Dataset(tuple(read_matrix(p) for p in files))


# ---- models ---------------------------------------------------------------


def _meta_text(meta) -> str:
    return "".join(f"{k}={v}\n" for k, v in meta.items())


def format_number(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def model_meta(m: FactorModel) -> dict:
    final = m.objective_trace[-1] if m.objective_trace else float("nan")
    meta = OrderedDict(
        rank=m.rank,
        **{"lambda": format_number(m.lam)},
        iterations=m.iterations,
        final_objective=repr(float(final)),
        converged=str(bool(m.converged)).lower(),
        seed="none" if m.seed is None else m.seed,
    )
    return meta


def write_model(directory, m: FactorModel, extra_meta: dict | None = None) -> list[Path]:
    """``basis.csv`` (one row per interval), ``coeffs/<id>.csv`` and ``meta.txt``.

    Numbers are written with round-trip precision.
    """
    directory = Path(directory)
    F = m.basis.functions
    written = [
        atomic_write(
            directory / "basis.csv",
            _csv_text([f"F{j + 1}" for j in range(m.rank)], ([_exact(v) for v in row] for row in F.T)),
        )
    ]
    for c in m.coeffs:
        rows = ([int(d)] + [_exact(v) for v in row] for d, row in zip(c.days, c.values))
        written.append(
            atomic_write(directory / "coeffs" / f"{c.subject_id}.csv", _csv_text(["day"] + [f"C{j + 1}" for j in range(m.rank)], rows))
        )
    meta = model_meta(m)
    meta.update(extra_meta or {})
    if m.objective_trace:
        meta["objective_trace"] = " ".join(repr(float(v)) for v in m.objective_trace)
    written.append(atomic_write(directory / "meta.txt", _meta_text(meta)))
    return written


def read_meta(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_model(directory) -> FactorModel:
    directory = Path(directory)
    with open(directory / "basis.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    F = np.asarray([[float(v) for v in r] for r in rows[1:] if r]).T
    basis = BasisSet(F)
    coeffs = []
    for p in sorted((directory / "coeffs").glob("*.csv")):
        with open(p, newline="", encoding="utf-8") as fh:
            crow = [r for r in csv.reader(fh)][1:]
        days = [int(r[0]) for r in crow if r]
        vals = np.asarray([[float(v) for v in r[1:]] for r in crow if r]).reshape(len(days), basis.rank)
        coeffs.append(CoefficientSet(p.stem, days, vals))
    meta = read_meta(directory / "meta.txt")
    trace = tuple(float(v) for v in meta.get("objective_trace", "").split())
    seed = meta.get("seed", "none")
    return FactorModel(
        basis=basis,
        coeffs=tuple(coeffs),
        lam=float(meta.get("lambda", "0")),
        objective_trace=trace,
        converged=meta.get("converged", "false") == "true",
        seed=None if seed == "none" else int(seed),
    )


# ---- graymaps -------------------------------------------------------------


def heatmap(m: SeriesMatrix) -> np.ndarray:
    """One byte per (day, interval): dark is asleep, mid-gray is missing."""
    vals = np.asarray(m.values)
    out = np.full(vals.shape, MISSING_GRAY, dtype=np.uint8)
    obs = ~np.isnan(vals[:, 0])
    # round half to even on exact .5 is avoided by rounding half up explicitly
    out[obs] = np.floor(255.0 * (1.0 - vals[obs]) + 0.5).astype(np.uint8)
    return out


def write_pgm(path, pixels: np.ndarray) -> Path:
    """Binary portable graymap (P5) with maxval 255."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    return atomic_write(path, f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii"))
    if tokens[0] != "P5" or tokens[3] != "255":
        raise ValueError(f"{path}: not an 8-bit binary graymap")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(raw[pos + 1 : pos + 1 + w * h], dtype=np.uint8).reshape(h, w)


# ---- manifests ------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def input_digests(paths) -> list[tuple[str, str]]:
    """sha256 of every input file; directories contribute their files in sorted order."""
    out = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.is_file() and not q.name.startswith(".")):
                out.append((f.as_posix(), file_digest(f)))
        elif p.is_file():
            out.append((p.as_posix(), file_digest(p)))
    return out


def write_manifest(path, command: str, version: str, config: dict, inputs) -> Path:
    lines = [f"tool=tslr {version}", f"command={command}"]
    lines += [f"config.{k}={format_value(v)}" for k, v in config.items()]
    lines += [f"input.sha256 {digest} {name}" for name, digest in input_digests(inputs)]
    return atomic_write(path, "\n".join(lines) + "\n")


def format_value(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format_number(v)
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return "none" if v is None else str(v)
