"""CSV ingestion and export for observed trial rows and potential outcomes."""
from __future__ import annotations

import csv
import math
import warnings
from pathlib import Path
from typing import Sequence

from .core import ObservedRecord, Outcome, OutcomeKind, PotentialRecord, TrialData
from .errors import DataError

RESERVED = ("id", "z", "s", "y", "time", "event")


def _num(text: str) -> float | None:
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def ingest_csv(path: str | Path) -> list[ObservedRecord]:
    """Read observed records.

    Required columns are ``id``, ``z`` and ``s`` plus either ``y`` or the
    pair ``time``/``event``; every other column is a covariate. A ``y``
    column holding only 0/1 is read as binary, otherwise continuous.
    Covariate columns that parse as numbers everywhere are continuous,
    otherwise categorical. Errors name the offending file line.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration as exc:
            raise DataError(f"{path}: missing header row") from exc
        rows = [(i + 2, row) for i, row in enumerate(reader) if any(cell.strip() for cell in row)]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    for col in ("id", "z", "s"):
        if col not in header:
            raise DataError(f"{path}: missing required column {col!r}")
    tte = "time" in header or "event" in header
    if tte and not ("time" in header and "event" in header):
        raise DataError(f"{path}: time-to-event data needs both 'time' and 'event' columns")
    if tte and "y" in header:
        raise DataError(f"{path}: give either 'y' or 'time'/'event', not both")
    if not tte and "y" not in header:
        raise DataError(f"{path}: missing required column 'y' (or 'time'/'event')")
    if not rows:
        warnings.warn(f"{path}: no data rows", UserWarning, stacklevel=2)
        return []
    col = {h: j for j, h in enumerate(header)}
    cov_names = [h for h in header if h not in RESERVED]

    def cell(line, row, name):
        if len(row) != len(header):
            raise DataError(f"{path} line {line}: expected {len(header)} fields, got {len(row)}")
        return row[col[name]].strip()

    parsed = []
    seen = {}
    for line, row in rows:
        rid = cell(line, row, "id")
        if not rid:
            raise DataError(f"{path} line {line}: empty id")
        if rid in seen:
            raise DataError(f"{path} line {line}: duplicate id {rid!r} (first on line {seen[rid]})")
        seen[rid] = line
        z = cell(line, row, "z")
        if z not in ("0", "1"):
            raise DataError(f"{path} line {line}: z must be 0 or 1, got {z!r}")
        s = cell(line, row, "s")
        if s not in ("0", "1", ""):
            raise DataError(f"{path} line {line}: s must be 0, 1 or empty, got {s!r}")
        covs = []
        for name in cov_names:
            v = cell(line, row, name)
            if v == "":
                raise DataError(f"{path} line {line}: missing value for covariate {name!r}")
            covs.append(v)
        if tte:
            t = _num(cell(line, row, "time"))
            if t is None:
                raise DataError(f"{path} line {line}: time is not a number")
            if t < 0:
                raise DataError(f"{path} line {line}: negative time {t!r}")
            e = cell(line, row, "event")
            if e not in ("0", "1"):
                raise DataError(f"{path} line {line}: event must be 0 or 1, got {e!r}")
            y = (t, int(e))
        else:
            y = _num(cell(line, row, "y"))
            if y is None:
                raise DataError(f"{path} line {line}: y is not a number")
        parsed.append((rid, int(z), None if s == "" else int(s), y, covs))

    numeric = [all(_num(p[4][k]) is not None for p in parsed) for k in range(len(cov_names))]
    binary = not tte and all(p[3] in (0.0, 1.0) for p in parsed)
    out = []
    for rid, z, s, y, covs in parsed:
        if tte:
            outcome = Outcome.time_to_event(y[0], y[1])
        elif binary:
            outcome = Outcome.binary(int(y))
        else:
            outcome = Outcome.continuous(y)
        x = tuple((name, float(v) if numeric[k] else v) for k, (name, v) in enumerate(zip(cov_names, covs)))
        out.append(ObservedRecord(rid, z, s, outcome, x))
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(records, path: str | Path) -> None:
    """Write observed records (list or TrialData) so that ingest_csv reads
    them back exactly; floats use their shortest round-trip repr."""
    if isinstance(records, TrialData):
        records = records.to_records()
    records = list(records)
    path = Path(path)
    if not records:
        raise DataError("no records to write")
    tte = records[0].y.kind is OutcomeKind.TIME_TO_EVENT
    cov_names = [k for k, _ in records[0].x]
    header = ["id", "z", "s"] + (["time", "event"] if tte else ["y"]) + cov_names
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            s = "" if r.s is None else str(r.s)
            y = [_fmt(float(r.y.value)), str(r.y.event)] if tte else (
                [str(int(r.y.value))] if r.y.kind is OutcomeKind.BINARY else [_fmt(float(r.y.value))]
            )
            w.writerow([r.id, str(int(r.z)), s] + y + [_fmt(v) for _, v in r.x])


def write_potential_csv(records: Sequence[PotentialRecord], path: str | Path) -> None:
    """Oracle sidecar: one row of potential outcomes per subject."""
    records = list(records)
    path = Path(path)
    tte = bool(records) and records[0].y0.kind is OutcomeKind.TIME_TO_EVENT
    cov_names = [k for k, _ in records[0].x] if records else []
    header = ["id", "s0", "s1", "stratum"]
    header += ["time0", "event0", "time1", "event1", "true_time0", "true_time1"] if tte else ["y0", "y1"]
    header += cov_names
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in records:
            row = [r.id, r.s0, r.s1, r.stratum.code]
            if tte:
                row += [_fmt(r.y0.value), r.y0.event, _fmt(r.y1.value), r.y1.event,
                        _fmt(r.true_times[0]), _fmt(r.true_times[1])]
            else:
                row += [_fmt(r.y0.value), _fmt(r.y1.value)]
            row += [_fmt(v) for _, v in r.x]
            w.writerow(row)
