"""Plain-text serialization of fields, trace files, and atomic writes.

Label fields:   header ``MMLF <dim> <shape...> <h> <N>`` then whitespace
separated labels in row-major (C) order.  Scalar fields use the same layout
with magic ``MMSF`` and ``repr``-roundtripped floating-point values.  All
writes are whole-file atomic (write to a sibling temp file, then rename).
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
from pathlib import Path

import numpy as np

from .field import FieldError, Grid, LabelField, ScalarField
from .flow import FlowTrace


def atomic_write_text(path: Path | str, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dump_label_field(f: LabelField) -> str:
    head = f"MMLF {f.grid.dim} {' '.join(str(s) for s in f.grid.shape)} {f.grid.h!r} {f.n_phases}"
    body = " ".join(str(int(v)) for v in f.labels.ravel(order="C"))
    return head + "\n" + body + "\n"


def load_label_field(text: str, origin=None) -> LabelField:
    toks = text.split()
    if not toks or toks[0] != "MMLF":
        raise FieldError("not a label-field file (missing MMLF magic)")
    dim = int(toks[1])
    shape = tuple(int(t) for t in toks[2 : 2 + dim])
    h = float(toks[2 + dim])
    n_phases = int(toks[3 + dim])
    vals = np.array([int(t) for t in toks[4 + dim :]], dtype=np.int32)
    grid = Grid(shape, h, origin)
    if vals.size != grid.n_cells:
        raise FieldError("label payload does not match the grid size")
    return LabelField(grid, vals.reshape(shape, order="C"), n_phases)


def dump_scalar_field(f: ScalarField) -> str:
    head = f"MMSF {f.grid.dim} {' '.join(str(s) for s in f.grid.shape)} {f.grid.h!r}"
    return head + "\n" + _format_floats(f.values.ravel(order="C")) + "\n"


def load_scalar_field(text: str, origin=None) -> ScalarField:
    toks = text.split()
    if not toks or toks[0] != "MMSF":
        raise FieldError("not a scalar-field file (missing MMSF magic)")
    dim = int(toks[1])
    shape = tuple(int(t) for t in toks[2 : 2 + dim])
    h = float(toks[2 + dim])
    vals = np.array([float(t) for t in toks[3 + dim :]])
    grid = Grid(shape, h, origin)
    if vals.size != grid.n_cells:
        raise FieldError("scalar payload does not match the grid size")
    return ScalarField(grid, vals.reshape(shape, order="C"))


def write_label_field(path: Path | str, f: LabelField) -> None:
    atomic_write_text(path, dump_label_field(f))


def read_label_field(path: Path | str, origin=None) -> LabelField:
    return load_label_field(Path(path).read_text(), origin)


def write_scalar_field(path: Path | str, f: ScalarField) -> None:
    atomic_write_text(path, dump_scalar_field(f))


def read_scalar_field(path: Path | str, origin=None) -> ScalarField:
    return load_scalar_field(Path(path).read_text(), origin)


SERIES_COLUMNS = ["k", "per_phi", "force", "dissipation", "gap", "accepted", "repaired"]


def dump_series_csv(trace: FlowTrace) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    for k, r in enumerate(trace.reports, start=1):
        w.writerow(
            [
                k,
                repr(r.energy_perimeter),
                repr(r.energy_force),
                repr(r.energy_dissipation),
                repr(r.duality_gap),
                int(r.accepted),
                int(r.repaired),
            ]
        )
    return buf.getvalue()


def write_trace(out_dir: Path | str, trace: FlowTrace) -> None:
    """Write ``<out>/<lambda>/series.csv`` and ``t<time>.mmlf`` checkpoints."""
    lam_dir = Path(out_dir) / _lambda_name(trace.params.lam)
    atomic_write_text(lam_dir / "series.csv", dump_series_csv(trace))
    for t, f in trace.checkpoints:
        write_label_field(lam_dir / f"t{t:.6f}.mmlf", f)


def read_trace_checkpoints(lam_dir: Path | str, origin=None) -> list[tuple[float, LabelField]]:
    out = []
    for p in sorted(Path(lam_dir).glob("t*.mmlf")):
        t = float(p.stem[1:])
        out.append((t, read_label_field(p, origin)))
    return out


def _lambda_name(lam: float) -> str:
    return f"{lam:g}"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
