"""File formats for datasets, chains, diagnostics and manifests.

All numeric CSV fields are written with repr-faithful precision (17
significant digits) so that reading a file back reproduces the original
float64 values bit for bit.  Missing data entries are written as empty
fields.  Chain blocks are stored one file per block, one row per sample,
columns in column-major entry order, positive blocks in natural coordinates.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .hmc import Chain
from .models import MaskedDataMatrix

_HEADER_RE = re.compile(r"^(?P<name>\w+)\[(?P<i>\d+)(?:,(?P<j>\d+))?\]$")


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def write_dataset(path, data: MaskedDataMatrix) -> None:
    n, d = data.values.shape
    header = [f"x{i}" for i in range(d)]
    if data.labels is not None:
        header.append("label")
    rows = []
    for j in range(n):
        row = [format_float(data.values[j, i]) if data.mask[j, i] else ""
               for i in range(d)]
        if data.labels is not None:
            row.append(format_float(data.labels[j]))
        rows.append(row)
    write_rows(path, header, rows)


def read_dataset(path, kind: str) -> MaskedDataMatrix:
    header, rows = read_rows(path)
    has_label = bool(header) and header[-1] == "label"
    d = len(header) - int(has_label)
    if d <= 0:
        raise ValueError(f"{path}: no data columns")
    values = np.zeros((len(rows), d))
    mask = np.zeros((len(rows), d), dtype=bool)
    labels = np.zeros(len(rows)) if has_label else None
    for j, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {j} has {len(row)} fields")
        for i in range(d):
            field = row[i].strip()
            if field:
                values[j, i] = float(field)
                mask[j, i] = True
        if has_label:
            labels[j] = float(row[d])
    return MaskedDataMatrix(values, mask, kind, labels=labels)


def _block_header(name: str, shape: tuple[int, ...]) -> list[str]:
    if len(shape) == 1:
        return [f"{name}[{i}]" for i in range(shape[0])]
    rows, cols = shape
    return [f"{name}[{i},{j}]" for j in range(cols) for i in range(rows)]


def write_chain_block(path, chain: Chain, name: str) -> None:
    """One sample per row, natural coordinates, column-major entries."""
    samples = chain.natural_block(name)
    shape = samples.shape[1:]
    header = _block_header(name, shape)
    rows = []
    for s in range(samples.shape[0]):
        flat = samples[s].ravel(order="F")
        rows.append([format_float(v) for v in flat])
    write_rows(path, header, rows)


def read_chain_block(path) -> tuple[str, np.ndarray]:
    """Returns (block name, samples array of shape (m, *block shape))."""
    header, rows = read_rows(path)
    parsed = []
    name = None
    for col in header:
        m = _HEADER_RE.match(col)
        if m is None:
            raise ValueError(f"{path}: bad chain column {col!r}")
        if name is None:
            name = m.group("name")
        elif name != m.group("name"):
            raise ValueError(f"{path}: mixed block names in header")
        j = m.group("j")
        parsed.append((int(m.group("i")), int(j) if j is not None else None))
    two_d = parsed[0][1] is not None
    if any((p[1] is not None) != two_d for p in parsed):
        raise ValueError(f"{path}: inconsistent index arity in header")
    if two_d:
        shape = (max(p[0] for p in parsed) + 1, max(p[1] for p in parsed) + 1)
    else:
        shape = (max(p[0] for p in parsed) + 1,)
    if len(parsed) != int(np.prod(shape)):
        raise ValueError(f"{path}: header does not cover a full {shape} block")
    out = np.zeros((len(rows),) + shape)
    for s, row in enumerate(rows):
        for value, idx in zip(row, parsed):
            out[(s,) + (idx if two_d else (idx[0],))] = float(value)
    return name, out


def write_diagnostics(path, chain: Chain) -> None:
    rows = [
        [str(i), format_float(chain.log_density[i]),
         format_float(chain.energy_error[i]), str(int(chain.accepted[i]))]
        for i in range(len(chain))
    ]
    write_rows(path, ["iteration", "log_density", "energy_error", "accepted"], rows)


def read_diagnostics(path) -> dict[str, np.ndarray]:
    header, rows = read_rows(path)
    if header != ["iteration", "log_density", "energy_error", "accepted"]:
        raise ValueError(f"{path}: not a diagnostics file")
    cols = list(zip(*rows)) if rows else [[], [], [], []]
    return {
        "iteration": np.array([int(v) for v in cols[0]]),
        "log_density": np.array([float(v) for v in cols[1]]),
        "energy_error": np.array([float(v) for v in cols[2]]),
        "accepted": np.array([bool(int(v)) for v in cols[3]]),
    }


def write_trace(path, column: str, values) -> None:
    """Per-iteration scalar trace: iteration index plus one named column."""
    rows = [[str(i), format_float(v)] for i, v in enumerate(values)]
    write_rows(path, ["iteration", column], rows)


def read_trace(path) -> tuple[str, np.ndarray]:
    header, rows = read_rows(path)
    if len(header) != 2 or header[0] != "iteration":
        raise ValueError(f"{path}: not a trace file")
    return header[1], np.array([float(r[1]) for r in rows])


def write_mean_covariance(path, mean: np.ndarray, cov: np.ndarray) -> None:
    """Row 0 is the mean, rows 1..d the covariance matrix."""
    d = mean.shape[0]
    header = [f"x{i}" for i in range(d)]
    rows = [[format_float(v) for v in mean]]
    rows.extend([format_float(v) for v in cov[i]] for i in range(d))
    write_rows(path, header, rows)


def read_mean_covariance(path) -> tuple[np.ndarray, np.ndarray]:
    header, rows = read_rows(path)
    d = len(header)
    if len(rows) != d + 1:
        raise ValueError(f"{path}: expected {d + 1} rows, found {len(rows)}")
    data = np.array([[float(v) for v in row] for row in rows])
    return data[0], data[1:]


def write_matrix(path, matrix: np.ndarray, prefix: str = "x") -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    header = [f"{prefix}{i}" for i in range(matrix.shape[1])]
    rows = [[format_float(v) for v in row] for row in matrix]
    write_rows(path, header, rows)


def read_matrix(path) -> np.ndarray:
    _, rows = read_rows(path)
    return np.array([[float(v) for v in row] for row in rows])


def write_manifest(path, payload: dict) -> None:
    """Deterministic JSON: sorted keys, no timestamps, trailing newline."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def package_versions() -> dict[str, str]:
    import scipy

    from . import __version__

    return {"manifoldmc": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__}


def ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out
