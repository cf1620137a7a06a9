"""
Reading and writing matrices, metadata records and comma-separated tables.

Matrix files are plain text: a first line ``rows cols`` followed by the
entries in row-major order, one matrix row per line, in scientific notation
with 17 significant digits so a write/read cycle is bit-exact.
"""
from __future__ import annotations
import hashlib
import json
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .errors import ValidationError

PathLike = Union[str, Path]

_FLOAT_FORMAT = '%.16e'


def write_matrix(path: PathLike, matrix: np.ndarray) -> Path:
    """
    Write a matrix (or a vector, stored as a column) in the repo matrix format.

    Args:
        path: Destination file.
        matrix: One- or two-dimensional real array.

    Returns: Path written.
    """
    path = Path(path)
    arr = np.asarray(matrix, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValidationError(f'only vectors and matrices can be written, got {arr.ndim} dimensions')

    # make sure the directory exists, mirroring how project resources get created
    if not path.parent.exists():
        path.parent.mkdir(parents=True)

    np.savetxt(path, arr, fmt=_FLOAT_FORMAT, delimiter=' ', header=f'{arr.shape[0]} {arr.shape[1]}', comments='')

    return path


def read_matrix(path: PathLike) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix`."""
    path = Path(path)
    with open(path, 'r') as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(token.isdigit() for token in header):
            raise ValidationError(f'{path} does not start with a "rows cols" header')
        rows, cols = int(header[0]), int(header[1])
        if rows * cols == 0:
            return np.zeros((rows, cols))
        try:
            values = np.loadtxt(fh, dtype=float, ndmin=2)
        except ValueError as err:
            raise ValidationError(f'{path} declares {rows}x{cols} but its entries do not form that shape: {err}')

    if values.shape != (rows, cols):
        raise ValidationError(f'{path} declares {rows}x{cols} but holds a {values.shape[0]}x{values.shape[1]} table')

    return values


def array_hash(*arrays: np.ndarray) -> str:
    """SHA-256 digest over shape, dtype and contents of one or more arrays."""
    digest = hashlib.sha256()
    for arr in arrays:
        arr = np.ascontiguousarray(np.asarray(arr, dtype=float))
        digest.update(str(arr.shape).encode())
        digest.update(arr.dtype.str.encode())
        digest.update(arr.tobytes())
    return digest.hexdigest()


def _to_jsonable(value):
    """Convert numpy scalars, arrays and complex numbers into JSON friendly values."""
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {'real': float(np.real(value)), 'imag': float(np.imag(value))}
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    return value


def canonical_json(record: dict) -> str:
    """Deterministic JSON rendering (sorted keys) used for hashing."""
    return json.dumps(_to_jsonable(record), sort_keys=True, separators=(',', ':'))


def record_hash(record: dict) -> str:
    return hashlib.sha256(canonical_json(record).encode()).hexdigest()


def write_metadata(path: PathLike, record: dict) -> Path:
    """Write a metadata record as indented, key-sorted JSON."""
    path = Path(path)
    if not path.parent.exists():
        path.parent.mkdir(parents=True)
    with open(path, 'w') as fh:
        json.dump(_to_jsonable(record), fh, sort_keys=True, indent=2)
        fh.write('\n')
    return path


def read_metadata(path: PathLike) -> dict:
    with open(path, 'r') as fh:
        return json.load(fh)


def write_table(path: PathLike, table: pd.DataFrame, manifest_hash: str = None) -> Path:
    """
    Write a comma-separated table with a header row, preceded by a comment line
    carrying the manifest hash of the run that produced it.
    """
    path = Path(path)
    if not path.parent.exists():
        path.parent.mkdir(parents=True)
    with open(path, 'w', newline='') as fh:
        fh.write(f'# manifest {manifest_hash or "none"}\n')
        table.to_csv(fh, index=False, float_format='%.10e')
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')
