"""Writers for experiment outputs: CSV tables, binary grid blocks and PBM masks"""

import csv
import logging
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from src.utils.provenance import generated_line

MAGIC = b"HGRD"


def format_cell(value) -> str:
    """Floats with 17 significant digits, everything else via str"""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if isinstance(value, (np.integer, np.bool_)):
        return str(value.item())
    return str(value)


def write_csv(
    path, provenance: str, header: Sequence[str], rows: Iterable[Sequence]
) -> Path:
    """Write a CSV table preceded by the provenance and timestamp comment lines"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        handle.write(provenance + "\n")
        handle.write(generated_line() + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        count = 0
        for row in rows:
            writer.writerow([format_cell(value) for value in row])
            count += 1
    logging.info("Wrote %s rows to %s", count, path)
    return path


def grid_rows(values: np.ndarray):
    """Rows (i_1, ..., i_n, value) of a grid array in C order"""
    for index in np.ndindex(values.shape):
        yield (*index, values[index])


def write_grid_block(path, values: np.ndarray, h: Sequence[float]) -> Path:
    """`HGRD`, uint32 rank, uint32 dims, float64 h per axis, then '<f8' values"""
    values = np.ascontiguousarray(values, dtype="<f8")
    if len(h) != values.ndim:
        raise ValueError("one grid step per axis is required")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack(f"<I{values.ndim}I", values.ndim, *values.shape))
        handle.write(struct.pack(f"<{values.ndim}d", *h))
        handle.write(values.tobytes())
    return path


def read_grid_block(path):
    """Return (values, h) from a block written by `write_grid_block`"""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not a grid block")
    (rank,) = struct.unpack_from("<I", data, 4)
    shape = struct.unpack_from(f"<{rank}I", data, 8)
    offset = 8 + 4 * rank
    h = struct.unpack_from(f"<{rank}d", data, offset)
    values = np.frombuffer(data, dtype="<f8", offset=offset + 8 * rank)
    return values.reshape(shape), tuple(h)


def write_pbm(path, mask: np.ndarray) -> Path:
    """Plain PBM (P1) of a boolean mask; 1-D masks become a single row"""
    mask = np.atleast_2d(np.asarray(mask, dtype=bool))
    if mask.ndim != 2:
        raise ValueError("PBM masks must be one- or two-dimensional")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [" ".join("1" if cell else "0" for cell in row) for row in mask]
    path.write_text(f"P1\n{mask.shape[1]} {mask.shape[0]}\n" + "\n".join(rows) + "\n")
    return path
