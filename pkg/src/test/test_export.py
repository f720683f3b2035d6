"""Tests for export and provenance"""

# src/test/test_export.py

from datetime import datetime, timezone

import numpy as np
import pytest

from src.utils.export import (
    format_cell,
    read_grid_block,
    write_csv,
    write_grid_block,
    write_pbm,
)
from src.utils.provenance import generate_fingerprint, generated_line, provenance_line


def test_format_cell():
    assert format_cell(0.1) == "0.10000000000000001"
    assert format_cell(np.float64(2.0)) == "2"
    assert format_cell(np.int64(3)) == "3"
    assert format_cell("k=[0,1]") == "k=[0,1]"


def test_fingerprint_ignores_key_order():
    first = generate_fingerprint({"grid.N": 64, "seed": 1})
    second = generate_fingerprint({"seed": 1, "grid.N": 64})

    assert first == second
    assert len(first) == 64
    assert generate_fingerprint({"seed": 2, "grid.N": 64}) != first


def test_provenance_line_is_deterministic():
    line = provenance_line("ab" * 32, "effective", N=64, jobs=2)

    assert line == (
        "# provenance: config=abababababababab subcommand=effective N=64 jobs=2"
    )


def test_generated_line():
    now = datetime(2024, 5, 1, 12, 30, 5, tzinfo=timezone.utc)

    assert generated_line(now) == "# generated: 2024-05-01T12:30:05Z"


def test_write_csv(tmp_path):
    # Act
    path = write_csv(
        tmp_path / "sub" / "table.csv",
        "# provenance: x",
        ["a", "b"],
        [(1, 0.5), (2, 0.25)],
    )

    # Assert
    lines = path.read_text().splitlines()
    assert lines[0] == "# provenance: x"
    assert lines[1].startswith("# generated: ")
    assert lines[2:] == ["a,b", "1,0.5", "2,0.25"]


def test_grid_block_round_trip(tmp_path):
    values = np.arange(12, dtype=float).reshape(3, 4) / 7

    path = write_grid_block(tmp_path / "V.grid", values, (0.5, 0.25))
    read, h = read_grid_block(path)

    assert path.read_bytes()[:4] == b"HGRD"
    assert np.array_equal(read, values)
    assert h == (0.5, 0.25)


def test_grid_block_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        write_grid_block(tmp_path / "V.grid", np.zeros((2, 2)), (0.5,))
    (tmp_path / "other").write_bytes(b"NOPE")
    with pytest.raises(ValueError):
        read_grid_block(tmp_path / "other")


def test_write_pbm(tmp_path):
    path = write_pbm(tmp_path / "mask.pbm", np.array([True, False, True]))

    assert path.read_text() == "P1\n3 1\n1 0 1\n"
