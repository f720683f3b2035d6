"""Tests for experiments and the homog command line"""

# src/test/test_experiments.py

import asyncio
import csv
import threading
import time
from unittest.mock import patch

import pytest

import homog
from src.experiments import JobPool, run, run_async
from src.utils.config import ExperimentConfig
from src.utils.export import read_grid_block


def read_table(path):
    """Header and rows of an experiment CSV, without the comment lines"""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(line for line in handle if not line.startswith("#")))
    return rows[0], rows[1:]


@pytest.fixture
def effective_config():
    return ExperimentConfig(
        {
            "field.family": "constant",
            "field.params": {
                "a0": [[2.0, 0.5], [0.5, 1.0]],
                "m0": 1.0,
                "m_modes": [[[1, 0], 0.5]],
            },
            "directions": "k=[0,1]; k=[1,1]; k=[1,2]",
            "grid.s": 16,
            "grid.M": 16,
        }
    )


@pytest.mark.asyncio
async def test_job_pool_keeps_order():
    """Results come back in submission order even when later jobs finish first."""
    pool = JobPool(3)

    def job(delay, value):
        time.sleep(delay)
        return value

    results = await pool.map(job, [(0.05, "a"), (0.0, "b"), (0.01, "c")])

    assert results == ["a", "b", "c"]


@pytest.mark.asyncio
async def test_job_pool_limits_concurrency():
    # Setup
    pool = JobPool(2)
    lock = threading.Lock()
    state = {"running": 0, "peak": 0}

    def job():
        with lock:
            state["running"] += 1
            state["peak"] = max(state["peak"], state["running"])
        time.sleep(0.02)
        with lock:
            state["running"] -= 1

    # Act
    await asyncio.gather(*(pool.submit(job) for _ in range(6)))

    # Assert
    assert state["peak"] <= 2


def test_job_pool_rejects_zero_workers():
    with pytest.raises(ValueError):
        JobPool(0)


def test_effective_output_is_independent_of_jobs(effective_config, tmp_path):
    """Serial and parallel runs write identical tables."""
    # Act
    serial = asyncio.run(
        run_async("effective", effective_config, 1, tmp_path / "serial")
    )
    parallel = asyncio.run(
        run_async("effective", effective_config, 2, tmp_path / "parallel")
    )

    # Assert
    assert read_table(serial[0]) == read_table(parallel[0])
    header, rows = read_table(serial[0])
    assert header[:3] == ["direction", "m_bar", "m_pl"]
    assert [row[0] for row in rows] == ["k=[0,1]", "k=[1,1]", "k=[1,2]"]
    assert all(float(row[3]) == pytest.approx(2.0) for row in rows)


def test_missing_key_reports_and_fails(tmp_path):
    config = ExperimentConfig(
        {
            "field.family": "constant",
            "field.params": {"dim": 2},
            "direction": "k=[0,1]",
            "front.epsilon": [0.5],
            "front.T": 0.1,
        }
    )

    with patch("src.experiments.logging.error") as mock_error:
        code = run("front", config, 1, tmp_path)

    assert code == 1
    mock_error.assert_called_once()
    assert "front.alpha" in str(mock_error.call_args)


def test_sweep_sides_differ(tmp_path):
    """Approaching a laminar direction from two sides gives different limits."""
    # Setup
    config = ExperimentConfig(
        {
            "field.family": "laminar",
            "field.params": {"dim": 3, "nu": 0.5},
            "approach.target": "k=[0,0,1]",
            "etas": [[1, 0, 0], [0, 1, 0]],
            "approach.depth": 2,
            "grid.s": 16,
            "grid.M": 16,
        }
    )

    # Act
    code = run("sweep", config, 2, tmp_path)

    # Assert
    _, rows = read_table(tmp_path / "sweep.csv")
    tilde = [float(row[6]) for row in rows if row[1] == "tilde"]
    assert code == 0
    assert tilde == [pytest.approx(0.75**0.5, abs=1e-6), pytest.approx(1.0, abs=1e-6)]


def test_effective_accepts_irrational_directions(tmp_path):
    """v=[...] entries are computed through their rational approximants."""
    # Setup
    config = ExperimentConfig(
        {
            "field.family": "constant",
            "field.params": {"a0": [[2.0, 0.5], [0.5, 1.0]], "m0": 2.0},
            "directions": "k=[1,0]; v=[1,1.6180339887498949]",
            "grid.s": 16,
            "grid.M": 16,
            "approach.depth": 3,
        }
    )

    # Act
    code = run("effective", config, 2, tmp_path)

    # Assert
    _, rows = read_table(tmp_path / "effective.csv")
    assert code == 0
    assert rows[0][0] == "k=[1,0]"
    assert rows[1][0].startswith("v=[")
    assert float(rows[1][1]) == pytest.approx(2.0)
    assert float(rows[1][3]) == pytest.approx(2.0)


def test_sweep_rejects_irrational_target(tmp_path):
    config = ExperimentConfig(
        {
            "field.family": "laminar",
            "field.params": {"dim": 3, "nu": 0.5},
            "approach.target": "v=[1,1.4142135623730951,1.7320508075688772]",
            "etas": [[1, 0, 0]],
        }
    )

    with patch("src.experiments.logging.error") as mock_error:
        code = run("sweep", config, 1, tmp_path)

    assert code == 1
    assert "approach.target" in str(mock_error.call_args)


def test_limits_report_planar_and_limiting_mobility(tmp_path):
    """Mobility layered with the diffusion separates m̃ from m̄_pl."""
    # Setup
    config = ExperimentConfig(
        {
            "field.family": "laminar",
            "field.params": {
                "dim": 3,
                "nu": 0.5,
                "k": [0, 0, 1],
                "eta": [1, 0, 0],
                "m0": 1.0,
                "m_modes": [[[0, 0, 1], 0.5]],
            },
            "directions": "k=[0,0,1]",
            "etas": [[1, 0, 0], [0, 1, 0]],
            "grid.s": 16,
            "grid.M": 16,
        }
    )

    # Act
    code = run("limits", config, 2, tmp_path)

    # Assert
    header, rows = read_table(tmp_path / "limits.csv")
    assert code == 0
    assert header[2:4] == ["m_pl", "m_tilde"]
    assert float(rows[0][2]) == pytest.approx(1.0, abs=1e-6)
    assert float(rows[0][3]) == pytest.approx(0.75**0.5, abs=1e-6)
    assert float(rows[1][3]) == pytest.approx(1.0, abs=1e-6)


def test_fourier_writes_corrector_grids(tmp_path):
    """Each corrector is written as an index table and as a binary grid block."""
    # Setup
    config = ExperimentConfig(
        {
            "field.family": "constant",
            "field.params": {"dim": 2, "m0": 1.0, "m_modes": [[[1, 0], 0.5]]},
            "directions": "v=[1,1.618033988749895]",
            "fourier.K": 2,
        }
    )

    # Act
    code = run("fourier", config, 1, tmp_path)

    # Assert
    values, h = read_grid_block(tmp_path / "fourier_V_0.grid")
    header, rows = read_table(tmp_path / "fourier_V_0.csv")
    assert code == 0
    assert header == ["i_1", "i_2", "V"]
    assert len(rows) == values.size
    assert h == (1.0 / values.shape[0],) * 2
    assert float(rows[0][2]) == pytest.approx(values[0, 0])


def test_main_runs_subcommand(tmp_path):
    # Setup
    path = tmp_path / "effective.cfg"
    path.write_text(
        "field.family = constant\n"
        'field.params = {"dim": 2, "m0": 2.0}\n'
        "directions = k=[0,1]\n"
        "grid.s = 16\n"
        "grid.M = 16\n"
    )

    # Act
    code = homog.main(
        ["effective", "--config", str(path), "--out", str(tmp_path / "out")]
    )

    # Assert
    assert code == 0
    _, rows = read_table(tmp_path / "out" / "effective.csv")
    assert float(rows[0][1]) == pytest.approx(2.0)


def test_main_reports_unreadable_config(tmp_path):
    assert homog.main(["effective", "--config", str(tmp_path / "absent.cfg")]) == 1
