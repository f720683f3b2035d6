"""Contains the `JobPool` class and the experiment subcommands of the `homog` CLI

Each subcommand reads its keys from an `ExperimentConfig`, fans independent solves
out over the pool and writes CSV tables into the output directory. Results are
gathered in submission order, so the worker count never changes the output.
"""

import asyncio
import logging
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.cellsolve import diophantine_check, extract_Fperp, fourier_corrector
from src.coeffs import project_A
from src.front import (
    front_speed_2d,
    oscillating_corrector,
    pulsating_profile,
    simulate_front,
)
from src.lattice import approach_sequence, rational_approximants, slice_lattice_basis
from src.measures import (
    effective_tensors,
    effective_tensors_irrational,
    invariant_measure_slice,
    sde_empirical_measure,
    total_variation,
)
from src.obstacle import critical_mu, solve_obstacle
from src.utils.config import ExperimentConfig
from src.utils.errors import ConfigError, HomogError
from src.utils.export import grid_rows, write_csv, write_grid_block, write_pbm
from src.utils.provenance import generate_fingerprint, provenance_line


class JobPool:
    """Runs blocking jobs in worker threads, at most `jobs` at a time"""

    def __init__(self, jobs: int = 1) -> None:
        if jobs < 1:
            raise ValueError("jobs must be at least 1")
        self.jobs = jobs
        self.semaphore = asyncio.Semaphore(jobs)

    async def submit(self, func: Callable, *args, **kwargs):
        async with self.semaphore:
            return await asyncio.to_thread(func, *args, **kwargs)

    async def map(
        self, func: Callable, argument_lists: Iterable[Sequence]
    ) -> List[Any]:
        """Apply `func` to every argument tuple; results keep the input order"""
        tasks = [
            asyncio.create_task(self.submit(func, *args)) for args in argument_lists
        ]
        return list(await asyncio.gather(*tasks))


def _tensor_columns(prefix: str, d: int) -> List[str]:
    return [f"{prefix}_{i + 1}{j + 1}" for i in range(d) for j in range(d)]


def _vector_text(values) -> str:
    return "[" + ",".join(format(float(c), ".17g") for c in values) + "]"


def _provenance(config: ExperimentConfig, subcommand: str, *keys: str) -> str:
    details = {key: config.get(key) for key in keys if key in config.values}
    details["seed"] = config.seed
    return provenance_line(generate_fingerprint(config.values), subcommand, **details)


def _etas(config: ExperimentConfig, d: int) -> List[np.ndarray]:
    etas = [np.asarray(eta, dtype=float) for eta in config.get_list("etas", [])]
    for eta in etas:
        if eta.shape != (d,):
            raise ConfigError("etas", f"every eta needs {d} components")
    return [eta / np.linalg.norm(eta) for eta in etas]


def _matrices(config: ExperimentConfig, key: str, d: int, default) -> List[np.ndarray]:
    value = config.get(key, default)
    matrices = np.asarray(value, dtype=float)
    if matrices.ndim == 2:
        matrices = matrices[None]
    if matrices.ndim != 3 or matrices.shape[1:] != (d, d):
        raise ConfigError(key, f"expected one or more {d}x{d} matrices")
    if not np.allclose(matrices, np.swapaxes(matrices, 1, 2)):
        raise ConfigError(key, "matrices must be symmetric")
    return list(matrices)


def _effective_entry(field, e, s_grid, M, depth):
    """(m̄, m̄_pl, ā) at e; irrational directions go through rational approximants"""
    if e.is_rational:
        result = effective_tensors(field, e, s_grid, M)
        return result.m_bar, result.m_pl, result.a_bar
    approach = rational_approximants(e, depth)
    sequence = effective_tensors_irrational(field, approach, M, s_grid)
    return sequence.m_limit, sequence.m_limit, sequence.a_limit


async def run_effective(
    config: ExperimentConfig, pool: JobPool, out: Path
) -> List[Path]:
    """ā(e), m̄(e) and m̄_pl(e) over the configured direction list"""
    field = config.field()
    directions = config.get_directions("directions")
    s_grid, M = config.grid("grid.s", 16), config.grid("grid.M", 64)
    depth = config.get_int("approach.depth", 3)
    results = await pool.map(
        _effective_entry, [(field, e, s_grid, M, depth) for e in directions]
    )

    rows = [
        [e.entry(), m_bar, m_pl, *a_bar.ravel()]
        for e, (m_bar, m_pl, a_bar) in zip(directions, results)
    ]
    header = ["direction", "m_bar", "m_pl", *_tensor_columns("a_bar", field.d)]
    provenance = _provenance(
        config, "effective", "field.family", "grid.s", "grid.M", "approach.depth"
    )
    return [write_csv(out / "effective.csv", provenance, header, rows)]


async def run_limits(config: ExperimentConfig, pool: JobPool, out: Path) -> List[Path]:
    """ã_e^η and m̃_e^η for every configured direction and η, next to m̄_pl(e)"""
    field = config.field()
    directions = config.get_directions("directions")
    etas = _etas(config, field.d)
    if not etas:
        raise ConfigError("etas", "missing required key")
    s_grid, M = config.grid("grid.s", 16), config.grid("grid.M", 64)
    results = await pool.map(
        effective_tensors, [(field, e, s_grid, M, etas) for e in directions]
    )

    rows = []
    for e, result in zip(directions, results):
        for eta in etas:
            a_tilde, m_tilde = result.tilde[tuple(float(c) for c in eta)]
            label = _vector_text(eta)
            rows.append([e.entry(), label, result.m_pl, m_tilde, *a_tilde.ravel()])
    header = [
        "direction", "eta", "m_pl", "m_tilde", *_tensor_columns("a_tilde", field.d)
    ]
    provenance = _provenance(config, "limits", "field.family", "grid.s", "grid.M")
    return [write_csv(out / "limits.csv", provenance, header, rows)]


async def run_sweep(config: ExperimentConfig, pool: JobPool, out: Path) -> List[Path]:
    """Effective tensors along approach sequences e_n → e from each η side"""
    field = config.field()
    e = config.get_direction("approach.target")
    if not e.is_rational:
        raise ConfigError(
            "approach.target", "approach sequences need a rational target k=[...]"
        )
    etas = _etas(config, field.d)
    if not etas:
        raise ConfigError("etas", "missing required key")
    depth = config.get_int("approach.depth", 4)
    s_grid, M = config.grid("grid.s", 16), config.grid("grid.M", 64)

    approaches = [approach_sequence(e, eta, depth) for eta in etas]
    sequences = await pool.map(
        effective_tensors_irrational,
        [(field, approach, M, s_grid) for approach in approaches],
    )
    target = await pool.submit(effective_tensors, field, e, s_grid, M, etas)

    rows = []
    for eta, approach, sequence in zip(etas, approaches, sequences):
        label = _vector_text(eta)
        a_tilde, m_tilde = target.tilde[tuple(float(c) for c in eta)]
        for n, (en, theta, term) in enumerate(
            zip(approach.sequence, approach.thetas, sequence.terms)
        ):
            a_bar = term.a_bar.ravel()
            rows.append([label, n, en.entry(), theta, term.m_bar, term.m_pl, *a_bar])
        rows.append(
            [
                label,
                "limit",
                e.entry(),
                0.0,
                sequence.m_limit,
                sequence.m_limit,
                *sequence.a_limit.ravel(),
            ]
        )
        rows.append(
            [label, "tilde", e.entry(), 0.0, m_tilde, target.m_pl, *a_tilde.ravel()]
        )
    header = [
        "eta",
        "n",
        "direction",
        "theta",
        "m_bar",
        "m_pl",
        *_tensor_columns("a_bar", field.d),
    ]
    provenance = _provenance(
        config,
        "sweep",
        "field.family",
        "approach.target",
        "approach.depth",
        "grid.s",
        "grid.M",
    )
    return [write_csv(out / "sweep.csv", provenance, header, rows)]


def _planar_mobility(field, e, N) -> float:
    _, m_perp = oscillating_corrector(field, e, N)
    return pulsating_profile(m_perp).m_pl


async def run_front(config: ExperimentConfig, pool: JobPool, out: Path) -> List[Path]:
    """Simulated front speed against α/m̄_pl(e) over the ε and α lists"""
    field = config.field()
    e = config.get_direction("direction")
    epsilons = [float(c) for c in config.get_list("front.epsilon")]
    alphas = [float(c) for c in config.get_list("front.alpha")]
    T = config.get_float("front.T")
    N = config.grid("front.grid", 16)

    m_pl = await pool.submit(_planar_mobility, field, e, N)
    jobs = [
        (field, e, alpha, epsilon, T, N) for epsilon in epsilons for alpha in alphas
    ]
    states = await pool.map(simulate_front, jobs)

    provenance = _provenance(config, "front", "field.family", "front.T", "front.grid")
    rows, paths = [], []
    for index, state in enumerate(states):
        predicted = state.alpha / m_pl
        rows.append(
            [
                state.epsilon,
                state.alpha,
                state.speed,
                predicted,
                abs(state.speed - predicted) / abs(predicted),
                state.fit_residual,
                len(state.times) - 1,
            ]
        )
        series = out / f"front_series_{index}.csv"
        paths.append(
            write_csv(
                series, provenance, ["t", "mean_w"], zip(state.times, state.means)
            )
        )
    header = [
        "epsilon",
        "alpha",
        "speed",
        "predicted",
        "relative_error",
        "fit_residual",
        "steps",
    ]
    return [write_csv(out / "front.csv", provenance, header, rows), *paths]


async def run_speed2d(config: ExperimentConfig, pool: JobPool, out: Path) -> List[Path]:
    """λ_e(α) over the α list, with α⁻¹λ_e(α) against m̄_pl(e)⁻¹"""
    field = config.field()
    e = config.get_direction("direction")
    alphas = [float(c) for c in config.get_list("front.alpha")]
    T = config.get_float("front.T")
    N = config.grid("front.grid", 16)

    m_pl = await pool.submit(_planar_mobility, field, e, N)
    speeds = await pool.map(
        front_speed_2d, [(field, e, alpha, T, N) for alpha in alphas]
    )
    rows = [
        [alpha, speed, speed / alpha, 1.0 / m_pl]
        for alpha, speed in zip(alphas, speeds)
    ]
    provenance = _provenance(config, "speed2d", "field.family", "front.T", "front.grid")
    header = ["alpha", "lambda", "lambda_over_alpha", "m_pl_inverse"]
    return [write_csv(out / "speed2d.csv", provenance, header, rows)]


def _cell_value(op, X, deltas, N) -> float:
    return float(np.mean(extract_Fperp(op, X, deltas, N).values))


async def run_obstacle(
    config: ExperimentConfig, pool: JobPool, out: Path
) -> List[Path]:
    """μ̂ from the obstacle densities against −F̄(e,X) from the penalized cell solve"""
    field = config.field()
    e = config.get_direction("direction")
    op = project_A(field, e)
    frame = slice_lattice_basis(e).frame
    default_X = (frame[:, 0:1] @ frame[:, 0:1].T).tolist()
    matrices = _matrices(config, "obstacle.X", field.d, default_X)
    radii = [float(R) for R in config.get_list("obstacle.R", [8.0])]
    theta = config.get_float("obstacle.theta", 1.0)
    tol = config.get_float("obstacle.tol", 1e-2)
    method = str(config.get("obstacle.method", "active-set"))
    deltas = [float(c) for c in config.get_list("cell.deltas", [0.2, 0.1, 0.05])]
    N = config.grid("grid.N", 32)

    critical = await pool.map(
        critical_mu,
        [(op, X, R, theta, None, tol, None, method) for X in matrices for R in radii],
    )
    cell = await pool.map(_cell_value, [(op, X, deltas, N) for X in matrices])

    provenance = _provenance(
        config, "obstacle", "field.family", "obstacle.theta", "obstacle.tol", "grid.N"
    )
    rows = []
    for index, value in enumerate(critical):
        X, R = matrices[index // len(radii)], radii[index % len(radii)]
        reference = -cell[index // len(radii)]
        gap = abs(value.mu_hat - reference) / max(abs(reference), 1e-12)
        rows.append(
            [
                _vector_text(X.ravel()),
                R,
                value.mu_hat,
                *value.sub_bracket,
                *value.super_bracket,
                reference,
                gap,
            ]
        )
    header = [
        "X",
        "R",
        "mu_hat",
        "sub_lo",
        "sub_hi",
        "super_lo",
        "super_hi",
        "minus_F_bar",
        "relative_gap",
    ]
    paths = [write_csv(out / "obstacle.csv", provenance, header, rows)]

    if config.get("obstacle.masks", False):
        for index, value in enumerate(critical):
            X, R = matrices[index // len(radii)], radii[index % len(radii)]
            solution = solve_obstacle(
                op,
                "subsolution",
                X,
                value.mu_hat + tol,
                R,
                np.zeros(field.d),
                theta,
                method=method,
            )
            if solution.contact_mask.ndim <= 2:
                mask_path = out / f"contact_{index}.pbm"
                paths.append(write_pbm(mask_path, solution.contact_mask))
    return paths


async def run_fourier(config: ExperimentConfig, pool: JobPool, out: Path) -> List[Path]:
    """Diophantine check and Fourier-corrector residual per direction"""
    field = config.field()
    directions = config.get_directions("directions")
    K = config.get_float("fourier.K", 4.0)
    C_e = config.get_float("fourier.C_e", 0.3)
    tau = config.get_float("fourier.tau", 1.0)
    K_max = config.get_float("fourier.K_max", 50.0)

    checks = await pool.map(
        diophantine_check, [(e, C_e, tau, K_max) for e in directions]
    )
    correctors = await pool.map(fourier_corrector, [(field, e, K) for e in directions])
    rows = [
        [
            e.entry(),
            passed,
            _vector_text(worst),
            value,
            K,
            corrector.residual_inf,
            corrector.tolerance,
            corrector.residual_inf <= corrector.tolerance,
        ]
        for e, (passed, worst, value), corrector in zip(directions, checks, correctors)
    ]
    header = [
        "direction",
        "diophantine",
        "worst_k",
        "worst_value",
        "K",
        "residual",
        "tolerance",
        "within_tolerance",
    ]
    provenance = _provenance(
        config, "fourier", "field.family", "fourier.K", "fourier.K_max"
    )
    paths = [write_csv(out / "fourier.csv", provenance, header, rows)]
    grid_header = [*[f"i_{axis + 1}" for axis in range(field.d)], "V"]
    for index, corrector in enumerate(correctors):
        values = corrector.V.values
        table = out / f"fourier_V_{index}.csv"
        paths.append(write_csv(table, provenance, grid_header, grid_rows(values)))
        block = out / f"fourier_V_{index}.grid"
        paths.append(write_grid_block(block, values, corrector.V.h))
    return paths


def _invariant_pair(field, e, s, M, bins, steps, dt, seed, chains):
    op = project_A(field, e)
    chart = slice_lattice_basis(e).with_offset(s)
    measure = invariant_measure_slice(op, chart, M)
    empirical = sde_empirical_measure(op, chart, steps, dt, seed, bins, chains)
    pde = measure.bin_average(bins)
    return pde, empirical, total_variation(pde, empirical.density)


async def run_invariant(
    config: ExperimentConfig, pool: JobPool, out: Path
) -> List[Path]:
    """Slice invariant densities from the adjoint null space against SDE histograms"""
    field = config.field()
    e = config.get_direction("direction")
    offsets = [float(s) for s in config.get_list("invariant.offsets", [0.0])]
    M = config.grid("grid.M", 64)
    bins = config.get_int("invariant.bins", 16)
    steps = config.get_int("invariant.steps", 1_000_000)
    chains = config.get_int("invariant.chains", 64)
    default_dt = (1.0 / bins) ** 2 / (2.0 * field.Lam * (field.d - 1))
    dt = config.get_float("invariant.dt", default_dt)
    if M % bins:
        raise ConfigError("invariant.bins", f"must divide grid.M={M}")

    results = await pool.map(
        _invariant_pair,
        [(field, e, s, M, bins, steps, dt, config.seed, chains) for s in offsets],
    )
    provenance = _provenance(
        config,
        "invariant",
        "field.family",
        "grid.M",
        "invariant.bins",
        "invariant.steps",
    )
    summary = [
        [s, bins, empirical.samples, tv]
        for s, (_, empirical, tv) in zip(offsets, results)
    ]
    densities = [
        [s, *index, pde[index], empirical.density[index]]
        for s, (pde, empirical, _) in zip(offsets, results)
        for index in np.ndindex(pde.shape)
    ]
    k = field.d - 1
    return [
        write_csv(
            out / "invariant.csv",
            provenance,
            ["s", "bins", "samples", "total_variation"],
            summary,
        ),
        write_csv(
            out / "invariant_densities.csv",
            provenance,
            ["s", *[f"bin_{i + 1}" for i in range(k)], "pde", "sde"],
            densities,
        ),
    ]


SUBCOMMANDS: Dict[str, Callable] = {
    "effective": run_effective,
    "limits": run_limits,
    "sweep": run_sweep,
    "front": run_front,
    "speed2d": run_speed2d,
    "obstacle": run_obstacle,
    "fourier": run_fourier,
    "invariant": run_invariant,
}


async def run_async(
    subcommand: str,
    config: ExperimentConfig,
    jobs: int = 1,
    out: Optional[Path] = None,
) -> List[Path]:
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = Path(out) if out is not None else config.output_dir
    pool = JobPool(jobs)
    logging.info("Running %s with %s worker(s) into %s", subcommand, jobs, out)
    return await SUBCOMMANDS[subcommand](config, pool, out)


def run(
    subcommand: str,
    config: ExperimentConfig,
    jobs: int = 1,
    out: Optional[Path] = None,
) -> int:
    """Run a subcommand; returns the process exit code"""
    try:
        paths = asyncio.run(run_async(subcommand, config, jobs, out))
    except HomogError as error:
        logging.error("%s failed: %s", subcommand, error)
        return 1
    for path in paths:
        logging.info("Wrote %s", path)
    return 0
