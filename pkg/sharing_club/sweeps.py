from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from sharing_club.analytics import (
    FixedPoint, MeanFieldModel, critical_population, fixed_points, stable_fraction
)
from sharing_club.domain import ClubParams
from sharing_club.scenarios import (
    ShiftDirection, ShiftSpec, ZipfSpec, split_k_rho, zipf_norm, zipf_population
)
from sharing_club.utils import Phase

log = logging.getLogger(__name__)

# Absolute distance between P(n) and n/N under which a grid point is on the phase boundary.
BOUNDARY_ATOL: float = 1e-12


def _map_cells(func: Callable, cells: Sequence, workers: Optional[int] = None) -> list:
    """Evaluates `func` on every cell, in order. Cells run in worker processes when `workers` > 1."""
    if workers is not None and workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(func, cells))
    return [func(cell) for cell in cells]


def zipf_model(beta: float, s_max: int, k_rho: float, n_peers: float = 1.0, request_size: int = 1,
               shift: Optional[ShiftSpec] = None) -> MeanFieldModel:
    """A homogeneous Zipf club represented by a single peer."""
    payload_size, rho = split_k_rho(k_rho)
    pop = zipf_population(ZipfSpec(beta, s_max), 1, payload_size, shift)
    return MeanFieldModel(pop, ClubParams(rho, request_size), n_peers)


def bifurcation_scan(model: MeanFieldModel, n_peers_values: Iterable[float]) -> list[tuple[float, list[FixedPoint]]]:
    """
    Fixed points of the same club for each population size N, for composite requests (d > 1).

    :param model: The mean-field model whose distributions and k*rho are kept.
    :param n_peers_values: The values of N to scan.
    :return: One (N, fixed points) row per N, sorted by N.
    """
    if model.request_size < 2:
        raise ValueError("A bifurcation scan needs composite requests (d >= 2).")
    rows = []
    for n_peers in sorted(float(n) for n in n_peers_values):
        rows.append((n_peers, fixed_points(model.rescaled(n_peers))))
    return rows


def bifurcation_frame(rows: Sequence[tuple[float, list[FixedPoint]]]) -> pd.DataFrame:
    """Flattens a bifurcation scan into one line per fixed point."""
    records = [
        {"N": n_peers, "n_eq": p.n_eq, "p_bar": p.p_bar, "stable": p.stable, "marginal": p.marginal}
        for n_peers, points in rows for p in points
    ]
    return pd.DataFrame.from_records(records, columns=["N", "n_eq", "p_bar", "stable", "marginal"])


def phase_field(model: MeanFieldModel, resolution: int) -> pd.DataFrame:
    """
    The direction field of club dynamics: above the n/N diagonal a club grows, below it shrinks.

    :param model: The mean-field model.
    :param resolution: Number of grid points over [0, N].
    :return: A frame with columns n_frac, p_bar and phase.
    """
    if resolution < 2:
        raise ValueError("A phase field needs at least two grid points.")
    n = np.linspace(0.0, model.n_peers, resolution)
    n_frac = n / model.n_peers
    p_bar = model.mean_join_curve(n)
    phase = np.where(
        np.abs(p_bar - n_frac) <= BOUNDARY_ATOL, Phase.BOUNDARY.value,
        np.where(p_bar > n_frac, Phase.GROWTH.value, Phase.SHRINKAGE.value),
    )
    return pd.DataFrame({"n_frac": n_frac, "p_bar": p_bar, "phase": phase})


def _perfect_match_ncrit(cell: tuple[float, int, float]) -> float:
    beta, s_max, k_rho = cell
    return 1.0 / (k_rho * zipf_norm(ZipfSpec(beta, s_max)) ** 2)


def _solved_ncrit(cell: tuple[float, int, float, int, Optional[ShiftSpec]]) -> float:
    beta, s_max, k_rho, request_size, shift = cell
    return critical_population(zipf_model(beta, s_max, k_rho, request_size=request_size, shift=shift)).N_crit


def ncrit_sweep(betas: Iterable[float], s_maxes: Iterable[int], k_rho: float, shift: Optional[ShiftSpec] = None,
                request_size: int = 1, workers: Optional[int] = None) -> pd.DataFrame:
    """
    Critical population over a (beta, s_max) grid. The perfect match with simple requests uses the
    closed form N_crit = 1 / (k rho ||g||^2); shifted or composite cases use the general solver.

    :param betas: Zipf exponents.
    :param s_maxes: Numbers of types.
    :param k_rho: The product k*rho.
    :param shift: Optional mismatch between supply and demand.
    :param request_size: d.
    :param workers: Number of worker processes for the grid cells.
    :return: A frame with columns beta, s_max, k_rho, N_crit (plus delta and direction when shifted).
    """
    grid = [(float(b), int(s)) for b in sorted(set(betas)) for s in sorted(set(s_maxes))]
    log.info("Sweeping N_crit over %d cells", len(grid))
    if shift is None and request_size == 1:
        values = _map_cells(_perfect_match_ncrit, [(b, s, k_rho) for b, s in grid], workers)
    else:
        values = _map_cells(_solved_ncrit, [(b, s, k_rho, request_size, shift) for b, s in grid], workers)
    frame = pd.DataFrame({
        "beta": [b for b, _ in grid], "s_max": [s for _, s in grid],
        "k_rho": [k_rho] * len(grid), "N_crit": values,
    })
    if shift is not None:
        frame["delta"] = shift.delta
        frame["direction"] = shift.direction.value
    return frame


def ncrit_shift_sweep(beta: float, s_max: int, k_rho: float, delta_fractions: Iterable[float],
                      direction: ShiftDirection = ShiftDirection.DEMAND_LEAD, request_size: int = 1,
                      workers: Optional[int] = None) -> pd.DataFrame:
    """
    Critical population against a shift between supply and demand, given as fractions of s_max.

    :return: A frame with columns beta, s_max, k_rho, delta_frac, delta, N_crit, sorted by delta.
    """
    shifts = sorted({ShiftSpec.from_fraction(f, s_max, direction) for f in delta_fractions}, key=lambda s: s.delta)
    values = _map_cells(_solved_ncrit, [(beta, s_max, k_rho, request_size, s) for s in shifts], workers)
    return pd.DataFrame({
        "beta": beta, "s_max": s_max, "k_rho": k_rho,
        "delta_frac": [s.delta / s_max for s in shifts], "delta": [s.delta for s in shifts],
        "direction": direction.value, "N_crit": values,
    })


def _equilibrium_cell(cell: tuple[float, int, float, int]) -> float:
    beta, s_max, nk_rho, request_size = cell
    return stable_fraction(zipf_model(beta, s_max, 1.0, n_peers=nk_rho, request_size=request_size))


def equilibrium_sweep(betas: Iterable[float], s_max: int, nk_rho_values: Iterable[float], request_size: int = 1,
                      workers: Optional[int] = None) -> pd.DataFrame:
    """
    Equilibrium membership fraction n_eq/N, which is also the average success level of the club, against N*k*rho.
    For a perfect match the fraction depends on N, k and rho only through their product.

    :return: A frame with columns beta, s_max, Nk_rho, n_eq_frac.
    """
    grid = [(float(b), float(v)) for b in sorted(set(betas)) for v in sorted(set(nk_rho_values))]
    values = _map_cells(_equilibrium_cell, [(b, s_max, v, request_size) for b, v in grid], workers)
    return pd.DataFrame({
        "beta": [b for b, _ in grid], "s_max": s_max, "Nk_rho": [v for _, v in grid], "n_eq_frac": values,
    })
