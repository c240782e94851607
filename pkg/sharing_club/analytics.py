from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import optimize

from sharing_club.domain import ClubParams, Population, TypeDistribution, aggregate_demand, aggregate_supply
from sharing_club.scenarios import Scenario
from sharing_club.utils import EXP_FLOOR, FloatArray, Verdict

log = logging.getLogger(__name__)

# Root bracketing grid over [0, N] and refinement tolerances.
GRID_SIZE: int = 1024
ROOT_XTOL: float = 1e-12
RESIDUAL_TOL: float = 1e-9
# Geometric sub-grid searched inside the first cell (0, N / (GRID_SIZE - 1)].
FIRST_CELL_GRID_SIZE: int = 256
FIRST_CELL_SPAN: float = 1e-12
# Relative distance to 1/N under which a fixed point is reported as marginal.
MARGINAL_RTOL: float = 1e-9
# Band around pi = 1 reported as critical.
CRITICAL_BAND: float = 0.005
# Log grid used to locate the critical population when d > 1.
CRITICAL_GRID_SIZE: int = 2048


class SolverError(RuntimeError):
    """
    Custom error for root finding or minimization that failed to meet its tolerance.
    """

    def __init__(self, message: str, n: Optional[float] = None, residual: Optional[float] = None):
        super().__init__(message)
        self.n = n
        self.residual = residual


class MeanFieldModel:
    """
    Average-case view of a club: at membership size n, mu_n(s) = n * k * g(s) copies of type s are shared.

    The number of peers N defaults to the population size. A different `n_peers` treats the population
    as a representative sample of a larger (or smaller) family with the same per-peer mixture.
    """

    def __init__(self, pop: Population, params: ClubParams, n_peers: Optional[float] = None):
        self.pop: Population = pop
        self.params: ClubParams = params

        # Cached aggregates. `demand` is M-weighted and only reported; the dynamics average peers equally.
        self.supply = aggregate_supply(pop)
        self.demand = aggregate_demand(pop)
        self.peer_demand = TypeDistribution(pop.demand_matrix.mean(axis=0))
        self.mean_payload: float = pop.mean_payload
        self._g: FloatArray = self.supply.probs
        self._h_peers: FloatArray = pop.demand_matrix

        self.n_peers: float = float(len(pop) if n_peers is None else n_peers)
        if not self.n_peers > 0:
            raise ValueError("The number of peers must be positive.")

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> MeanFieldModel:
        """Factory method for a homogeneous scenario, using a single representative peer."""
        return cls(scenario.population(n_peers=1), scenario.params, scenario.n_peers)

    def __copy__(self) -> MeanFieldModel:
        new = self.__class__.__new__(self.__class__)
        new.__dict__.update(self.__dict__)
        return new

    def __repr__(self) -> str:
        return (f"MeanFieldModel(N={self.n_peers:g}, k_rho={self.k_rho:g}, d={self.request_size}, "
                f"s_max={self.pop.s_max})")

    @property
    def k_rho(self) -> float:
        return self.mean_payload * self.params.search_efficiency

    @property
    def request_size(self) -> int:
        return self.params.request_size

    def rescaled(self, n_peers: float) -> MeanFieldModel:
        """The same club with N replaced by `n_peers`."""
        if not n_peers > 0:
            raise ValueError("The number of peers must be positive.")
        new = copy.copy(self)
        new.n_peers = float(n_peers)
        return new

    def with_params(self, params: ClubParams) -> MeanFieldModel:
        """The same club under other parameters."""
        new = copy.copy(self)
        new.params = params
        return new

    def failure_rates(self, n) -> FloatArray:
        """e^(-n k rho g(s)) for each n (rows) and type (columns); underflowing exponents give 0."""
        exponent = -np.multiply.outer(np.atleast_1d(np.asarray(n, dtype=float)), self.k_rho * self._g)
        with np.errstate(under="ignore"):
            return np.where(exponent < EXP_FLOOR, 0.0, np.exp(np.maximum(exponent, EXP_FLOOR)))

    def success_curve(self, n) -> FloatArray:
        """p_i(n) for each n (rows) and peer (columns)."""
        return 1.0 - self.failure_rates(n) @ self._h_peers.T

    def mean_join_curve(self, n) -> FloatArray:
        """P(n) averaged over peers, for each n of an array."""
        return (self.success_curve(n) ** self.request_size).mean(axis=1)


def _check_size(n: float):
    if not n >= 0:
        raise ValueError(f"Membership size must be non-negative, got {n!r}.")


def success_rate(model: MeanFieldModel, peer_index: int, n: float) -> float:
    """
    Average probability that one of peer i's demand instances is met in a club of size n:
    p_i(n) = E_{h_i}[1 - e^(-n k g(s) rho)].

    :param model: The mean-field model.
    :param peer_index: The 0-based peer index.
    :param n: The membership size.
    :return: p_i(n).
    """
    _check_size(n)
    return float(1.0 - model.failure_rates(n)[0] @ model.pop.demand_matrix[peer_index])


def join_probability(model: MeanFieldModel, peer_index: int, n: float) -> float:
    """Probability that peer i's whole request of d instances is met: p_i(n)^d."""
    return success_rate(model, peer_index, n) ** model.request_size


def mean_join_probability(model: MeanFieldModel, n: float) -> float:
    """Joining probability averaged over all peers."""
    _check_size(n)
    return float(model.mean_join_curve(n)[0])


def slope(model: MeanFieldModel, n: float) -> float:
    """
    Analytic derivative of the mean joining probability:
    d k rho * mean over i of p_i(n)^(d-1) * sum_s h_i(s) g(s) e^(-n k rho g(s)).
    """
    _check_size(n)
    failures = model.failure_rates(n)[0]
    p = 1.0 - model.pop.demand_matrix @ failures
    exposure = model.pop.demand_matrix @ (model.supply.probs * failures)
    d = model.request_size
    return float(d * model.k_rho * np.mean(p ** (d - 1) * exposure))


def control_parameter(model: MeanFieldModel) -> float:
    """
    pi = N k rho sum_s h(s) g(s), with h the per-peer mean of the demand rows, so that
    pi equals N times the slope of P at n = 0 whatever the demand rates.
    """
    return model.n_peers * model.k_rho * model.peer_demand.inner(model.supply)


def critical_k_rho(model: MeanFieldModel) -> float:
    """The value of k*rho at which pi reaches 1."""
    inner = model.peer_demand.inner(model.supply)
    if not inner > 0:
        raise SolverError("Demand and supply are disjoint: no k*rho reaches the growth threshold.")
    return 1.0 / (model.n_peers * inner)


def empty_membership_unstable(model: MeanFieldModel) -> bool:
    """An empty club is unstable iff requests are simple (d = 1) and pi >= 1."""
    return model.request_size == 1 and control_parameter(model) >= 1.0


def verdict(model: MeanFieldModel, band: float = CRITICAL_BAND) -> Verdict:
    """Growth, critical or stable-empty verdict on the empty club."""
    if model.request_size > 1:
        return Verdict.STABLE_EMPTY
    pi = control_parameter(model)
    if abs(pi - 1.0) <= band:
        return Verdict.CRITICAL
    return Verdict.GROWTH if pi > 1.0 else Verdict.STABLE_EMPTY


@dataclass(frozen=True)
class FixedPoint:
    """An equilibrium membership size and its stability."""
    n_eq: float
    p_bar: float
    stable: bool
    slope: float
    marginal: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _classify(model: MeanFieldModel, n_eq: float, p_bar: float) -> FixedPoint:
    s = slope(model, n_eq)
    threshold = 1.0 / model.n_peers
    marginal = abs(s - threshold) <= MARGINAL_RTOL * threshold
    return FixedPoint(n_eq=n_eq, p_bar=p_bar, stable=(s < threshold and not marginal), slope=s, marginal=marginal)


def _refine(gap, a: float, b: float, xtol: float) -> float:
    try:
        return optimize.bisect(gap, a, b, xtol=xtol, maxiter=400)
    except (RuntimeError, ValueError) as e:
        raise SolverError(f"Bisection on [{a!r}, {b!r}] failed: {e}", n=0.5 * (a + b), residual=gap(0.5 * (a + b)))


def fixed_points(model: MeanFieldModel, grid_size: int = GRID_SIZE, xtol: float = ROOT_XTOL,
                 residual_tol: float = RESIDUAL_TOL) -> list[FixedPoint]:
    """
    Every solution of P(n) = n/N on [0, N], with its stability. Sign changes of P(n) - n/N are
    bracketed on a uniform grid and refined by bisection. n = 0 is always included.

    :param model: The mean-field model.
    :param grid_size: Number of grid points over [0, N].
    :param xtol: Absolute tolerance of the bisection in n.
    :param residual_tol: Largest accepted |P(n_eq) - n_eq/N|.
    :return: The fixed points sorted by n_eq.
    """
    n_peers = model.n_peers

    def gap(n: float) -> float:
        return float(model.mean_join_curve(n)[0]) - n / n_peers

    grid = np.linspace(0.0, n_peers, grid_size)
    values = model.mean_join_curve(grid) - grid / n_peers
    roots: list[float] = [0.0]

    # A positive root between 0 and the first grid point, when the empty club is unstable
    if values[1] < 0 and slope(model, 0.0) > 1.0 / n_peers:
        eps = grid[1]
        for _ in range(200):
            eps /= 2.0
            if gap(eps) > 0:
                roots.append(_refine(gap, eps, grid[1], xtol))
                break

    # With d > 1 the gap starts negative, so at large N the unstable lower root can sit in the first cell
    if model.request_size > 1 and values[1] > 0:
        sub = np.geomspace(grid[1] * FIRST_CELL_SPAN, grid[1], FIRST_CELL_GRID_SIZE)
        sub_values = model.mean_join_curve(sub) - sub / n_peers
        for j in np.flatnonzero(sub_values[:-1] * sub_values[1:] < 0):
            roots.append(_refine(gap, float(sub[j]), float(sub[j + 1]), xtol))

    for j in range(1, grid_size - 1):
        a, b = grid[j], grid[j + 1]
        if values[j] == 0.0:
            roots.append(float(a))
        elif values[j] * values[j + 1] < 0:
            roots.append(_refine(gap, a, b, xtol))
    if values[-1] == 0.0:
        roots.append(float(grid[-1]))
    log.debug("Fixed point roots for %r: %s", model, roots)

    points = []
    for n_eq in sorted(set(roots)):
        p_bar = mean_join_probability(model, n_eq)
        residual = abs(p_bar - n_eq / n_peers)
        if residual > residual_tol:
            raise SolverError(f"Fixed point n={n_eq!r} misses the balance condition by {residual:.3g}.",
                              n=n_eq, residual=residual)
        points.append(_classify(model, n_eq, p_bar))

    positive = [p for p in points if p.n_eq > 0]
    if model.request_size == 1 and len(positive) > 1:
        log.warning("Found %d positive fixed points with d=1; keeping the largest.", len(positive))
        points = [points[0], positive[-1]]
    return points


def stable_fraction(model: MeanFieldModel) -> float:
    """n_eq / N of the largest stable fixed point (0 when only the empty club is stable)."""
    stable = [p for p in fixed_points(model) if p.stable]
    return stable[-1].n_eq / model.n_peers if stable else 0.0


@dataclass(frozen=True)
class CriticalPoint:
    """The smallest N admitting positive fixed points and the membership level where they are born."""
    N_crit: float
    n_crit: float
    tangency_residual: float

    def to_dict(self) -> dict:
        return asdict(self)


def _default_ceiling(model: MeanFieldModel) -> float:
    """A membership size beyond which every supplied type is essentially always found."""
    positive = model.supply.probs[model.supply.probs > 0]
    return 50.0 / (model.k_rho * float(positive.min()))


def critical_population(model: MeanFieldModel, n_ceiling: Optional[float] = None,
                        grid_size: int = CRITICAL_GRID_SIZE) -> CriticalPoint:
    """
    The critical population N_crit and the bifurcation point n_crit, where n/N_crit first touches P(n).

    For d = 1 the tangency sits at the origin and N_crit = 1 / (k rho sum_s h(s) g(s)). For d > 1,
    N_crit is the minimum of n / P(n) over n > 0 and n_crit its minimizer.

    :param model: The mean-field model; only its distributions, k*rho and d matter.
    :param n_ceiling: Largest membership size scanned (d > 1).
    :param grid_size: Points of the log grid scanned before refinement (d > 1).
    :return: The critical point.
    """
    if model.request_size == 1:
        inner = model.peer_demand.inner(model.supply)
        if not inner > 0:
            raise SolverError("no critical population below bound")
        n_crit_peers = 1.0 / (model.k_rho * inner)
        return CriticalPoint(n_crit_peers, 0.0, slope(model, 0.0) - 1.0 / n_crit_peers)

    ceiling = float(n_ceiling) if n_ceiling is not None else _default_ceiling(model)
    grid = np.geomspace(ceiling * 1e-9, ceiling, grid_size)
    p_bar = model.mean_join_curve(grid)
    with np.errstate(divide="ignore"):
        ratio = np.where(p_bar > 0, grid / np.where(p_bar > 0, p_bar, 1.0), np.inf)
    j = int(np.argmin(ratio))
    if j == grid_size - 1:
        log.warning("Minimum of n / P(n) sits at the scan ceiling n = %g", ceiling)
    if not np.isfinite(ratio[j]) or j == grid_size - 1:
        raise SolverError("no critical population below bound", n=ceiling)

    lo, hi = grid[max(j - 1, 0)], grid[j + 1]
    result = optimize.minimize_scalar(
        lambda n: n / mean_join_probability(model, n), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-10 * grid[j]},
    )
    n_crit = float(result.x)
    p_crit = mean_join_probability(model, n_crit)
    residual = slope(model, n_crit) - p_crit / n_crit
    log.debug("Critical point for %r: N=%g, n=%g, residual=%.3g", model, n_crit / p_crit, n_crit, residual)
    return CriticalPoint(n_crit / p_crit, n_crit, residual)
