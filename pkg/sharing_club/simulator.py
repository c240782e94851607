from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from numbers import Real
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd

from sharing_club.domain import ClubParams, Population
from sharing_club.payloads import PayloadMode

log = logging.getLogger(__name__)

# Either a fraction of the peers drawn at random, or the explicit indices of the initial members.
InitialMembership = Union[float, Iterable[int]]

SEED_BOUND: int = 2 ** 64


class SimulationError(ValueError):
    """
    Custom error for an invalid simulation config or initial membership.
    """
    pass


@dataclass(frozen=True)
class SimConfig:
    """Seed, horizon and payload materialization of a simulation run."""
    seed: int
    rounds: int
    burn_in: int = 0
    payload_mode: PayloadMode = PayloadMode.FIXED_MULTINOMIAL
    self_supply: bool = False

    def __post_init__(self):
        for name in ("seed", "rounds", "burn_in"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value:
                raise SimulationError(f"{name} must be an integer, got {value!r}.")
            object.__setattr__(self, name, int(value))
        if not 0 <= self.seed < SEED_BOUND:
            raise SimulationError(f"Seed must be a 64-bit unsigned integer, got {self.seed!r}.")
        if self.rounds < 0:
            raise SimulationError("The number of rounds must be non-negative.")
        if self.burn_in < 0 or (self.rounds > 0 and self.burn_in >= self.rounds):
            raise SimulationError(f"Burn-in must lie in [0, rounds), got {self.burn_in} for {self.rounds} rounds.")
        try:
            object.__setattr__(self, "payload_mode", PayloadMode.parse(self.payload_mode))
        except ValueError as e:
            raise SimulationError(str(e))


class SimState:
    """
    Class that represents a club at round t: who is a member and which chunks every peer holds.
    Only members' chunks can be found by a search.
    """

    def __init__(self, pop: Population, params: ClubParams, cfg: SimConfig,
                 payloads: np.ndarray, membership: np.ndarray, rng: np.random.Generator):
        self.pop: Population = pop
        self.params: ClubParams = params
        self.cfg: SimConfig = cfg
        self.payloads: np.ndarray = payloads
        self.membership: np.ndarray = membership
        self.rng: np.random.Generator = rng
        self.round: int = 0

        # Last round's flows
        self.joins: int = 0
        self.leaves: int = 0
        self.satisfied: int = 0

        # Inverse CDF of every peer's demand, one row per peer
        cdf = np.cumsum(pop.demand_matrix, axis=1)
        last = pop.s_max - 1 - np.argmax(pop.demand_matrix[:, ::-1] > 0, axis=1)
        cdf[np.arange(pop.s_max) >= last[:, None]] = 1.0
        self._cdf: np.ndarray = cdf

    @property
    def n_peers(self) -> int:
        return len(self.pop)

    @property
    def size(self) -> int:
        return int(self.membership.sum())

    def shared_copies(self) -> np.ndarray:
        """Copies of each type held by the current members."""
        return self.membership.astype(np.int64) @ self.payloads

    def sample_requests(self) -> np.ndarray:
        """Draws d demand instances per peer: an (N, d) matrix of 0-based types."""
        n, d, s_max = self.n_peers, self.params.request_size, self.pop.s_max
        u = self.rng.random((n, d))
        # Per row: the number of CDF entries at or below u, so zero-probability types are never drawn
        return (self._cdf[:, None, :] <= u[:, :, None]).sum(axis=2)


def _initial_members(n_peers: int, initial_membership: InitialMembership, rng: np.random.Generator) -> np.ndarray:
    membership = np.zeros(n_peers, dtype=bool)
    if isinstance(initial_membership, Real) and not isinstance(initial_membership, bool):
        frac = float(initial_membership)
        if not 0.0 <= frac <= 1.0:
            raise SimulationError(f"Initial fraction must lie in [0, 1], got {frac!r}.")
        count = int(np.rint(frac * n_peers))
        membership[rng.choice(n_peers, size=count, replace=False)] = True
        return membership
    try:
        indices = np.fromiter((int(i) for i in initial_membership), dtype=np.int64)
    except (TypeError, ValueError):
        raise SimulationError(f"Initial membership must be a fraction or peer indices, got {initial_membership!r}.")
    if indices.size and (indices.min() < 0 or indices.max() >= n_peers):
        raise SimulationError(f"Initial member index out of range 0..{n_peers - 1}.")
    membership[indices] = True
    return membership


def init(pop: Population, params: ClubParams, cfg: SimConfig,
         initial_membership: InitialMembership = 0.5) -> SimState:
    """
    Materializes the payloads and the initial club. Payloads are drawn before the members.

    :param pop: The population.
    :param params: rho and d.
    :param cfg: The run config; its seed fixes every draw.
    :param initial_membership: A fraction of peers picked at random, or explicit peer indices.
    :return: The state at round 0.
    """
    rng = np.random.default_rng(cfg.seed)
    payloads = cfg.payload_mode.draw(pop, rng)
    membership = _initial_members(len(pop), initial_membership, rng)
    log.debug("Initialized %r with %d members (seed %d)", pop, membership.sum(), cfg.seed)
    return SimState(pop, params, cfg, payloads, membership, rng)


def round(state: SimState) -> SimState:
    """
    Plays one round: every peer issues a request of d instances against the members' chunks of the
    current round, then joins (or stays) iff the whole request was met and leaves otherwise.
    All peers see the same snapshot and are updated together.

    :param state: The state at round t, updated in place.
    :return: The state at round t + 1.
    """
    rho = state.params.search_efficiency
    old = state.membership
    shared = state.shared_copies()
    requests = state.sample_requests()

    copies = shared[requests]
    if not state.cfg.self_supply:
        own = np.take_along_axis(state.payloads, requests, axis=1)
        copies = copies - own * old[:, None]
    found_prob = 1.0 - (1.0 - rho) ** copies
    found = state.rng.random(requests.shape) < found_prob
    success = found.all(axis=1)

    state.joins = int((success & ~old).sum())
    state.leaves = int((old & ~success).sum())
    state.satisfied = int(success.sum())
    state.membership = success
    state.round += 1
    return state


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Membership size and flows of one run, round 0 being the initial club."""
    sizes: np.ndarray
    joins: np.ndarray
    leaves: np.ndarray
    empirical_success: np.ndarray
    n_peers: int

    @property
    def rounds(self) -> int:
        return len(self.sizes) - 1

    @property
    def fractions(self) -> np.ndarray:
        return self.sizes / self.n_peers

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "round": np.arange(len(self.sizes)), "size": self.sizes, "joins": self.joins,
            "leaves": self.leaves, "success_rate": self.empirical_success,
        })

    def equilibrium_fraction(self, burn_in: int = 0) -> float:
        """Time-averaged membership fraction over the rounds after `burn_in`."""
        tail = self.fractions[burn_in + 1:]
        return float(tail.mean()) if tail.size else float(self.fractions[-1])

    def absorbed_at(self) -> Optional[int]:
        """First round with an empty club, None if it never empties."""
        empty = np.flatnonzero(self.sizes == 0)
        return int(empty[0]) if empty.size else None


def run(state: SimState, cfg: Optional[SimConfig] = None) -> Trajectory:
    """
    Plays `cfg.rounds` rounds from `state` and records the trajectory.

    :param state: An initialized state.
    :param cfg: Overrides the state's config for the horizon.
    :return: The trajectory, of length rounds + 1.
    """
    rounds = (cfg or state.cfg).rounds
    sizes = np.zeros(rounds + 1, dtype=np.int64)
    joins = np.zeros(rounds + 1, dtype=np.int64)
    leaves = np.zeros(rounds + 1, dtype=np.int64)
    success = np.full(rounds + 1, np.nan)
    sizes[0] = state.size
    for t in range(1, rounds + 1):
        round(state)
        sizes[t], joins[t], leaves[t] = state.size, state.joins, state.leaves
        success[t] = state.satisfied / state.n_peers
    log.debug("Seed %d: final size %d after %d rounds", state.cfg.seed, sizes[-1], rounds)
    return Trajectory(sizes, joins, leaves, success, state.n_peers)


@dataclass(frozen=True, eq=False)
class EnsembleSummary:
    """Per-round mean and spread of the membership fraction across seeds."""
    mean_frac: np.ndarray
    std_frac: np.ndarray
    equilibrium_fractions: np.ndarray
    absorbed_at: list[Optional[int]]
    phase_counts: dict[str, int]
    trajectories: list[Trajectory] = field(repr=False)

    @property
    def mean_equilibrium(self) -> float:
        return float(self.equilibrium_fractions.mean())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "round": np.arange(len(self.mean_frac)), "mean_frac": self.mean_frac, "std_frac": self.std_frac,
        })


def _run_seed(job: tuple[Population, ClubParams, SimConfig, InitialMembership]) -> Trajectory:
    pop, params, cfg, initial_membership = job
    return run(init(pop, params, cfg, initial_membership))


def ensemble(pop: Population, params: ClubParams, cfg: SimConfig, n_seeds: int,
             initial_membership: InitialMembership = 0.5, workers: Optional[int] = None) -> EnsembleSummary:
    """
    Independent runs with seeds base XOR j, j = 0..n_seeds-1, reduced in seed order.

    :param pop: The population.
    :param params: rho and d.
    :param cfg: The base config.
    :param n_seeds: Number of runs.
    :param initial_membership: As in `init`, for every run.
    :param workers: Number of worker processes.
    :return: The summary.
    """
    if n_seeds < 1:
        raise SimulationError("An ensemble needs at least one seed.")
    if not isinstance(initial_membership, Real):
        initial_membership = tuple(initial_membership)
    jobs = [(pop, params, replace(cfg, seed=cfg.seed ^ j), initial_membership) for j in range(n_seeds)]
    log.info("Running %d seeds of %d rounds", n_seeds, cfg.rounds)
    if workers is not None and workers > 1 and n_seeds > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trajectories = list(pool.map(_run_seed, jobs))
    else:
        trajectories = [_run_seed(job) for job in jobs]

    fractions = np.vstack([t.fractions for t in trajectories])
    absorbed = [t.absorbed_at() for t in trajectories]
    empty = sum(1 for t in trajectories if t.sizes[-1] == 0)
    return EnsembleSummary(
        mean_frac=fractions.mean(axis=0),
        std_frac=fractions.std(axis=0),
        equilibrium_fractions=np.array([t.equilibrium_fraction(cfg.burn_in) for t in trajectories]),
        absorbed_at=absorbed,
        phase_counts={"empty": empty, "sustained": n_seeds - empty},
        trajectories=trajectories,
    )
