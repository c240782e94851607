from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from sharing_club.utils import (
    ROUNDOFF_TOLERANCE, SUM_TOLERANCE, FloatArray, PeerSubset, Permutation, as_readonly, ranking
)

log = logging.getLogger(__name__)


class DistributionError(ValueError):
    """
    Custom error for invalid distributions, peer profiles, populations or club parameters.
    """
    pass


class NoSupplyMassError(DistributionError):
    """
    Custom error raised when a group of peers carries no payload to aggregate.
    """
    pass


class TypeDistribution:
    """A probability mass function over the chunk-type ranks 1..s_max, stored 0-based."""

    def __init__(self, probs: Sequence[float] | FloatArray, tolerance: float = SUM_TOLERANCE):
        arr = np.array(probs, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DistributionError("A distribution needs a one dimensional, non-empty list of probabilities.")
        if not np.isfinite(arr).all():
            raise DistributionError("Probabilities must be finite.")
        if (arr < 0).any():
            raise DistributionError(f"Negative probability at rank {int(np.argmax(arr < 0)) + 1}.")
        total = float(arr.sum())
        if abs(total - 1.0) > tolerance:
            raise DistributionError(f"Probabilities sum to {total!r}, not 1 (tolerance {tolerance}).")
        if abs(total - 1.0) > ROUNDOFF_TOLERANCE:
            arr = arr / total
        arr.setflags(write=False)
        self.probs: FloatArray = arr

    @classmethod
    def uniform(cls, s_max: int) -> TypeDistribution:
        """Factory method for the uniform distribution over `s_max` types."""
        if s_max < 1:
            raise DistributionError("s_max must be a positive integer.")
        return cls(np.full(s_max, 1.0 / s_max))

    @classmethod
    def point_mass(cls, rank: int, s_max: int) -> TypeDistribution:
        """Factory method for a distribution concentrated on a single rank (1-based)."""
        if not 1 <= rank <= s_max:
            raise DistributionError(f"Rank {rank} outside 1..{s_max}.")
        probs = np.zeros(s_max)
        probs[rank - 1] = 1.0
        return cls(probs)

    @classmethod
    def from_weights(cls, weights: Sequence[float] | FloatArray) -> TypeDistribution:
        """Factory method that normalizes non-negative weights into a distribution."""
        w = np.asarray(weights, dtype=float)
        if (w < 0).any():
            raise DistributionError("Weights must be non-negative.")
        total = w.sum()
        if not total > 0:
            raise DistributionError("Weights carry no mass.")
        return cls(w / total)

    @property
    def s_max(self) -> int:
        return int(self.probs.size)

    def __len__(self) -> int:
        return self.s_max

    def __getitem__(self, index):
        return self.probs.__getitem__(index)

    def __iter__(self) -> Iterator[float]:
        return iter(self.probs.tolist())

    def prob(self, rank: int) -> float:
        """Probability of the 1-based rank `rank`."""
        return float(self.probs[rank - 1])

    def __eq__(self, other):
        # Self check
        if other is self:
            return True
        # Null check
        if other is None:
            return False
        if not isinstance(other, TypeDistribution):
            return False
        other: TypeDistribution
        return self.s_max == other.s_max and bool((self.probs == other.probs).all())

    def __hash__(self):
        return hash(tuple(self.probs.tolist()))

    def __repr__(self) -> str:
        shown = ", ".join(f"{p:.4g}" for p in self.probs[:8])
        tail = ", ..." if self.s_max > 8 else ""
        return f"TypeDistribution([{shown}{tail}], s_max={self.s_max})"

    def norm(self) -> float:
        """The 2-norm of the distribution."""
        return float(np.sqrt(self.probs @ self.probs))

    def inner(self, other: TypeDistribution) -> float:
        """Inner product with another distribution over the same types."""
        _check_same_types(self, other)
        return float(self.probs @ other.probs)

    def support(self) -> np.ndarray:
        """The 1-based ranks with positive probability."""
        return np.flatnonzero(self.probs > 0) + 1

    def permuted(self, order: np.ndarray) -> TypeDistribution:
        """Relabels the types so that new index j holds old index `order[j]`."""
        return TypeDistribution(self.probs[np.asarray(order, dtype=int)])


def _check_same_types(*distributions: TypeDistribution):
    sizes = {dist.s_max for dist in distributions}
    if len(sizes) > 1:
        raise DistributionError(f"Distributions over different type domains: s_max in {sorted(sizes)}.")


def mixture(distributions: Sequence[TypeDistribution], weights: Sequence[float] | FloatArray) -> TypeDistribution:
    """
    Weighted average of distributions over the same types.

    :param distributions: The distributions to mix.
    :param weights: Non-negative weights, one per distribution.
    :return: The normalized mixture.
    """
    _check_same_types(*distributions)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not total > 0:
        raise DistributionError("Mixture weights carry no mass.")
    stacked = np.vstack([dist.probs for dist in distributions])
    return TypeDistribution(w @ stacked / total)


@dataclass(frozen=True)
class PeerProfile:
    """One peer: payload size K_i, supply g_i, demand rate M_i and demand h_i."""
    payload_size: int
    supply: TypeDistribution
    demand_rate: float
    demand: TypeDistribution

    def __post_init__(self):
        if isinstance(self.payload_size, bool) or int(self.payload_size) != self.payload_size:
            raise DistributionError(f"Payload size must be an integer number of chunks, got {self.payload_size!r}.")
        if self.payload_size < 0:
            raise DistributionError("Payload size must be non-negative.")
        if not self.demand_rate > 0:
            raise DistributionError("Demand rate must be positive.")
        _check_same_types(self.supply, self.demand)
        object.__setattr__(self, "payload_size", int(self.payload_size))
        object.__setattr__(self, "demand_rate", float(self.demand_rate))

    @property
    def s_max(self) -> int:
        return self.supply.s_max

    def permuted(self, order: np.ndarray) -> PeerProfile:
        return PeerProfile(self.payload_size, self.supply.permuted(order), self.demand_rate, self.demand.permuted(order))


class Population:
    """Class that represents the N peers of a club, with an optional label per type."""

    def __init__(self, peers: Sequence[PeerProfile], type_labels: Optional[Sequence[str]] = None):
        self.peers: tuple[PeerProfile, ...] = tuple(peers)
        if not self.peers:
            raise DistributionError("A population needs at least one peer.")
        _check_same_types(*(p.supply for p in self.peers))

        # Labels are for reporting only
        self.type_labels: Optional[tuple[str, ...]] = tuple(type_labels) if type_labels is not None else None
        if self.type_labels is not None and len(self.type_labels) != self.s_max:
            raise DistributionError(f"{len(self.type_labels)} type labels for {self.s_max} types.")

        # Cached matrices, one row per peer
        self.payload_sizes: np.ndarray = as_readonly([p.payload_size for p in self.peers], dtype=np.int64)
        self.demand_rates: FloatArray = as_readonly([p.demand_rate for p in self.peers])
        self.supply_matrix: FloatArray = as_readonly(np.vstack([p.supply.probs for p in self.peers]))
        self.demand_matrix: FloatArray = as_readonly(np.vstack([p.demand.probs for p in self.peers]))

        if not self.mean_payload > 0:
            raise DistributionError("Mean payload k must be positive: every peer has an empty payload.")

    def __len__(self) -> int:
        return len(self.peers)

    def __iter__(self) -> Iterator[PeerProfile]:
        return iter(self.peers)

    def __getitem__(self, index) -> PeerProfile:
        return self.peers[index]

    def __eq__(self, other):
        if other is self:
            return True
        if not isinstance(other, Population):
            return False
        return self.peers == other.peers and self.type_labels == other.type_labels

    def __hash__(self):
        return hash((self.peers, self.type_labels))

    def __copy__(self) -> Population:
        new = self.__class__.__new__(self.__class__)
        new.__dict__.update(self.__dict__)
        return new

    def __repr__(self) -> str:
        return f"Population(N={len(self)}, s_max={self.s_max}, k={self.mean_payload:.6g})"

    @property
    def s_max(self) -> int:
        return self.peers[0].s_max

    @property
    def mean_payload(self) -> float:
        """k = sum of K_i over N."""
        return float(self.payload_sizes.sum()) / len(self)

    def label(self, index: int) -> str:
        """Reporting label of the 0-based type index."""
        if self.type_labels is None:
            return str(index + 1)
        return self.type_labels[index]

    def contributors(self) -> Population:
        """
        Population without the free riders (K_i = 0). N shrinks and k grows while N * k stays the same.

        :return: A population of contributing peers only.
        """
        kept = [p for p in self.peers if p.payload_size > 0]
        if len(kept) == len(self.peers):
            return self
        log.debug("Dropping %d free riders out of %d peers", len(self.peers) - len(kept), len(self.peers))
        return Population(kept, self.type_labels)

    def permuted(self, order: np.ndarray) -> Population:
        """Relabels the types of every peer so that new index j holds old index `order[j]`."""
        order = np.asarray(order, dtype=int)
        labels = None if self.type_labels is None else [self.type_labels[i] for i in order]
        return Population([p.permuted(order) for p in self.peers], labels)


@dataclass(frozen=True)
class ClubParams:
    """Shared club parameters: search efficiency rho and request size d."""
    search_efficiency: float
    request_size: int = 1

    def __post_init__(self):
        if not 0 < self.search_efficiency <= 1:
            raise DistributionError(f"Search efficiency must lie in (0, 1], got {self.search_efficiency!r}.")
        if isinstance(self.request_size, bool) or int(self.request_size) != self.request_size:
            raise DistributionError(f"Request size must be an integer, got {self.request_size!r}.")
        if self.request_size < 1:
            raise DistributionError("Request size must be at least 1.")
        object.__setattr__(self, "search_efficiency", float(self.search_efficiency))
        object.__setattr__(self, "request_size", int(self.request_size))


def _subset_indices(pop: Population, subset: PeerSubset) -> np.ndarray:
    """Sorted unique peer indices of `subset` (all peers when None)."""
    if subset is None:
        return np.arange(len(pop))
    indices = np.unique(np.fromiter((int(i) for i in subset), dtype=int))
    if indices.size and (indices[0] < 0 or indices[-1] >= len(pop)):
        raise DistributionError(f"Peer index out of range 0..{len(pop) - 1}.")
    return indices


def aggregate_supply(pop: Population, subset: PeerSubset = None) -> TypeDistribution:
    """
    Total payload of a group of peers: the K_i-weighted mixture of their supply distributions.

    :param pop: The population.
    :param subset: Peer indices of the group (every peer when None).
    :return: The aggregate supply distribution of the group.
    """
    indices = _subset_indices(pop, subset)
    weights = pop.payload_sizes[indices].astype(float)
    if indices.size == 0 or not weights.sum() > 0:
        raise NoSupplyMassError("no supply mass")
    return TypeDistribution(weights @ pop.supply_matrix[indices] / weights.sum())


def aggregate_demand(pop: Population, subset: PeerSubset = None) -> TypeDistribution:
    """
    Aggregate demand of a group of peers: the M_i-weighted mixture of their demand distributions.

    :param pop: The population.
    :param subset: Peer indices of the group (every peer when None).
    :return: The aggregate demand distribution of the group.
    """
    indices = _subset_indices(pop, subset)
    if indices.size == 0:
        raise DistributionError("Aggregate demand of an empty group is undefined.")
    weights = pop.demand_rates[indices]
    return TypeDistribution(weights @ pop.demand_matrix[indices] / weights.sum())


def canonicalize_sranks(pop: Population) -> tuple[Population, Permutation]:
    """
    Relabels the types so that the aggregate supply is non-increasing, i.e. labels become s-ranks.
    Ties keep the original label order.

    :param pop: The population.
    :return: The relabelled population and the permutation (old index -> new s-rank index).
    """
    order, perm = ranking(aggregate_supply(pop).probs)
    if (perm == np.arange(perm.size)).all():
        return copy.copy(pop), perm
    return pop.permuted(order), perm


def popularity_ranks(pop: Population) -> Permutation:
    """
    Ranks the types by descending aggregate demand (p-rank), ties broken by s-rank.

    :param pop: The population, labelled by s-rank.
    :return: The permutation (type index -> p-rank index).
    """
    _, perm = ranking(aggregate_demand(pop).probs)
    return perm
