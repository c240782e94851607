from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Optional, Sequence

import numpy as np

from sharing_club.domain import (
    ClubParams, DistributionError, PeerProfile, Population, TypeDistribution
)
from sharing_club.utils import SUM_TOLERANCE, FloatArray


class ScenarioError(ValueError):
    """
    Custom error for invalid scenario parameters (Zipf exponents, shifts, rank couplings).
    """
    pass


def _ranks(s_max: int) -> FloatArray:
    return np.arange(1, s_max + 1, dtype=float)


@dataclass(frozen=True)
class ZipfSpec:
    """Truncated Zipf law g(s) = c * s^-beta over the ranks 1..s_max."""
    beta: float
    s_max: int

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ScenarioError(f"Zipf exponent must be finite and non-negative, got {self.beta!r}.")
        if isinstance(self.s_max, bool) or int(self.s_max) != self.s_max or self.s_max < 1:
            raise ScenarioError(f"s_max must be a positive integer, got {self.s_max!r}.")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "s_max", int(self.s_max))

    def weights(self) -> FloatArray:
        """Unnormalized weights s^-beta."""
        return _ranks(self.s_max) ** -self.beta

    @property
    def normalizer(self) -> float:
        """c = 1 / sum of s^-beta."""
        return 1.0 / float(self.weights().sum())


def zipf_distribution(spec: ZipfSpec) -> TypeDistribution:
    """The truncated Zipf distribution of `spec`."""
    return TypeDistribution(spec.weights() * spec.normalizer)


def zipf_norm(spec: ZipfSpec) -> float:
    """The 2-norm c * sqrt(sum of s^-2beta), i.e. the skewness of the Zipf law."""
    return spec.normalizer * math.sqrt(float((_ranks(spec.s_max) ** (-2.0 * spec.beta)).sum()))


class ShiftDirection(Enum):
    """
    Enumerator for which side of a mismatch carries the shifted distribution.
    """
    SUPPLY_LEAD = "supply_lead"
    DEMAND_LEAD = "demand_lead"

    def __repr__(self) -> str:
        return self.value

    def arrange(self, base: TypeDistribution, shifted: TypeDistribution) -> tuple[TypeDistribution, TypeDistribution]:
        """Returns (supply, demand) for this direction."""
        if self is ShiftDirection.DEMAND_LEAD:
            return base, shifted
        return shifted, base

    @classmethod
    def parse(cls, value: ShiftDirection | str) -> ShiftDirection:
        """Returns a ShiftDirection given its name or value."""
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ScenarioError(f"Unknown shift direction {value!r}; use one of {[d.value for d in cls]}.")


@dataclass(frozen=True)
class ShiftSpec:
    """A shift of delta ranks between supply and demand."""
    delta: int
    direction: ShiftDirection = ShiftDirection.DEMAND_LEAD

    def __post_init__(self):
        if isinstance(self.delta, bool) or int(self.delta) != self.delta:
            raise ScenarioError(f"Shift must be an integer number of ranks, got {self.delta!r}.")
        object.__setattr__(self, "delta", int(self.delta))
        object.__setattr__(self, "direction", ShiftDirection.parse(self.direction))

    @classmethod
    def from_fraction(cls, fraction: float, s_max: int, direction=ShiftDirection.DEMAND_LEAD) -> ShiftSpec:
        """Quantizes a shift given as a fraction of s_max, clipped to |delta| <= s_max - 1."""
        delta = int(round(fraction * s_max))
        delta = max(-(s_max - 1), min(s_max - 1, delta))
        return cls(delta, direction)

    def check(self, s_max: int):
        if abs(self.delta) >= s_max:
            raise ScenarioError(f"empty overlap: |delta| = {abs(self.delta)} must be below s_max = {s_max}")


def shifted_zipf(beta: float, s_max: int, delta: int) -> TypeDistribution:
    """
    The Zipf shape moved by `delta` ranks. For delta >= 0 the first delta ranks are empty and the law
    restarts at rank delta + 1; for delta < 0 the law is truncated to the first s_max + delta ranks.
    """
    ShiftSpec(delta).check(s_max)
    ranks = _ranks(s_max)
    weights = np.zeros(s_max)
    if delta >= 0:
        weights[delta:] = (ranks[delta:] - delta) ** -beta
    else:
        weights[:s_max + delta] = ranks[:s_max + delta] ** -beta
    return TypeDistribution.from_weights(weights)


def shifted_demand(g: TypeDistribution, beta: float, shift: ShiftSpec) -> tuple[TypeDistribution, TypeDistribution]:
    """
    Builds a mismatched (supply, demand) pair from a Zipf supply `g` and a shift.

    :param g: The base Zipf distribution.
    :param beta: Its exponent, reused for the shifted side.
    :param shift: The shift and which side leads.
    :return: The (supply, demand) pair.
    """
    shift.check(g.s_max)
    if not beta >= 0:
        raise ScenarioError("Zipf exponent must be non-negative.")
    shifted = g if shift.delta == 0 else shifted_zipf(beta, g.s_max, shift.delta)
    return shift.direction.arrange(g, shifted)


@dataclass(frozen=True, eq=False)
class RankCoupling:
    """Joint distribution phi(r, s) of p-rank r (rows) and s-rank s (columns), with its r-marginal f(r)."""
    joint: FloatArray
    marginal_f: TypeDistribution

    def __post_init__(self):
        joint = np.array(self.joint, dtype=float)
        s_max = self.marginal_f.s_max
        if joint.shape != (s_max, s_max):
            raise ScenarioError(f"Coupling must be {s_max}x{s_max}, got shape {joint.shape}.")
        if (joint < 0).any():
            raise ScenarioError("Coupling entries must be non-negative.")
        if abs(joint.sum() - 1.0) > SUM_TOLERANCE:
            raise ScenarioError(f"Coupling sums to {joint.sum()!r}, not 1.")
        if np.abs(joint.sum(axis=1) - self.marginal_f.probs).max() > SUM_TOLERANCE:
            raise ScenarioError("Row sums of the coupling must equal the p-rank marginal f(r).")
        joint.setflags(write=False)
        object.__setattr__(self, "joint", joint)

    @classmethod
    def from_joint(cls, joint: FloatArray) -> RankCoupling:
        """Factory method that derives f(r) from the row sums of phi."""
        joint = np.asarray(joint, dtype=float)
        try:
            marginal = TypeDistribution(joint.sum(axis=1))
        except DistributionError as e:
            raise ScenarioError(f"Invalid coupling: {e}")
        return cls(joint, marginal)

    @classmethod
    def perfect_following(cls, f: TypeDistribution) -> RankCoupling:
        """Factory method for supply that follows demand exactly: phi(r, s) = 0 for r != s."""
        return cls(np.diag(f.probs), f)

    @property
    def s_max(self) -> int:
        return self.marginal_f.s_max


def demand_from_pranks(f_i: TypeDistribution, coupling: RankCoupling) -> TypeDistribution:
    """
    Converts a peer's demand over p-ranks into a demand over s-ranks: h_i(s) = sum_r phi(r, s) / f(r) * f_i(r).

    :param f_i: The peer's demand distribution over p-ranks.
    :param coupling: The joint distribution of p-rank and s-rank.
    :return: The peer's demand distribution over s-ranks.
    """
    if f_i.s_max != coupling.s_max:
        raise ScenarioError(f"Demand over {f_i.s_max} p-ranks cannot use a coupling over {coupling.s_max}.")
    f = coupling.marginal_f.probs
    undefined = (f_i.probs > 0) & (f <= 0)
    if undefined.any():
        rank = int(np.argmax(undefined)) + 1
        raise ScenarioError(f"undefined conversion: f_i puts mass on p-rank {rank} where f(r) = 0")
    ratio = np.divide(f_i.probs, f, out=np.zeros_like(f), where=f > 0)
    return TypeDistribution(ratio @ coupling.joint)


def population_from_pranks(pop: Population, coupling: RankCoupling) -> Population:
    """Reads every peer's demand as a p-rank distribution and converts it to s-ranks."""
    peers = [
        PeerProfile(p.payload_size, p.supply, p.demand_rate, demand_from_pranks(p.demand, coupling))
        for p in pop
    ]
    return Population(peers, pop.type_labels)


class MatchStatistics(NamedTuple):
    inner: float
    norm_h: float
    norm_g: float
    similarity: float


def match_statistics(h: TypeDistribution, g: TypeDistribution) -> MatchStatistics:
    """
    Goodness of match between demand and supply: sum h*g = ||h|| * ||g|| * similarity.

    :param h: The demand distribution.
    :param g: The supply distribution.
    :return: The inner product, both 2-norms and the normalized inner product.
    """
    inner = h.inner(g)
    norm_h, norm_g = h.norm(), g.norm()
    return MatchStatistics(inner, norm_h, norm_g, inner / (norm_h * norm_g))


def split_k_rho(k_rho: float) -> tuple[int, float]:
    """Splits a product k*rho into a whole payload size and a search efficiency in (0, 1]."""
    if not (math.isfinite(k_rho) and k_rho > 0):
        raise ScenarioError(f"k*rho must be positive, got {k_rho!r}.")
    payload_size = max(1, math.ceil(k_rho))
    return payload_size, k_rho / payload_size


def homogeneous_population(n_peers: int, supply: TypeDistribution, demand: TypeDistribution,
                           payload_size: int = 1, demand_rate: float = 1.0,
                           type_labels: Optional[Sequence[str]] = None) -> Population:
    """N identical peers sharing one supply and one demand distribution."""
    if n_peers < 1:
        raise ScenarioError("A population needs at least one peer.")
    peer = PeerProfile(payload_size, supply, demand_rate, demand)
    return Population([peer] * int(n_peers), type_labels)


def zipf_population(zipf: ZipfSpec, n_peers: int, payload_size: int = 1,
                    shift: Optional[ShiftSpec] = None) -> Population:
    """
    N identical peers whose supply and demand are a Zipf law, perfectly matched or shifted.

    :param zipf: The Zipf law of the base side.
    :param n_peers: The number of peers N.
    :param payload_size: Every peer's K_i.
    :param shift: Optional mismatch; perfect match when None.
    :return: The population.
    """
    g = zipf_distribution(zipf)
    supply, demand = (g, g) if shift is None else shifted_demand(g, zipf.beta, shift)
    return homogeneous_population(n_peers, supply, demand, payload_size)


class ScenarioKind(Enum):
    """
    Enumerator for the bundled parametric scenario families.
    """
    ZIPF_PERFECT = "zipf_perfect"
    ZIPF_SHIFT = "zipf_shift"

    def __repr__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Scenario:
    """A homogeneous Zipf club: N identical peers with payload K, under `params`."""
    kind: ScenarioKind
    zipf: ZipfSpec
    n_peers: int
    payload_size: int
    params: ClubParams
    shift: Optional[ShiftSpec] = None
    initial_frac: float = 0.5
    self_supply: bool = False

    def __post_init__(self):
        if self.kind is ScenarioKind.ZIPF_SHIFT and self.shift is None:
            raise ScenarioError("A zipf_shift scenario needs a shift.")
        if self.kind is ScenarioKind.ZIPF_PERFECT and self.shift is not None and self.shift.delta != 0:
            raise ScenarioError("A zipf_perfect scenario cannot carry a non-zero shift.")
        if self.shift is not None:
            self.shift.check(self.zipf.s_max)

    @property
    def k_rho(self) -> float:
        return self.payload_size * self.params.search_efficiency

    def population(self, n_peers: Optional[int] = None) -> Population:
        """The materialized population (N peers, or `n_peers` identical representatives)."""
        shift = self.shift if self.kind is ScenarioKind.ZIPF_SHIFT else None
        return zipf_population(self.zipf, n_peers or self.n_peers, self.payload_size, shift)
