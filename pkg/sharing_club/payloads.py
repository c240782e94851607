from __future__ import annotations

import abc
from enum import Enum

import numpy as np

from sharing_club.domain import Population


class BasePayloadSampler(abc.ABC):
    """Abstract class for every way of materializing the chunks a peer brings to the club."""

    @abc.abstractmethod
    def draw_peer(self, payload_size: int, supply: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Copies of each type held by one peer."""
        pass

    def draw(self, pop: Population, rng: np.random.Generator) -> np.ndarray:
        """
        Draws every payload of a population, peer by peer in index order.

        :param pop: The population.
        :param rng: The random generator.
        :return: An (N, s_max) integer matrix of copies per peer and type.
        """
        counts = np.zeros((len(pop), pop.s_max), dtype=np.int64)
        for i, peer in enumerate(pop):
            counts[i] = self.draw_peer(peer.payload_size, peer.supply.probs, rng)
        return counts

    def __repr__(self) -> str:
        return self.__class__.__name__


class FixedMultinomial(BasePayloadSampler):
    """Exactly K_i chunks, each type drawn i.i.d. from g_i."""

    def draw_peer(self, payload_size: int, supply: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.multinomial(payload_size, supply)


class PoissonCounts(BasePayloadSampler):
    """Independent Poisson(K_i * g_i(s)) copies of each type, so K_i only holds on average."""

    def draw_peer(self, payload_size: int, supply: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.poisson(payload_size * supply)


class PayloadMode(Enum):
    """Enumerator that sum up the payload samplers."""
    FIXED_MULTINOMIAL = FixedMultinomial
    POISSON = PoissonCounts

    def __repr__(self):
        return self.name.lower()

    @property
    def label(self) -> str:
        return self.name.lower()

    def draw(self, pop: Population, rng: np.random.Generator) -> np.ndarray:
        """To use double dispatch over the samplers."""
        return self.value().draw(pop, rng)

    @classmethod
    def parse(cls, mode: PayloadMode | str) -> PayloadMode:
        """Returns a PayloadMode given its lowercase label."""
        if isinstance(mode, cls):
            return mode
        found = {m.label: m for m in cls}.get(str(mode).lower())
        if found is None:
            raise ValueError(f"Unknown payload mode {mode!r}; use one of {[m.label for m in cls]}.")
        return found
