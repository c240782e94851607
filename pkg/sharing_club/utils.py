from enum import Enum
from typing import Iterable, Union

import numpy as np

# Personal Typing.
FloatArray = np.ndarray
# perm[old_index] = new_index, 0-based (rank r is stored at index r - 1).
Permutation = np.ndarray
PeerSubset = Union[Iterable[int], np.ndarray, None]

# Absolute tolerance on the total mass of a distribution held in memory.
SUM_TOLERANCE: float = 1e-9
# Looser tolerance accepted from spec files before exact renormalization.
INPUT_SUM_TOLERANCE: float = 1e-6
# Sums this close to 1 are summation round-off and are kept as given.
ROUNDOFF_TOLERANCE: float = 4 * float(np.finfo(float).eps)
# exp() underflows below this exponent; failure rates there are taken as 0.
EXP_FLOOR: float = -745.0


def as_readonly(values, dtype=float) -> np.ndarray:
    """Returns a private, read-only copy of `values` as a numpy array."""
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def invert_permutation(perm: Permutation) -> Permutation:
    """Returns the inverse of a 0-based permutation."""
    perm = np.asarray(perm, dtype=int)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    return inverse


def ranking(values: np.ndarray) -> tuple[np.ndarray, Permutation]:
    """
    Sorts `values` in descending order, breaking ties by ascending index.

    :param values: A one dimensional array of scores.
    :return: The order (new position -> old index) and the permutation (old index -> new position).
    """
    order = np.argsort(-np.asarray(values, dtype=float), kind="stable")
    return order, invert_permutation(order)


class Phase(Enum):
    """
    Enumerator for the direction of the average force acting on a club state.
    """
    GROWTH = "growth"
    SHRINKAGE = "shrinkage"
    BOUNDARY = "boundary"

    def __repr__(self) -> str:
        return self.value


class Verdict(Enum):
    """
    Enumerator for the stability verdict of an empty club.
    """
    GROWTH = "growth"
    CRITICAL = "critical"
    STABLE_EMPTY = "stable empty club"

    def __repr__(self) -> str:
        return self.value
