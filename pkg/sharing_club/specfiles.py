from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from sharing_club.analytics import MeanFieldModel
from sharing_club.domain import ClubParams, DistributionError, PeerProfile, Population, TypeDistribution
from sharing_club.scenarios import (
    Scenario, ScenarioError, ScenarioKind, ShiftDirection, ShiftSpec, ZipfSpec, split_k_rho
)
from sharing_club.utils import INPUT_SUM_TOLERANCE

log = logging.getLogger(__name__)


class SpecFileError(ValueError):
    """
    Custom error for a spec file that is not valid JSON or does not match its schema.
    """
    pass


def _check_pmf(values: list[float]) -> list[float]:
    if not values:
        raise ValueError("distribution is empty")
    if any(v < 0 for v in values):
        raise ValueError("distribution has negative entries")
    if abs(sum(values) - 1.0) > INPUT_SUM_TOLERANCE:
        raise ValueError(f"distribution sums to {sum(values)!r}, not 1")
    return values


class PeerEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    K: int = Field(ge=0)
    M: float = Field(gt=0)
    g: list[float]
    h: list[float]

    @field_validator("g", "h")
    @classmethod
    def check_distribution(cls, values: list[float]) -> list[float]:
        return _check_pmf(values)


class PopulationFile(BaseModel):
    """A club given peer by peer."""
    model_config = ConfigDict(extra="forbid")

    types: list[str] = Field(min_length=1)
    rho: float = Field(gt=0, le=1)
    d: int = Field(default=1, ge=1)
    peers: list[PeerEntry] = Field(min_length=1)

    @model_validator(mode="after")
    def check_type_counts(self) -> PopulationFile:
        s_max = len(self.types)
        for i, peer in enumerate(self.peers):
            if len(peer.g) != s_max or len(peer.h) != s_max:
                raise ValueError(f"peer {i} has {len(peer.g)} supply and {len(peer.h)} demand entries "
                                 f"for {s_max} types")
        return self

    def population(self) -> Population:
        peers = [PeerProfile(p.K, TypeDistribution(p.g, INPUT_SUM_TOLERANCE), p.M,
                             TypeDistribution(p.h, INPUT_SUM_TOLERANCE)) for p in self.peers]
        return Population(peers, self.types)

    def params(self) -> ClubParams:
        return ClubParams(self.rho, self.d)


class ScenarioFile(BaseModel):
    """A homogeneous Zipf club given by its parameters."""
    model_config = ConfigDict(extra="forbid")

    kind: Literal["zipf_perfect", "zipf_shift"]
    beta: float = Field(ge=0)
    s_max: int = Field(ge=1)
    delta: int = 0
    direction: Literal["supply_lead", "demand_lead"] = "demand_lead"
    N: int = Field(ge=1)
    k: float = Field(gt=0)
    rho: float = Field(gt=0, le=1)
    d: int = Field(default=1, ge=1)
    initial_frac: Optional[float] = Field(default=None, ge=0, le=1)
    self_supply: bool = False

    @model_validator(mode="after")
    def check_shift_kind(self) -> ScenarioFile:
        if self.kind == "zipf_perfect" and self.delta != 0:
            raise ValueError("a zipf_perfect scenario takes no delta")
        return self

    @property
    def whole_chunks(self) -> bool:
        return float(self.k).is_integer()

    def scenario(self) -> Scenario:
        """
        The scenario of the file. A fractional k only matters through k*rho, which is split into a whole
        payload size and a search efficiency; such a club cannot be simulated chunk by chunk.
        """
        kind = ScenarioKind(self.kind)
        shift = ShiftSpec(self.delta, ShiftDirection.parse(self.direction)) if kind is ScenarioKind.ZIPF_SHIFT else None
        if self.whole_chunks:
            payload_size, rho = int(self.k), self.rho
        else:
            payload_size, rho = split_k_rho(self.k * self.rho)
        return Scenario(
            kind=kind, zipf=ZipfSpec(self.beta, self.s_max), n_peers=self.N, payload_size=payload_size,
            params=ClubParams(rho, self.d), shift=shift,
            initial_frac=0.5 if self.initial_frac is None else self.initial_frac, self_supply=self.self_supply,
        )


def scenario_population(spec: ScenarioFile) -> Population:
    """The N identical peers of a scenario file."""
    return spec.scenario().population()


@dataclass(frozen=True, eq=False)
class SpecBundle:
    """A loaded spec file and the domain objects built from it."""
    path: Path
    content_hash: str
    population: Population
    params: ClubParams
    scenario: Optional[Scenario] = None
    # False when a scenario file gives a fractional k
    whole_chunks: bool = True

    @property
    def model(self) -> MeanFieldModel:
        if self.scenario is not None:
            return MeanFieldModel.from_scenario(self.scenario)
        return MeanFieldModel(self.population, self.params)

    @property
    def initial_frac(self) -> float:
        return 0.5 if self.scenario is None else self.scenario.initial_frac

    @property
    def self_supply(self) -> bool:
        return False if self.scenario is None else self.scenario.self_supply


def _source_line(text: str, loc: tuple[Union[str, int], ...]) -> Optional[int]:
    """
    Best-effort 1-based line of the field at `loc`: each key is searched below its parent,
    skipping as many earlier occurrences as the list index in front of it.
    """
    lines = text.splitlines()
    start, skip, found = 0, 0, None
    for part in loc:
        if isinstance(part, int):
            skip = part
            continue
        needle = f'"{part}"'
        hits = [j for j in range(start, len(lines)) if needle in lines[j]]
        if len(hits) <= skip:
            return found
        found = hits[skip]
        start, skip = found, 0
    return None if found is None else found + 1


def _schema_message(path: Path, text: str, error: ValidationError) -> str:
    first = error.errors()[0]
    loc = tuple(first["loc"])
    where = ".".join(str(part) for part in loc) or "<root>"
    line = _source_line(text, loc)
    prefix = f"{path}:{line}" if line is not None else str(path)
    more = f" (and {error.error_count() - 1} more)" if error.error_count() > 1 else ""
    return f"{prefix}: {where}: {first['msg']}{more}"


def load_spec(path: Union[str, Path]) -> SpecBundle:
    """
    Loads a population spec file or a scenario spec file, told apart by their keys.

    :param path: Path of the JSON file.
    :return: The bundle of domain objects, with the SHA-256 of the file bytes.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise SpecFileError(f"{path}: cannot read spec file: {e.strerror}")
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise SpecFileError(f"{path}: not UTF-8 text at byte {e.start}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecFileError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    if not isinstance(data, dict):
        raise SpecFileError(f"{path}:1: a spec file must hold a JSON object")

    content_hash = hashlib.sha256(raw).hexdigest()
    try:
        if "peers" in data:
            spec = PopulationFile.model_validate(data)
            bundle = SpecBundle(path, content_hash, spec.population(), spec.params())
        elif "kind" in data:
            spec = ScenarioFile.model_validate(data)
            scenario = spec.scenario()
            bundle = SpecBundle(path, content_hash, scenario.population(), scenario.params, scenario,
                                spec.whole_chunks)
        else:
            raise SpecFileError(f"{path}: neither a population file (\"peers\") nor a scenario file (\"kind\")")
    except ValidationError as e:
        raise SpecFileError(_schema_message(path, text, e))
    except (DistributionError, ScenarioError) as e:
        raise SpecFileError(f"{path}: {e}")
    log.debug("Loaded %s (%s)", path, content_hash[:12])
    return bundle


def bundled(name: str) -> Path:
    """Path of a spec file shipped in the package data directory."""
    return Path(str(resources.files("sharing_club").joinpath("data", name)))
