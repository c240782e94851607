from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from sharing_club import __version__

log = logging.getLogger(__name__)

# Ten significant digits keep the output byte-stable across runs.
FLOAT_FORMAT: str = "%.10g"


class TableFormat(Enum):
    """
    Enumerator for the output formats of tables.
    """
    CSV = "csv"
    JSON = "json"

    def __repr__(self) -> str:
        return self.value

    @property
    def suffix(self) -> str:
        return f".{self.value}"


def _plain(value: Any):
    """json.dumps hook for numpy values and enums."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Enum):
        return value.value
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_plain, allow_nan=True) + "\n"


def write_json(payload: Any, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload), encoding="utf-8")
    log.info("Wrote %s", path)
    return path


def write_table(frame: pd.DataFrame, path: Path, scenario_hash: str, fmt: TableFormat = TableFormat.CSV) -> Path:
    """
    Writes a table with a comment line naming the scenario it was computed from.

    :param frame: The table.
    :param path: Target path; its suffix is replaced by the format's.
    :param scenario_hash: Hash of the scenario (or spec file) behind the table.
    :param fmt: CSV, or JSON records.
    :return: The path written.
    """
    path = Path(path).with_suffix(fmt.suffix)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt is TableFormat.JSON:
        records = json.loads(frame.to_json(orient="records", double_precision=10))
        return write_json({"scenario": scenario_hash, "rows": records}, path)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(f"# scenario {scenario_hash}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    log.info("Wrote %s (%d rows)", path, len(frame))
    return path


def config_hash(config: dict) -> str:
    """SHA-256 of a config, independent of key order."""
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=_plain).encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """What produced a set of outputs. Holds no timestamps, so equal inputs give equal manifests."""
    command_line: list[str]
    config_hash: str
    seed: Optional[int] = None
    version: str = __version__
    outputs: list[str] = field(default_factory=list)

    def sidecar(self, output: Path) -> Path:
        output = Path(output)
        return output.with_name(output.name + ".manifest.json")

    def write(self, outputs: Sequence[Path]) -> list[Path]:
        """Writes one `<output>.manifest.json` next to each output."""
        manifest = RunManifest(list(self.command_line), self.config_hash, self.seed, self.version,
                               sorted(Path(p).name for p in outputs))
        return [write_json(asdict(manifest), self.sidecar(p)) for p in outputs]
