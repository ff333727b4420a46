"""
Run Session - seeded randomness and deterministic report files for one experiment run
"""

import csv
import io
import json
import logging
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np

from config import ExperimentConfig

logger = logging.getLogger(__name__)


class RunSession:
    """
    Holds the state shared by the stages of one subcommand run.

    Reports carry the config hash and never a timestamp, so the same config and seed produce
    byte-identical files.
    """

    def __init__(self, config: ExperimentConfig, subcommand: str):
        """
        Initialize the run session.

        Args:
            config: Validated experiment configuration
            subcommand: Name used as the report file prefix
        """
        self.config = config
        self.subcommand = subcommand
        self.config_hash = config.config_hash()
        self.output_dir = config.output_dir
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[Path] = []

    def rng(self, stream: int = 0) -> np.random.Generator:
        """Independent generator per stream, derived from the configured seed"""
        return np.random.default_rng([self.config.seed, stream])

    def report_path(self, suffix: str) -> Path:
        return self.output_dir / f"{self.subcommand}_{self.config_hash}.{suffix}"

    def write_json(self, results: Dict[str, Any]) -> Path:
        """Write results with the configuration they came from"""
        payload = {
            "subcommand": self.subcommand,
            "config_hash": self.config_hash,
            "config": {f.name: getattr(self.config, f.name) for f in fields(self.config) if f.name != "out"},
            "results": results,
        }
        text = json.dumps(payload, indent=2, default=str) + "\n"
        return self._write_atomic(self.report_path("json"), text)

    def write_csv(self, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        buffer.write(f"# {self.subcommand} config_hash={self.config_hash}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(value) for value in row])
        return self._write_atomic(self.report_path("csv"), buffer.getvalue())

    def _write_atomic(self, path: Path, text: str) -> Path:
        # Write atomically using temporary file
        temp_file = path.with_suffix(path.suffix + ".tmp")
        with open(temp_file, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        temp_file.replace(path)
        self.written.append(path)
        logger.info(f"Wrote report {path}")
        return path


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
