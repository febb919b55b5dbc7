"""
Report Exporter

This module writes figure datasets and acceptance summaries under the
output directory, as CSV for tables and JSON for structured results.
"""

import csv
import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .exceptions import ConfigError


@dataclass(frozen=True)
class Check:
    """One acceptance threshold and what was measured against it"""

    name: str
    value: Any
    threshold: str
    passed: bool

    def to_row(self) -> Dict[str, Any]:
        return {
            "check": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "passed": self.passed,
        }


class ReportExporter:
    """Writes datasets for one reproduce or sim run"""

    def __init__(self, output_dir: str = "data/output") -> None:
        """
        Initialize report exporter

        Args:
            output_dir: Output directory path
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def _target(self, filename: Optional[str], prefix: str, suffix: str) -> Path:
        if not filename:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            filename = f"{prefix}_{timestamp}{suffix}"
        output_path = self.output_dir / filename
        if output_path.exists() and output_path.is_dir():
            raise ConfigError(
                f"Output path is a directory, not a file: {output_path}. "
                f"Please remove the directory or use a different filename."
            )
        return output_path

    def export_frame(self, frame: pd.DataFrame, filename: Optional[str] = None) -> str:
        """
        Export a dataset to CSV

        Args:
            frame: Dataset
            filename: Output file name, None for auto-generation

        Returns:
            Output file path
        """
        output_path = self._target(filename, "dataset", ".csv")
        frame.to_csv(output_path, index=False)
        return str(output_path)

    def export_json(self, data: Dict[str, Any], filename: Optional[str] = None) -> str:
        """Export a structured result with sorted keys"""
        output_path = self._target(filename, "result", ".json")
        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(data, f, sort_keys=True, indent=2)
            f.write("\n")
        return str(output_path)

    def export_checks(self, checks: Sequence[Check], filename: Optional[str] = None) -> str:
        """
        Export acceptance checks to CSV

        Args:
            checks: Checks of one target
            filename: Output file name, None for auto-generation

        Returns:
            Output file path
        """
        output_path = self._target(filename, "checks", ".csv")
        with open(output_path, "w", newline="", encoding="utf-8") as csvfile:
            writer = csv.DictWriter(csvfile, fieldnames=self._get_check_fieldnames())
            writer.writeheader()
            for check in checks:
                writer.writerow(check.to_row())
        return str(output_path)

    def _get_check_fieldnames(self) -> List[str]:
        return ["check", "value", "threshold", "passed"]
