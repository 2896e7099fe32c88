"""Check records and their JSON / CSV serialisation."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BoundCheck:
    """One inequality evaluated on many instances.

    ``margin = rhs - lhs`` per instance.  For bounds with a non-explicit
    constant, ``rhs`` already includes the fitted constant and ``fitted`` holds it.
    """

    name: str
    lhs: list
    rhs: list
    fitted: float | None = None
    passed: bool | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lhs = [float(v) for v in np.ravel(self.lhs)]
        self.rhs = [float(v) for v in np.ravel(self.rhs)]
        if len(self.lhs) != len(self.rhs):
            raise ValueError("lhs and rhs must have equal length")
        if self.passed is None:
            self.passed = bool(all(m >= 0 for m in self.margins))
        self.passed = bool(self.passed)

    @property
    def margins(self) -> list:
        return [r - l for l, r in zip(self.lhs, self.rhs)]

    @property
    def worst_margin(self) -> float:
        m = self.margins
        return min(m) if m else math.inf

    @property
    def instances(self) -> int:
        return len(self.lhs)

    def as_dict(self) -> dict:
        return {"name": self.name, "instances": self.instances, "lhs": self.lhs,
                "rhs": self.rhs, "margin": self.margins, "worst_margin": self.worst_margin,
                "fitted_constant": self.fitted, "pass": self.passed,
                "info": _jsonable(self.info)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass
class VerificationReport:
    checks: list = field(default_factory=list)

    def add(self, *checks: BoundCheck) -> None:
        self.checks.extend(checks)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failing(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump([c.as_dict() for c in self.checks], fh, indent=1)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["name", "instances", "worst_margin", "fitted_constant", "pass"])
            for c in self.checks:
                wr.writerow([c.name, c.instances, repr(c.worst_margin),
                             "" if c.fitted is None else repr(c.fitted), c.passed])
