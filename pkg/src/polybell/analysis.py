"""Visibility thresholds and significance of observed violations."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import BellExpression, CorrelationTable, Scenario, evaluate
from .errors import InsufficientData, InvalidArgument, NoViolationPossible
from .models import QuantumModel, correlations_of, maximally_mixed

CSV_HEADER = ("a_setting", "b_setting", "a_outcome", "b_outcome", "count")


def white_noise_correlations(model: QuantumModel) -> CorrelationTable:
    """Correlations of the model's measurements on the maximally mixed state."""
    return correlations_of(maximally_mixed(model))


@dataclass(frozen=True)
class VisibilityReport:
    expression: str
    bound_name: str
    bound: float
    target: float
    white: float
    threshold: float
    orientation: str  # "exceeds" or "falls-below"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def visibility_from_values(bound: float, target: float, white: float, expression: str = "",
                           bound_name: str = "") -> VisibilityReport:
    """Solve ``v * target + (1 - v) * white = bound``."""
    den = target - white
    if abs(den) <= 1e-12 * max(1.0, abs(target), abs(white)):
        raise InvalidArgument("target and white-noise values coincide")
    orientation = "exceeds" if den > 0 else "falls-below"
    v = (bound - white) / den
    if v >= 1.0:
        raise NoViolationPossible(
            f"target value {target:.6g} does not get past the bound {bound:.6g}")
    if v < 0.0:
        raise InvalidArgument(f"white noise ({white:.6g}) already violates the bound {bound:.6g}")
    return VisibilityReport(expression, bound_name, bound, target, white, v, orientation)


def visibility_threshold(expr: BellExpression, target: CorrelationTable, white: CorrelationTable,
                         bound: float, bound_name: str = "") -> VisibilityReport:
    """Smallest weight of the target in a mixture with white noise that still violates ``bound``."""
    return visibility_from_values(bound, evaluate(expr, target), evaluate(expr, white),
                                  expr.name, bound_name)


@dataclass
class CountData:
    """Event counts per setting pair, arrays of shape ``(r_a, r_b)``."""

    scenario: Scenario
    counts: dict[tuple[int, int], np.ndarray]

    def __post_init__(self):
        data = {}
        for key, c in self.counts.items():
            if key not in self.scenario.pairs:
                raise InvalidArgument(f"setting pair {key} not in the scenario")
            a = np.asarray(c)
            if a.shape != self.scenario.block_shape(*key):
                raise InvalidArgument(f"counts for {key} have shape {a.shape}")
            if np.any(a < 0) or np.any(a != np.round(a)):
                raise InvalidArgument(f"counts for {key} must be non-negative integers")
            data[key] = a.astype(np.int64)
        self.counts = data

    def total(self, mu: int, nu: int) -> int:
        c = self.counts.get((mu, nu))
        return 0 if c is None else int(c.sum())

    @classmethod
    def from_table(cls, table: CorrelationTable, shots: int | Mapping[tuple[int, int], int],
                   seed: int | np.random.Generator | None = None) -> "CountData":
        """Multinomial sample of ``shots`` events per setting pair."""
        rng = np.random.default_rng(seed)
        counts = {}
        for key in table.scenario.pairs:
            n = shots if isinstance(shots, int) else shots[key]
            b = table.block(*key)
            counts[key] = rng.multinomial(n, b.ravel() / b.sum()).reshape(b.shape)
        return cls(table.scenario, counts)

    @classmethod
    def from_csv(cls, path: str | Path, scenario: Scenario) -> "CountData":
        counts = {key: np.zeros(scenario.block_shape(*key), dtype=np.int64) for key in scenario.pairs}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_HEADER:
                raise InvalidArgument(f"expected CSV header {','.join(CSV_HEADER)}")
            for line, row in enumerate(reader, start=2):
                try:
                    mu, nu, k, l, n = (int(row[h]) for h in CSV_HEADER)
                except (TypeError, ValueError) as exc:
                    raise InvalidArgument(f"line {line}: {exc}") from exc
                if (mu, nu) not in counts:
                    raise InvalidArgument(f"line {line}: setting pair {(mu, nu)} out of range")
                ra, rb = scenario.block_shape(mu, nu)
                if not (1 <= k <= ra and 1 <= l <= rb):
                    raise InvalidArgument(f"line {line}: outcome out of range")
                if n < 0:
                    raise InvalidArgument(f"line {line}: negative count")
                counts[mu, nu][k - 1, l - 1] += n
        return cls(scenario, counts)

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for (mu, nu), c in sorted(self.counts.items()):
                for (i, j), n in np.ndenumerate(c):
                    if n:
                        w.writerow([mu, nu, i + 1, j + 1, int(n)])


@dataclass(frozen=True)
class CountEvaluation:
    value: float
    sigma: float
    table: CorrelationTable

    def violation_sigmas(self, bound: float, direction: str = "max") -> float:
        """Standard deviations by which the value lies beyond ``bound``."""
        excess = self.value - bound if direction == "max" else bound - self.value
        if self.sigma == 0.0:
            return math.inf if excess > 0 else (0.0 if excess == 0 else -math.inf)
        return excess / self.sigma

    def to_dict(self) -> dict:
        return {"value": self.value, "sigma": self.sigma}


def evaluate_counts(expr: BellExpression, data: CountData) -> CountEvaluation:
    """Plug-in value and delta-method standard deviation under independent
    multinomial sampling of each setting pair."""
    if data.scenario != expr.scenario:
        raise InvalidArgument("count data and expression use different scenarios")
    dense = expr.dense()
    blocks = {}
    var = 0.0
    for key in expr.scenario.pairs:
        c = dense[key]
        used = bool(np.any(c != 0))
        n = data.total(*key)
        if n == 0:
            if used:
                raise InsufficientData(f"no events recorded for setting pair {key}")
            ra, rb = expr.scenario.block_shape(*key)
            blocks[key] = np.full((ra, rb), 1.0 / (ra * rb))
            continue
        p = data.counts[key] / n
        blocks[key] = p
        if used:
            mean = float(np.sum(c * p))
            var += max(0.0, float(np.sum(c * c * p)) - mean * mean) / n
    table = CorrelationTable(expr.scenario, blocks)
    return CountEvaluation(evaluate(expr, table), math.sqrt(var), table)
