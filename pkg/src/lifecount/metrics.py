"""Forgetting and accuracy metrics over evaluation matrices.

e[t, i] (1-based in the math, stored 0-based) is the test MAE on domain i
after finishing training step t; entries exist only for i <= t. Normalized
backward transfer averages the relative MAE increase on all previous
domains; each normalized term has floor -1/(t-1) (attained when that
domain's final error is zero), so the metric itself is bounded below by -1,
attained when the whole final row is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def mae(pred_counts, true_counts) -> float:
    p = np.asarray(pred_counts, dtype=np.float64).reshape(-1)
    t = np.asarray(true_counts, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("empty input")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    return float(np.abs(p - t).mean())


def rmse(pred_counts, true_counts) -> float:
    p = np.asarray(pred_counts, dtype=np.float64).reshape(-1)
    t = np.asarray(true_counts, dtype=np.float64).reshape(-1)
    if p.size == 0:
        raise ValueError("empty input")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {t.shape}")
    return float(np.sqrt(((p - t) ** 2).mean()))


@dataclass
class EvalMatrix:
    """Lower-triangular per-domain error matrices (np.nan where undefined)."""

    domain_names: list[str]
    mae: np.ndarray = field(default=None)  # type: ignore[assignment]
    rmse: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = len(self.domain_names)
        if self.mae is None:
            self.mae = np.full((n, n), np.nan)
        if self.rmse is None:
            self.rmse = np.full((n, n), np.nan)
        self.mae = np.asarray(self.mae, dtype=np.float64)
        self.rmse = np.asarray(self.rmse, dtype=np.float64)
        if self.mae.shape != (n, n) or self.rmse.shape != (n, n):
            raise ValueError(f"matrices must be {n}x{n} for {n} domains")

    @property
    def n(self) -> int:
        return len(self.domain_names)

    def set_row(self, t: int, maes, rmses) -> None:
        """Fill row for step t (1-based) with errors on domains 1..t."""
        maes = list(maes)
        rmses = list(rmses)
        if not 1 <= t <= self.n:
            raise ValueError(f"step {t} out of range 1..{self.n}")
        if len(maes) != t or len(rmses) != t:
            raise ValueError(f"row {t} needs {t} entries, got {len(maes)}/{len(rmses)}")
        self.mae[t - 1, :t] = maes
        self.rmse[t - 1, :t] = rmses

    def defined(self, t: int, i: int) -> bool:
        return bool(np.isfinite(self.mae[t - 1, i - 1]))

    def completed_steps(self) -> list[int]:
        return [t for t in range(1, self.n + 1) if all(self.defined(t, i) for i in range(1, t + 1))]


def nbwt(E: EvalMatrix, t: int, *, kind: str = "mae") -> float:
    """Normalized backward transfer after step t (t >= 2).

    (1/(t-1)) * sum_{i<t} (e[t,i] - e[i,i]) / e[i,i], on MAE entries by
    default; kind='rmse' is a clearly-labeled extension, not part of the
    standard definition.
    """
    if t < 2:
        raise ValueError("nBwT is undefined for the first domain (needs t >= 2)")
    if t > E.n:
        raise ValueError(f"step {t} out of range for {E.n} domains")
    m = E.mae if kind == "mae" else E.rmse if kind == "rmse" else None
    if m is None:
        raise ValueError(f"kind must be 'mae' or 'rmse', got {kind!r}")
    acc = 0.0
    for i in range(1, t):
        e_ti = m[t - 1, i - 1]
        e_ii = m[i - 1, i - 1]
        if not (np.isfinite(e_ti) and np.isfinite(e_ii)):
            raise ValueError(f"nBwT_{t} needs entries e[{t},{i}] and e[{i},{i}]")
        if e_ii <= 0.0:
            raise ValueError(f"nBwT division guard: diagonal e[{i},{i}] = {e_ii} is not positive")
        acc += (e_ti - e_ii) / e_ii
    return acc / (t - 1)


def nbwt_rmse(E: EvalMatrix, t: int) -> float:
    """RMSE-based variant of nbwt (extension; the standard metric uses MAE)."""
    return nbwt(E, t, kind="rmse")


def mmae(mae_row) -> float:
    """Arithmetic mean of per-domain MAE values."""
    row = np.asarray(list(mae_row), dtype=np.float64)
    if row.size == 0:
        raise ValueError("empty row")
    return float(row.mean())


def mrmse(rmse_row) -> float:
    """Arithmetic mean of per-domain RMSE values."""
    row = np.asarray(list(rmse_row), dtype=np.float64)
    if row.size == 0:
        raise ValueError("empty row")
    return float(row.mean())


def matrix_to_csv(values: np.ndarray, domain_names: list[str], path) -> None:
    """Row t = after training step t; blank cells where undefined."""
    with open(path, "w") as f:
        f.write("step," + ",".join(domain_names) + "\n")
        for t in range(values.shape[0]):
            cells = ["" if not math.isfinite(v) else repr(float(v)) for v in values[t]]
            f.write(f"{t + 1}," + ",".join(cells) + "\n")


def matrix_from_csv(path) -> tuple[np.ndarray, list[str]]:
    with open(path) as f:
        lines = [line.rstrip("\n") for line in f if line.strip()]
    header = lines[0].split(",")
    names = header[1:]
    n = len(names)
    values = np.full((n, n), np.nan)
    for line in lines[1:]:
        cells = line.split(",")
        t = int(cells[0])
        for i, cell in enumerate(cells[1:]):
            if cell:
                values[t - 1, i] = float(cell)
    return values, names
