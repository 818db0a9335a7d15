"""Regression metrics and the E-3 results table used in run reports."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class Metrics:
    """MSE, RMSE, MAE, and MAPE (stored as a fraction; None when any actual
    value is zero)."""

    mse: float
    rmse: float
    mae: float
    mape: float | None
    n: int

    def to_dict(self) -> dict:
        return {"mse": self.mse, "rmse": self.rmse, "mae": self.mae,
                "mape": self.mape, "n": self.n}


def compute_metrics(pred: np.ndarray, actual: np.ndarray) -> Metrics:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or pred.size == 0:
        raise ParameterError("pred and actual must be equal-length and nonempty")
    if not (np.isfinite(pred).all() and np.isfinite(actual).all()):
        raise ParameterError("inputs must be finite")
    resid = pred - actual
    mse = float(np.mean(resid**2))
    mae = float(np.mean(np.abs(resid)))
    if (actual == 0).any():
        mape = None
    else:
        mape = float(np.mean(np.abs(resid / actual)))
    return Metrics(mse=mse, rmse=float(np.sqrt(mse)), mae=mae, mape=mape,
                   n=pred.size)


def format_results_table(rows: list[tuple[str, Metrics]]) -> str:
    """CSV text with values scaled by 1e3 (the E-3 table unit convention)."""
    if not rows:
        raise ParameterError("rows must be nonempty")
    out = io.StringIO()
    out.write("input_features,rmse_e3,mae_e3,mape_e3\n")
    for name, m in rows:
        mape_cell = "" if m.mape is None else f"{m.mape * 1e3:.10g}"
        out.write(f"{name},{m.rmse * 1e3:.10g},{m.mae * 1e3:.10g},{mape_cell}\n")
    return out.getvalue()
