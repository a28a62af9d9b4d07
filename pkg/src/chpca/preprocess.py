"""Weekly-cycle removal, log ratios and per-country standardization.

The pipeline order is fixed: clean -> detrend -> re-clamp at the 0.1 floor
-> log ratio -> standardize. Detrending fits a local-linear-trend plus
7-day seasonal-dummy state-space model per series (Kalman filter +
fixed-interval smoother, Gaussian likelihood maximized over log-variances
with Nelder-Mead) and returns the smoothed trend, i.e. the series with the
weekly cycle and irregular component removed. A centered 7-day moving mean
is available as a cheap fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .panel import Panel

__all__ = [
    "DetrendConfig",
    "detrend_weekly",
    "detrend_panel",
    "clamp_floor",
    "log_ratio",
    "standardize",
    "standardized_log_ratio",
]

_STATE_DIM = 8  # level, slope, six seasonal lags
_BURN = _STATE_DIM  # innovations skipped while the diffuse prior washes out
_DIFFUSE_VAR = 1e5


@dataclass
class DetrendConfig:
    """Detrending method and state-space estimation knobs.

    ``max_likelihood_iters`` caps the Nelder-Mead iterations of the variance
    fit; ``variance_floor`` bounds every fitted variance away from zero (on
    the scale of the series normalized to unit variance).
    """

    method: str = "state_space"
    max_likelihood_iters: int = 120
    variance_floor: float = 1e-10

    def __post_init__(self) -> None:
        if self.method not in ("state_space", "moving_average_7"):
            raise ValueError(f"unknown detrend method {self.method!r}")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")
        if self.max_likelihood_iters < 1:
            raise ValueError("max_likelihood_iters must be at least 1")


def detrend_weekly(series: np.ndarray, config: DetrendConfig | None = None) -> np.ndarray:
    """Remove the 7-day cycle from one series, returning its smooth trend."""
    config = config or DetrendConfig()
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("detrend_weekly expects a 1-d series")
    if y.size < 14:
        raise ValueError(f"need at least 14 observations to separate a weekly cycle, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise ValueError("detrend_weekly: series contains non-finite values")

    if config.method == "moving_average_7":
        return _moving_average_7(y)

    mean = y.mean()
    scale = y.std()
    if scale == 0.0:
        return y.copy()
    yn = (y - mean) / scale
    variances = _fit_variances(yn, config)
    trend = _smoothed_level(yn, variances)
    return trend * scale + mean


def detrend_panel(panel: Panel, config: DetrendConfig | None = None) -> Panel:
    """Apply :func:`detrend_weekly` to every row of a panel."""
    rows = [detrend_weekly(row, config) for row in panel.values]
    return panel.with_values(np.vstack(rows))


def clamp_floor(panel: Panel, floor: float = 0.1) -> Panel:
    """Clip values below ``floor`` back up to it (post-detrend re-clamp)."""
    return panel.with_values(np.maximum(panel.values, floor))


def log_ratio(panel: Panel) -> Panel:
    """Day-over-day difference of natural log values; drops the first day."""
    if np.any(panel.values <= 0):
        i, t = np.argwhere(panel.values <= 0)[0]
        raise ValueError(
            f"log_ratio requires positive values; {panel.countries[i]} at "
            f"{panel.dates[t]} is {panel.values[i, t]}"
        )
    ratios = np.diff(np.log(panel.values), axis=1)
    return panel.with_values(ratios, dates=panel.dates[1:])


def standardize(panel: Panel) -> Panel:
    """Center each row and scale by its population (1/T) standard deviation."""
    values = panel.values
    means = values.mean(axis=1, keepdims=True)
    stds = values.std(axis=1, keepdims=True)  # population convention
    flat = np.flatnonzero(stds.ravel() == 0.0)
    if flat.size:
        raise ValueError(f"standardize: zero-variance row for country {panel.countries[flat[0]]}")
    return panel.with_values((values - means) / stds)


def standardized_log_ratio(
    panel: Panel,
    detrend: DetrendConfig | None = None,
    floor: float = 0.1,
) -> Panel:
    """Full preprocessing of a cleaned count panel.

    Optionally detrends each row (then re-clamps at ``floor`` so the log
    ratio stays defined), takes log ratios and standardizes per row.
    """
    if detrend is not None:
        panel = clamp_floor(detrend_panel(panel, detrend), floor)
    return standardize(log_ratio(panel))


# ---------------------------------------------------------------------------
# Local linear trend + weekly seasonal state space
# ---------------------------------------------------------------------------

def _transition() -> np.ndarray:
    F = np.zeros((_STATE_DIM, _STATE_DIM))
    F[0, 0] = F[0, 1] = 1.0  # level' = level + slope
    F[1, 1] = 1.0
    F[2, 2:8] = -1.0  # seasonal dummies sum to noise over any 7 days
    for k in range(3, 8):
        F[k, k - 1] = 1.0
    return F


_F = _transition()


def _kalman(y: np.ndarray, variances: np.ndarray, smooth: bool):
    """One filter pass; returns the log-likelihood and, optionally, the
    stored quantities needed by the fixed-interval smoother."""
    h, var_level, var_slope, var_seas = variances
    T = y.size
    Q = np.zeros((_STATE_DIM, _STATE_DIM))
    Q[0, 0], Q[1, 1], Q[2, 2] = var_level, var_slope, var_seas

    a = np.zeros(_STATE_DIM)
    a[0] = y[0]
    P = np.eye(_STATE_DIM) * _DIFFUSE_VAR

    loglik = 0.0
    if smooth:
        filt_a = np.empty((T, _STATE_DIM))
        filt_P = np.empty((T, _STATE_DIM, _STATE_DIM))
        pred_a = np.empty((T, _STATE_DIM))
        pred_P = np.empty((T, _STATE_DIM, _STATE_DIM))

    for t in range(T):
        if smooth:
            pred_a[t] = a
            pred_P[t] = P
        v = y[t] - a[0] - a[2]
        S = P[0, 0] + P[2, 2] + P[0, 2] + P[2, 0] + h
        S = max(S, 1e-300)
        if t >= _BURN:
            loglik -= 0.5 * (np.log(2.0 * np.pi) + np.log(S) + v * v / S)
        K = (P[:, 0] + P[:, 2]) / S
        a = a + K * v
        P = P - np.outer(K, K) * S
        if smooth:
            filt_a[t] = a
            filt_P[t] = P
        a = _F @ a
        P = _F @ P @ _F.T + Q
        P = 0.5 * (P + P.T)

    if not smooth:
        return loglik, None
    return loglik, (filt_a, filt_P, pred_a, pred_P)


def _smoothed_level(y: np.ndarray, variances: np.ndarray) -> np.ndarray:
    _, stored = _kalman(y, variances, smooth=True)
    filt_a, filt_P, pred_a, pred_P = stored
    T = y.size
    smoothed = np.empty(T)
    state = filt_a[T - 1]
    smoothed[T - 1] = state[0]
    for t in range(T - 2, -1, -1):
        # J = P_f F' P_pred^{-1}; pred_P[t + 1] is the prior for t + 1
        gain = np.linalg.solve(pred_P[t + 1], _F @ filt_P[t]).T
        state = filt_a[t] + gain @ (state - pred_a[t + 1])
        smoothed[t] = state[0]
    return smoothed


def _fit_variances(y: np.ndarray, config: DetrendConfig) -> np.ndarray:
    """Maximize the Gaussian likelihood over log-variances (Nelder-Mead)."""
    floor = config.variance_floor
    rough = y - _moving_average_7(y)
    var_hf = max(rough.var(), floor)
    smooth = _moving_average_7(y)
    var_step = max(np.diff(smooth).var(), floor) if y.size > 1 else floor
    x0 = np.log([
        max(0.5 * var_hf, floor),
        var_step,
        max(0.01 * var_step, floor),
        max(0.2 * var_hf, floor),
    ])

    def objective(x: np.ndarray) -> float:
        variances = np.maximum(np.exp(np.clip(x, -60.0, 60.0)), floor)
        loglik, _ = _kalman(y, variances, smooth=False)
        return -loglik

    result = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "maxiter": config.max_likelihood_iters,
            "maxfev": 2 * config.max_likelihood_iters,
            "xatol": 1e-3,
            "fatol": 1e-4,
        },
    )
    return np.maximum(np.exp(np.clip(result.x, -60.0, 60.0)), floor)


def _moving_average_7(y: np.ndarray) -> np.ndarray:
    """Centered 7-day mean; the window shrinks at the edges."""
    kernel = np.ones(7)
    sums = np.convolve(y, kernel, mode="same")
    counts = np.convolve(np.ones_like(y), kernel, mode="same")
    return sums / counts
