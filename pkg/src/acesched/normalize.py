"""Table-wide normalization, rank correlation and the ACE score.

These primitives are shared by the offline profiler and the run-time
selector, which both min-max normalize the accuracy/complexity/energy axes.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata


def minmax_normalize(values: Sequence[float]) -> np.ndarray:
    """Map values onto [0, 1]; a constant column maps to all zeros."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot normalize an empty list")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.zeros_like(v)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def ace_score(a_norm, c_norm, e_norm, weights) -> float | np.ndarray:
    """Weighted ACE score: reward accuracy, penalize complexity and energy.

    ``weights`` is any ``(delta_a, gamma_c, eta_e)`` triple; arrays broadcast.
    """
    delta_a, gamma_c, eta_e = weights
    return delta_a * np.asarray(a_norm) - gamma_c * np.asarray(c_norm) - eta_e * np.asarray(e_norm)


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties.

    Returns NaN when either argument is constant (correlation undefined).
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} != {len(b)}")
    if len(a) < 2:
        raise ValueError("need at least two observations")
    ra = rankdata(np.asarray(a, dtype=float))
    rb = rankdata(np.asarray(b, dtype=float))
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0.0:
        return float("nan")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def flop_weight(rho: float) -> float:
    """Share of the complexity axis given to FLOPs; shrinks as FLOPs track latency."""
    if math.isnan(rho):
        return 0.0
    return 0.3 * (1.0 - abs(rho))


def complexity_mix(
    latencies: Sequence[float], flops: Optional[Sequence[Optional[float]]] = None
) -> tuple[np.ndarray, float, float]:
    """Blend normalized latency and FLOPs into one complexity axis.

    Returns ``(c_norm, alpha_flop, alpha_lat)``. Missing FLOPs (``None`` for
    the whole column or any entry) degrade to latency only.
    """
    lat_n = minmax_normalize(latencies)
    if flops is None or len(flops) != len(latencies) or any(f is None for f in flops):
        return lat_n, 0.0, 1.0
    if len(latencies) < 2:
        return lat_n, 0.0, 1.0
    alpha_flop = flop_weight(spearman(flops, latencies))
    alpha_lat = 1.0 - alpha_flop
    c = alpha_lat * lat_n + alpha_flop * minmax_normalize(flops)
    return np.clip(c, 0.0, 1.0), alpha_flop, alpha_lat
