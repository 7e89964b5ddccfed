"""Shared deterministic numerical kernels.

Fixed-step RK4 stepping, scalar bisection, Euclidean simplex projection and
compensated summation. Everything here is pure and bitwise deterministic for
identical inputs; the dynamics modules rely on that for reproducible runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class NumericsError(RuntimeError):
    """Raised on NaN propagation, bad brackets, or integrator blow-up."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Fixed-step integrator settings shared by the dynamics modules."""

    dt: float
    t_end: float
    sample_every: int = 1
    renormalize_rows: bool = True
    clip_floor: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.dt > self.t_end:
            raise ValueError("dt must not exceed t_end")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def rk4_step(rhs: Callable[[np.ndarray], np.ndarray], state: np.ndarray, dt: float) -> np.ndarray:
    """Classical 4-stage Runge-Kutta update for an autonomous system.

    Raises NumericsError if the update produces non-finite values.
    """
    k1 = rhs(state)
    k2 = rhs(state + 0.5 * dt * k1)
    k3 = rhs(state + 0.5 * dt * k2)
    k4 = rhs(state + dt * k3)
    out = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericsError("rk4_step produced non-finite state")
    return out


def bisect(f: Callable[[float], float], lo: float, hi: float,
           tol: float = 1e-12, max_iter: int = 200) -> float:
    """Root of a monotone scalar function by bisection.

    Requires f(lo) and f(hi) to bracket zero. Stops when |f(mid)| <= tol or
    the bracket width falls below tol; iteration count is bounded by
    ceil(log2((hi - lo) / tol)) plus a small constant.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise NumericsError(f"bisect: no sign change on [{lo}, {hi}]")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if abs(fmid) <= tol or (hi - lo) <= tol:
            return mid
        if flo * fmid <= 0.0:
            hi, fhi = mid, fmid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def project_simplex(row: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the unit simplex {x >= 0, sum x = 1}.

    Non-iterative sort-based rule; idempotent and order preserving.
    """
    v = np.asarray(row, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("project_simplex expects a nonempty 1-D array")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    cond = u + (1.0 - css) / ks > 0.0
    rho = np.nonzero(cond)[0][-1]
    lam = (1.0 - css[rho]) / (rho + 1.0)
    return np.maximum(v + lam, 0.0)


def kahan_sum(values) -> float:
    """Compensated (Kahan) summation with a fixed left-to-right order."""
    total = 0.0
    comp = 0.0
    for v in values:
        y = float(v) - comp
        t = total + y
        comp = (t - total) - y
        total = t
    return total
