"""Single-receiver coalition capacity region for the Gaussian multiple access channel.

The region is a polytope in the nonnegative orthant with one linear bound per
nonempty user coalition: sum_{i in Omega} alpha_i <= C_Omega where

    C_Omega = log(1 + sum_{i in Omega} P_i h_i / sigma0^2)

in the configured log base. Coalitions are represented as bitmasks over user
indices, densely enumerated, which caps the user count at 20.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

MAX_USERS = 20

#: log base tags accepted throughout the package
LOG_BASES = ("2", "e")


class ScenarioError(ValueError):
    """Invalid scenario parameters or oversized enumeration."""


def _log_scale(log_base: str) -> float:
    if log_base == "2":
        return math.log(2.0)
    if log_base == "e":
        return 1.0
    raise ScenarioError(f"log_base must be one of {LOG_BASES}, got {log_base!r}")


@dataclass(frozen=True)
class SingleReceiverScenario:
    """Channel parameters of one receiver with N power-constrained senders.

    power and gain are per-user arrays (mW and dimensionless); noise is the
    Gaussian noise variance sigma0^2 in mW. Rates are measured in bits per
    channel use for log_base "2" and nats for "e".
    """

    power: np.ndarray
    gain: np.ndarray
    noise: float
    log_base: str = "2"

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.power, dtype=float))
        h = np.atleast_1d(np.asarray(self.gain, dtype=float))
        if p.shape != h.shape or p.ndim != 1 or p.size == 0:
            raise ScenarioError("power and gain must be 1-D arrays of equal length")
        if not (np.all(p > 0) and np.all(h > 0)):
            raise ScenarioError("power and gain entries must be positive")
        if not self.noise > 0:
            raise ScenarioError("noise variance must be positive")
        _log_scale(self.log_base)
        p.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "power", p)
        object.__setattr__(self, "gain", h)

    @property
    def n_users(self) -> int:
        return self.power.size

    @property
    def snr_terms(self) -> np.ndarray:
        """Per-user received SNR contributions P_i h_i / sigma0^2."""
        return self.power * self.gain / self.noise

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        s = self.snr_terms
        return bool(np.allclose(s, s[0], rtol=rtol, atol=0.0))

    @classmethod
    def symmetric(cls, n_users: int, power: float, gain: float, noise: float,
                  log_base: str = "2") -> "SingleReceiverScenario":
        return cls(np.full(n_users, float(power)), np.full(n_users, float(gain)),
                   noise, log_base)


def coalitions(n_users: int) -> Iterator[int]:
    """All nonempty coalition bitmasks for n_users, ascending."""
    for mask in range(1, 1 << n_users):
        yield mask


def coalition_members(mask: int, n_users: int) -> tuple[int, ...]:
    return tuple(i for i in range(n_users) if mask >> i & 1)


@dataclass(frozen=True)
class CapacityRegion:
    """Coalition-indexed sum-rate bounds; bounds[mask] is C_Omega for bitmask mask.

    bounds[0] is unused and held at 0. Bounds are monotone under coalition
    inclusion because the SNR terms are positive.
    """

    bounds: np.ndarray
    n_users: int
    log_base: str = "2"

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (1 << self.n_users,):
            raise ScenarioError("bounds must have one entry per coalition bitmask")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)

    def bound(self, mask: int) -> float:
        if not 1 <= mask < (1 << self.n_users):
            raise ScenarioError(f"coalition mask {mask} out of range")
        return float(self.bounds[mask])

    @property
    def full_mask(self) -> int:
        return (1 << self.n_users) - 1

    @property
    def sum_capacity(self) -> float:
        """C_N, the bound of the grand coalition."""
        return float(self.bounds[self.full_mask])


def build_region(scenario: SingleReceiverScenario) -> CapacityRegion:
    """Construct the capacity polytope of a scenario.

    Every nonempty coalition Omega gets the bound
    log(1 + sum_{i in Omega} P_i h_i / sigma0^2) in the scenario's base.
    """
    n = scenario.n_users
    if n > MAX_USERS:
        raise ScenarioError(f"n_users={n} exceeds the enumeration guard ({MAX_USERS})")
    scale = _log_scale(scenario.log_base)
    snr = scenario.snr_terms
    masks = np.arange(1 << n)
    member = (masks[:, None] >> np.arange(n)[None, :]) & 1
    coalition_snr = member @ snr
    bounds = np.log1p(coalition_snr) / scale
    bounds[0] = 0.0
    return CapacityRegion(bounds, n, scenario.log_base)


def as_rates(rates, n_users: int) -> np.ndarray:
    """Validate and convert a rate profile to a float array of length n_users."""
    a = np.atleast_1d(np.asarray(rates, dtype=float))
    if a.shape != (n_users,):
        raise ScenarioError(f"rate profile has shape {a.shape}, expected ({n_users},)")
    if not np.all(np.isfinite(a)):
        raise ScenarioError("rate profile entries must be finite")
    return a


def contains(region: CapacityRegion, rates, tol: float = 1e-9) -> bool:
    """Membership test: rates >= 0 and every coalition bound holds within tol."""
    a = as_rates(rates, region.n_users)
    if np.any(a < -tol):
        return False
    n = region.n_users
    masks = np.arange(1 << n)
    member = (masks[:, None] >> np.arange(n)[None, :]) & 1
    sums = member @ a
    return bool(np.all(sums[1:] <= region.bounds[1:] + tol))


def safe_rate(scenario: SingleReceiverScenario, i: int, omega: int) -> float:
    """Rate user i sustains inside coalition omega when the other members are noise.

    r_{i,Omega} = log(1 + P_i h_i / (sigma0^2 + sum_{i' in Omega, i' != i} P_i' h_i')).
    """
    n = scenario.n_users
    if not 0 <= i < n:
        raise ScenarioError(f"user index {i} out of range")
    if not omega >> i & 1:
        raise ScenarioError(f"user {i} is not a member of coalition {omega:b}")
    terms = scenario.power * scenario.gain
    interference = sum(terms[k] for k in coalition_members(omega, n) if k != i)
    scale = _log_scale(scenario.log_base)
    return math.log1p(terms[i] / (scenario.noise + interference)) / scale


def safe_rates_full(scenario: SingleReceiverScenario) -> np.ndarray:
    """Vector of r_{i,N}: each user's guaranteed rate against all others."""
    n = scenario.n_users
    full = (1 << n) - 1
    return np.array([safe_rate(scenario, i, full) for i in range(n)])


def on_max_face(region: CapacityRegion, scenario: SingleReceiverScenario,
                rates, tol: float = 1e-9) -> bool:
    """Test membership in the maximal face of the region.

    The face is the set of feasible profiles with sum rate C_N and per-user
    rates at least the guaranteed floor r_{i,N}. For feasible profiles the
    floor is implied by the sum condition; it is kept as an explicit guard for
    near-boundary inputs.
    """
    a = as_rates(rates, region.n_users)
    if not contains(region, a, tol):
        return False
    if abs(float(a.sum()) - region.sum_capacity) > tol:
        return False
    floors = safe_rates_full(scenario)
    return bool(np.all(a >= floors - tol))
