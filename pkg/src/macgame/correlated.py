"""Constrained correlated equilibria with finite support for the rate game.

A correlating device draws a full rate profile and privately recommends each
user its own component. Because a deviation rule is a per-signal choice, a
finite-support device is an equilibrium exactly when, for every user and
every distinct recommended value, obeying beats every constant deviation in
conditional expectation. Deviations that leave the capacity region earn zero
through the payoff indicator, so the deviation grid needs no feasibility
pre-filter.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .capacity import ScenarioError, coalitions, coalition_members, contains
from .static_game import StaticGame, is_nash

MERGE_TOL = 1e-12


@dataclass(frozen=True)
class CorrelatedDevice:
    """Finite signal distribution: distinct rate profiles with positive weights."""

    profiles: np.ndarray   # (atoms, users)
    weights: np.ndarray    # (atoms,)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.profiles, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if p.shape[0] != w.size or p.shape[0] == 0:
            raise ScenarioError("need one weight per support profile")
        if np.any(w <= 0):
            raise ScenarioError("weights must be positive")
        if abs(float(w.sum()) - 1.0) > MERGE_TOL * max(1, w.size):
            raise ScenarioError("weights must sum to one")
        p, w = _merge_duplicates(p, w)
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "profiles", p)
        object.__setattr__(self, "weights", w)

    @property
    def n_atoms(self) -> int:
        return self.weights.size

    @property
    def n_users(self) -> int:
        return self.profiles.shape[1]


def _merge_duplicates(profiles: np.ndarray, weights: np.ndarray):
    kept: list[int] = []
    w = weights.astype(float).copy()
    for k in range(profiles.shape[0]):
        for j in kept:
            if np.all(np.abs(profiles[k] - profiles[j]) <= MERGE_TOL):
                w[j] += w[k]
                break
        else:
            kept.append(k)
    return profiles[kept].copy(), w[kept].copy()


def mixture_of_nash(game: StaticGame, profiles, weights,
                    tol: float = 1e-9) -> CorrelatedDevice:
    """Device supported on verified pure Nash profiles; such mixtures are
    always constrained correlated equilibria."""
    p = np.atleast_2d(np.asarray(profiles, dtype=float))
    for k in range(p.shape[0]):
        if not is_nash(game, p[k], tol):
            raise ScenarioError(f"support profile {k} is not a Nash equilibrium")
    return CorrelatedDevice(p, weights)


@dataclass(frozen=True)
class CceWitness:
    user: int
    signal: float
    deviation: float
    gain: float


@dataclass(frozen=True)
class CceVerdict:
    ok: bool
    witness: Optional[CceWitness] = None

    def __bool__(self) -> bool:
        return self.ok


def _conditional_payoffs(game: StaticGame, i: int, atoms: np.ndarray,
                         rates: np.ndarray) -> np.ndarray:
    """Payoff of user i under each candidate own-rate, against each atom's
    opponent profile; rows are candidate rates, columns atoms."""
    n = game.n_users
    others = np.delete(atoms, i, axis=1)            # (atoms, n-1)
    n_atoms = atoms.shape[0]
    feas = np.ones((rates.size, n_atoms), dtype=bool)
    for mask in coalitions(n):
        members = coalition_members(mask, n)
        bound = game.region.bound(mask)
        other_sum = np.zeros(n_atoms)
        for m in members:
            if m == i:
                continue
            col = m if m < i else m - 1
            other_sum += others[:, col]
        if mask >> i & 1:
            feas &= rates[:, None] + other_sum[None, :] <= bound + 1e-12
        else:
            feas &= (other_sum <= bound + 1e-12)[None, :]
    values = np.asarray(game.g(i, rates), dtype=float)
    return feas * values[:, None]


def is_cce(device: CorrelatedDevice, game: StaticGame,
           dev_points: int = 501, tol: float = 1e-9) -> CceVerdict:
    """Verify the correlated-equilibrium inequalities on the device support.

    For every user and every distinct recommended value, the conditional
    expected payoff of obedience must be at least that of every constant
    deviation on a dev_points grid over [0, C_{i}], up to tol. On failure
    the most profitable (user, signal, deviation) witness is reported.
    """
    if device.n_users != game.n_users:
        raise ScenarioError("device and game disagree on the user count")
    atoms = device.profiles
    for k in range(device.n_atoms):
        if not contains(game.region, atoms[k], 1e-9):
            raise ScenarioError(f"support profile {k} is infeasible")
    weights = device.weights
    worst: Optional[CceWitness] = None
    for i in range(game.n_users):
        dev_grid = np.linspace(0.0, game.region.bound(1 << i), dev_points)
        payoff_table = _conditional_payoffs(game, i, atoms, dev_grid)
        recommended = atoms[:, i]
        groups = _group_values(recommended)
        for signal, members in groups:
            w = weights[members]
            w = w / w.sum()
            obey = float(sum(wk * _own_payoff(game, i, atoms[m]) for wk, m in zip(w, members)))
            dev_values = payoff_table[:, members] @ w
            k_best = int(np.argmax(dev_values))
            gain = float(dev_values[k_best]) - obey
            if gain > tol:
                cand = CceWitness(i, float(signal), float(dev_grid[k_best]), gain)
                if worst is None or cand.gain > worst.gain:
                    worst = cand
    return CceVerdict(worst is None, worst)


def _own_payoff(game: StaticGame, i: int, profile: np.ndarray) -> float:
    if not contains(game.region, profile, 1e-12):
        return 0.0
    return float(game.g(i, profile[i]))


def _group_values(values: np.ndarray) -> list[tuple[float, np.ndarray]]:
    """Group indices by value, merging values within MERGE_TOL."""
    order = np.argsort(values, kind="stable")
    groups: list[tuple[float, list[int]]] = []
    for idx in order:
        v = values[idx]
        if groups and abs(v - groups[-1][0]) <= MERGE_TOL:
            groups[-1][1].append(int(idx))
        else:
            groups.append((float(v), [int(idx)]))
    return [(v, np.asarray(ms, dtype=int)) for v, ms in groups]
