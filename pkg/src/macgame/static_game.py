"""One-shot rate allocation game at a single receiver.

Payoffs are u_i(alpha) = g_i(alpha_i) when the profile lies in the capacity
region and 0 otherwise, with g_i positive and strictly increasing. The pure
Nash set equals the maximal face of the region (feasible profiles whose rates
sum to C_N), which also coincides with the strong equilibria, so verification
reduces to face membership plus a best-reply cross-check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .capacity import (
    CapacityRegion,
    ScenarioError,
    SingleReceiverScenario,
    as_rates,
    build_region,
    coalition_members,
    coalitions,
    contains,
    safe_rates_full,
    _log_scale,
)
from .numerics import bisect

UTILITY_FAMILIES = ("identity", "log1p", "power")

#: guard for exact face-vertex enumeration (concave worst-equilibrium search)
MAX_VERTEX_USERS = 6


@dataclass(frozen=True)
class UtilitySpec:
    """Per-user utility family g_i applied to the own rate.

    identity: g(x) = x. log1p: g(x) = log(1 + x) in the game's log base.
    power: g(x) = x**gamma with 0 < gamma < 1. Optional positive per-user
    scale weights multiply the family value.
    """

    family: str = "identity"
    gamma: Optional[float] = None
    scale: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.family not in UTILITY_FAMILIES:
            raise ScenarioError(f"unknown utility family {self.family!r}")
        if self.family == "power":
            if self.gamma is None or not 0.0 < self.gamma < 1.0:
                raise ScenarioError("power utility requires 0 < gamma < 1")
        elif self.gamma is not None:
            raise ScenarioError("gamma is only meaningful for the power family")
        if self.scale is not None:
            s = np.atleast_1d(np.asarray(self.scale, dtype=float))
            if np.any(s <= 0):
                raise ScenarioError("utility scale weights must be positive")
            s.setflags(write=False)
            object.__setattr__(self, "scale", s)

    @property
    def strictly_concave(self) -> bool:
        return self.family in ("log1p", "power")

    def _scale_of(self, i: int) -> float:
        if self.scale is None:
            return 1.0
        return float(self.scale[i])

    def value(self, i: int, x, log_scale: float):
        x = np.asarray(x, dtype=float)
        s = self._scale_of(i)
        if self.family == "identity":
            return s * x
        if self.family == "log1p":
            return s * np.log1p(x) / log_scale
        return s * np.power(x, self.gamma)

    def deriv(self, i: int, x, log_scale: float):
        x = np.asarray(x, dtype=float)
        s = self._scale_of(i)
        if self.family == "identity":
            return s * np.ones_like(x)
        if self.family == "log1p":
            return s / ((1.0 + x) * log_scale)
        return s * self.gamma * np.power(x, self.gamma - 1.0)

    def inv_deriv(self, i: int, z: float, log_scale: float) -> float:
        """Solve g_i'(x) = z for x >= 0 (strictly concave families only)."""
        s = self._scale_of(i)
        if self.family == "log1p":
            return max(s / (z * log_scale) - 1.0, 0.0)
        if self.family == "power":
            return (z / (s * self.gamma)) ** (1.0 / (self.gamma - 1.0))
        raise ScenarioError("inverse marginal utility needs a strictly concave family")


@dataclass(frozen=True)
class StaticGame:
    scenario: SingleReceiverScenario
    region: CapacityRegion
    utility: UtilitySpec

    def __post_init__(self):
        if self.region.n_users != self.scenario.n_users:
            raise ScenarioError("region and scenario disagree on the user count")
        if self.utility.scale is not None and self.utility.scale.size != self.scenario.n_users:
            raise ScenarioError("utility scale length must match the user count")

    @property
    def n_users(self) -> int:
        return self.scenario.n_users

    @property
    def log_scale(self) -> float:
        return _log_scale(self.scenario.log_base)

    def g(self, i: int, x):
        return self.utility.value(i, x, self.log_scale)

    def g_deriv(self, i: int, x):
        return self.utility.deriv(i, x, self.log_scale)

    def welfare(self, rates) -> float:
        a = as_rates(rates, self.n_users)
        return float(sum(self.g(i, a[i]) for i in range(self.n_users)))


def make_game(scenario: SingleReceiverScenario,
              utility: UtilitySpec | None = None) -> StaticGame:
    return StaticGame(scenario, build_region(scenario), utility or UtilitySpec())


def payoff(game: StaticGame, i: int, rates, tol: float = 0.0) -> float:
    """g_i(alpha_i) if the profile is feasible, else 0."""
    a = as_rates(rates, game.n_users)
    if np.any(a < 0):
        raise ScenarioError("rates must be nonnegative")
    if not contains(game.region, a, tol):
        return 0.0
    return float(game.g(i, a[i]))


def _insert(others: np.ndarray, i: int, value: float) -> np.ndarray:
    return np.insert(others, i, value)


def best_response_info(game: StaticGame, i: int, others) -> tuple[float, bool]:
    """Best-reply rate of user i against fixed opponent rates, with a
    feasibility flag.

    The reply is max(r_{i,N}, min over coalitions containing i of
    C_Omega - sum of the opponents inside the coalition). The flag reports
    whether any completion (alpha_i >= 0, others) is feasible at all; the
    formula value is returned even when it is not.
    """
    n = game.n_users
    others = np.atleast_1d(np.asarray(others, dtype=float))
    if others.shape != (n - 1,):
        raise ScenarioError(f"expected {n - 1} opponent rates, got shape {others.shape}")
    full_profile = _insert(others, i, 0.0)
    floor = safe_rates_full(game.scenario)[i]
    slack = math.inf
    for mask in coalitions(n):
        if not mask >> i & 1:
            continue
        interferers = sum(full_profile[k] for k in coalition_members(mask, n) if k != i)
        slack = min(slack, game.region.bound(mask) - interferers)
    feasible_completion = slack >= 0.0 and contains(game.region, full_profile, 0.0)
    return max(floor, slack), feasible_completion


def best_response(game: StaticGame, i: int, others) -> float:
    value, _ = best_response_info(game, i, others)
    return value


def is_nash(game: StaticGame, rates, tol: float = 1e-9) -> bool:
    """Pure Nash test: feasible, sum rate C_N, rates above the floors, and
    every user already plays its best reply (cross-check)."""
    a = as_rates(rates, game.n_users)
    if not contains(game.region, a, tol):
        return False
    if abs(float(a.sum()) - game.region.sum_capacity) > tol:
        return False
    floors = safe_rates_full(game.scenario)
    if np.any(a < floors - tol):
        return False
    for i in range(game.n_users):
        br, _ = best_response_info(game, i, np.delete(a, i))
        if abs(br - a[i]) > tol:
            return False
    return True


def is_strong_equilibrium(game: StaticGame, rates, tol: float = 1e-9) -> bool:
    """Strong equilibria coincide with Nash equilibria in this game."""
    return is_nash(game, rates, tol)


def coalition_improvement_exists(game: StaticGame, rates, mask: int,
                                 n_grid: int = 101, tol: float = 1e-12) -> bool:
    """Exhaustive search for a joint deviation of the coalition `mask` that
    strictly improves every member, on an n_grid-per-axis product grid.

    Deviation grids per member span [0, C_{i}]. Intended as a test oracle;
    the product grid limits this to small coalitions (size <= 3).
    """
    n = game.n_users
    a = as_rates(rates, n)
    members = coalition_members(mask, n)
    if len(members) > 3:
        raise ScenarioError("coalition oracle supports coalitions of size <= 3")
    base_payoffs = [payoff(game, i, a) for i in members]
    axes = [np.linspace(0.0, game.region.bound(1 << i), n_grid) for i in members]
    trial = a.copy()
    for combo in itertools.product(*axes):
        trial[list(members)] = combo
        if not contains(game.region, trial, 0.0):
            continue
        if all(game.g(i, trial[i]) > base + tol
               for i, base in zip(members, base_payoffs)):
            return True
    return False


def is_strong_oracle(game: StaticGame, rates, n_grid: int = 101,
                     tol: float = 1e-12) -> bool:
    """Grid oracle for strong equilibrium: feasible and no coalition of any
    size has a strictly improving grid deviation."""
    a = as_rates(rates, game.n_users)
    if not contains(game.region, a, 0.0):
        return False
    for mask in coalitions(game.n_users):
        if coalition_improvement_exists(game, a, mask, n_grid, tol):
            return False
    return True


def potential(game: StaticGame, rates) -> float:
    """Constrained potential: indicator of feasibility times total welfare."""
    a = as_rates(rates, game.n_users)
    if not contains(game.region, a, 0.0):
        return 0.0
    return game.welfare(a)


def _clip_to_region(region: CapacityRegion, a: np.ndarray,
                    max_sweeps: int = 200) -> np.ndarray:
    """Feasibility projection by cyclic half-space clipping.

    Repeatedly projects onto the most violated coalition half-space and the
    nonnegative orthant until all constraints hold to 1e-12.
    """
    n = region.n_users
    masks = np.arange(1 << n)
    member = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    sizes = member.sum(axis=1)
    x = np.maximum(a, 0.0)
    for _ in range(max_sweeps):
        sums = member @ x
        viol = sums[1:] - region.bounds[1:]
        worst = int(np.argmax(viol)) + 1
        if viol[worst - 1] <= 1e-12:
            break
        x = x - member[worst] * (viol[worst - 1] / sizes[worst])
        x = np.maximum(x, 0.0)
    return x


def _ascend(game: StaticGame, x0: np.ndarray, on_face: bool,
            max_iter: int = 2000, step0: float = 1.0) -> tuple[np.ndarray, float]:
    """Projected gradient ascent of total welfare with backtracking.

    With on_face=True iterates are additionally re-centered onto the
    hyperplane sum(alpha) = C_N before clipping, restricting the search to
    the maximal face.
    """
    n = game.n_users
    region = game.region

    def project(y: np.ndarray) -> np.ndarray:
        if on_face:
            y = y + (region.sum_capacity - y.sum()) / n
        return _clip_to_region(region, y)

    x = project(np.asarray(x0, dtype=float))
    val = game.welfare(x)
    step = step0
    for _ in range(max_iter):
        grad = np.array([game.g_deriv(i, x[i]) for i in range(n)])
        improved = False
        trial_step = step
        for _ in range(60):
            cand = project(x + trial_step * grad)
            cand_val = game.welfare(cand)
            if cand_val > val + 1e-15:
                x, val = cand, cand_val
                step = trial_step * 1.5
                improved = True
                break
            trial_step *= 0.5
        if not improved:
            break
    return x, val


def social_optimum(game: StaticGame, seed: int = 0) -> tuple[np.ndarray, float]:
    """Maximize total welfare over the capacity region.

    For the identity family the value is C_N exactly and any maximal-face
    point attains it. Concave families are solved by projected gradient
    ascent with feasibility clipping; the optimum lies on the maximal face
    because utilities are strictly increasing.
    """
    if game.utility.family == "identity" and game.utility.scale is None:
        witness = sample_max_face(game, 1, seed=seed)[0]
        return witness, game.region.sum_capacity
    if not game.utility.strictly_concave and game.utility.scale is not None:
        # scaled identity: linear objective, optimum at a face vertex
        verts = _face_vertices(game)
        vals = [game.welfare(v) for v in verts]
        k = int(np.argmax(vals))
        return verts[k], float(vals[k])
    x0 = np.full(game.n_users, game.region.sum_capacity / game.n_users)
    x, val = _ascend(game, x0, on_face=False)
    return x, val


def _face_vertices(game: StaticGame) -> list[np.ndarray]:
    """Vertices of the maximal face polytope by active-set enumeration.

    A vertex activates the grand-coalition equality plus N-1 further
    constraints drawn from the remaining coalition bounds and nonnegativity.
    """
    n = game.n_users
    if n > MAX_VERTEX_USERS:
        raise ScenarioError("face vertex enumeration limited to small user counts")
    region = game.region
    rows = [np.ones(n)]
    rhs = [region.sum_capacity]
    cands: list[tuple[np.ndarray, float]] = []
    for mask in coalitions(n):
        if mask == region.full_mask:
            continue
        ind = np.array([(mask >> k) & 1 for k in range(n)], dtype=float)
        cands.append((ind, region.bound(mask)))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        cands.append((e, 0.0))
    verts: list[np.ndarray] = []
    if n == 1:
        return [np.array([region.sum_capacity])]
    for combo in itertools.combinations(range(len(cands)), n - 1):
        mat = np.vstack(rows + [cands[c][0] for c in combo])
        vec = np.array(rhs + [cands[c][1] for c in combo])
        if abs(np.linalg.det(mat)) < 1e-12:
            continue
        v = np.linalg.solve(mat, vec)
        if contains(region, np.maximum(v, 0.0), 1e-9) and np.all(v >= -1e-9) \
                and abs(v.sum() - region.sum_capacity) <= 1e-9:
            v = np.maximum(v, 0.0)
            if not any(np.allclose(v, w, atol=1e-9) for w in verts):
                verts.append(v)
    return verts


def efficiency_metrics(game: StaticGame) -> dict[str, float]:
    """Strong price of anarchy and price of stability.

    spoa = worst equilibrium welfare / social optimum, pos = best equilibrium
    welfare / social optimum. Identity utilities are exactly fully efficient:
    every equilibrium has welfare C_N. For concave utilities the worst
    equilibrium is found at a face vertex and the best by ascent on the face.
    """
    if game.utility.family == "identity" and game.utility.scale is None:
        return {"spoa": 1.0, "pos": 1.0}
    _, opt_val = social_optimum(game)
    verts = _face_vertices(game)
    worst = min(game.welfare(v) for v in verts)
    if not game.utility.strictly_concave:
        # weighted-linear welfare peaks at a face vertex, which is itself an
        # equilibrium, so the best equilibrium attains the optimum exactly
        return {"spoa": worst / opt_val, "pos": 1.0}
    x0 = np.full(game.n_users, game.region.sum_capacity / game.n_users)
    _, best = _ascend(game, x0, on_face=True)
    best = min(best, opt_val)  # face optimum cannot exceed the global one
    return {"spoa": worst / opt_val, "pos": best / opt_val}


@dataclass(frozen=True)
class NormalizedEquilibrium:
    rates: np.ndarray
    c: float
    zeta: np.ndarray
    residual: float


def normalized_equilibrium(game: StaticGame, tau) -> NormalizedEquilibrium:
    """Equilibrium with shared-constraint multipliers zeta_i = c / tau_i.

    Solves g_i'(alpha_i) = c / tau_i together with sum(alpha) = C_N by
    bisection on c: the map c -> sum_i (g_i')^{-1}(c / tau_i) is strictly
    decreasing. Requires a strictly concave utility family.
    """
    if not game.utility.strictly_concave:
        raise ScenarioError("normalized equilibrium requires a strictly concave utility")
    n = game.n_users
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if tau.shape != (n,) or np.any(tau <= 0):
        raise ScenarioError("tau must be a positive vector of length n_users")
    target = game.region.sum_capacity
    ls = game.log_scale

    def total(c: float) -> float:
        return sum(game.utility.inv_deriv(i, c / tau[i], ls) for i in range(n)) - target

    c_lo, c_hi = 1e-12, 1.0
    for _ in range(200):
        if total(c_hi) < 0.0:
            break
        c_hi *= 2.0
    else:
        raise ScenarioError("failed to bracket the multiplier from above")
    for _ in range(200):
        if total(c_lo) > 0.0:
            break
        c_lo *= 0.5
    else:
        raise ScenarioError("failed to bracket the multiplier from below")
    c = bisect(total, c_lo, c_hi, tol=1e-13)
    rates = np.array([game.utility.inv_deriv(i, c / tau[i], ls) for i in range(n)])
    residual = abs(float(rates.sum()) - target)
    return NormalizedEquilibrium(rates, c, c / tau, residual)


def ess_resists_invasion(game: StaticGame, mutant: float, eps: float) -> bool:
    """Check the invasion inequality at the symmetric equilibrium rate.

    Incumbents play r* = C_N / N, a mutant plays `mutant`, and the rest of
    the population is at the mixed rate eps*mutant + (1-eps)*r*. True when
    the incumbent payoff strictly exceeds the mutant payoff.
    """
    n = game.n_users
    r_star = game.region.sum_capacity / n
    r_eps = eps * mutant + (1.0 - eps) * r_star
    incumbent = np.full(n, r_eps)
    incumbent[0] = r_star
    invader = np.full(n, r_eps)
    invader[0] = mutant
    return payoff(game, 0, incumbent) > payoff(game, 0, invader)


def symmetric_ess(game: StaticGame) -> float:
    """Evolutionarily stable rate of the symmetric game: r* = C_N / N.

    Validates feasibility of the symmetric profile and spot-checks the
    invasion inequality on a small mutant grid.
    """
    if not game.scenario.is_symmetric():
        raise ScenarioError("symmetric ESS requires a symmetric scenario")
    if game.utility.scale is not None and np.ptp(game.utility.scale) != 0.0:
        raise ScenarioError("symmetric ESS requires a shared utility")
    n = game.n_users
    r_star = game.region.sum_capacity / n
    if not contains(game.region, np.full(n, r_star), 1e-9):
        raise ScenarioError("equal split unexpectedly infeasible")
    for frac in (0.5, 0.9):
        for eps in (0.1, 0.5):
            if not ess_resists_invasion(game, frac * r_star, eps):
                raise ScenarioError("invasion inequality failed at the candidate ESS")
    return r_star


def sample_max_face(game: StaticGame, n_samples: int,
                    seed: int | None = 0,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw feasible maximal-face profiles.

    Surplus above the per-user floors is split by Dirichlet weights; draws
    that leave the region (possible for three or more users) are rejected.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    n = game.n_users
    floors = safe_rates_full(game.scenario)
    surplus = game.region.sum_capacity - float(floors.sum())
    out = np.empty((n_samples, n))
    for k in range(n_samples):
        for _ in range(1000):
            w = rng.dirichlet(np.ones(n))
            candidate = floors + w * surplus
            if contains(game.region, candidate, 1e-12):
                out[k] = candidate
                break
        else:
            raise ScenarioError("max-face sampling failed to find a feasible point")
    return out
