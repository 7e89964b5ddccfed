"""Static rate-and-receiver-selection game with multiple receivers.

Each user picks a total rate alpha_i and a row-stochastic selection vector
p_i over receivers; the effective rate of user i at receiver j is
beta_ij = alpha_i p_ij. Every receiver imposes its own coalition capacity
region on the effective rates, so the feasible set couples all users. The
game is an exact potential game with potential equal to total expected
utility, which a multi-start projected-gradient ascent maximizes to locate
equilibria.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .capacity import ScenarioError, _log_scale, coalitions, coalition_members
from .numerics import project_simplex
from .static_game import UtilitySpec

MAX_USERS = 20


@dataclass(frozen=True)
class HybridScenario:
    """Per-(user, receiver) channel parameters plus a shared utility family.

    power and gain are N x J arrays (mW, dimensionless); noise is the common
    receiver noise variance sigma0^2 in mW.
    """

    power: np.ndarray
    gain: np.ndarray
    noise: float
    log_base: str = "2"
    utility: UtilitySpec = UtilitySpec()

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.power, dtype=float))
        h = np.atleast_2d(np.asarray(self.gain, dtype=float))
        if p.shape != h.shape or p.ndim != 2 or p.size == 0:
            raise ScenarioError("power and gain must be N x J arrays of equal shape")
        if not (np.all(p > 0) and np.all(h > 0)):
            raise ScenarioError("power and gain entries must be positive")
        if not self.noise > 0:
            raise ScenarioError("noise variance must be positive")
        if p.shape[0] > MAX_USERS:
            raise ScenarioError(f"user count exceeds the enumeration guard ({MAX_USERS})")
        _log_scale(self.log_base)
        if self.utility.scale is not None and self.utility.scale.size != p.shape[0]:
            raise ScenarioError("utility scale length must match the user count")
        p.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "power", p)
        object.__setattr__(self, "gain", h)

    @property
    def n_users(self) -> int:
        return self.power.shape[0]

    @property
    def n_receivers(self) -> int:
        return self.power.shape[1]

    @property
    def log_scale(self) -> float:
        return _log_scale(self.log_base)

    @property
    def snr_terms(self) -> np.ndarray:
        return self.power * self.gain / self.noise

    def g(self, i: int, x):
        return self.utility.value(i, x, self.log_scale)

    def g_deriv(self, i: int, x):
        return self.utility.deriv(i, x, self.log_scale)


def receiver_capacity(scenario: HybridScenario, j: int, omega: int) -> float:
    """C_{j,Omega} = log(1 + sum_{i in Omega} P_ij h_ij / sigma0^2)."""
    n = scenario.n_users
    if not 0 <= j < scenario.n_receivers:
        raise ScenarioError(f"receiver index {j} out of range")
    if not 1 <= omega < (1 << n):
        raise ScenarioError(f"coalition mask {omega} out of range")
    snr = sum(scenario.snr_terms[i, j] for i in coalition_members(omega, n))
    return math.log1p(snr) / scenario.log_scale


def receiver_sum_capacities(scenario: HybridScenario) -> np.ndarray:
    """C_{j,N} for every receiver."""
    full = (1 << scenario.n_users) - 1
    return np.array([receiver_capacity(scenario, j, full)
                     for j in range(scenario.n_receivers)])


def hybrid_safe_rate(scenario: HybridScenario, i: int, j: int, omega: int) -> float:
    """r_{ij,Omega}: rate of user i at receiver j treating the other coalition
    members as noise."""
    n = scenario.n_users
    if not omega >> i & 1:
        raise ScenarioError(f"user {i} is not a member of coalition {omega:b}")
    terms = scenario.power[:, j] * scenario.gain[:, j]
    interference = sum(terms[k] for k in coalition_members(omega, n) if k != i)
    return math.log1p(terms[i] / (scenario.noise + interference)) / scenario.log_scale


def as_mix(mix, n_users: int, n_receivers: int, tol: float = 1e-9) -> np.ndarray:
    """Validate a row-stochastic selection matrix."""
    p = np.atleast_2d(np.asarray(mix, dtype=float))
    if p.shape != (n_users, n_receivers):
        raise ScenarioError(f"mix has shape {p.shape}, expected ({n_users}, {n_receivers})")
    if np.any(p < -1e-12):
        raise ScenarioError("mix entries must be nonnegative")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > tol):
        raise ScenarioError("mix rows must sum to one")
    return p


def as_alpha(alpha, n_users: int) -> np.ndarray:
    a = np.atleast_1d(np.asarray(alpha, dtype=float))
    if a.shape != (n_users,):
        raise ScenarioError(f"alpha has shape {a.shape}, expected ({n_users},)")
    if np.any(a < -1e-12) or not np.all(np.isfinite(a)):
        raise ScenarioError("alpha entries must be finite and nonnegative")
    return a


@dataclass(frozen=True)
class HybridProfile:
    alpha: np.ndarray
    mix: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        p = np.atleast_2d(np.asarray(self.mix, dtype=float))
        a = as_alpha(a, a.size)
        p = as_mix(p, a.size, p.shape[1])
        a.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "mix", p)

    @property
    def split_rates(self) -> np.ndarray:
        """beta_ij = alpha_i p_ij."""
        return self.alpha[:, None] * self.mix


def region_tables(scenario: HybridScenario) -> tuple[np.ndarray, np.ndarray]:
    """Coalition membership matrix and per-receiver bound table.

    Returns (member, caps) with member of shape (2^N - 1, N) over the
    nonempty coalition masks in ascending order and caps of shape
    (2^N - 1, J); a profile is feasible iff member @ beta <= caps + tol for
    the effective rates beta.
    """
    n, nj = scenario.n_users, scenario.n_receivers
    masks = np.arange(1, 1 << n)
    member = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
    coalition_snr = member @ scenario.snr_terms          # (masks, J)
    caps = np.log1p(coalition_snr) / scenario.log_scale
    return member, caps


def hybrid_feasible(scenario: HybridScenario, alpha, mix, tol: float = 1e-9) -> bool:
    """True when every receiver's coalition bounds hold for the effective
    rates: sum_{i in Omega} alpha_i p_ij <= C_{j,Omega} for all j, Omega."""
    a = as_alpha(alpha, scenario.n_users)
    p = as_mix(mix, scenario.n_users, scenario.n_receivers, tol=max(tol, 1e-9))
    return _feasible_unchecked(scenario, a, p, tol)


def _feasible_unchecked(scenario: HybridScenario, a: np.ndarray, p: np.ndarray,
                        tol: float) -> bool:
    member, caps = region_tables(scenario)
    return bool(np.all(member @ (a[:, None] * p) <= caps + tol))


def expected_payoff(scenario: HybridScenario, alpha, mix, i: int,
                    tol: float = 1e-9) -> float:
    """sum_j p_ij g_i(alpha_i p_ij), zero when the profile is infeasible."""
    a = as_alpha(alpha, scenario.n_users)
    p = as_mix(mix, scenario.n_users, scenario.n_receivers, tol=max(tol, 1e-9))
    if not _feasible_unchecked(scenario, a, p, tol):
        return 0.0
    return float(np.sum(p[i] * scenario.g(i, a[i] * p[i])))


@dataclass(frozen=True)
class SplitResponse:
    value: float
    floor_active: bool
    feasible: bool


def best_response_split(scenario: HybridScenario, i: int, j: int,
                        others_alpha, others_mix) -> SplitResponse:
    """Best effective rate beta*_ij of user i at receiver j against fixed
    opponents.

    beta* = max(r_{ij,N}, min over coalitions of users active at j that
    contain i of (C_{j,Omega} - opponents' load inside Omega)). When the
    capacity left by the opponents falls below the floor, the floor value is
    returned with the feasibility flag cleared.
    """
    n = scenario.n_users
    a = np.atleast_1d(np.asarray(others_alpha, dtype=float))
    p = np.atleast_2d(np.asarray(others_mix, dtype=float))
    if a.shape != (n,) or p.shape != (n, scenario.n_receivers):
        raise ScenarioError("opponent rates and mix must cover all users; entry i is ignored")
    loads = a * p[:, j]
    active = [k for k in range(n) if k != i and p[k, j] > 0.0]
    slack = math.inf
    for r in range(len(active) + 1):
        for subset in itertools.combinations(active, r):
            mask = 1 << i
            load = 0.0
            for k in subset:
                mask |= 1 << k
                load += loads[k]
            slack = min(slack, receiver_capacity(scenario, j, mask) - load)
    full = (1 << n) - 1
    floor = hybrid_safe_rate(scenario, i, j, full)
    value = max(floor, slack)
    return SplitResponse(value, floor >= slack, slack >= floor - 1e-12)


@dataclass(frozen=True)
class ReceiverChoice:
    """Best-reply receiver set of one user given its split rates."""

    receivers: tuple[int, ...]
    alpha: float
    mix: np.ndarray
    unique: bool


def best_receiver_set(scenario: HybridScenario, i: int, beta_row,
                      tie_tol: float = 1e-9) -> ReceiverChoice:
    """Receivers maximizing g_i(beta_ij).

    A strict winner gets the whole probability mass and alpha = beta at the
    winner. Under ties every mix supported on the argmax set is a best reply;
    the uniform representative is returned and alpha sums the tied splits.
    """
    beta = np.atleast_1d(np.asarray(beta_row, dtype=float))
    if beta.shape != (scenario.n_receivers,):
        raise ScenarioError("beta row length must equal the receiver count")
    values = np.asarray(scenario.g(i, np.maximum(beta, 0.0)), dtype=float)
    best = float(values.max())
    members = tuple(int(j) for j in range(values.size) if values[j] >= best - tie_tol)
    mix = np.zeros(values.size)
    if len(members) == 1:
        mix[members[0]] = 1.0
        return ReceiverChoice(members, float(beta[members[0]]), mix, True)
    mix[list(members)] = 1.0 / len(members)
    return ReceiverChoice(members, float(beta[list(members)].sum()), mix, False)


def potential_psi(scenario: HybridScenario, alpha, mix, tol: float = 1e-9) -> float:
    """Exact potential: total expected utility, -inf when infeasible."""
    a = as_alpha(alpha, scenario.n_users)
    p = as_mix(mix, scenario.n_users, scenario.n_receivers, tol=max(tol, 1e-9))
    if not _feasible_unchecked(scenario, a, p, tol):
        return -math.inf
    total = 0.0
    for i in range(scenario.n_users):
        total += float(np.sum(p[i] * scenario.g(i, a[i] * p[i])))
    return total


def _simplex_grid(n_receivers: int, resolution: float) -> np.ndarray:
    """All compositions k/m on the simplex with denominator m = 1/resolution."""
    m = max(int(round(1.0 / resolution)), 1)
    rows = []
    for combo in itertools.combinations_with_replacement(range(n_receivers), m):
        counts = np.bincount(combo, minlength=n_receivers)
        rows.append(counts / m)
    return np.unique(np.asarray(rows, dtype=float), axis=0)


@dataclass(frozen=True)
class HybridNashVerdict:
    ok: bool
    user: Optional[int] = None
    gain: float = 0.0
    deviation_alpha: Optional[float] = None
    deviation_mix: Optional[np.ndarray] = None

    def __bool__(self) -> bool:
        return self.ok


def is_hybrid_nash(scenario: HybridScenario, alpha, mix, tol: float = 1e-3,
                   dev_resolution: float = 0.02,
                   rate_points: int = 101) -> HybridNashVerdict:
    """Grid verification of the equilibrium property.

    The profile itself must be feasible; then no user may gain more than tol
    by any joint deviation (alpha'_i, p'_i) on a rate grid times a simplex
    grid at dev_resolution, holding the others fixed.
    """
    a = as_alpha(alpha, scenario.n_users)
    p = as_mix(mix, scenario.n_users, scenario.n_receivers)
    if not _feasible_unchecked(scenario, a, p, tol=1e-9):
        return HybridNashVerdict(False, gain=math.inf)
    n, nj = scenario.n_users, scenario.n_receivers
    simplex = _simplex_grid(nj, dev_resolution)
    beta = a[:, None] * p
    full = (1 << n) - 1
    for i in range(n):
        current = expected_payoff(scenario, a, p, i)
        rate_hi = sum(receiver_capacity(scenario, j, 1 << i) for j in range(nj))
        rates = np.linspace(0.0, rate_hi, rate_points)
        best_gain, best_dev = 0.0, None
        for prow in simplex:
            trial_beta = rates[:, None] * prow[None, :]          # (rates, J)
            ok = np.ones(rates.size, dtype=bool)
            for mask in coalitions(n):
                if not mask >> i & 1:
                    continue
                load = np.zeros(nj)
                for k in coalition_members(mask, n):
                    if k != i:
                        load += beta[k]
                for j in range(nj):
                    cap = receiver_capacity(scenario, j, mask)
                    ok &= trial_beta[:, j] + load[j] <= cap + 1e-12
            if not ok.any():
                continue
            vals = np.sum(prow[None, :] * scenario.g(i, trial_beta), axis=1)
            vals = np.where(ok, vals, -math.inf)
            k_best = int(np.argmax(vals))
            gain = float(vals[k_best]) - current
            if gain > best_gain:
                best_gain, best_dev = gain, (float(rates[k_best]), prow.copy())
        if best_gain > tol:
            return HybridNashVerdict(False, i, best_gain, best_dev[0], best_dev[1])
    return HybridNashVerdict(True)


def _clip_alpha(scenario: HybridScenario, a: np.ndarray, p: np.ndarray,
                max_sweeps: int = 200) -> np.ndarray:
    """Clip alpha onto the coupled feasible set for a fixed mix by cyclic
    projection onto the violated half-spaces."""
    n, nj = scenario.n_users, scenario.n_receivers
    x = np.maximum(a, 0.0)
    rows = []
    caps = []
    for mask in coalitions(n):
        members = list(coalition_members(mask, n))
        for j in range(nj):
            coef = np.zeros(n)
            coef[members] = p[members, j]
            norm2 = float(coef @ coef)
            if norm2 > 0.0:
                rows.append((coef, norm2))
                caps.append(receiver_capacity(scenario, j, mask))
    for _ in range(max_sweeps):
        worst_v, worst_k = 1e-12, -1
        for k, (coef, _) in enumerate(rows):
            v = float(coef @ x) - caps[k]
            if v > worst_v:
                worst_v, worst_k = v, k
        if worst_k < 0:
            break
        coef, norm2 = rows[worst_k]
        x = np.maximum(x - coef * (worst_v / norm2), 0.0)
    return x


def solve_cop(scenario: HybridScenario, n_starts: int = 16,
              seed: int = 0, max_iter: int = 400,
              trace: Optional[list] = None) -> tuple[HybridProfile, float]:
    """Multi-start projected gradient ascent of the potential over the
    feasible set.

    Starts draw Dirichlet mix rows and uniform rates below the single-user
    caps. Each ascent step backtracks until the potential does not decrease,
    projecting mixes onto the simplex and rates onto the coupled polytope.
    The best local maximizer over all starts is returned (first index wins
    ties). When a list is passed as trace, every accepted potential value is
    appended to it in order.
    """
    n, nj = scenario.n_users, scenario.n_receivers
    rng = np.random.default_rng(seed)
    single_caps = np.array([[receiver_capacity(scenario, j, 1 << i)
                             for j in range(nj)] for i in range(n)])
    best_val = -math.inf
    best: Optional[tuple[np.ndarray, np.ndarray]] = None
    for _ in range(n_starts):
        p = rng.dirichlet(np.ones(nj), size=n)
        a = rng.uniform(0.0, single_caps.min(axis=1))
        a = _clip_alpha(scenario, a, p)
        val = potential_psi(scenario, a, p)
        if trace is not None:
            trace.append(val)
        step = 1.0
        for _ in range(max_iter):
            beta = a[:, None] * p
            gp = np.empty((n, nj))
            ga = np.empty(n)
            for i in range(n):
                # power-family marginal blows up at zero rate; evaluate just inside
                gprime = np.asarray(scenario.g_deriv(i, np.maximum(beta[i], 1e-12)), dtype=float)
                gval = np.asarray(scenario.g(i, beta[i]), dtype=float)
                gp[i] = gval + beta[i] * gprime
                ga[i] = float(np.sum(p[i] ** 2 * gprime))
            improved = False
            trial = step
            for _ in range(50):
                a_new = a + trial * ga
                p_new = np.vstack([project_simplex(p[i] + trial * gp[i]) for i in range(n)])
                a_new = _clip_alpha(scenario, a_new, p_new)
                v_new = potential_psi(scenario, a_new, p_new)
                if v_new > val + 1e-14:
                    a, p, val = a_new, p_new, v_new
                    if trace is not None:
                        trace.append(val)
                    step = trial * 1.5
                    improved = True
                    break
                trial *= 0.5
            if not improved:
                break
        if val > best_val + 1e-15:
            best_val = val
            best = (a.copy(), p.copy())
    if best is None:
        raise ScenarioError("no feasible starting point found")
    return HybridProfile(best[0], best[1]), float(best_val)
