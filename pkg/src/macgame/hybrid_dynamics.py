"""Coupled evolution of receiver-selection mixes and split rates.

The selection rows follow generalized Smith dynamics: probability flows from
receiver j to j' at rate max(0, u_ij' - u_ij)^theta, which conserves each row
sum exactly. The split rates follow the growth law

    beta_dot_ij = -mu_bar * (sum_i' p_i'j beta_i'j - C_{j,N}) * p_ij * beta_ij,

a logistic-type relaxation of every receiver's expected load onto its sum
capacity. The two blocks run on visibly different time scales: the mix
settles first, the split rates keep growing until the loads fill the
capacities.

Two channel fitness fields are supported. "payoff" uses the level payoff
u_ij = g_i(alpha_i p_ij); under it probability flows toward receivers that
already carry more weight, so interior rest points repel and the mix
polarizes. "marginal_utility" uses u_ij = alpha_i g_i'(alpha_i p_ij), the
marginal value of routing rate share to receiver j; with a strictly concave
utility this is a congestion field whose unique rest mix is uniform, the
regime the multi-receiver example actually exhibits. The field is selected
per run through HybridDynConfig.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .capacity import ScenarioError
from .hybrid_game import (
    HybridScenario,
    as_alpha,
    as_mix,
    _feasible_unchecked,
    receiver_capacity,
    receiver_sum_capacities,
)
from .numerics import NumericsError

FITNESS_FIELDS = ("payoff", "marginal_utility")


@dataclass(frozen=True)
class HybridDynConfig:
    theta: float = 1.0
    mu_bar: float = 0.9
    dt: float = 1e-3
    t_end: float = 10.0
    sample_every: int = 10
    residual_tol: float = 1e-3
    channel_fitness: str = "payoff"
    gate_switching: bool = True

    def __post_init__(self):
        if self.theta < 1.0:
            raise ScenarioError("theta must be at least 1")
        if not self.mu_bar > 0:
            raise ScenarioError("mu_bar must be positive")
        if not (self.dt > 0 and self.t_end > 0 and self.dt <= self.t_end):
            raise ScenarioError("need 0 < dt <= t_end")
        if self.sample_every < 1:
            raise ScenarioError("sample_every must be >= 1")
        if self.channel_fitness not in FITNESS_FIELDS:
            raise ScenarioError(f"channel_fitness must be one of {FITNESS_FIELDS}")


@dataclass(frozen=True)
class HybridState:
    mix: np.ndarray
    beta: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.mix, dtype=float))
        b = np.atleast_2d(np.asarray(self.beta, dtype=float))
        if p.shape != b.shape:
            raise ScenarioError("mix and beta must have identical shapes")
        as_mix(p, p.shape[0], p.shape[1])
        if np.any(b < -1e-12):
            raise ScenarioError("beta entries must be nonnegative")
        p.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "mix", p)
        object.__setattr__(self, "beta", b)

    @property
    def alpha(self) -> np.ndarray:
        """Per-user total rate alpha_i = sum_j beta_ij."""
        return self.beta.sum(axis=1)


def channel_fitness(scenario: HybridScenario, alpha: np.ndarray, mix: np.ndarray,
                    kind: str) -> np.ndarray:
    """N x J fitness field driving the receiver-selection flow."""
    # integrator stage states may dip infinitesimally negative; the utility
    # families are only defined on the nonnegative axis
    beta = np.maximum(alpha[:, None] * mix, 0.0)
    if kind == "payoff":
        return np.vstack([np.asarray(scenario.g(i, beta[i]), dtype=float)
                          for i in range(scenario.n_users)])
    if kind == "marginal_utility":
        return np.vstack([
            alpha[i] * np.asarray(scenario.g_deriv(i, np.maximum(beta[i], 1e-15)), dtype=float)
            for i in range(scenario.n_users)])
    raise ScenarioError(f"unknown channel fitness field {kind!r}")


def switch_rate(scenario: HybridScenario, i: int, j: int, j_new: int,
                alpha, mix, cfg: HybridDynConfig) -> float:
    """Switching weight eta^i_{j -> j_new} = max(0, u_ij_new - u_ij)^theta,
    zero when the profile violates any receiver region."""
    a = as_alpha(alpha, scenario.n_users)
    p = as_mix(mix, scenario.n_users, scenario.n_receivers)
    if cfg.gate_switching and not _feasible_unchecked(scenario, a, p, tol=1e-9):
        return 0.0
    u = channel_fitness(scenario, a, p, cfg.channel_fitness)
    return float(max(0.0, u[i, j_new] - u[i, j]) ** cfg.theta)


def _smith_field(scenario: HybridScenario, alpha: np.ndarray, mix: np.ndarray,
                 cfg: HybridDynConfig, gated: bool = True) -> np.ndarray:
    if gated and cfg.gate_switching \
            and not _feasible_unchecked(scenario, alpha, mix, tol=1e-9):
        return np.zeros_like(mix)
    u = channel_fitness(scenario, alpha, mix, cfg.channel_fitness)
    # eta[i, j, j'] = max(0, u_ij' - u_ij)^theta
    eta = np.maximum(0.0, u[:, None, :] - u[:, :, None]) ** cfg.theta
    inflow = np.einsum("ik,ikj->ij", mix, eta)
    outflow = mix * eta.sum(axis=2)
    return inflow - outflow


def smith_rhs(scenario: HybridScenario, state: HybridState,
              cfg: HybridDynConfig) -> np.ndarray:
    """Mix derivative chi; each row sums to zero exactly."""
    return _smith_field(scenario, state.alpha, state.mix, cfg)


def gfunction_rhs(scenario: HybridScenario, state: HybridState,
                  cfg: HybridDynConfig) -> np.ndarray:
    """Split-rate derivative of the growth law; zero splits stay zero."""
    caps = receiver_sum_capacities(scenario)
    loads = (state.mix * state.beta).sum(axis=0)
    return -cfg.mu_bar * (loads - caps)[None, :] * state.mix * state.beta


@dataclass
class HybridTrajectory:
    times: np.ndarray
    mixes: np.ndarray          # (samples, N, J)
    betas: np.ndarray          # (samples, N, J)
    alphas: np.ndarray         # (samples, N)
    residual_chi: np.ndarray
    residual_beta: np.ndarray
    max_clip: float
    max_row_drift: float

    @property
    def final_state(self) -> HybridState:
        return HybridState(self.mixes[-1], self.betas[-1], float(self.times[-1]))

    def first_time_below(self, which: str, tol: float) -> Optional[float]:
        """Earliest sample time at which a residual falls below tol."""
        series = self.residual_chi if which == "chi" else self.residual_beta
        hits = np.nonzero(series < tol)[0]
        return float(self.times[hits[0]]) if hits.size else None

    def to_csv(self, path) -> None:
        n, j = self.mixes.shape[1], self.mixes.shape[2]
        header = ["t"]
        header += [f"p_{i + 1}{r + 1}" for i in range(n) for r in range(j)]
        header += [f"beta_{i + 1}{r + 1}" for i in range(n) for r in range(j)]
        header += [f"alpha_{i + 1}" for i in range(n)]
        header += ["residual_chi", "residual_beta"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for s in range(self.times.size):
                row = [repr(float(self.times[s]))]
                row += [repr(float(v)) for v in self.mixes[s].ravel()]
                row += [repr(float(v)) for v in self.betas[s].ravel()]
                row += [repr(float(v)) for v in self.alphas[s]]
                row += [repr(float(self.residual_chi[s])),
                        repr(float(self.residual_beta[s]))]
                fh.write(",".join(row) + "\n")


def simulate_hybrid(scenario: HybridScenario, state0: HybridState,
                    cfg: HybridDynConfig) -> HybridTrajectory:
    """Joint fixed-step RK4 integration of the mix and split-rate blocks.

    Initial splits must respect the single-user caps beta_ij <= C_{j,{i}}.
    After each step mix rows are renormalized (drift tracked, abort beyond
    1e-6) and splits are clipped at zero. Residual series record the largest
    mix and split derivatives at the sample times.
    """
    n, nj = scenario.n_users, scenario.n_receivers
    p = np.array(state0.mix, dtype=float)
    b = np.array(state0.beta, dtype=float)
    if p.shape != (n, nj):
        raise ScenarioError("state shape does not match the scenario")
    for i in range(n):
        for j in range(nj):
            if b[i, j] > receiver_capacity(scenario, j, 1 << i) + 1e-12:
                raise ScenarioError(
                    f"initial split beta[{i},{j}] exceeds the single-user cap")
    caps = receiver_sum_capacities(scenario)

    def field(pp: np.ndarray, bb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        alpha = bb.sum(axis=1)
        chi = _smith_field(scenario, alpha, pp, cfg)
        loads = (pp * bb).sum(axis=0)
        bdot = -cfg.mu_bar * (loads - caps)[None, :] * pp * bb
        return chi, bdot

    n_steps = int(round(cfg.t_end / cfg.dt))
    times, mixes, betas, alphas, res_chi, res_beta = [], [], [], [], [], []
    max_clip = 0.0
    max_drift = 0.0

    def record(t: float) -> None:
        chi, bdot = field(p, b)
        times.append(t)
        mixes.append(p.copy())
        betas.append(b.copy())
        alphas.append(b.sum(axis=1))
        res_chi.append(float(np.abs(chi).max()))
        res_beta.append(float(np.abs(bdot).max()))

    record(0.0)
    dt = cfg.dt
    for step in range(1, n_steps + 1):
        k1p, k1b = field(p, b)
        k2p, k2b = field(p + 0.5 * dt * k1p, b + 0.5 * dt * k1b)
        k3p, k3b = field(p + 0.5 * dt * k2p, b + 0.5 * dt * k2b)
        k4p, k4b = field(p + dt * k3p, b + dt * k3b)
        p = p + (dt / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        b = b + (dt / 6.0) * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
        t = step * dt
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(b))):
            raise NumericsError(f"hybrid integration produced NaN at t={t:.6g}")
        neg = float(min(p.min(), b.min()))
        if neg < 0.0:
            max_clip = max(max_clip, -neg)
        p = np.maximum(p, 0.0)
        b = np.maximum(b, 0.0)
        drift = float(np.abs(p.sum(axis=1) - 1.0).max())
        max_drift = max(max_drift, drift)
        if drift > 1e-6:
            raise NumericsError(f"mix row drift {drift:.3g} at t={t:.6g}")
        p = p / p.sum(axis=1, keepdims=True)
        if step % cfg.sample_every == 0 or step == n_steps:
            record(t)
    return HybridTrajectory(
        times=np.asarray(times),
        mixes=np.asarray(mixes),
        betas=np.asarray(betas),
        alphas=np.asarray(alphas),
        residual_chi=np.asarray(res_chi),
        residual_beta=np.asarray(res_beta),
        max_clip=max_clip,
        max_row_drift=max_drift,
    )


@dataclass(frozen=True)
class RestPointReport:
    interior: bool
    defects: np.ndarray        # per receiver |sum_i p_ij beta_ij - C_{j,N}|
    chi_residual: float
    passes: bool


def interior_rest_point_check(scenario: HybridScenario, state: HybridState,
                              cfg: HybridDynConfig, tol: float = 1e-3) -> RestPointReport:
    """Stationarity certificate for a strictly interior state.

    Reports the per-receiver load defect |sum_i p_ij beta_ij - C_{j,N}| and
    the ungated Smith residual; both must fall below tol, and all mix and
    split entries must exceed tol for the state to count as interior. The
    ungated field is used so the certificate reflects the flow itself rather
    than a feasibility freeze.
    """
    p, b = state.mix, state.beta
    interior = bool(np.all(p > tol) and np.all(b > tol))
    caps = receiver_sum_capacities(scenario)
    defects = np.abs((p * b).sum(axis=0) - caps)
    chi = _smith_field(scenario, state.alpha, p, cfg, gated=False)
    chi_res = float(np.abs(chi).max())
    passes = interior and bool(np.all(defects <= tol)) and chi_res <= tol
    return RestPointReport(interior, defects, chi_res, passes)
