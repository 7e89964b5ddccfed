"""Evolutionary dynamics of one population of senders on a discretized rate grid.

The population state is a probability mass vector over a uniform grid of
rates in [0, C_{1}]. Fitness of a rate a against the state mu is the expected
payoff when N-1 opponents draw rates independently from mu, which factors as

    F(a, mu) = 1[a <= C_N - (N-1) E(mu)] * g(a) * nu(D_a)

where nu(D_a) is the probability that the sampled opponents keep the joint
profile inside the capacity region. Revision protocols (BNN, replicator,
theta-Smith) turn fitness comparisons into switch rates, whose inflow minus
outflow drives the mass dynamics; total mass is conserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .capacity import ScenarioError
from .numerics import NumericsError, IntegratorConfig
from .static_game import StaticGame

PROTOCOL_KINDS = ("bnn", "replicator", "smith")

MC_SEED = 0xC0FFEE
MC_SAMPLES = 100_000


@dataclass(frozen=True)
class ActionGrid:
    """Uniform rate grid including both endpoints."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ScenarioError("grid needs at least two points")
        steps = np.diff(pts)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ScenarioError("grid must be strictly increasing with uniform spacing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    @property
    def n_points(self) -> int:
        return self.points.size

    @property
    def step(self) -> float:
        return float(self.points[1] - self.points[0])

    @classmethod
    def uniform(cls, hi: float, n_points: int, include: Optional[float] = None) -> "ActionGrid":
        """Grid on [0, hi], optionally extended so `include` lands on a node.

        A uniform grid cannot represent an arbitrary Dirac; when a rest point
        must be exactly representable, the upper end is stretched by less
        than one step so that `include` becomes a node. Points above the
        original hi never carry fitness, so the dynamics are unaffected.
        """
        if include is None:
            return cls(np.linspace(0.0, hi, n_points))
        if not 0.0 < include <= hi:
            raise ScenarioError("include point must lie in (0, hi]")
        k = int(np.floor(include * (n_points - 1) / hi))
        if k < 1:
            raise ScenarioError("grid too coarse to anchor the requested point")
        return cls(np.arange(n_points) * (include / k))

    @classmethod
    def for_game(cls, game: StaticGame, n_points: int,
                 include_equilibrium: bool = False) -> "ActionGrid":
        """Action space [0, C_{1}] of the symmetric game; optionally anchors
        the symmetric equilibrium rate C_N / N on the grid."""
        hi = game.region.bound(1)
        include = game.region.sum_capacity / game.n_users if include_equilibrium else None
        return cls.uniform(hi, n_points, include)


def as_state(mass, n_points: int, tol: float = 1e-9) -> np.ndarray:
    lam = np.atleast_1d(np.asarray(mass, dtype=float))
    if lam.shape != (n_points,):
        raise ScenarioError(f"state has shape {lam.shape}, expected ({n_points},)")
    if np.any(lam < -1e-12):
        raise ScenarioError("state masses must be nonnegative")
    if abs(float(lam.sum()) - 1.0) > tol:
        raise ScenarioError("state masses must sum to one")
    return lam


def dirac_state(grid: ActionGrid, at: float) -> np.ndarray:
    """Unit mass on the grid node equal to `at` (must be a node)."""
    idx = int(np.argmin(np.abs(grid.points - at)))
    if abs(grid.points[idx] - at) > 1e-9 * max(1.0, abs(at)):
        raise ScenarioError(f"{at} is not a grid node; nearest is {grid.points[idx]}")
    lam = np.zeros(grid.n_points)
    lam[idx] = 1.0
    return lam


def uniform_state(grid: ActionGrid) -> np.ndarray:
    return np.full(grid.n_points, 1.0 / grid.n_points)


@dataclass(frozen=True)
class RevisionProtocol:
    """Switch-rate rule: bnn, replicator, or theta-Smith with growth rate K."""

    kind: str = "smith"
    theta: float = 1.0
    growth: float = 1.0

    def __post_init__(self):
        if self.kind not in PROTOCOL_KINDS:
            raise ScenarioError(f"unknown protocol kind {self.kind!r}")
        if self.kind == "smith" and self.theta < 1.0:
            raise ScenarioError("smith protocol requires theta >= 1")
        if self.kind != "smith" and self.theta != 1.0:
            raise ScenarioError("theta is only meaningful for the smith protocol")
        if not self.growth > 0:
            raise ScenarioError("growth rate must be positive")

    @property
    def exponent(self) -> float:
        return self.theta if self.kind == "smith" else 1.0


class PopulationModel:
    """Precomputed fitness kernels for one symmetric game on one grid.

    For two and three users the opponent-feasibility probability nu(D_a) is
    an exact sum over the grid; for four or more users it is a fixed-seed
    Monte Carlo estimate using common uniforms, so it varies smoothly with
    the state and is reproducible.
    """

    def __init__(self, game: StaticGame, grid: ActionGrid,
                 mc_samples: int = MC_SAMPLES, mc_seed: int = MC_SEED):
        if not game.scenario.is_symmetric():
            raise ScenarioError("population dynamics require a symmetric scenario")
        if game.utility.scale is not None and np.ptp(game.utility.scale) != 0.0:
            raise ScenarioError("population dynamics require a shared utility")
        self.game = game
        self.grid = grid
        n = game.n_users
        self.sum_capacity = game.region.sum_capacity
        self.g_values = np.asarray(game.g(0, grid.points), dtype=float)
        pts = grid.points
        if n == 1:
            self._kernel = None
        elif n == 2:
            self._kernel = self._pair_feasible(pts[:, None], pts[None, :])
        elif n == 3:
            self._kernel = self._triple_feasible(
                pts[:, None, None], pts[None, :, None], pts[None, None, :])
        else:
            self._kernel = None
            rng = np.random.default_rng(mc_seed)
            self._mc_uniforms = rng.random((mc_samples, n - 1))

    def _pair_feasible(self, a, b):
        r = self.game.region
        return ((a + b <= r.bound(3) + 1e-12)
                & (a <= r.bound(1) + 1e-12)
                & (b <= r.bound(2) + 1e-12)).astype(float)

    def _triple_feasible(self, a, b, c):
        r = self.game.region
        ok = (a <= r.bound(1) + 1e-12) & (b <= r.bound(2) + 1e-12) & (c <= r.bound(4) + 1e-12)
        ok &= (a + b <= r.bound(3) + 1e-12) & (a + c <= r.bound(5) + 1e-12) \
            & (b + c <= r.bound(6) + 1e-12)
        ok &= a + b + c <= r.bound(7) + 1e-12
        return ok.astype(float)

    def companion_feasibility(self, lam: np.ndarray) -> np.ndarray:
        """nu(D_a) for every grid node a: probability that N-1 independent
        draws from the state keep the profile feasible."""
        n = self.game.n_users
        if n == 1:
            return (self.grid.points <= self.game.region.bound(1) + 1e-12).astype(float)
        if n == 2:
            return self._kernel @ lam
        if n == 3:
            return np.einsum("abc,b,c->a", self._kernel, lam, lam)
        return self._companion_feasibility_mc(lam)

    def _companion_feasibility_mc(self, lam: np.ndarray) -> np.ndarray:
        cdf = np.cumsum(lam)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, self._mc_uniforms)
        draws = self.grid.points[idx]  # (samples, n-1)
        region = self.game.region
        n = self.game.n_users
        nu = np.empty(self.grid.n_points)
        masks = np.arange(1, 1 << n)
        member = ((masks[:, None] >> np.arange(n)[None, :]) & 1).astype(float)
        bounds = region.bounds[1:]
        for k, a in enumerate(self.grid.points):
            profile = np.concatenate(
                [np.full((draws.shape[0], 1), a), draws], axis=1)
            sums = profile @ member.T
            nu[k] = float(np.mean(np.all(sums <= bounds + 1e-12, axis=1)))
        return nu


def mean_rate(mass, grid: ActionGrid) -> float:
    lam = as_state(mass, grid.n_points)
    return float(grid.points @ lam)


def in_mixed_region(mass, model: PopulationModel, tol: float = 1e-9) -> bool:
    """Expectation-level capacity check for the symmetric population state:
    0 <= E(mu) <= C_N / N within tol."""
    e = mean_rate(mass, model.grid)
    cap = model.sum_capacity / model.game.n_users
    return -tol <= e <= cap + tol


def fitness_vector(model: PopulationModel, mass) -> np.ndarray:
    """F(a, mu) on every grid node: feasibility-gated payoff times nu(D_a)."""
    lam = as_state(mass, model.grid.n_points)
    n = model.game.n_users
    gate_cap = model.sum_capacity - (n - 1) * float(model.grid.points @ lam)
    gate = (model.grid.points <= gate_cap + 1e-12).astype(float)
    return gate * model.g_values * model.companion_feasibility(lam)


def fitness(a: float, mass, model: PopulationModel) -> float:
    """F(a, mu) at one grid node a."""
    idx = int(np.argmin(np.abs(model.grid.points - a)))
    if abs(model.grid.points[idx] - a) > 1e-9 * max(1.0, abs(a)):
        raise ScenarioError(f"{a} is not a grid node")
    return float(fitness_vector(model, mass)[idx])


def _switch_matrix(protocol: RevisionProtocol, F: np.ndarray) -> np.ndarray:
    """B[x, a] = switch rate from node x to node a given fitness values F."""
    if protocol.kind == "bnn":
        raise ScenarioError("BNN rates are state-weighted; use protocol_rate")
    gap = np.maximum(F[None, :] - F[:, None], 0.0)
    return gap ** protocol.exponent


def protocol_rate(protocol: RevisionProtocol, x: float, a: float,
                  mass, model: PopulationModel, tol: float = 1e-9) -> float:
    """Switch rate beta^x_a(mu) from rate x to rate a, gated to zero outside
    the mixed capacity region."""
    lam = as_state(mass, model.grid.n_points)
    if not in_mixed_region(lam, model, tol):
        return 0.0
    F = fitness_vector(model, lam)
    ix = int(np.argmin(np.abs(model.grid.points - x)))
    ia = int(np.argmin(np.abs(model.grid.points - a)))
    if protocol.kind == "bnn":
        avg = float(lam @ F)
        return float(max(F[ia] - avg, 0.0))
    return float(max(F[ia] - F[ix], 0.0) ** protocol.exponent)


def _rhs_unchecked(lam: np.ndarray, protocol: RevisionProtocol,
                   model: PopulationModel, tol: float) -> np.ndarray:
    """Dynamics field without state validation (used on RK4 stage states,
    which sit slightly off the simplex)."""
    n = model.game.n_users
    e = float(model.grid.points @ lam)
    if not -tol <= e <= model.sum_capacity / n + tol:
        return np.zeros_like(lam)
    gate_cap = model.sum_capacity - (n - 1) * e
    gate = (model.grid.points <= gate_cap + 1e-12).astype(float)
    F = gate * model.g_values * model.companion_feasibility(lam)
    # the step is the reference measure of the destination integrals; without
    # it the switch-rate sums grow with the node count and the dynamics'
    # timescale would depend on the discretization
    K = protocol.growth * model.grid.step
    if protocol.kind == "bnn":
        excess = np.maximum(F - float(lam @ F), 0.0)
        return K * (excess - lam * float(excess.sum()))
    B = _switch_matrix(protocol, F)
    inflow = lam @ B
    outflow = lam * B.sum(axis=1)
    return K * (inflow - outflow)


def mean_dynamics_rhs(mass, protocol: RevisionProtocol,
                      model: PopulationModel, tol: float = 1e-9) -> np.ndarray:
    """Mass derivative lambda_dot on every node.

    Inflow sum_x lambda(x) beta^x_a minus outflow lambda(a) sum_x beta^a_x,
    scaled by the growth rate; the two double sums cancel exactly, so the
    total mass derivative is zero. The whole field is gated to zero when the
    state leaves the mixed capacity region.
    """
    lam = as_state(mass, model.grid.n_points)
    return _rhs_unchecked(lam, protocol, model, tol)


@dataclass
class PopulationTrajectory:
    """Sampled trajectory of a population run with residual diagnostics."""

    grid: ActionGrid
    times: np.ndarray
    masses: np.ndarray          # (samples, grid points)
    mean_rates: np.ndarray
    residuals: np.ndarray       # max |lambda_dot| at each sample
    max_clip: float             # most negative mass seen before clipping
    max_drift: float            # worst |sum(lambda) - 1| before renormalizing

    @property
    def final_state(self) -> np.ndarray:
        return self.masses[-1]

    def to_csv(self, path) -> None:
        header = ["t"] + [f"mass_{k}" for k in range(self.grid.n_points)] \
            + ["mean_rate", "residual"]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for s in range(self.times.size):
                row = [repr(float(self.times[s]))]
                row += [repr(float(v)) for v in self.masses[s]]
                row += [repr(float(self.mean_rates[s])), repr(float(self.residuals[s]))]
                fh.write(",".join(row) + "\n")


def simulate(mass0, protocol: RevisionProtocol, model: PopulationModel,
             config: IntegratorConfig, tol: float = 1e-9) -> PopulationTrajectory:
    """Fixed-step RK4 integration of the mean dynamics.

    After every step, negative masses are clipped at zero and the state is
    renormalized; the worst pre-clip negative and pre-normalization drift are
    reported as diagnostics. Blow-up (drift beyond 1e-3) or NaN aborts.
    """
    from .numerics import rk4_step

    lam = as_state(mass0, model.grid.n_points).copy()

    def rhs(x: np.ndarray) -> np.ndarray:
        return _rhs_unchecked(x, protocol, model, tol)

    n_steps = config.n_steps
    times, masses, means, residuals = [], [], [], []
    max_clip = 0.0
    max_drift = 0.0

    def record(t: float) -> None:
        times.append(t)
        masses.append(lam.copy())
        means.append(float(model.grid.points @ lam))
        residuals.append(float(np.abs(rhs(lam)).max()))

    record(0.0)
    t = 0.0
    for step in range(1, n_steps + 1):
        lam = rk4_step(rhs, lam, config.dt)
        neg = float(lam.min())
        if neg < 0.0:
            max_clip = max(max_clip, -neg)
            lam = np.maximum(lam, 0.0)
        drift = abs(float(lam.sum()) - 1.0)
        max_drift = max(max_drift, drift)
        if drift > 1e-3 or not np.all(np.isfinite(lam)):
            raise NumericsError(f"population integration unstable at t={t + config.dt:.6g}")
        lam = lam / lam.sum()
        t = step * config.dt
        if step % config.sample_every == 0 or step == n_steps:
            record(t)
    return PopulationTrajectory(
        grid=model.grid,
        times=np.asarray(times),
        masses=np.asarray(masses),
        mean_rates=np.asarray(means),
        residuals=np.asarray(residuals),
        max_clip=max_clip,
        max_drift=max_drift,
    )
