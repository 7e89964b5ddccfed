"""Scenario files, run orchestration, and deterministic result serialization.

Scenarios are JSON documents with a kind (single_receiver or hybrid), a task
(analyze, simulate, verify) and task-specific blocks. Parsing is strict:
unknown keys are rejected with their path. Reports and trajectory CSVs are
byte-deterministic for a fixed scenario and seed; volatile data such as wall
clock time never enters the written artifacts.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import correlated, hybrid_dynamics, hybrid_game, population, static_game
from .capacity import ScenarioError, SingleReceiverScenario, coalition_members, coalitions, contains, safe_rates_full
from .hybrid_dynamics import HybridDynConfig, HybridState
from .hybrid_game import HybridScenario
from .numerics import IntegratorConfig
from .static_game import StaticGame, UtilitySpec

TASKS = ("analyze", "simulate", "verify")
KINDS = ("single_receiver", "hybrid")


def _expect(block: dict, path: str, allowed: set[str], required: set[str]) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ScenarioError(f"{path}: unknown keys {sorted(unknown)}")
    missing = required - set(block)
    if missing:
        raise ScenarioError(f"{path}: missing required keys {sorted(missing)}")


def _utility_from(block: Optional[dict], path: str) -> UtilitySpec:
    if block is None:
        return UtilitySpec()
    _expect(block, path, {"family", "gamma", "scale"}, {"family"})
    return UtilitySpec(block["family"], block.get("gamma"),
                       None if block.get("scale") is None else np.asarray(block["scale"], float))


@dataclass
class ScenarioFile:
    kind: str
    task: str
    scenario: SingleReceiverScenario | HybridScenario
    utility: UtilitySpec
    seed: int
    tol: float
    block: dict          # the task-specific block, already validated
    canonical: dict      # canonical form for digesting / round-trips

    @property
    def digest(self) -> str:
        blob = json.dumps(self.canonical, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_COMMON = {"kind", "task", "users", "power", "gain", "noise",
           "log_base", "utility", "seed", "tol"}

_SINGLE_BLOCKS = {
    "analyze": ({"tau"}, set()),
    "simulate": ({"grid_points", "protocol", "theta", "growth", "dt", "t_end",
                  "sample_every", "initial", "anchor_equilibrium"}, set()),
    "verify": ({"device", "dev_points", "cce_tol", "profile", "nash_tol"}, set()),
}

_HYBRID_BLOCKS = {
    "analyze": ({"n_starts", "dev_resolution", "nash_tol"}, set()),
    "simulate": ({"mix0", "alpha0", "mu_bar", "theta", "dt", "t_end",
                  "sample_every", "channel_fitness", "rest_tol", "nash_tol",
                  "dev_resolution", "gate_switching"}, {"mix0", "alpha0"}),
    "verify": ({"profile", "nash_tol", "dev_resolution"}, {"profile"}),
}


def _broadcast(value, shape) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    return arr.reshape(shape)


def parse_scenario(path) -> ScenarioFile:
    """Load and validate a scenario file, filling defaults."""
    raw_text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return parse_doc(doc, str(path))


def parse_doc(doc, path: str = "<scenario>") -> ScenarioFile:
    """Validate an already-loaded scenario document."""
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be an object")
    kind = doc.get("kind")
    task = doc.get("task")
    if kind not in KINDS:
        raise ScenarioError(f"{path}: kind must be one of {KINDS}")
    if task not in TASKS:
        raise ScenarioError(f"{path}: task must be one of {TASKS}")

    if kind == "single_receiver":
        allowed = _COMMON | set(TASKS)
        _expect(doc, path, allowed, {"kind", "task", "users", "power", "gain", "noise"})
        n = int(doc["users"])
        if n < 1:
            raise ScenarioError(f"{path}: users must be positive")
        scenario = SingleReceiverScenario(
            _broadcast(doc["power"], (n,)), _broadcast(doc["gain"], (n,)),
            float(doc["noise"]), doc.get("log_base", "2"))
        block_spec = _SINGLE_BLOCKS[task]
    else:
        allowed = _COMMON | {"receivers"} | set(TASKS)
        _expect(doc, path, allowed,
                {"kind", "task", "users", "receivers", "power", "gain", "noise"})
        n, nj = int(doc["users"]), int(doc["receivers"])
        if n < 1 or nj < 1:
            raise ScenarioError(f"{path}: users and receivers must be positive")
        scenario = HybridScenario(
            _broadcast(doc["power"], (n, nj)), _broadcast(doc["gain"], (n, nj)),
            float(doc["noise"]), doc.get("log_base", "2"),
            _utility_from(doc.get("utility"), f"{path}.utility"))
        block_spec = _HYBRID_BLOCKS[task]

    utility = _utility_from(doc.get("utility"), f"{path}.utility")
    block = doc.get(task, {})
    if not isinstance(block, dict):
        raise ScenarioError(f"{path}.{task}: must be an object")
    _expect(block, f"{path}.{task}", *block_spec)
    for other in TASKS:
        if other != task and other in doc:
            raise ScenarioError(f"{path}: block {other!r} does not match task {task!r}")

    return ScenarioFile(
        kind=kind,
        task=task,
        scenario=scenario,
        utility=utility,
        seed=int(doc.get("seed", 0)),
        tol=float(doc.get("tol", 1e-9)),
        block=block,
        canonical=doc,
    )


@dataclass
class RunReport:
    kind: str
    task: str
    input_digest: str
    verdicts: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def all_verdicts_pass(self) -> bool:
        return all(bool(v) for v in self.verdicts.values())

    def to_json(self) -> str:
        """Deterministic serialization; wall clock is deliberately excluded."""
        payload = {
            "kind": self.kind,
            "task": self.task,
            "input_digest": self.input_digest,
            "verdicts": _plain(self.verdicts),
            "metrics": _plain(self.metrics),
            "notes": list(self.notes),
            "artifacts": [str(a) for a in self.artifacts],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _plain(obj: Any):
    """Convert numpy scalars/arrays into plain JSON-serializable values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def run(sf: ScenarioFile, out_dir=None) -> RunReport:
    """Execute a parsed scenario and return its report.

    Simulation tasks write trajectory CSVs into out_dir (required for them);
    analyze and verify work in memory. Identical scenario and seed produce
    byte-identical artifacts.
    """
    started = time.perf_counter()
    report = RunReport(sf.kind, sf.task, sf.digest)
    if sf.kind == "single_receiver":
        game = static_game.make_game(sf.scenario, sf.utility)
        if sf.task == "analyze":
            _analyze_single(sf, game, report)
        elif sf.task == "simulate":
            _simulate_single(sf, game, report, _require_out(out_dir))
        else:
            _verify_single(sf, game, report)
    else:
        if sf.task == "analyze":
            _analyze_hybrid(sf, report)
        elif sf.task == "simulate":
            _simulate_hybrid(sf, report, _require_out(out_dir))
        else:
            _verify_hybrid(sf, report)
    report.wall_clock_s = time.perf_counter() - started
    return report


def _require_out(out_dir) -> Path:
    if out_dir is None:
        raise ScenarioError("simulate tasks need an output directory")
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _analyze_single(sf: ScenarioFile, game: StaticGame, report: RunReport) -> None:
    region = game.region
    n = game.n_users
    bounds = [{"coalition": [m + 1 for m in coalition_members(mask, n)],
               "bound": region.bound(mask)} for mask in coalitions(n)]
    report.metrics["coalition_bounds"] = bounds
    report.metrics["sum_capacity"] = region.sum_capacity
    report.metrics["guaranteed_rates"] = safe_rates_full(sf.scenario)
    metrics = static_game.efficiency_metrics(game)
    report.metrics["spoa"] = metrics["spoa"]
    report.metrics["pos"] = metrics["pos"]
    _, opt_val = static_game.social_optimum(game, seed=sf.seed)
    report.metrics["social_optimum"] = opt_val
    if sf.scenario.is_symmetric() and (game.utility.scale is None
                                       or np.ptp(game.utility.scale) == 0.0):
        report.metrics["ess_rate"] = static_game.symmetric_ess(game)
    tau = sf.block.get("tau")
    if tau is not None:
        eq = static_game.normalized_equilibrium(game, np.asarray(tau, float))
        report.metrics["normalized_equilibrium"] = {
            "rates": eq.rates, "c": eq.c, "zeta": eq.zeta, "residual": eq.residual}
    report.verdicts["equal_split_feasible"] = contains(
        region, np.full(n, region.sum_capacity / n), sf.tol)


def _simulate_single(sf: ScenarioFile, game: StaticGame, report: RunReport,
                     out_dir: Path) -> None:
    blk = sf.block
    grid = population.ActionGrid.for_game(
        game, int(blk.get("grid_points", 101)),
        include_equilibrium=bool(blk.get("anchor_equilibrium", False)))
    model = population.PopulationModel(game, grid)
    protocol = population.RevisionProtocol(
        blk.get("protocol", "smith"), float(blk.get("theta", 1.0)),
        float(blk.get("growth", 1.0)))
    initial = blk.get("initial", "uniform")
    if initial == "uniform":
        mass0 = population.uniform_state(grid)
    elif isinstance(initial, dict) and "dirac_at" in initial:
        mass0 = population.dirac_state(grid, float(initial["dirac_at"]))
    elif isinstance(initial, dict) and "masses" in initial:
        mass0 = population.as_state(np.asarray(initial["masses"], float), grid.n_points)
    else:
        raise ScenarioError("simulate.initial must be 'uniform', {'dirac_at': x} or {'masses': [...]} ")
    config = IntegratorConfig(float(blk.get("dt", 1e-2)), float(blk.get("t_end", 100.0)),
                              int(blk.get("sample_every", 100)))
    traj = population.simulate(mass0, protocol, model, config, tol=sf.tol)
    csv_path = out_dir / "population.csv"
    traj.to_csv(csv_path)
    report.artifacts.append(csv_path.name)
    r_star = game.region.sum_capacity / game.n_users
    report.metrics["mean_rate_final"] = float(traj.mean_rates[-1])
    report.metrics["equilibrium_rate"] = r_star
    report.metrics["residual_final"] = float(traj.residuals[-1])
    report.metrics["max_mass_drift"] = traj.max_drift
    report.metrics["max_negative_clip"] = traj.max_clip
    report.verdicts["mass_conserved"] = traj.max_drift <= 1e-8
    report.verdicts["in_mixed_region_final"] = population.in_mixed_region(
        traj.final_state, model, sf.tol)


def _verify_single(sf: ScenarioFile, game: StaticGame, report: RunReport) -> None:
    blk = sf.block
    if "profile" in blk:
        prof = np.asarray(blk["profile"], float)
        ok = static_game.is_nash(game, prof, float(blk.get("nash_tol", 1e-9)))
        report.verdicts["profile_is_nash"] = ok
    if "device" in blk:
        dev_blk = blk["device"]
        _expect(dev_blk, "verify.device", {"profiles", "weights"}, {"profiles", "weights"})
        device = correlated.CorrelatedDevice(
            np.asarray(dev_blk["profiles"], float), np.asarray(dev_blk["weights"], float))
        verdict = correlated.is_cce(device, game,
                                    int(blk.get("dev_points", 501)),
                                    float(blk.get("cce_tol", 1e-6)))
        report.verdicts["device_is_cce"] = verdict.ok
        if verdict.witness is not None:
            w = verdict.witness
            report.metrics["cce_witness"] = {
                "user": w.user + 1, "signal": w.signal,
                "deviation": w.deviation, "gain": w.gain}
    if not report.verdicts:
        raise ScenarioError("verify block needs a 'profile' or a 'device'")


def _analyze_hybrid(sf: ScenarioFile, report: RunReport) -> None:
    scenario: HybridScenario = sf.scenario
    blk = sf.block
    n = scenario.n_users
    caps = [{"receiver": j + 1,
             "bounds": [{"coalition": [m + 1 for m in coalition_members(mask, n)],
                         "bound": hybrid_game.receiver_capacity(scenario, j, mask)}
                        for mask in coalitions(n)]}
            for j in range(scenario.n_receivers)]
    report.metrics["receiver_capacities"] = caps
    profile, value = hybrid_game.solve_cop(
        scenario, int(blk.get("n_starts", 16)), seed=sf.seed)
    report.metrics["potential_value"] = value
    report.metrics["alpha"] = profile.alpha
    report.metrics["mix"] = profile.mix
    verdict = hybrid_game.is_hybrid_nash(
        scenario, profile.alpha, profile.mix,
        float(blk.get("nash_tol", 1e-3)), float(blk.get("dev_resolution", 0.05)))
    report.verdicts["cop_profile_nash"] = verdict.ok
    if not verdict.ok:
        report.metrics["nash_gap"] = verdict.gain


def _simulate_hybrid(sf: ScenarioFile, report: RunReport, out_dir: Path) -> None:
    scenario: HybridScenario = sf.scenario
    blk = sf.block
    cfg = HybridDynConfig(
        theta=float(blk.get("theta", 1.0)),
        mu_bar=float(blk.get("mu_bar", 0.9)),
        dt=float(blk.get("dt", 1e-3)),
        t_end=float(blk.get("t_end", 10.0)),
        sample_every=int(blk.get("sample_every", 10)),
        residual_tol=float(blk.get("rest_tol", 1e-3)),
        channel_fitness=blk.get("channel_fitness", "payoff"),
        gate_switching=bool(blk.get("gate_switching", True)),
    )
    mix0 = np.asarray(blk["mix0"], float)
    alpha0 = np.asarray(blk["alpha0"], float)
    state0 = HybridState(mix0, alpha0[:, None] * mix0)
    traj = hybrid_dynamics.simulate_hybrid(scenario, state0, cfg)
    csv_path = out_dir / "hybrid.csv"
    traj.to_csv(csv_path)
    report.artifacts.append(csv_path.name)

    terminal = traj.final_state
    rest = hybrid_dynamics.interior_rest_point_check(scenario, terminal, cfg,
                                                     cfg.residual_tol)
    t_chi = traj.first_time_below("chi", cfg.residual_tol)
    t_beta = traj.first_time_below("beta", cfg.residual_tol)
    report.metrics["alpha_final"] = terminal.alpha
    report.metrics["mix_final"] = terminal.mix
    report.metrics["beta_final"] = terminal.beta
    report.metrics["load_defects"] = rest.defects
    report.metrics["chi_residual_final"] = rest.chi_residual
    report.metrics["t_mix_residual_below_tol"] = t_chi
    report.metrics["t_beta_residual_below_tol"] = t_beta
    report.verdicts["interior_rest_point"] = rest.passes
    report.verdicts["timescale_separation"] = (
        t_chi is not None and (t_beta is None or t_chi < t_beta))
    nash = hybrid_game.is_hybrid_nash(
        scenario, terminal.alpha, terminal.mix,
        float(blk.get("nash_tol", 1e-3)), float(blk.get("dev_resolution", 0.05)))
    report.verdicts["terminal_profile_nash"] = nash.ok
    if not nash.ok:
        report.notes.append(
            "terminal profile (alpha = row sums of beta, mix) is not a feasible "
            "Nash profile: with an interior mix the selection-weighted loads "
            "sum_i p_ij beta_ij that the split dynamics drive onto the sum "
            "capacities are strictly smaller than the static loads "
            "sum_i alpha_i p_ij, so load defects of zero and static "
            "feasibility exclude each other at interior rest points.")


def _verify_hybrid(sf: ScenarioFile, report: RunReport) -> None:
    scenario: HybridScenario = sf.scenario
    blk = sf.block
    prof_blk = blk["profile"]
    _expect(prof_blk, "verify.profile", {"alpha", "mix"}, {"alpha", "mix"})
    verdict = hybrid_game.is_hybrid_nash(
        scenario, np.asarray(prof_blk["alpha"], float),
        np.asarray(prof_blk["mix"], float),
        float(blk.get("nash_tol", 1e-3)), float(blk.get("dev_resolution", 0.02)))
    report.verdicts["profile_is_hybrid_nash"] = verdict.ok
    if not verdict.ok and verdict.user is not None:
        report.metrics["nash_witness"] = {
            "user": verdict.user + 1, "gain": verdict.gain,
            "deviation_alpha": verdict.deviation_alpha,
            "deviation_mix": verdict.deviation_mix}
