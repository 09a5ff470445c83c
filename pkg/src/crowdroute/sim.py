"""Slot-by-slot simulation, discounted social costs and inefficiency ratios.

Randomness is split three ways from one seed (arrivals, ground truth,
policy coins) so that every mechanism simulated with the same seed sees
identical arrivals and identical exogenous chain randomness.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .mechanisms import Mechanism, MechanismKind, OPTIMAL, mechanism_step
from .model import (
    Action,
    ModelError,
    NetworkModel,
    PathParams,
    initial_ground_truth,
    platform_step,
    stationary_belief,
    step_ground_truth,
)
from .planner import Planner, PlannerConfig

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class CostMode(str, Enum):
    BELIEF = "belief"
    REALIZED = "realized"


def default_horizon(rho: float, truncation: float = 1e-3) -> int:
    """Slots after which the discount weight drops below `truncation`."""
    if rho == 0.0:
        return 1
    return max(1, math.ceil(math.log(truncation) / math.log(rho)))


class PlannerPool:
    """One planner per (model, segment, config), shared across trials.

    Cached values are pure functions of their snapped grid cell, so sharing
    a pool never changes any result, only the running time.
    """

    def __init__(self):
        self._planners: dict = {}

    def get(self, model: NetworkModel, segment: int, cfg: PlannerConfig) -> Planner:
        key = (model, segment, cfg)
        p = self._planners.get(key)
        if p is None:
            p = self._planners[key] = Planner(model, segment, cfg)
        return p

    def clear(self):
        self._planners.clear()


_POOL = PlannerPool()


def _json_model(model: NetworkModel) -> dict:
    def conv(v):
        if isinstance(v, Enum):
            return v.value
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [conv(x) for x in v]
        return v

    return conv(dataclasses.asdict(model))


@dataclass
class TrajectoryRecord:
    seed: int
    mechanism: str
    cost_mode: str
    rho: float
    arrivals: list[bool]
    actions: list[tuple[int | None, ...]]
    disclosed: list[tuple[bool, ...]]
    observations: list[tuple[tuple[int | None, ...], ...]]
    published_latencies: list[tuple[tuple[float, ...], ...]]
    beliefs: list[tuple[tuple[float, ...], ...]]
    realized_latencies: list[tuple[tuple[float, ...], ...]]
    costs: list[float]
    model: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.costs)

    def discounted_cost(self) -> float:
        return discounted_cost(self, self.rho)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def discounted_cost(trajectory: TrajectoryRecord | Sequence[float], rho: float) -> float:
    costs = trajectory.costs if isinstance(trajectory, TrajectoryRecord) else trajectory
    total, w = 0.0, 1.0
    for c in costs:
        total += w * c
        w *= rho
    return total


def simulate(
    model: NetworkModel,
    mechanism: Mechanism,
    T: int,
    seed: int,
    cost_mode: CostMode = CostMode.BELIEF,
    planner_cfg: PlannerConfig | None = None,
    pool: PlannerPool | None = None,
    record: bool = True,
) -> TrajectoryRecord:
    """Run one trajectory of T slots.

    With `record=False` only arrivals, actions and costs are kept, which is
    what the Monte-Carlo estimators need.
    """
    if T < 1:
        raise ModelError(f"horizon must be >= 1, got {T}")
    cost_mode = CostMode(cost_mode)
    planner_cfg = planner_cfg or PlannerConfig()
    pool = pool or _POOL
    arr_ss, truth_ss, pol_ss = np.random.SeedSequence(seed).spawn(3)
    arrivals = (np.random.default_rng(arr_ss).random(T) < model.lam).tolist()
    truth_rng = np.random.default_rng(truth_ss)
    pol_rng = np.random.default_rng(pol_ss)
    n_seg = len(model.segments)
    planners = [pool.get(model, j, planner_cfg) if mechanism.uses_planner else None for j in range(n_seg)]

    truth = initial_ground_truth(model, truth_rng)
    state = model.initial_state()
    rec = TrajectoryRecord(
        seed=seed,
        mechanism=mechanism.name,
        cost_mode=cost_mode.value,
        rho=model.rho,
        arrivals=[],
        actions=[],
        disclosed=[],
        observations=[],
        published_latencies=[],
        beliefs=[],
        realized_latencies=[],
        costs=[],
        model=_json_model(model) if record else {},
    )
    for t in range(T):
        arrival = bool(arrivals[t])
        decisions = [
            mechanism_step(mechanism, state, model, j, arrival, planner_cfg, pol_rng, planners[j])
            for j in range(n_seg)
        ]
        actions = [d.realized_action for d in decisions]
        cost = 0.0
        if arrival:
            lat = state.expected_latencies if cost_mode is CostMode.BELIEF else truth.realized_latencies
            cost = sum(lat[j][a.path] for j, a in enumerate(actions))
        if record:
            rec.published_latencies.append(state.expected_latencies)
            rec.beliefs.append(state.beliefs)
            rec.realized_latencies.append(truth.realized_latencies)
            rec.disclosed.append(tuple(d.disclosed for d in decisions))
        truth, obs = step_ground_truth(truth, model, actions, truth_rng)
        state = platform_step(state, model, actions, obs)
        rec.arrivals.append(arrival)
        rec.actions.append(tuple(a.path for a in actions))
        rec.costs.append(cost)
        if record:
            rec.observations.append(tuple(tuple(o.value for o in seg) for seg in obs))
    return rec


@dataclass
class PolicyStats:
    name: str
    costs: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs))

    @property
    def stderr(self) -> float:
        if len(self.costs) < 2:
            return 0.0
        return float(np.std(self.costs, ddof=1) / math.sqrt(len(self.costs)))


@dataclass
class ExperimentReport:
    baseline: str
    trials: int
    horizon: int
    cost_mode: str
    policies: dict[str, PolicyStats]
    gamma: dict[str, float]
    gamma_stderr: dict[str, float]
    bounds: dict[str, float] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "baseline": self.baseline,
            "trials": self.trials,
            "horizon": self.horizon,
            "cost_mode": self.cost_mode,
            "policies": {
                k: {"mean_cost": v.mean, "stderr": v.stderr} for k, v in self.policies.items()
            },
            "gamma": self.gamma,
            "gamma_stderr": self.gamma_stderr,
            "bounds": self.bounds,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def ratio_stats(costs: Sequence[float], base: Sequence[float]) -> tuple[float, float]:
    """Ratio of means with a paired delta-method standard error."""
    c = np.asarray(costs, dtype=float)
    b = np.asarray(base, dtype=float)
    mb = b.mean()
    if mb == 0.0:
        raise ModelError("degenerate baseline: mean cost is 0")
    g = c.mean() / mb
    if len(c) < 2:
        return float(g), 0.0
    resid = c - g * b
    return float(g), float(np.std(resid, ddof=1) / math.sqrt(len(c)) / abs(mb))


def run_trials(
    model: NetworkModel,
    mechanism: Mechanism,
    M: int,
    T: int,
    seed_base: int,
    cost_mode: CostMode = CostMode.BELIEF,
    planner_cfg: PlannerConfig | None = None,
    pool: PlannerPool | None = None,
) -> PolicyStats:
    costs = [
        discounted_cost(
            simulate(model, mechanism, T, seed_base + i, cost_mode, planner_cfg, pool, record=False),
            model.rho,
        )
        for i in range(M)
    ]
    return PolicyStats(mechanism.name, costs)


def evaluate_policies(
    model: NetworkModel,
    mechanisms: Sequence[Mechanism],
    baseline: Mechanism = OPTIMAL,
    M: int = 50,
    T: int | None = None,
    seed_base: int = 0,
    cost_mode: CostMode = CostMode.BELIEF,
    planner_cfg: PlannerConfig | None = None,
    pool: PlannerPool | None = None,
) -> ExperimentReport:
    """Mean discounted costs and γ ratios of several mechanisms against one baseline.

    Trial i of every arm uses seed `seed_base + i` (common random numbers).
    """
    if M < 1:
        raise ModelError("need at least one trial")
    T = T or default_horizon(model.rho)
    cost_mode = CostMode(cost_mode)
    planner_cfg = planner_cfg or PlannerConfig()
    stats = {baseline.name: run_trials(model, baseline, M, T, seed_base, cost_mode, planner_cfg, pool)}
    for mech in mechanisms:
        if mech.name not in stats:
            stats[mech.name] = run_trials(model, mech, M, T, seed_base, cost_mode, planner_cfg, pool)
    base = stats[baseline.name].costs
    gamma, gse = {}, {}
    for mech in mechanisms:
        gamma[mech.name], gse[mech.name] = ratio_stats(stats[mech.name].costs, base)
    return ExperimentReport(
        baseline=baseline.name,
        trials=M,
        horizon=T,
        cost_mode=cost_mode.value,
        policies=stats,
        gamma=gamma,
        gamma_stderr=gse,
        config={"planner": _json_model(planner_cfg), "seed_base": seed_base},
    )


def estimate_gamma(
    model: NetworkModel,
    mechanism: Mechanism,
    baseline: Mechanism = OPTIMAL,
    M: int = 50,
    T: int | None = None,
    seed_base: int = 0,
    cost_mode: CostMode = CostMode.BELIEF,
    planner_cfg: PlannerConfig | None = None,
    pool: PlannerPool | None = None,
) -> ExperimentReport:
    return evaluate_policies(
        model, [mechanism], baseline, M, T, seed_base, cost_mode, planner_cfg, pool
    )


# -- worst-case instances and analytic bounds ------------------------------


class WorstCase(str, Enum):
    ZERO_EXPLORATION = "zero_exploration"
    HIDING_MAX_EXPLORATION = "hiding_max_exploration"
    SID_MAX_EXPLORATION = "sid_max_exploration"
    DYNAMIC_ZERO_EXPLORATION = "dynamic_zero_exploration"


# keeps the never-explored risky path's published latency creeping upward
# instead of drifting below the safe latency through rounding
_ZERO_EXPLORATION_MARGIN = 1e-9


def worst_case_instance(
    kind: WorstCase,
    rho: float,
    lam: float = 1.0,
    sigma: float = 0.0,
    epsilon: float = 1e-3,
    risky_latency: float | None = None,
) -> NetworkModel:
    """Two-path instances approaching the extremal price-of-anarchy values.

    The limits of the constructions (alpha -> 1, q_LL -> 1, delta_ell/l0 -> 0)
    are realized with a finite `epsilon`.
    """
    kind = WorstCase(kind)
    if not 0.0 < epsilon < 0.5:
        raise ModelError(f"epsilon must lie in (0, 0.5), got {epsilon}")
    if kind in (WorstCase.ZERO_EXPLORATION, WorstCase.DYNAMIC_ZERO_EXPLORATION):
        if kind is WorstCase.ZERO_EXPLORATION and sigma != 0.0:
            raise ModelError("zero_exploration is static; use dynamic_zero_exploration for sigma > 0")
        ell0 = 1.0
        delta = epsilon * ell0
        alpha = (1.0 - epsilon) ** lam  # makes l0 = delta / (1 - alpha^(1/lam))
        q_ll, q_hh = 1.0 - epsilon, 0.5
        xbar = stationary_belief(q_hh, q_ll)
        alpha_high = (1.0 + _ZERO_EXPLORATION_MARGIN) / xbar
        path = PathParams.risky(alpha_high, 0.0, q_hh, q_ll, 1.0, 0.0, sigma=sigma)
        return NetworkModel.parallel(
            alpha, [path], lam=lam, rho=rho, delta_ell=delta,
            safe_latency=ell0, risky_latencies=[ell0], beliefs=[xbar],
        )
    if kind is WorstCase.HIDING_MAX_EXPLORATION:
        alpha = 1.0 - epsilon
        q_ll, q_hh = 1.0 - epsilon, 0.5
        xbar = stationary_belief(q_hh, q_ll)
        path = PathParams.risky(2.0, 0.0, q_hh, q_ll, 0.8, 0.2, sigma=sigma)
        ell1 = risky_latency if risky_latency is not None else 1.0 / epsilon
        return NetworkModel.parallel(
            alpha, [path], lam=lam, rho=rho, delta_ell=1.0,
            safe_latency=0.0, risky_latencies=[ell1], beliefs=[xbar],
        )
    # SID_MAX_EXPLORATION: x̄ = 0.25 and E[alpha | x̄] = 1/2
    alpha = 1.0 - epsilon
    q_ll, q_hh = 0.9, 0.7
    xbar = stationary_belief(q_hh, q_ll)
    path = PathParams.risky(2.0, 0.0, q_hh, q_ll, 0.8, 0.2, sigma=sigma)
    ell1 = 1.0 / (1.0 - 0.5 ** (1.0 / lam))
    # the safe path sits just above the risky one so disclosed users go risky
    return NetworkModel.parallel(
        alpha, [path], lam=lam, rho=rho, delta_ell=1.0,
        safe_latency=ell1 + epsilon, risky_latencies=[ell1], beliefs=[xbar],
    )


def _rho_eff(rho: float, lam: float) -> float:
    return rho ** (1.0 / lam)


def bound_zero_exploration(rho: float, lam: float = 1.0) -> float:
    return 1.0 / (1.0 - _rho_eff(rho, lam))


def bound_sid(rho: float, lam: float = 1.0) -> float:
    return 1.0 / (1.0 - _rho_eff(rho, lam) / 2.0)


def bound_dynamic_zero_exploration(rho: float, lam: float, sigma: float) -> float:
    r = _rho_eff(rho, lam)
    return (1.0 - sigma * r) / (1.0 - r)


def bound_multisource(rho: float, lam: float, phi: float) -> float:
    r = _rho_eff(rho, lam)
    return max(1.0 / (1.0 - r / 2.0), 1.0 / (1.0 - (1.0 - phi) * r))


def analytic_bound(kind: WorstCase, rho: float, lam: float = 1.0, sigma: float = 0.0) -> float:
    kind = WorstCase(kind)
    if kind is WorstCase.ZERO_EXPLORATION:
        return bound_zero_exploration(rho, lam)
    if kind is WorstCase.DYNAMIC_ZERO_EXPLORATION:
        return bound_dynamic_zero_exploration(rho, lam, sigma)
    if kind is WorstCase.SID_MAX_EXPLORATION:
        return bound_sid(rho, lam)
    return math.inf


class Direction(str, Enum):
    AT_LEAST = "at_least"
    AT_MOST = "at_most"


class BoundStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"


@dataclass
class BoundCheck:
    status: BoundStatus
    measured: float
    stderr: float
    bound: float
    direction: Direction
    slack: float
    report: ExperimentReport

    @property
    def passed(self) -> bool:
        return self.status is BoundStatus.PASS


def check_bound(
    instance: NetworkModel,
    mechanism: Mechanism,
    bound: float,
    M: int,
    T: int | None,
    direction: Direction,
    slack: float = 0.1,
    baseline: Mechanism = OPTIMAL,
    seed_base: int = 0,
    planner_cfg: PlannerConfig | None = None,
    pool: PlannerPool | None = None,
) -> BoundCheck:
    """Measure γ against the planner baseline and compare with bound·(1 ∓ slack)."""
    direction = Direction(direction)
    report = estimate_gamma(instance, mechanism, baseline, M, T, seed_base, planner_cfg=planner_cfg, pool=pool)
    g = report.gamma[mechanism.name]
    se = report.gamma_stderr[mechanism.name]
    report.bounds[mechanism.name] = bound
    if direction is Direction.AT_LEAST:
        ok = g >= bound * (1.0 - slack)
    else:
        ok = g <= bound * (1.0 + slack)
    if slack > 0 and se > slack * bound / 3.0:
        status = BoundStatus.INCONCLUSIVE
    else:
        status = BoundStatus.PASS if ok else BoundStatus.FAIL
    log.info("bound check %s: gamma=%.4f±%.4f bound=%.4f -> %s", mechanism.name, g, se, bound, status.value)
    return BoundCheck(status, g, se, bound, direction, slack, report)
