"""Experiment drivers behind the command-line subcommands.

Each driver takes a resolved ExperimentConfig and returns an
ExperimentResult: a fixed-header data table, a summary dictionary and a
status that maps onto the process exit code.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .config import ConfigError, ExperimentConfig
from .mechanisms import OPTIMAL, Mechanism, MechanismKind
from .model import ModelError, NetworkModel, PathParams, stationary_belief
from .planner import PlannerConfig, belief_threshold, belief_threshold_bounds, threshold_curve
from .sim import (
    SCHEMA_VERSION,
    BoundStatus,
    CostMode,
    Direction,
    PlannerPool,
    WorstCase,
    bound_dynamic_zero_exploration,
    bound_multisource,
    bound_sid,
    bound_zero_exploration,
    check_bound,
    default_horizon,
    evaluate_policies,
    simulate,
    worst_case_instance,
)
from .traces import (
    DiscretizeMethod,
    FittedChain,
    ShanghaiFixtures,
    TraceError,
    UnidentifiableError,
    builtin_fixtures,
    discretize,
    estimate_coefficients,
    fit_baum_welch,
    fit_transition_mle,
    load_traces,
    shanghai_model,
)

log = logging.getLogger(__name__)


class Status(str, Enum):
    OK = "ok"
    PASS = "pass"
    FAIL = "fail"
    INCONCLUSIVE = "inconclusive"

    @property
    def exit_code(self) -> int:
        return {"ok": 0, "pass": 0, "fail": 1, "inconclusive": 2}[self.value]


@dataclass
class ExperimentResult:
    command: str
    header: tuple[str, ...]
    rows: list[tuple]
    summary: dict = field(default_factory=dict)
    status: Status = Status.OK
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "status": self.status.value,
            "config": self.config,
            "summary": self.summary,
            "header": list(self.header),
            "rows": [list(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        w.writerows([_cell(v) for v in r] for r in self.rows)
        return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _clean(obj):
    """JSON has no inf/nan; write them as strings so output stays valid."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


# -- builders ---------------------------------------------------------------


def planner_config(cfg: ExperimentConfig) -> PlannerConfig:
    return PlannerConfig(
        depth=cfg.planner_depth,
        tail_mode=cfg.planner_tail,
        quantize_belief=cfg.quantize_belief,
        quantize_latency_rel=cfg.quantize_latency_rel,
        value_tolerance=cfg.value_tolerance,
    )


def build_model(cfg: ExperimentConfig, **overrides) -> NetworkModel:
    """Parallel-path network (replicated into a linear path graph when n_segments > 1).

    A negative `belief` starts every risky path at its stationary belief.
    """
    p = {**cfg.to_dict(), **overrides}
    n = int(p["n_risky"])
    if n < 1:
        raise ModelError(f"n_risky must be >= 1, got {n}")
    path = PathParams.risky(
        p["alpha_high"], p["alpha_low"], p["q_hh"], p["q_ll"], p["p_high"], p["p_low"], sigma=p["sigma"]
    )
    x0 = p["belief"] if p["belief"] >= 0 else stationary_belief(p["q_hh"], p["q_ll"])
    model = NetworkModel.parallel(
        p["alpha"], [path] * n, lam=p["lam"], rho=p["rho"], delta_ell=p["delta_ell"],
        safe_latency=p["safe_latency"], risky_latencies=[p["risky_latency"]] * n, beliefs=[x0] * n,
    )
    segs = int(p["n_segments"])
    return model.replicate(segs) if segs > 1 else model


def parse_mechanisms(text: str) -> list[Mechanism]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(Mechanism.parse(tok))
        except ValueError as exc:
            raise ConfigError(f"bad mechanism {tok!r}: {exc}") from None
    if not out:
        raise ConfigError("no mechanisms configured")
    return out


def _horizon(cfg: ExperimentConfig, rho: float) -> int:
    return cfg.horizon or default_horizon(rho)


# -- thresholds ---------------------------------------------------------------


def run_thresholds(cfg: ExperimentConfig) -> ExperimentResult:
    """Exploration threshold l* against the prior belief on one risky path."""
    model = build_model(cfg)
    if len(model.segments) != 1 or model.segments[0].n_risky != 1:
        raise ConfigError("thresholds needs a single-segment network with one risky path")
    pcfg = planner_config(cfg)
    grid = np.linspace(0.05, 0.95, cfg.grid_points) if cfg.grid_points > 1 else np.array([0.5])
    rows = threshold_curve(model, 0, 1, pcfg, grid)
    star = [r[2] for r in rows]
    summary = {
        "myopic_constant": all(r[1] == rows[0][1] for r in rows),
        "optimal_nondecreasing": all(b >= a - 1e-9 for a, b in zip(star, star[1:])),
    }
    lb, ub = belief_threshold_bounds(model, 0, 1)
    summary["x_th_lower_bound"], summary["x_th_upper_bound"] = lb, ub
    try:
        th = belief_threshold(model, 0, 1, pcfg)
        summary["x_th"] = th.x_th
    except ModelError as exc:
        summary["x_th"] = None
        summary["x_th_error"] = str(exc)
    return ExperimentResult("thresholds", ("x", "ell_myopic", "ell_star"), [tuple(r) for r in rows], summary)


# -- compare ------------------------------------------------------------------

_SWEEP_FIELD = {"n": "n_risky", "lam": "lam", "sigma": "sigma", "rho": "rho"}


def run_compare(cfg: ExperimentConfig, pool: PlannerPool | None = None) -> ExperimentResult:
    """Mean discounted cost and γ of each mechanism, optionally along a sweep."""
    mechs = parse_mechanisms(cfg.mechanisms)
    baseline = Mechanism.parse(cfg.baseline)
    pcfg = planner_config(cfg)
    pool = pool or PlannerPool()
    if cfg.sweep == "none":
        points = [None]
    else:
        points = cfg.sweep_list()
        if not points:
            raise ConfigError(f"sweep {cfg.sweep!r} needs sweep_values")
    rows = []
    for v in points:
        over = {}
        if v is not None:
            key = _SWEEP_FIELD[cfg.sweep]
            over[key] = int(v) if key == "n_risky" else v
        model = build_model(cfg, **over)
        rep = evaluate_policies(
            model, mechs, baseline, cfg.trials, _horizon(cfg, model.rho), cfg.seed,
            CostMode(cfg.cost_mode), pcfg, pool,
        )
        pool.clear()
        base_mean = rep.policies[baseline.name].mean
        rows.append((cfg.sweep, v, baseline.name, base_mean, rep.policies[baseline.name].stderr, 1.0, 0.0))
        for m in mechs:
            st = rep.policies[m.name]
            rows.append((cfg.sweep, v, m.name, st.mean, st.stderr, rep.gamma[m.name], rep.gamma_stderr[m.name]))
    header = ("sweep", "value", "policy", "mean_cost", "cost_stderr", "gamma", "gamma_stderr")
    return ExperimentResult("compare", header, rows, {"baseline": baseline.name, "points": len(points)})


# -- worst case ---------------------------------------------------------------


def hiding_bound(rho: float, lam: float, risky_latency: float, delta_ell: float = 1.0) -> float:
    """Closed-form inefficiency of full hiding on the max-exploration instance."""
    r = rho ** (1.0 / lam)
    return (1.0 - r) * risky_latency / (r * r * delta_ell) + r


_WORST_DEFAULTS = {
    WorstCase.ZERO_EXPLORATION: ("myopic", Direction.AT_LEAST),
    WorstCase.DYNAMIC_ZERO_EXPLORATION: ("myopic", Direction.AT_LEAST),
    WorstCase.HIDING_MAX_EXPLORATION: ("hiding", Direction.AT_LEAST),
    WorstCase.SID_MAX_EXPLORATION: ("sid", Direction.AT_MOST),
}


def run_worstcase(cfg: ExperimentConfig, pool: PlannerPool | None = None) -> ExperimentResult:
    """Bound check on a worst-case instance.

    `worst_mechanism` overrides the mechanism the instance targets;
    `sid_multi:<phi>` is compared with the multi-source bound and `optimal`
    with the trivial ratio 1.
    """
    try:
        kind = WorstCase(cfg.worst_case)
    except ValueError:
        raise ConfigError(f"unknown worst_case {cfg.worst_case!r}") from None
    default_mech, direction = _WORST_DEFAULTS[kind]
    mech = parse_mechanisms(cfg.worst_mechanism or default_mech)[0]
    sigma = cfg.sigma if kind is WorstCase.DYNAMIC_ZERO_EXPLORATION else 0.0
    risky = cfg.risky_latency if kind is WorstCase.HIDING_MAX_EXPLORATION else None
    model = worst_case_instance(kind, cfg.rho, cfg.lam, sigma, cfg.epsilon, risky)
    if mech.kind is MechanismKind.SID_MULTI_SOURCE:
        bound, direction = bound_multisource(cfg.rho, cfg.lam, mech.phi), Direction.AT_MOST
    elif mech.kind is MechanismKind.SID:
        bound, direction = bound_sid(cfg.rho, cfg.lam), Direction.AT_MOST
    elif mech.kind is MechanismKind.OPTIMAL:
        bound, direction = 1.0, Direction.AT_MOST
    elif kind is WorstCase.ZERO_EXPLORATION:
        bound = bound_zero_exploration(cfg.rho, cfg.lam)
    elif kind is WorstCase.DYNAMIC_ZERO_EXPLORATION:
        bound = bound_dynamic_zero_exploration(cfg.rho, cfg.lam, sigma)
    elif kind is WorstCase.HIDING_MAX_EXPLORATION:
        bound = hiding_bound(cfg.rho, cfg.lam, model.initial_latencies[0][1], model.delta_ell)
    else:
        bound = bound_sid(cfg.rho, cfg.lam)
    chk = check_bound(
        model, mech, bound, cfg.trials, _horizon(cfg, cfg.rho), direction, cfg.slack,
        Mechanism.parse(cfg.baseline), cfg.seed, planner_config(cfg), pool or PlannerPool(),
    )
    status = {
        BoundStatus.PASS: Status.PASS,
        BoundStatus.FAIL: Status.FAIL,
        BoundStatus.INCONCLUSIVE: Status.INCONCLUSIVE,
    }[chk.status]
    row = (kind.value, mech.name, chk.measured, chk.stderr, chk.bound, direction.value, cfg.slack, chk.status.value)
    header = ("instance", "mechanism", "measured", "stderr", "bound", "direction", "slack", "status")
    summary = {"report": chk.report.to_dict()}
    return ExperimentResult("worstcase", header, [row], summary, status)


# -- Shanghai ----------------------------------------------------------------


def cumulative_discounted(costs: np.ndarray, rho: float) -> np.ndarray:
    """Running discounted sums: column T-1 holds the cost over the first T slots."""
    w = rho ** np.arange(costs.shape[-1])
    return np.cumsum(costs * w, axis=-1)


def _fixtures_from_traces(cfg: ExperimentConfig) -> ShanghaiFixtures:
    fx = builtin_fixtures()
    if not cfg.traces:
        return fx
    chains = dict(fx.chains)
    for tr in load_traces(cfg.traces):
        if tr.road in chains:
            chains[tr.road] = _fit_one(tr, cfg)
    return ShanghaiFixtures(chains, fx.layout, fx.lam, fx.rho, fx.alpha, fx.alpha_high, fx.alpha_low)


def run_shanghai(cfg: ExperimentConfig, pool: PlannerPool | None = None) -> ExperimentResult:
    """Cumulative discounted cost per mechanism on the two-segment trace network."""
    fx = _fixtures_from_traces(cfg)
    fx = ShanghaiFixtures(fx.chains, fx.layout, cfg.lam, cfg.rho, fx.alpha, fx.alpha_high, fx.alpha_low)
    model = shanghai_model(fx, cfg.delta_ell, cfg.p_high, cfg.p_low)
    pcfg = planner_config(cfg)
    pool = pool or PlannerPool()
    T = cfg.horizon or 101
    names = ["hiding", "myopic", "sid", "optimal"]
    curves = {}
    for name in names:
        mech = Mechanism.parse(name)
        costs = np.array([
            simulate(model, mech, T, cfg.seed + i, CostMode(cfg.cost_mode), pcfg, pool, record=False).costs
            for i in range(cfg.trials)
        ])
        curves[name] = cumulative_discounted(costs, model.rho)
    mean = {k: v.mean(axis=0) for k, v in curves.items()}
    median = {k: np.median(v, axis=0) for k, v in curves.items()}
    rows = [(t + 1, *(float(mean[k][t]) for k in names)) for t in range(T)]
    final = {k: float(mean[k][-1]) for k in names}
    opt = final["optimal"]
    checks = {
        "sid_within_30pct_of_optimal": bool(abs(final["sid"] - opt) <= 0.3 * opt),
        "myopic_at_least_1.8x_optimal": bool(final["myopic"] >= 1.8 * opt),
        "hiding_at_least_myopic": bool(final["hiding"] >= final["myopic"]),
    }
    summary = {
        "final_mean": final,
        "final_median": {k: float(median[k][-1]) for k in names},
        "checks": checks,
    }
    status = Status.PASS if all(checks.values()) else Status.FAIL
    return ExperimentResult("shanghai", ("T", *names), rows, summary, status)


# -- fitting -----------------------------------------------------------------


def _fit_one(trace, cfg: ExperimentConfig) -> FittedChain:
    if cfg.fit_method == "mle":
        states, split = discretize(trace, DiscretizeMethod(cfg.discretize))
        q_ll, q_hh = fit_transition_mle(states)
        return FittedChain(q_ll, q_hh, states, split, road=trace.road)
    if cfg.fit_method == "baum_welch":
        return fit_baum_welch(trace, max_iters=cfg.bw_max_iters, method=DiscretizeMethod(cfg.discretize))
    raise ConfigError(f"unknown fit_method {cfg.fit_method!r}")


def run_fit(cfg: ExperimentConfig) -> ExperimentResult:
    """Fit every road of the trace file; without one, export the builtin fixtures."""
    header = ("road", "q_ll", "q_hh", "alpha_high", "alpha_low", "alpha", "error")
    if not cfg.traces:
        fx = builtin_fixtures()
        rows = [(name, ch.q_ll, ch.q_hh, None, None, None, "") for name, ch in fx.chains.items()]
        summary = {"source": "builtin_fixtures", "chains": {k: v.to_dict() for k, v in fx.chains.items()}}
        return ExperimentResult("fit", header, rows, summary)
    traces = load_traces(cfg.traces)
    rows, fitted, errors = [], {}, {}
    for tr in traces:
        try:
            chain = _fit_one(tr, cfg)
            coef = estimate_coefficients(tr, chain.state_sequence)
            pooled = estimate_coefficients(tr)
            fitted[tr.road] = chain.to_dict()
            rows.append((tr.road, chain.q_ll, chain.q_hh, coef.alpha_high, coef.alpha_low, pooled.alpha, ""))
        except (TraceError, UnidentifiableError, ModelError) as exc:
            errors[tr.road] = str(exc)
            rows.append((tr.road, None, None, None, None, None, f"degenerate: {exc}"))
    summary = {"source": cfg.traces, "chains": fitted, "errors": errors}
    return ExperimentResult("fit", header, rows, summary)


# -- single trajectory -------------------------------------------------------


def run_simulate(cfg: ExperimentConfig) -> ExperimentResult:
    """One recorded trajectory of the first listed mechanism."""
    mech = parse_mechanisms(cfg.mechanisms)[0]
    model = shanghai_model() if cfg.target == "shanghai" else build_model(cfg)
    T = _horizon(cfg, model.rho)
    traj = simulate(model, mech, T, cfg.seed, CostMode(cfg.cost_mode), planner_config(cfg), PlannerPool())
    rows = []
    for t in range(T):
        acts = ";".join("" if a is None else str(a) for a in traj.actions[t])
        lat = ";".join(",".join(repr(v) for v in seg) for seg in traj.published_latencies[t])
        bel = ";".join(",".join(repr(v) for v in seg) for seg in traj.beliefs[t])
        rows.append((t, int(traj.arrivals[t]), acts, traj.costs[t], lat, bel))
    header = ("t", "arrival", "actions", "cost", "published_latencies", "beliefs")
    summary = {"discounted_cost": traj.discounted_cost(), "trajectory": traj.to_dict()}
    return ExperimentResult("simulate", header, rows, summary)


COMMANDS = {
    "thresholds": run_thresholds,
    "compare": run_compare,
    "worstcase": run_worstcase,
    "shanghai": run_shanghai,
    "fit": run_fit,
    "simulate": run_simulate,
}


def run_command(name: str, cfg: ExperimentConfig) -> ExperimentResult:
    res = COMMANDS[name](cfg)
    res.config = cfg.to_dict()
    return res
