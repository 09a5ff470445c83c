"""Decision rules: myopic, information hiding, and the planner-optimal policy.

The socially optimal policy is approximated by a truncated expectimax over
the platform's belief MDP.  Segments of a linear path graph evolve
independently and their costs add, so every segment is planned on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .model import (
    NO_ARRIVAL,
    SAFE,
    Action,
    ModelError,
    NetworkModel,
    Observation,
    PlatformState,
    Segment,
    expected_coefficient,
    hazard_probability,
    mean_transition_probs,
    path_stationary_belief,
    platform_step,
    posterior_update,
    predict_belief,
)

BISECTION_TOL = 1e-3
BRUTE_FORCE_MAX_HORIZON = 8
BRUTE_FORCE_MAX_RISKY = 2
_CACHE_LIMIT = 2_000_000


class TailMode(str, Enum):
    ZERO = "zero"
    SAFE_FOREVER = "safe_forever"


@dataclass(frozen=True)
class PlannerConfig:
    """Settings of the truncated expectimax.

    Quantization steps of 0 mean exact evaluation without a memo cache.
    With positive steps, every non-root state is snapped to the grid before
    evaluation, so a cached value is a pure function of its grid cell.
    """

    depth: int = 4
    tail_mode: TailMode = TailMode.SAFE_FOREVER
    quantize_belief: float = 0.0
    quantize_latency_rel: float = 0.0
    value_tolerance: float = 1e-3

    def __post_init__(self):
        if self.depth < 1:
            raise ModelError(f"planner depth must be >= 1, got {self.depth}")
        if self.quantize_belief < 0 or self.quantize_latency_rel < 0:
            raise ModelError("quantization steps must be nonnegative")
        object.__setattr__(self, "tail_mode", TailMode(self.tail_mode))

    @property
    def quantized(self) -> bool:
        return self.quantize_belief > 0 or self.quantize_latency_rel > 0


def default_depth(model: NetworkModel, value_tolerance: float = 1e-3) -> int:
    """Depth at which the discounted tail drops below `value_tolerance`."""
    rho = model.rho
    if rho == 0.0:
        return 1
    ell_max = max(model.max_latency, model.delta_ell)
    arg = value_tolerance * (1.0 - rho) / ell_max
    if arg >= 1.0:
        return 1
    return max(1, math.ceil(math.log(arg) / math.log(rho)))


def safe_forever_tail(ell0: float, alpha: float, lam: float, rho: float, delta_ell: float) -> float:
    """Expected discounted cost of sending every future arrival to the safe path.

    The state is taken at the start of a slot whose arrival is still unknown.
    """
    if lam == 0.0:
        return 0.0
    return lam * ell0 / (1.0 - rho * alpha) + lam * lam * delta_ell * rho / (
        (1.0 - rho) * (1.0 - rho * alpha)
    )


def myopic_decide(state: PlatformState, segment: int, has_arrival: bool) -> Action:
    if not has_arrival:
        return NO_ARRIVAL
    lat = state.expected_latencies[segment]
    if len(lat) < 2:
        raise ModelError("myopic rule needs at least one risky path")
    best = 1
    for i in range(2, len(lat)):
        if lat[i] < lat[best]:
            best = i
    return Action(best) if lat[best] < lat[0] else SAFE


def hiding_candidates(model: NetworkModel, segment: int) -> tuple[int, ...]:
    """Risky paths a user without information finds better than the safe path."""
    seg = model.segments[segment]
    out = []
    for i, p in enumerate(seg.risky, start=1):
        xbar = path_stationary_belief(p)
        if expected_coefficient(xbar, p.alpha_high, p.alpha_low) < seg.alpha:
            out.append(i)
    return tuple(out)


def hiding_decide(model: NetworkModel, segment: int, rng: np.random.Generator) -> Action:
    """No-information intent: safe, or a uniformly random attractive risky path.

    One uniform is always drawn so callers keep common random numbers.
    """
    return hiding_from_uniform(model, segment, float(rng.random()))


def hiding_from_uniform(model: NetworkModel, segment: int, u: float) -> Action:
    cands = hiding_candidates(model, segment)
    if not cands:
        return SAFE
    return Action(cands[min(int(u * len(cands)), len(cands) - 1)])


class Planner:
    """Truncated expectimax for one segment, with an optional snapped memo cache."""

    def __init__(self, model: NetworkModel, segment: int, cfg: PlannerConfig):
        seg: Segment = model.segments[segment]
        self.model = model
        self.segment = segment
        self.cfg = cfg
        self.alpha = seg.alpha
        self.lam = model.lam
        self.rho = model.rho
        self.dl = model.delta_ell
        self.n = seg.n_risky
        self.paths = []
        for p in seg.risky:
            q_hh, q_ll = mean_transition_probs(p)
            self.paths.append((p.alpha_high, p.alpha_low, q_hh, q_ll, p.p_high, p.p_low))
        groups: dict = {}
        self.group = tuple(groups.setdefault(p, len(groups)) for p in self.paths)
        self.members = tuple(
            tuple(i for i, g in enumerate(self.group) if g == gid) for gid in range(len(groups))
        )
        self.qb = cfg.quantize_belief
        self.ql = cfg.quantize_latency_rel
        self.cache: dict = {}
        self.root_cache: dict = {}
        if cfg.tail_mode is TailMode.ZERO:
            self._tail_a = self._tail_b = 0.0
        else:
            ra = self.rho * self.alpha
            self._tail_a = self.lam / (1.0 - ra)
            self._tail_b = self.lam * self.lam * self.dl * self.rho / ((1.0 - self.rho) * (1.0 - ra))
            if self.lam == 0.0:
                self._tail_b = 0.0

    # -- state helpers -------------------------------------------------

    def _passive(self, lat, bel):
        """Next latencies and beliefs of every risky path when nobody travels it."""
        nl, nb = [], []
        for i, (ah, al, qhh, qll, _, _) in enumerate(self.paths):
            x = bel[i]
            nl.append((x * ah + (1.0 - x) * al) * lat[i + 1])
            nb.append(predict_belief(x, qhh, qll))
        return nl, nb

    def _snap(self, lat, bel):
        qb, ql = self.qb, self.ql
        if ql > 0:
            lk = tuple(round(math.log(v) / ql) if v > 0.0 else None for v in lat)
            lat = tuple(math.exp(k * ql) if k is not None else 0.0 for k in lk)
        else:
            lk = tuple(lat)
        if qb > 0:
            bk = tuple(round(x / qb) for x in bel)
            bel = tuple(min(1.0, k * qb) for k in bk)
        else:
            bk = tuple(bel)
        if self.n > 1:
            # values are invariant under swapping risky paths with equal parameters
            lat, bel, lk, bk = list(lat), list(bel), list(lk), list(bk)
            for members in self.members:
                if len(members) < 2:
                    continue
                items = sorted(
                    ((_sort_key(lk[i + 1]), bk[i], lat[i + 1], bel[i]) for i in members),
                    key=lambda t: (t[0], t[1]),
                )
                for i, (k, b, lv, bv) in zip(members, items):
                    lk[i + 1] = None if k[0] < 0 else k[1]
                    bk[i] = b
                    lat[i + 1] = lv
                    bel[i] = bv
            lat, bel, lk, bk = tuple(lat), tuple(bel), tuple(lk), tuple(bk)
        return lat, bel, (lk, bk)

    # -- recursion -----------------------------------------------------

    def value(self, lat, bel, h: int) -> float:
        """W: expected discounted cost from a slot whose arrival is unknown."""
        if h == 0:
            return self._tail_a * lat[0] + self._tail_b
        if self.cfg.quantized:
            lat, bel, key = self._snap(lat, bel)
            key = (h, key)
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        v = self._value(lat, bel, h)
        if self.cfg.quantized:
            if len(self.cache) >= _CACHE_LIMIT:
                self.cache.clear()
            self.cache[key] = v
        return v

    def _value(self, lat, bel, h):
        lam = self.lam
        nl, nb = self._passive(lat, bel)
        v = 0.0
        if lam < 1.0:
            child = (self.alpha * lat[0], *nl)
            v += (1.0 - lam) * self.rho * self.value(child, tuple(nb), h - 1)
        if lam > 0.0:
            v += lam * self.decide(lat, bel, h, (nl, nb))[0]
        return v

    def decide(self, lat, bel, h: int, passive=None) -> tuple[float, int]:
        """V with an arrival: minimal cost-to-go and the minimizing path index."""
        rho, dl = self.rho, self.dl
        nl, nb = passive if passive is not None else self._passive(lat, bel)
        nb_t = tuple(nb)
        best = lat[0] + rho * self.value((self.alpha * lat[0] + dl, *nl), nb_t, h - 1)
        best_i = 0
        l0_next = self.alpha * lat[0]
        seen = set()
        for i in range(1, self.n + 1):
            li = lat[i]
            if li >= best:
                # continuation values are nonnegative and ties favor lower indices
                continue
            tag = (self.group[i - 1], li, bel[i - 1])
            if tag in seen:
                continue
            seen.add(tag)
            ah, al, qhh, qll, ph, pl = self.paths[i - 1]
            x = bel[i - 1]
            p_haz = (1.0 - x) * pl + x * ph
            q = li
            for y, prob in ((Observation.HAZARD, p_haz), (Observation.NO_HAZARD, 1.0 - p_haz)):
                if prob <= 0.0:
                    continue
                xp = posterior_update(x, y, ph, pl)
                cl = list(nl)
                cb = list(nb)
                cl[i - 1] = (xp * ah + (1.0 - xp) * al) * li + dl
                cb[i - 1] = predict_belief(xp, qhh, qll)
                q += rho * prob * self.value((l0_next, *cl), tuple(cb), h - 1)
            if q < best:
                best, best_i = q, i
        return best, best_i

    # -- public entry points --------------------------------------------

    def root(self, state: PlatformState, has_arrival: bool) -> tuple[float, Action]:
        lat = tuple(state.expected_latencies[self.segment])
        bel = tuple(state.beliefs[self.segment])
        key = (lat, bel, has_arrival)
        hit = self.root_cache.get(key)
        if hit is not None:
            return hit
        h = self.cfg.depth
        if not has_arrival:
            nl, nb = self._passive(lat, bel)
            out = self.rho * self.value((self.alpha * lat[0], *nl), tuple(nb), h - 1), NO_ARRIVAL
        else:
            v, i = self.decide(lat, bel, h)
            out = v, Action(i)
        if self.cfg.quantized:
            if len(self.root_cache) >= _CACHE_LIMIT:
                self.root_cache.clear()
            self.root_cache[key] = out
        return out


def _sort_key(k):
    return (-1, 0) if k is None else (0, k)


def plan_value(
    state: PlatformState,
    model: NetworkModel,
    segment: int,
    has_arrival: bool,
    cfg: PlannerConfig,
    planner: Planner | None = None,
) -> float:
    planner = planner or Planner(model, segment, cfg)
    return planner.root(state, has_arrival)[0]


def optimal_decide(
    state: PlatformState,
    model: NetworkModel,
    segment: int,
    has_arrival: bool,
    cfg: PlannerConfig,
    planner: Planner | None = None,
) -> Action:
    if not has_arrival:
        return NO_ARRIVAL
    planner = planner or Planner(model, segment, cfg)
    return planner.root(state, True)[1]


def brute_force_value(
    state: PlatformState,
    model: NetworkModel,
    segment: int,
    has_arrival: bool,
    horizon: int,
) -> float:
    """Exact expected discounted cost by full enumeration, tail 0.

    Written against the generic one-slot platform transition so that it
    shares no code path with the planner's recursion.
    """
    seg = model.segments[segment]
    if horizon > BRUTE_FORCE_MAX_HORIZON or seg.n_risky > BRUTE_FORCE_MAX_RISKY:
        raise ModelError(
            f"brute force limited to horizon <= {BRUTE_FORCE_MAX_HORIZON} and "
            f"N <= {BRUTE_FORCE_MAX_RISKY}, got horizon={horizon}, N={seg.n_risky}"
        )
    if horizon < 1:
        raise ModelError("horizon must be >= 1")
    sub = NetworkModel(
        (seg,),
        lam=model.lam,
        rho=model.rho,
        delta_ell=model.delta_ell,
        initial_latencies=(tuple(state.expected_latencies[segment]),),
        initial_beliefs=(tuple(state.beliefs[segment]),),
    )
    n = seg.n_risky
    quiet = ((Observation.NONE,) * n,)

    def stage(st: PlatformState, arrival: bool, h: int) -> float:
        if not arrival:
            return model.rho * expected(platform_step(st, sub, [NO_ARRIVAL], quiet), h - 1)
        costs = []
        for a in range(n + 1):
            act = Action(a)
            c = st.expected_latencies[0][a]
            if a == 0:
                c += model.rho * expected(platform_step(st, sub, [act], quiet), h - 1)
            else:
                p = seg.risky[a - 1]
                p_haz = hazard_probability(st.beliefs[0][a - 1], p.p_high, p.p_low)
                for y, prob in ((Observation.HAZARD, p_haz), (Observation.NO_HAZARD, 1 - p_haz)):
                    if prob == 0.0:
                        continue
                    obs = [Observation.NONE] * n
                    obs[a - 1] = y
                    nxt = platform_step(st, sub, [act], (tuple(obs),))
                    c += model.rho * prob * expected(nxt, h - 1)
            costs.append(c)
        return min(costs)

    def expected(st: PlatformState, h: int) -> float:
        if h == 0:
            return 0.0
        v = 0.0
        if model.lam > 0:
            v += model.lam * stage(st, True, h)
        if model.lam < 1:
            v += (1 - model.lam) * stage(st, False, h)
        return v

    root = PlatformState(sub.initial_latencies, sub.initial_beliefs, state.slot)
    return stage(root, has_arrival, horizon)


@dataclass(frozen=True)
class ExplorationThreshold:
    latency: float
    no_exploration: bool = False
    saturated: bool = False


def _with_path(state: PlatformState, segment: int, risky: int, latency=None, belief=None):
    lat = list(state.expected_latencies[segment])
    bel = list(state.beliefs[segment])
    if latency is not None:
        lat[risky] = latency
    if belief is not None:
        bel[risky - 1] = belief
    return state.with_segment(segment, lat, bel)


def exploration_threshold_optimal(
    x: float,
    model: NetworkModel,
    segment: int,
    risky: int,
    cfg: PlannerConfig,
    state: PlatformState | None = None,
    planner: Planner | None = None,
    tol: float = BISECTION_TOL,
) -> ExplorationThreshold:
    """Largest expected latency of `risky` at which the planner still routes to it.

    Found by bisection over [0, 10 l0]; everything except path `risky`'s
    belief and latency stays at the reference `state`.
    """
    state = state or model.initial_state()
    planner = planner or Planner(model, segment, cfg)
    ell0 = state.expected_latencies[segment][0]
    hi = 10.0 * max(ell0, model.delta_ell)

    def selects(ell: float) -> bool:
        st = _with_path(state, segment, risky, latency=ell, belief=x)
        return planner.root(st, True)[1].path == risky

    lo = 0.0
    if not selects(lo):
        return ExplorationThreshold(0.0, no_exploration=True)
    if selects(hi):
        return ExplorationThreshold(hi, saturated=True)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if selects(mid):
            lo = mid
        else:
            hi = mid
    return ExplorationThreshold(0.5 * (lo + hi))


@dataclass(frozen=True)
class BeliefThreshold:
    x_th: float
    lower_bound: float
    upper_bound: float

    @property
    def within_bounds(self) -> bool:
        return self.lower_bound - BISECTION_TOL <= self.x_th <= self.upper_bound + BISECTION_TOL


def belief_threshold_bounds(model: NetworkModel, segment: int, risky: int) -> tuple[float, float]:
    seg = model.segments[segment]
    p = seg.risky[risky - 1]
    a = (seg.alpha - p.alpha_low) / (p.alpha_high - p.alpha_low)
    xbar = path_stationary_belief(p)
    return min(a, xbar), max(a, xbar)


def belief_threshold(
    model: NetworkModel,
    segment: int,
    risky: int,
    cfg: PlannerConfig,
    state: PlatformState | None = None,
    tol: float = BISECTION_TOL,
) -> BeliefThreshold:
    """Belief at which the planner's exploration threshold crosses the safe latency."""
    state = state or model.initial_state()
    planner = Planner(model, segment, cfg)
    ell0 = state.expected_latencies[segment][0]

    def gap(x: float) -> float:
        return exploration_threshold_optimal(x, model, segment, risky, cfg, state, planner).latency - ell0

    lo, hi = 0.0, 1.0
    g_lo, g_hi = gap(lo), gap(hi)
    if g_lo > 0 or g_hi < 0 or g_lo == g_hi:
        raise ModelError(
            f"threshold outside [0,1]: exploration threshold never crosses l0 "
            f"(l* - l0 = {g_lo:.4g} at x=0, {g_hi:.4g} at x=1)"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    lb, ub = belief_threshold_bounds(model, segment, risky)
    return BeliefThreshold(0.5 * (lo + hi), lb, ub)


def threshold_curve(
    model: NetworkModel,
    segment: int,
    risky: int,
    cfg: PlannerConfig,
    grid: Sequence[float],
    state: PlatformState | None = None,
) -> list[tuple[float, float, float]]:
    """Rows (x, myopic threshold, planner threshold) over a belief grid."""
    state = state or model.initial_state()
    planner = Planner(model, segment, cfg)
    ell0 = state.expected_latencies[segment][0]
    return [
        (float(x), ell0, exploration_threshold_optimal(x, model, segment, risky, cfg, state, planner).latency)
        for x in grid
    ]
