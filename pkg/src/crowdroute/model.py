"""Domain types and the pure dynamics of the dynamic congestion model.

Path index 0 of every segment is the safe path; indices 1..N are risky
paths whose correlation coefficient alternates between a low and a high
state according to a (possibly noisy) two-state Markov chain.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

BELIEF_DRIFT_TOL = 1e-12
DEFAULT_QUADRATURE_NODES = 64


class ModelError(ValueError):
    """Invalid parameters or an operation outside its domain."""


class ImpossibleObservation(ModelError):
    pass


class PathKind(str, Enum):
    SAFE = "safe"
    RISKY = "risky"


class Observation(Enum):
    NO_HAZARD = 0
    HAZARD = 1
    NONE = None


@dataclass(frozen=True)
class Action:
    """Routing choice for one segment: 0 = safe, 1..N = risky, None = no arrival."""

    path: int | None

    @property
    def is_safe(self) -> bool:
        return self.path == 0

    @property
    def is_risky(self) -> bool:
        return self.path is not None and self.path > 0

    @property
    def is_no_arrival(self) -> bool:
        return self.path is None

    def __str__(self) -> str:
        if self.path is None:
            return "none"
        return "safe" if self.path == 0 else f"risky{self.path}"


SAFE = Action(0)
NO_ARRIVAL = Action(None)


def risky(index: int) -> Action:
    if index < 1:
        raise ModelError(f"risky path indices start at 1, got {index}")
    return Action(index)


@dataclass(frozen=True)
class PathParams:
    kind: PathKind
    alpha_safe: float | None = None
    alpha_high: float | None = None
    alpha_low: float | None = None
    q_hh_mean: float | None = None
    q_ll_mean: float | None = None
    sigma: float = 0.0
    p_high: float | None = None
    p_low: float | None = None

    def __post_init__(self):
        if self.kind is PathKind.SAFE:
            if self.alpha_safe is None or not 0.0 < self.alpha_safe < 1.0:
                raise ModelError(f"safe coefficient must lie in (0,1), got {self.alpha_safe}")
            return
        for name in ("alpha_high", "alpha_low", "q_hh_mean", "q_ll_mean", "p_high", "p_low"):
            if getattr(self, name) is None:
                raise ModelError(f"risky path requires {name}")
        if self.alpha_high < 1.0:
            raise ModelError(f"alpha_high must be >= 1, got {self.alpha_high}")
        if not 0.0 <= self.alpha_low < 1.0:
            raise ModelError(f"alpha_low must lie in [0,1), got {self.alpha_low}")
        for name in ("q_hh_mean", "q_ll_mean", "p_high", "p_low", "sigma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ModelError(f"{name} must lie in [0,1], got {v}")
        if self.p_low > self.p_high:
            raise ModelError(f"p_low ({self.p_low}) must not exceed p_high ({self.p_high})")

    @classmethod
    def safe(cls, alpha: float) -> "PathParams":
        return cls(PathKind.SAFE, alpha_safe=alpha)

    @classmethod
    def risky(
        cls,
        alpha_high: float,
        alpha_low: float,
        q_hh: float,
        q_ll: float,
        p_high: float,
        p_low: float,
        sigma: float = 0.0,
    ) -> "PathParams":
        return cls(
            PathKind.RISKY,
            alpha_high=alpha_high,
            alpha_low=alpha_low,
            q_hh_mean=q_hh,
            q_ll_mean=q_ll,
            sigma=sigma,
            p_high=p_high,
            p_low=p_low,
        )

    @property
    def is_risky(self) -> bool:
        return self.kind is PathKind.RISKY


@dataclass(frozen=True)
class Segment:
    safe: PathParams
    risky: tuple[PathParams, ...]

    def __post_init__(self):
        if self.safe.kind is not PathKind.SAFE:
            raise ModelError("segment's first path must be safe")
        if not self.risky:
            raise ModelError("segment needs at least one risky path")
        for i, p in enumerate(self.risky, start=1):
            if not p.is_risky:
                raise ModelError(f"path {i} must be risky")
            if not p.alpha_low < self.safe.alpha_safe < p.alpha_high:
                raise ModelError(
                    f"path {i}: need alpha_low < alpha < alpha_high, got "
                    f"{p.alpha_low} < {self.safe.alpha_safe} < {p.alpha_high}"
                )

    @property
    def n_risky(self) -> int:
        return len(self.risky)

    @property
    def alpha(self) -> float:
        return self.safe.alpha_safe


@dataclass(frozen=True)
class NetworkModel:
    """A linear path graph: segments in series, one safe and N risky paths each.

    A single segment is the parallel network.
    """

    segments: tuple[Segment, ...]
    lam: float
    rho: float
    delta_ell: float
    initial_latencies: tuple[tuple[float, ...], ...]
    initial_beliefs: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if not self.segments:
            raise ModelError("network needs at least one segment")
        if not 0.0 <= self.lam <= 1.0:
            raise ModelError(f"arrival probability must lie in [0,1], got {self.lam}")
        if not 0.0 <= self.rho < 1.0:
            raise ModelError(f"discount factor must lie in [0,1), got {self.rho}")
        if not self.delta_ell > 0.0:
            raise ModelError(f"delta_ell must be positive, got {self.delta_ell}")
        if len(self.initial_latencies) != len(self.segments) or len(self.initial_beliefs) != len(
            self.segments
        ):
            raise ModelError("initial values must be given for every segment")
        for j, seg in enumerate(self.segments):
            lat, bel = self.initial_latencies[j], self.initial_beliefs[j]
            if len(lat) != seg.n_risky + 1 or len(bel) != seg.n_risky:
                raise ModelError(f"segment {j}: initial vectors do not match path counts")
            if any(v < 0 for v in lat):
                raise ModelError(f"segment {j}: latencies must be nonnegative")
            if any(not 0.0 <= v <= 1.0 for v in bel):
                raise ModelError(f"segment {j}: beliefs must lie in [0,1]")

    @classmethod
    def parallel(
        cls,
        alpha: float,
        risky_paths: Sequence[PathParams],
        *,
        lam: float,
        rho: float,
        delta_ell: float,
        safe_latency: float,
        risky_latencies: Sequence[float],
        beliefs: Sequence[float],
    ) -> "NetworkModel":
        seg = Segment(PathParams.safe(alpha), tuple(risky_paths))
        return cls(
            (seg,),
            lam=lam,
            rho=rho,
            delta_ell=delta_ell,
            initial_latencies=((float(safe_latency), *map(float, risky_latencies)),),
            initial_beliefs=(tuple(map(float, beliefs)),),
        )

    def replicate(self, n_segments: int) -> "NetworkModel":
        """Linear path graph made of `n_segments` copies of segment 0."""
        return NetworkModel(
            (self.segments[0],) * n_segments,
            lam=self.lam,
            rho=self.rho,
            delta_ell=self.delta_ell,
            initial_latencies=(self.initial_latencies[0],) * n_segments,
            initial_beliefs=(self.initial_beliefs[0],) * n_segments,
        )

    def initial_state(self) -> "PlatformState":
        return PlatformState(self.initial_latencies, self.initial_beliefs, 0)

    @property
    def max_latency(self) -> float:
        return max(max(lat) for lat in self.initial_latencies)


@dataclass(frozen=True)
class PlatformState:
    """Published expected latencies L(t) and hazard beliefs x(t), per segment."""

    expected_latencies: tuple[tuple[float, ...], ...]
    beliefs: tuple[tuple[float, ...], ...]
    slot: int = 0

    def with_segment(self, segment: int, latencies: Sequence[float], beliefs: Sequence[float]):
        lat = list(self.expected_latencies)
        bel = list(self.beliefs)
        lat[segment] = tuple(latencies)
        bel[segment] = tuple(beliefs)
        return PlatformState(tuple(lat), tuple(bel), self.slot)


@dataclass(frozen=True)
class GroundTruth:
    """Simulator-only truth: hidden coefficient states and realized latencies."""

    coeff_high: tuple[tuple[bool, ...], ...]
    realized_latencies: tuple[tuple[float, ...], ...]
    realized_q: tuple[tuple[tuple[float, float], ...], ...]


def clamp_belief(x: float) -> float:
    if 0.0 <= x <= 1.0:
        return x
    if -BELIEF_DRIFT_TOL <= x < 0.0:
        return 0.0
    if 1.0 < x <= 1.0 + BELIEF_DRIFT_TOL:
        return 1.0
    raise ModelError(f"belief {x!r} drifted outside [0,1]")


def posterior_update(x: float, y: Observation, p_high: float, p_low: float) -> float:
    if y is Observation.HAZARD:
        num = x * p_high
        den = num + (1.0 - x) * p_low
    elif y is Observation.NO_HAZARD:
        num = x * (1.0 - p_high)
        den = num + (1.0 - x) * (1.0 - p_low)
    else:
        raise ModelError("posterior update needs a hazard / no-hazard observation")
    if den == 0.0:
        raise ImpossibleObservation(
            f"impossible observation {y.name} at belief {x} (p_high={p_high}, p_low={p_low})"
        )
    return clamp_belief(num / den)


def predict_belief(x_post: float, q_hh: float, q_ll: float) -> float:
    return clamp_belief(x_post * q_hh + (1.0 - x_post) * (1.0 - q_ll))


def expected_coefficient(x_post: float, alpha_high: float, alpha_low: float) -> float:
    return x_post * alpha_high + (1.0 - x_post) * alpha_low


def update_expected_latency(ell: float, coeff: float, chosen: bool, delta_ell: float) -> float:
    return coeff * ell + (delta_ell if chosen else 0.0)


def hazard_probability(x: float, p_high: float, p_low: float) -> float:
    return (1.0 - x) * p_low + x * p_high


def stationary_belief(q_hh: float, q_ll: float) -> float:
    den = 2.0 - q_ll - q_hh
    if den <= 0.0:
        raise ModelError("reducible chain, stationary belief undefined (q_hh = q_ll = 1)")
    return (1.0 - q_ll) / den


def transition_interval(mean: float, sigma: float) -> tuple[float, float]:
    return max(0.0, mean - sigma), min(1.0, mean + sigma)


def mean_transition_probs(params: PathParams) -> tuple[float, float]:
    """The (q_hh, q_ll) the platform predicts with.

    Under a dynamic chain the platform never sees the sampled q(t), so it
    predicts with the configured means.  Ground truth uses the samples.
    """
    return params.q_hh_mean, params.q_ll_mean


def _mean_ratio_over_b(a: float, b0: float, b1: float) -> float:
    # mean of b / (a + b) for b ~ U[b0, b1], with a = 1 - q_hh and b = 1 - q_ll
    if b1 == b0:
        return b0 / (a + b0) if a + b0 > 0.0 else math.nan
    if a == 0.0:
        return 1.0
    return 1.0 - a * math.log((a + b1) / (a + b0)) / (b1 - b0)


def stationary_belief_dynamic(
    q_h_mean: float,
    q_l_mean: float,
    sigma: float,
    quadrature_nodes: int = DEFAULT_QUADRATURE_NODES,
) -> float:
    """E[(1 - q_ll)/(2 - q_ll - q_hh)] with q_hh, q_ll independent clipped uniforms.

    The integral over q_ll is taken in closed form; q_hh is integrated by
    Gauss-Legendre quadrature.  The integrand is bounded in [0,1] so only a
    point mass at q_hh = q_ll = 1 leaves it undefined.
    """
    if sigma == 0.0:
        return stationary_belief(q_h_mean, q_l_mean)
    if not 0.0 <= sigma <= 1.0:
        raise ModelError(f"sigma must lie in [0,1], got {sigma}")
    lo_h, hi_h = transition_interval(q_h_mean, sigma)
    lo_l, hi_l = transition_interval(q_l_mean, sigma)
    a0, a1 = 1.0 - hi_h, 1.0 - lo_h
    b0, b1 = 1.0 - hi_l, 1.0 - lo_l
    if a1 == 0.0 and b1 == 0.0:
        raise ModelError(
            f"stationary belief undefined: q_hh in [{lo_h}, {hi_h}] and q_ll in "
            f"[{lo_l}, {hi_l}] both collapse onto 1"
        )
    if a1 == a0:
        return _mean_ratio_over_b(a0, b0, b1)
    nodes, weights = _gauss_legendre(quadrature_nodes)
    half = 0.5 * (a1 - a0)
    mid = 0.5 * (a1 + a0)
    total = 0.0
    for t, w in zip(nodes, weights):
        total += w * _mean_ratio_over_b(mid + half * t, b0, b1)
    return clamp_belief(0.5 * total)


@functools.lru_cache(maxsize=16)
def _gauss_legendre(n: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if n < 1:
        raise ModelError(f"need at least one quadrature node, got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    return tuple(x.tolist()), tuple(w.tolist())


@functools.lru_cache(maxsize=1024)
def path_stationary_belief(params: PathParams) -> float:
    if params.sigma == 0.0:
        return stationary_belief(params.q_hh_mean, params.q_ll_mean)
    return stationary_belief_dynamic(params.q_hh_mean, params.q_ll_mean, params.sigma)


def sample_transition_probs(params: PathParams, rng: np.random.Generator) -> tuple[float, float]:
    u_h, u_l = rng.random(2)
    return _draw_q(params, u_h, u_l)


def _draw_q(params: PathParams, u_h: float, u_l: float) -> tuple[float, float]:
    if params.sigma == 0.0:
        return params.q_hh_mean, params.q_ll_mean
    lo_h, hi_h = transition_interval(params.q_hh_mean, params.sigma)
    lo_l, hi_l = transition_interval(params.q_ll_mean, params.sigma)
    return lo_h + (hi_h - lo_h) * float(u_h), lo_l + (hi_l - lo_l) * float(u_l)


def _check_action(model: NetworkModel, segment: int, action: Action) -> None:
    if action.path is None:
        return
    n = model.segments[segment].n_risky
    if not 0 <= action.path <= n:
        raise ModelError(f"segment {segment}: action {action} indexes a nonexistent path")


def advance_segment(
    seg: Segment,
    delta_ell: float,
    latencies: Sequence[float],
    beliefs: Sequence[float],
    action: Action,
    observation: Observation = Observation.NONE,
) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Platform update of one segment's (L, x) after a slot."""
    chosen = action.path
    new_lat = [update_expected_latency(latencies[0], seg.alpha, chosen == 0, delta_ell)]
    new_bel = []
    for i, p in enumerate(seg.risky, start=1):
        x = beliefs[i - 1]
        if chosen == i and observation is not Observation.NONE:
            x = posterior_update(x, observation, p.p_high, p.p_low)
        coeff = expected_coefficient(x, p.alpha_high, p.alpha_low)
        new_lat.append(update_expected_latency(latencies[i], coeff, chosen == i, delta_ell))
        q_hh, q_ll = mean_transition_probs(p)
        new_bel.append(predict_belief(x, q_hh, q_ll))
    return tuple(new_lat), tuple(new_bel)


def platform_step(
    state: PlatformState,
    model: NetworkModel,
    actions: Sequence[Action],
    observations: Sequence[Sequence[Observation]],
) -> PlatformState:
    """Advance the published latencies and beliefs of every segment by one slot.

    `observations[j][i-1]` is the report for risky path i of segment j.
    """
    lat, bel = [], []
    for j, seg in enumerate(model.segments):
        _check_action(model, j, actions[j])
        a = actions[j]
        obs = observations[j][a.path - 1] if a.is_risky else Observation.NONE
        l_new, x_new = advance_segment(
            seg, model.delta_ell, state.expected_latencies[j], state.beliefs[j], a, obs
        )
        lat.append(l_new)
        bel.append(x_new)
    return PlatformState(tuple(lat), tuple(bel), state.slot + 1)


def initial_ground_truth(model: NetworkModel, rng: np.random.Generator) -> GroundTruth:
    """Draw each risky path's hidden state from its initial belief."""
    states = []
    qs = []
    for j, seg in enumerate(model.segments):
        u = rng.random(seg.n_risky)
        states.append(tuple(bool(u[i] < model.initial_beliefs[j][i]) for i in range(seg.n_risky)))
        qs.append(tuple((p.q_hh_mean, p.q_ll_mean) for p in seg.risky))
    return GroundTruth(tuple(states), model.initial_latencies, tuple(qs))


def step_ground_truth(
    truth: GroundTruth,
    model: NetworkModel,
    actions: Sequence[Action],
    rng: np.random.Generator,
) -> tuple[GroundTruth, tuple[tuple[Observation, ...], ...]]:
    """Advance the hidden truth by one slot.

    Exactly four uniforms are consumed per risky path regardless of the
    actions, so runs that share a seed see the same exogenous randomness.
    """
    states, lats, qs, observations = [], [], [], []
    for j, seg in enumerate(model.segments):
        a = actions[j]
        _check_action(model, j, a)
        u = rng.random(4 * seg.n_risky)
        cur = truth.realized_latencies[j]
        new_lat = [update_expected_latency(cur[0], seg.alpha, a.path == 0, model.delta_ell)]
        seg_states, seg_q, seg_obs = [], [], []
        for i, p in enumerate(seg.risky, start=1):
            u_obs, u_trans, u_h, u_l = u[4 * (i - 1) : 4 * i]
            high = truth.coeff_high[j][i - 1]
            if a.path == i:
                p_obs = p.p_high if high else p.p_low
                seg_obs.append(Observation.HAZARD if u_obs < p_obs else Observation.NO_HAZARD)
            else:
                seg_obs.append(Observation.NONE)
            coeff = p.alpha_high if high else p.alpha_low
            new_lat.append(update_expected_latency(cur[i], coeff, a.path == i, model.delta_ell))
            q_hh, q_ll = _draw_q(p, u_h, u_l)
            seg_q.append((q_hh, q_ll))
            seg_states.append(bool(u_trans < q_hh) if high else not bool(u_trans < q_ll))
        states.append(tuple(seg_states))
        lats.append(tuple(new_lat))
        qs.append(tuple(seg_q))
        observations.append(tuple(seg_obs))
    return GroundTruth(tuple(states), tuple(lats), tuple(qs)), tuple(observations)
