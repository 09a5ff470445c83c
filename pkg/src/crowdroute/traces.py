"""Latency traces: loading, two-state discretization, chain fitting and fixtures."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModelError, NetworkModel, PathParams, Segment, stationary_belief

HEADER = ("road", "timestamp", "latency_minutes")
LL_DECREASE_TOL = 1e-9


class TraceError(ValueError):
    pass


class UnidentifiableError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyTrace:
    road: str
    samples: np.ndarray
    interval: float = 1.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1:
            raise TraceError("samples must be one-dimensional")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise TraceError(f"road {self.road}: samples must be finite and nonnegative")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return len(self.samples)


@dataclass
class FittedChain:
    """Two-state chain fitted to one road (row 1 of a matrix = low state)."""

    q_ll: float
    q_hh: float
    state_sequence: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    split_value: float = math.nan
    log_likelihood: float = math.nan
    road: str = ""
    emission: tuple[float, float] | None = None
    ll_history: list[float] = field(default_factory=list)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.q_ll, 1 - self.q_ll], [1 - self.q_hh, self.q_hh]])

    def to_dict(self) -> dict:
        d = {
            "road": self.road,
            "q_ll": self.q_ll,
            "q_hh": self.q_hh,
            "split_value": None if math.isnan(self.split_value) else self.split_value,
            "log_likelihood": None if math.isnan(self.log_likelihood) else self.log_likelihood,
            "n_states": int(len(self.state_sequence)),
        }
        if self.emission is not None:
            d["emission"] = list(self.emission)
        return d


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text).timestamp() / 60.0


def load_traces(path: str | Path) -> list[LatencyTrace]:
    """Read `road,timestamp,latency_minutes` rows; one trace per road.

    Timestamps are minutes (numeric) or ISO-8601; rows of a road must be
    strictly increasing in time.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != HEADER:
            raise TraceError(f"{path}:1: expected header {','.join(HEADER)}, got {','.join(header)}")
        roads: dict[str, tuple[list[float], list[float]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise TraceError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            road = row[0].strip()
            try:
                ts = _parse_time(row[1].strip())
                lat = float(row[2])
            except ValueError as e:
                raise TraceError(f"{path}:{lineno}: malformed row ({e})") from None
            if not math.isfinite(lat) or lat < 0:
                raise TraceError(f"{path}:{lineno}: latency must be nonnegative, got {row[2]}")
            times, lats = roads.setdefault(road, ([], []))
            if times and ts <= times[-1]:
                raise TraceError(f"{path}:{lineno}: rows of road {road!r} are not sorted by timestamp")
            times.append(ts)
            lats.append(lat)
    if not roads:
        raise TraceError(f"{path}: no data rows")
    out = []
    for road, (times, lats) in roads.items():
        interval = float(np.median(np.diff(times))) if len(times) > 1 else 1.0
        out.append(LatencyTrace(road, np.array(lats), interval))
    return out


def write_traces(traces: Sequence[LatencyTrace], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for tr in traces:
            for k, v in enumerate(tr.samples):
                w.writerow([tr.road, f"{k * tr.interval:g}", repr(float(v))])


class DiscretizeMethod(str, Enum):
    MEDIAN = "median"
    TWO_MEANS = "two_means"


def discretize(trace: LatencyTrace | Sequence[float], method: DiscretizeMethod = DiscretizeMethod.MEDIAN):
    """Binary states (1 = high traffic, above the split) and the split value."""
    s = trace.samples if isinstance(trace, LatencyTrace) else np.asarray(trace, dtype=float)
    method = DiscretizeMethod(method)
    if len(s) < 2:
        raise TraceError("need at least 2 samples to discretize")
    lo, hi = float(s.min()), float(s.max())
    if lo == hi:
        raise TraceError("degenerate trace, single state")
    if method is DiscretizeMethod.MEDIAN:
        split = float(np.median(s))
        if not np.any(s > split):
            # ties at the top: split just below the median instead
            split = 0.5 * (split + float(s[s < split].max()))
    else:
        # centers start at min / max; min and max always land in different clusters
        c_lo, c_hi = lo, hi
        high = None
        while True:
            split = 0.5 * (c_lo + c_hi)
            new = s > split
            if high is not None and np.array_equal(new, high):
                break
            high = new
            c_lo, c_hi = float(s[~high].mean()), float(s[high].mean())
    return (s > split).astype(int), split


def fit_transition_mle(states: Sequence[int]) -> tuple[float, float]:
    """Count-based (q_ll, q_hh)."""
    st = np.asarray(states, dtype=int)
    src, dst = st[:-1], st[1:]
    n_l = int(np.sum(src == 0))
    n_h = int(np.sum(src == 1))
    missing = [name for name, n in (("q_ll", n_l), ("q_hh", n_h)) if n == 0]
    if missing:
        raise UnidentifiableError(f"{', '.join(missing)} unidentifiable: state never occurs as a source")
    q_ll = float(np.sum((src == 0) & (dst == 0)) / n_l)
    q_hh = float(np.sum((src == 1) & (dst == 1)) / n_h)
    return q_ll, q_hh


def _forward_backward(obs, A, emit_high, pi):
    """Scaled forward-backward for binary observations; returns (log-lik, gamma, xi_sum)."""
    T = len(obs)
    B = np.where(obs[:, None] == 1, emit_high[None, :], 1.0 - emit_high[None, :])
    alpha = np.empty((T, 2))
    c = np.empty(T)
    a = pi * B[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * B[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    beta = np.empty((T, 2))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (B[t + 1] * beta[t + 1])) / c[t + 1]
    gamma = alpha * beta
    xi = np.zeros((2, 2))
    for t in range(T - 1):
        xi += A * np.outer(alpha[t], B[t + 1] * beta[t + 1]) / c[t + 1]
    with np.errstate(divide="ignore"):
        ll = float(np.sum(np.log(c)))
    return ll, gamma, xi


def fit_baum_welch(
    trace: LatencyTrace | Sequence[int],
    init: tuple[float, float, float, float] = (0.9, 0.9, 0.1, 0.9),
    max_iters: int = 200,
    tol: float = 1e-8,
    method: DiscretizeMethod = DiscretizeMethod.MEDIAN,
) -> FittedChain:
    """EM for a two-state hidden chain emitting the discretized high/low flag.

    `init` is (q_ll, q_hh, P(flag high | hidden low), P(flag high | hidden high)).
    The initial hidden distribution starts at the chain's stationary law and
    is re-estimated like every other parameter, so each iteration is a full
    EM step and the log-likelihood never decreases.
    """
    if isinstance(trace, LatencyTrace):
        obs, split = discretize(trace, method)
        road = trace.road
    else:
        obs, split, road = np.asarray(trace, dtype=int), math.nan, ""
    if len(obs) < 2:
        raise TraceError("need at least 2 observations")
    q_ll, q_hh, e_l, e_h = (float(v) for v in init)
    for v in (q_ll, q_hh, e_l, e_h):
        if not 0.0 <= v <= 1.0:
            raise ModelError(f"initial probabilities must lie in [0,1], got {init}")

    def params_to_arrays(q_ll, q_hh, e_l, e_h):
        A = np.array([[q_ll, 1 - q_ll], [1 - q_hh, q_hh]])
        den = 2.0 - q_ll - q_hh
        xh = (1.0 - q_ll) / den if den > 0 else 0.5
        return A, np.array([e_l, e_h]), np.array([1 - xh, xh])

    A, emit, pi = params_to_arrays(q_ll, q_hh, e_l, e_h)
    ll, gamma, xi = _forward_backward(obs, A, emit, pi)
    if not math.isfinite(ll):
        raise ModelError("non-finite log-likelihood at iteration 0")
    history = [ll]
    for it in range(1, max_iters + 1):
        rows = xi.sum(axis=1)
        q_ll = xi[0, 0] / rows[0] if rows[0] > 0 else q_ll
        q_hh = xi[1, 1] / rows[1] if rows[1] > 0 else q_hh
        w = gamma.sum(axis=0)
        e_l = float(gamma[obs == 1, 0].sum() / w[0]) if w[0] > 0 else e_l
        e_h = float(gamma[obs == 1, 1].sum() / w[1]) if w[1] > 0 else e_h
        A, emit, _ = params_to_arrays(q_ll, q_hh, e_l, e_h)
        pi = gamma[0] / gamma[0].sum()
        new_ll, gamma, xi = _forward_backward(obs, A, emit, pi)
        if not math.isfinite(new_ll):
            raise ModelError(f"non-finite log-likelihood at iteration {it}")
        history.append(new_ll)
        if new_ll - ll < tol:
            ll = new_ll
            break
        ll = new_ll
    states = (gamma[:, 1] > gamma[:, 0]).astype(int)
    return FittedChain(
        float(q_ll), float(q_hh), states, split, ll, road, (float(e_l), float(e_h)), history
    )


@dataclass(frozen=True)
class CoefficientEstimate:
    alpha_high: float | None = None
    alpha_low: float | None = None
    alpha: float | None = None
    unidentifiable: tuple[str, ...] = ()


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    den = float(x @ x)
    if den == 0.0:
        return math.nan
    return float(x @ y) / den


def estimate_coefficients(
    trace: LatencyTrace | Sequence[float],
    states: Sequence[int] | None = None,
    arrivals: Sequence[bool] | None = None,
    delta_ell: float = 0.0,
) -> CoefficientEstimate:
    """Least-squares slopes of l(t+1) on l(t) through the origin.

    With `states` the slope is fitted separately over pairs whose source
    state is high / low (a risky road); without, one pooled slope (a safe
    road).  Arrival flags subtract delta_ell from the successor first.
    """
    s = trace.samples if isinstance(trace, LatencyTrace) else np.asarray(trace, dtype=float)
    x, y = s[:-1], s[1:].copy()
    if arrivals is not None:
        y = y - delta_ell * np.asarray(arrivals, dtype=float)[: len(y)]
    if states is None:
        if len(x) < 2:
            return CoefficientEstimate(unidentifiable=("alpha",))
        return CoefficientEstimate(alpha=_slope(x, y))
    st = np.asarray(states, dtype=int)[: len(x)]
    out, bad = {}, []
    for name, flag in (("alpha_high", 1), ("alpha_low", 0)):
        m = st == flag
        if m.sum() < 2:
            bad.append(name)
            out[name] = None
        else:
            out[name] = _slope(x[m], y[m])
    return CoefficientEstimate(out["alpha_high"], out["alpha_low"], None, tuple(bad))


def simulate_chain(q_ll: float, q_hh: float, T: int, rng: np.random.Generator, x0: float | None = None) -> np.ndarray:
    """State path of a two-state chain (1 = high), started from x0 or the stationary law."""
    if x0 is None:
        x0 = stationary_belief(q_hh, q_ll)
    u = rng.random(T)
    st = np.empty(T, dtype=int)
    cur = int(u[0] < x0)
    st[0] = cur
    for t in range(1, T):
        stay = q_hh if cur else q_ll
        cur = cur if u[t] < stay else 1 - cur
        st[t] = cur
    return st


def synthesize_level_trace(
    road: str,
    q_ll: float,
    q_hh: float,
    T: int,
    rng: np.random.Generator,
    low: float = 10.0,
    high: float = 30.0,
    noise: float = 1.0,
) -> tuple[LatencyTrace, np.ndarray]:
    """Trace whose level alternates between two traffic regimes along a chain."""
    st = simulate_chain(q_ll, q_hh, T, rng)
    samples = np.where(st == 1, high, low) + noise * rng.standard_normal(T)
    return LatencyTrace(road, np.clip(samples, 0.0, None)), st


def synthesize_recursion_trace(
    road: str,
    states: Sequence[int],
    alpha_high: float,
    alpha_low: float,
    ell0: float,
    rng: np.random.Generator,
    inflow: float = 5.0,
    noise: float = 0.0,
) -> LatencyTrace:
    """l(t+1) = alpha(state_t) l(t) + inflow(t), with inflow(t) = inflow·(1 + noise·N(0,1))."""
    st = np.asarray(states, dtype=int)
    ell = np.empty(len(st))
    ell[0] = ell0
    for t in range(len(st) - 1):
        a = alpha_high if st[t] else alpha_low
        add = inflow * (1.0 + noise * rng.standard_normal()) if inflow else 0.0
        ell[t + 1] = max(0.0, a * ell[t] + add)
    return LatencyTrace(road, ell)


# -- built-in Shanghai fixtures ---------------------------------------------

# Average transition matrices, rows (low, high) -> columns (low, high).
FIXTURE_MATRICES: dict[str, tuple[tuple[float, float], tuple[float, float]]] = {
    "NS_E": ((0.8947, 0.1053), (0.1000, 0.9000)),
    "YA_E": ((0.7692, 0.2308), (0.2500, 0.7500)),
    "YA_T": ((0.8213, 0.1787), (0.1490, 0.8510)),
    "M_YC": ((0.6387, 0.3613), (0.3578, 0.6422)),
}


@dataclass(frozen=True)
class ShanghaiFixtures:
    chains: dict
    # per segment: (safe path name, safe latency, risky path name, risky latency, roads of the risky path)
    layout: tuple
    lam: float = 0.95
    rho: float = 0.95
    alpha: float = 0.6
    alpha_high: float = 1.5
    alpha_low: float = 0.3


def builtin_fixtures(row_low_first: bool = True) -> ShanghaiFixtures:
    chains = {}
    for name, (r1, r2) in FIXTURE_MATRICES.items():
        if row_low_first:
            chains[name] = FittedChain(q_ll=r1[0], q_hh=r2[1], road=name)
        else:
            chains[name] = FittedChain(q_ll=r2[1], q_hh=r1[0], road=name)
    layout = (
        ("1^0", 25.0, "2^0", 29.0, ("NS_E", "YA_E")),
        ("2^1", 9.0, "1^1", 12.0, ("YA_T", "M_YC")),
    )
    return ShanghaiFixtures(chains, layout)


def shanghai_model(
    fixtures: ShanghaiFixtures | None = None,
    delta_ell: float = 1.0,
    p_high: float = 0.8,
    p_low: float = 0.2,
) -> NetworkModel:
    """Two-segment network from the fixtures.

    A composite risky path of several roads uses the chain of its first
    listed road; the initial beliefs are the chains' stationary beliefs.
    """
    fx = fixtures or builtin_fixtures()
    segs, lats, bels = [], [], []
    for _safe, l_safe, _risky, l_risky, roads in fx.layout:
        ch = fx.chains[roads[0]]
        segs.append(
            Segment(
                PathParams.safe(fx.alpha),
                (PathParams.risky(fx.alpha_high, fx.alpha_low, ch.q_hh, ch.q_ll, p_high, p_low),),
            )
        )
        lats.append((l_safe, l_risky))
        bels.append((stationary_belief(ch.q_hh, ch.q_ll),))
    return NetworkModel(
        tuple(segs), lam=fx.lam, rho=fx.rho, delta_ell=delta_ell,
        initial_latencies=tuple(lats), initial_beliefs=tuple(bels),
    )
