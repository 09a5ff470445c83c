"""User-facing mechanisms: what each arriving user is told and what they do.

Every mechanism step draws exactly two policy uniforms per segment (a
source coin and the hiding pick), whatever the branch taken, so different
mechanisms simulated with the same seed see the same random stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import NO_ARRIVAL, SAFE, Action, ModelError, NetworkModel, PlatformState
from .planner import Planner, PlannerConfig, hiding_from_uniform, myopic_decide


class MechanismKind(str, Enum):
    FULL_DISCLOSURE = "myopic"
    FULL_HIDING = "hiding"
    SID = "sid"
    SID_MULTI_SOURCE = "sid_multi"
    OPTIMAL = "optimal"


@dataclass(frozen=True)
class Mechanism:
    kind: MechanismKind
    phi: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MechanismKind(self.kind))
        if self.kind is MechanismKind.SID_MULTI_SOURCE:
            if self.phi is None or not 0.0 < self.phi < 1.0:
                raise ModelError(f"multi-source SID needs phi in (0,1), got {self.phi}")
        elif self.phi is not None:
            raise ModelError(f"phi only applies to {MechanismKind.SID_MULTI_SOURCE.value}")

    @property
    def name(self) -> str:
        if self.kind is MechanismKind.SID_MULTI_SOURCE:
            return f"sid_multi(phi={self.phi:g})"
        return self.kind.value

    @property
    def uses_planner(self) -> bool:
        return self.kind is not MechanismKind.FULL_DISCLOSURE

    @classmethod
    def parse(cls, text: str) -> "Mechanism":
        """Accepts 'myopic', 'hiding', 'sid', 'optimal' or 'sid_multi:<phi>'."""
        if text.startswith("sid_multi"):
            _, _, phi = text.partition(":")
            return cls(MechanismKind.SID_MULTI_SOURCE, float(phi) if phi else None)
        return cls(MechanismKind(text))


MYOPIC = Mechanism(MechanismKind.FULL_DISCLOSURE)
HIDING = Mechanism(MechanismKind.FULL_HIDING)
SID = Mechanism(MechanismKind.SID)
OPTIMAL = Mechanism(MechanismKind.OPTIMAL)


@dataclass(frozen=True)
class DisclosureDecision:
    disclosed: bool
    recommendation: Action
    realized_action: Action


_NONE = DisclosureDecision(False, NO_ARRIVAL, NO_ARRIVAL)


def _planner(planner, model, segment, cfg):
    return planner if planner is not None else Planner(model, segment, cfg)


def _sid_from_uniform(state, model, segment, cfg, u_pick, planner) -> DisclosureDecision:
    intent = hiding_from_uniform(model, segment, u_pick)
    rec = _planner(planner, model, segment, cfg).root(state, True)[1]
    if intent != SAFE and rec == SAFE:
        return DisclosureDecision(True, rec, myopic_decide(state, segment, True))
    return DisclosureDecision(False, rec, rec)


def sid_decide(
    state: PlatformState,
    model: NetworkModel,
    segment: int,
    has_arrival: bool,
    planner_cfg: PlannerConfig,
    rng: np.random.Generator,
    planner: Planner | None = None,
) -> DisclosureDecision:
    """Selective disclosure: reveal L(t) only when the user's no-information
    intent is risky while the planner recommends the safe path."""
    u = rng.random(2)
    if not has_arrival:
        return _NONE
    return _sid_from_uniform(state, model, segment, planner_cfg, float(u[1]), planner)


def multisource_decide(
    state: PlatformState,
    model: NetworkModel,
    segment: int,
    has_arrival: bool,
    phi: float,
    planner_cfg: PlannerConfig,
    rng: np.random.Generator,
    planner: Planner | None = None,
) -> DisclosureDecision:
    """With probability phi the user relies on the platform alone (SID);
    otherwise they learn L(t) elsewhere and act myopically."""
    if not 0.0 < phi < 1.0:
        raise ModelError(f"phi must lie in (0,1), got {phi}")
    u = rng.random(2)
    if not has_arrival:
        return _NONE
    if u[0] < phi:
        return _sid_from_uniform(state, model, segment, planner_cfg, float(u[1]), planner)
    act = myopic_decide(state, segment, True)
    return DisclosureDecision(True, act, act)


def mechanism_step(
    mechanism: Mechanism,
    state: PlatformState,
    model: NetworkModel,
    segment: int,
    has_arrival: bool,
    planner_cfg: PlannerConfig,
    rng: np.random.Generator,
    planner: Planner | None = None,
) -> DisclosureDecision:
    kind = mechanism.kind
    if kind is MechanismKind.SID:
        return sid_decide(state, model, segment, has_arrival, planner_cfg, rng, planner)
    if kind is MechanismKind.SID_MULTI_SOURCE:
        return multisource_decide(
            state, model, segment, has_arrival, mechanism.phi, planner_cfg, rng, planner
        )
    u = rng.random(2)
    if not has_arrival:
        return _NONE
    if kind is MechanismKind.FULL_DISCLOSURE:
        act = myopic_decide(state, segment, True)
        return DisclosureDecision(True, act, act)
    rec = _planner(planner, model, segment, planner_cfg).root(state, True)[1]
    if kind is MechanismKind.FULL_HIDING:
        # users weigh only the stationary prior and ignore a conflicting recommendation
        return DisclosureDecision(False, rec, hiding_from_uniform(model, segment, float(u[1])))
    return DisclosureDecision(False, rec, rec)
