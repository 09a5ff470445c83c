"""Flat key=value experiment configuration with per-target presets.

Resolution order: field defaults, then the preset of `target`, then the
config file, then command-line flags.  Unknown keys are errors.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


TARGETS = ("none", "fig2", "fig3a", "fig3b", "fig5", "shanghai")


@dataclass
class ExperimentConfig:
    target: str = "none"
    # model
    alpha: float = 0.6
    alpha_high: float = 1.2
    alpha_low: float = 0.2
    q_hh: float = 0.5
    q_ll: float = 0.5
    sigma: float = 0.0
    p_high: float = 0.8
    p_low: float = 0.3
    lam: float = 1.0
    rho: float = 0.9
    delta_ell: float = 2.0
    safe_latency: float = 10.0
    risky_latency: float = 10.0
    belief: float = 0.5
    n_risky: int = 1
    n_segments: int = 1
    # policies and Monte Carlo
    mechanisms: str = "myopic,hiding,sid"
    baseline: str = "optimal"
    trials: int = 50
    horizon: int = 0
    seed: int = 0
    cost_mode: str = "belief"
    sweep: str = "none"
    sweep_values: str = ""
    # planner
    planner_depth: int = 4
    planner_tail: str = "zero"
    quantize_belief: float = 1e-3
    quantize_latency_rel: float = 1e-3
    value_tolerance: float = 1e-3
    # thresholds
    grid_points: int = 19
    # worst case
    worst_case: str = "zero_exploration"
    worst_mechanism: str = ""  # empty: the mechanism the instance was built against
    epsilon: float = 1e-3
    slack: float = 0.1
    phi: float = 0.5
    # traces
    traces: str = ""
    fit_method: str = "mle"
    discretize: str = "median"
    bw_max_iters: int = 200
    # output
    out: str = ""
    format: str = "csv"

    def validate(self) -> "ExperimentConfig":
        if self.target not in TARGETS:
            raise ConfigError(f"unknown target {self.target!r}; expected one of {', '.join(TARGETS)}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0 (0 = automatic)")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"format must be csv or json, got {self.format!r}")
        if self.sweep not in ("none", "n", "lam", "sigma", "rho"):
            raise ConfigError(f"unknown sweep {self.sweep!r}")
        if self.traces and not Path(self.traces).exists():
            raise ConfigError(f"traces file {self.traces!r} does not exist")
        return self

    def sweep_list(self) -> list[float]:
        if not self.sweep_values.strip():
            return []
        try:
            return [float(v) for v in self.sweep_values.split(",")]
        except ValueError:
            raise ConfigError(f"sweep_values must be comma-separated numbers, got {self.sweep_values!r}") from None

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIG3_BASE = dict(
    alpha=0.99, alpha_high=2.0, alpha_low=0.0, q_hh=0.99, q_ll=0.99, p_high=0.8, p_low=0.2,
    delta_ell=1.0, safe_latency=100.0, risky_latency=105.0, belief=0.5, lam=1.0, rho=0.99,
    trials=50, horizon=300, planner_depth=3,
)

PRESETS: dict[str, dict] = {
    "none": {},
    "fig2": dict(
        alpha=0.6, alpha_high=1.2, alpha_low=0.2, q_hh=0.5, q_ll=0.5, p_high=0.8, p_low=0.3,
        delta_ell=2.0, safe_latency=10.0, risky_latency=10.0, lam=1.0, rho=0.9, planner_depth=8,
    ),
    "fig3a": dict(_FIG3_BASE, n_risky=2, sweep="n", sweep_values="2,3,4,5"),
    "fig3b": dict(_FIG3_BASE, n_risky=2, sweep="lam", sweep_values="0.2,0.4,0.6,0.8,1.0"),
    "fig5": dict(
        _FIG3_BASE, n_risky=2, n_segments=4, q_hh=0.9, q_ll=0.99, sweep="sigma",
        sweep_values="0,0.04,0.08,0.12,0.16,0.2", mechanisms="myopic,sid", trials=20, horizon=300,
        planner_depth=2,
    ),
    "shanghai": dict(
        lam=0.95, rho=0.95, delta_ell=1.0, p_high=0.8, p_low=0.2, trials=100, horizon=101,
        cost_mode="realized", planner_depth=4, mechanisms="hiding,myopic,sid",
    ),
}


def _coerce(name: str, typ, text: str):
    text = text.strip()
    try:
        if typ in (int, "int"):
            return int(text)
        if typ in (float, "float"):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {typ}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, types[key], val)
    return out


def resolve_config(
    target: str | None = None,
    path: str | Path | None = None,
    overrides: dict | None = None,
) -> ExperimentConfig:
    file_values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        file_values = parse_config_text(p.read_text(), str(p))
    tgt = target or file_values.get("target") or "none"
    if tgt not in PRESETS:
        raise ConfigError(f"unknown target {tgt!r}; expected one of {', '.join(TARGETS)}")
    values = dict(PRESETS[tgt])
    values.update(file_values)
    values["target"] = tgt
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig(**values)
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, float) and math.isnan(v):
            raise ConfigError(f"{f.name} must be a number")
    return cfg.validate()
