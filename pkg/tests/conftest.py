import time

import pytest

from crowdroute.model import NetworkModel, PathParams
from crowdroute.planner import PlannerConfig

_SESSION_START = time.perf_counter()
# acceptance verdicts, printed together at the end of the run
CRITERIA: list[str] = []


def fig2_model(rho: float = 0.9, belief: float = 0.5, risky_latency: float = 10.0) -> NetworkModel:
    path = PathParams.risky(1.2, 0.2, 0.5, 0.5, 0.8, 0.3)
    return NetworkModel.parallel(
        0.6, [path], lam=1.0, rho=rho, delta_ell=2.0,
        safe_latency=10.0, risky_latencies=[risky_latency], beliefs=[belief],
    )


def random_instance(rng, max_risky=2, q_range=(0.0, 1.0), rho=None, lam=None):
    """One-segment network with random parameters; rho / lam are drawn unless given."""
    n = int(rng.integers(1, max_risky + 1))
    alpha = float(rng.uniform(0.3, 0.9))
    paths = []
    for _ in range(n):
        ph, pl = sorted(rng.uniform(0, 1, 2))[::-1]
        paths.append(
            PathParams.risky(
                float(rng.uniform(1.0, 2.0)), float(rng.uniform(0, 0.9 * alpha)),
                float(rng.uniform(*q_range)), float(rng.uniform(*q_range)), float(ph), float(pl),
            )
        )
    lam_draw, rho_draw = float(rng.uniform(0.2, 1.0)), float(rng.uniform(0.1, 0.95))
    return NetworkModel.parallel(
        alpha, paths, lam=lam_draw if lam is None else lam, rho=rho_draw if rho is None else rho,
        delta_ell=float(rng.uniform(0.5, 3.0)), safe_latency=float(rng.uniform(1, 10)),
        risky_latencies=list(rng.uniform(1, 10, n)), beliefs=list(rng.uniform(0, 1, n)),
    )


@pytest.fixture
def fig2():
    return fig2_model()


@pytest.fixture
def fast_cfg():
    return PlannerConfig(depth=3, tail_mode="zero", quantize_belief=1e-3, quantize_latency_rel=1e-3)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
    elapsed = time.perf_counter() - _SESSION_START
    terminalreporter.write_line(f"total session time {elapsed:.0f} s (limit 1200 s)")
