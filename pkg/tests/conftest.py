"""Shared fixtures.

Every simulator step taken anywhere in the suite is checked against the
friction cone; a violation fails the test that produced it.
"""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from huskysim import sim

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CONE_VIOLATIONS: list = []
_STEPS = [0]
_raw_step = sim.step


def _checked_step(model, state, joint_commands, throttles, terrain, dt, events=None):
    new = _raw_step(model, state, joint_commands, throttles, terrain, dt, events)
    mu = model.contact.mu if terrain.friction is None else terrain.friction
    forces = np.vstack([new.foot_forces, new.perch_force[None, :]])
    ok = sim._within_cone(forces, mu)
    if not ok.all():
        _CONE_VIOLATIONS.append((new.t, forces[~ok].tolist()))
    _STEPS[0] += 1
    return new


sim.step = _checked_step


@pytest.fixture(autouse=True)
def friction_cone_guard():
    before = len(_CONE_VIOLATIONS)
    yield
    assert _CONE_VIOLATIONS[before:] == [], "contact force left the friction cone"


def cone_stats() -> tuple[int, int]:
    """(steps checked, violations) so far in this session."""
    return _STEPS[0], len(_CONE_VIOLATIONS)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
