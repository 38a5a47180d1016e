import numpy as np
import pytest

from gpi.envs import Transitions


def central_diff(f, x, h=1e-6):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def make_batch(states, actions, rewards, behavior_logprob, dones=None, next_states=None):
    """Hand-built time-ordered batch; ``dones`` are horizon truncations."""
    T = len(rewards)
    states = np.asarray(states, dtype=np.float64)
    if next_states is None:
        next_states = np.roll(states, -1, axis=0)
    truncated = np.zeros(T, dtype=bool) if dones is None else np.asarray(dones, dtype=bool)
    return Transitions(states, np.asarray(actions, dtype=np.float64), np.asarray(rewards, dtype=np.float64),
                       next_states, np.zeros(T, dtype=bool), truncated,
                       np.asarray(behavior_logprob, dtype=np.float64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
_CRITERIA = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    _CRITERIA[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
