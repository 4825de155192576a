import numpy as np
import pytest
from scipy.integrate import solve_ivp

from satbasin.model import SystemSpec, counterexample_system

P1 = np.array([-1.080860, -0.487008, -0.804244])
P2 = np.array([0.514148, -0.183494, 0.797384])
P3 = np.array([-0.283356, -0.335251, -0.003430])
X_PLUS = np.array([-0.7, 0.1, -1.0])

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def cx():
    return counterexample_system(1.0)


@pytest.fixture(scope="session")
def planar():
    """A = diag(1, 2), b = (1, 1), k = (6, -12): only the origin is an equilibrium."""
    return SystemSpec(A=np.diag([1.0, 2.0]), B=[[1.0], [1.0]], K=[[6.0, -12.0]], M=1.0)


@pytest.fixture(scope="session")
def cx_classifier(cx):
    from satbasin.dynamics import FateClassifier

    return FateClassifier(cx)


@pytest.fixture
def acceptance_report():
    def record(label, passed, detail=""):
        _ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {label}" + (f"  ({detail})" if detail else ""))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def reference_solution(spec, x0, t_end):
    """High-accuracy DOP853 solution restarted at every switching-plane crossing."""
    A, B, K, M = spec.A, spec.B, spec.K, spec.M

    def f(t, x):
        return A @ x + B @ np.clip(K @ x, -M, M)

    events = []
    for i in range(spec.m):
        for level in (M, -M):
            ev = lambda t, x, i=i, level=level: K[i] @ x - level  # noqa: E731
            ev.terminal = True
            events.append(ev)

    t, x = 0.0, np.array(x0, dtype=float)
    while t < t_end:
        sol = solve_ivp(f, (t, t_end), x, method="DOP853", rtol=1e-13, atol=1e-15, events=events)
        if sol.status == 1:
            hits = [(ts[0], ys[0]) for ts, ys in zip(sol.t_events, sol.y_events) if len(ts)]
            t_hit, x_hit = min(hits, key=lambda h: h[0])
            if t_hit <= t + 1e-15:
                # sitting on a plane: take a short unsegmented hop off it
                sol = solve_ivp(f, (t, min(t + 1e-6, t_end)), x, method="DOP853", rtol=1e-13, atol=1e-15)
                t_hit, x_hit = sol.t[-1], sol.y[:, -1]
            t, x = t_hit, np.asarray(x_hit)
        else:
            t, x = sol.t[-1], sol.y[:, -1]
    return x
