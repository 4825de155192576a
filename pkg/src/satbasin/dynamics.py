"""Closed-loop simulation and certified fate classification.

A state is declared converged only after its trajectory enters a Lyapunov
ellipsoid that sits inside the unsaturated slab, and declared not converged
only once an escape function certifies it can never return near the origin.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, SingularEquationError, StiffnessError
from .model import SystemSpec, eigenvalues

DENSE_SPACING = 0.05
H_MIN = 1e-14
BLOWUP_NORM = 1e12
ESCAPE_FACTOR = 1 + 1e-6

# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def solve_lyapunov(F, R) -> np.ndarray:
    """Solve ``F^T P + P F = -R`` by a direct solve over the ``n**2`` unknowns."""
    F = np.asarray(F, dtype=float)
    R = np.asarray(R, dtype=float)
    n = F.shape[0]
    if F.shape != (n, n) or R.shape != (n, n):
        raise InvalidParameterError("F and R must be square and of equal size")
    lam = eigenvalues(F)
    scale = max(1.0, np.abs(lam).max())
    if np.min(np.abs(lam[:, None] + lam[None, :])) <= 1e-10 * scale:
        raise SingularEquationError("two eigenvalues of F sum to zero")
    I = np.eye(n)
    L = np.kron(I, F.T) + np.kron(F.T, I)
    P = np.linalg.solve(L, -R.reshape(-1, order="F")).reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(F.T @ P + P @ F + R) / max(np.linalg.norm(R), 1e-300)
    if res > 1e-10:
        raise SingularEquationError(f"Lyapunov residual {res:.3g} too large")
    return P


@dataclass
class LyapunovCertificate:
    """Ellipsoid ``x^T P x <= c`` inside the linear slab, hence inside the basin."""

    P: np.ndarray
    c: float
    residual: float

    def value(self, x) -> float:
        return float(x @ self.P @ x)

    def radius_bound(self) -> float:
        """Largest Euclidean norm of a point in the ellipsoid."""
        return float(np.sqrt(self.c / np.linalg.eigvalsh(self.P)[0]))


@dataclass
class EscapeCertificate:
    """``W = x^T Q x`` grows without bound once it exceeds ``W_max``."""

    Q: np.ndarray
    R_div: float
    W_max: float

    def value(self, x) -> float:
        return float(x @ self.Q @ x)


def convergence_certificate(spec: SystemSpec) -> LyapunovCertificate:
    F = spec.A + spec.B @ spec.K
    P = solve_lyapunov(F, np.eye(spec.n))
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise InvalidParameterError("A + B K is not Hurwitz; no inner Lyapunov certificate")
    Pinv_Kt = np.linalg.solve(P, spec.K.T)
    quad = np.einsum("ij,ji->i", spec.K, Pinv_Kt)  # k_i P^-1 k_i^T
    c = float(np.min(spec.M**2 / quad))
    residual = float(np.linalg.norm(F.T @ P + P @ F + np.eye(spec.n)))
    return LyapunovCertificate(P=P, c=c, residual=residual)


def escape_certificate(spec: SystemSpec) -> EscapeCertificate:
    Q = solve_lyapunov(-spec.A, np.eye(spec.n))
    if np.linalg.eigvalsh(Q)[0] <= 0:
        raise InvalidParameterError("A is not anti-stable; no escape certificate")
    R_div = float(2 * np.linalg.norm(Q @ spec.B, 2) * spec.M * np.sqrt(spec.m))
    W_max = float(np.linalg.eigvalsh(Q)[-1] * R_div**2)
    return EscapeCertificate(Q=Q, R_div=R_div, W_max=W_max)


def escape_rate_lower_bound(spec: SystemSpec, cert: EscapeCertificate, x) -> float:
    """``d/dt (x^T Q x)`` at ``x``; positive everywhere outside ``R_div``."""
    f = spec.A @ x + spec.B @ np.clip(spec.K @ x, -spec.M, spec.M)
    return float(2 * x @ cert.Q @ f)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    accepted_steps: int = 0
    rejected_steps: int = 0
    max_error_estimate: float = 0.0
    escaped: bool = False

    @property
    def samples(self):
        return list(zip(self.t, self.x))

    def to_csv(self) -> str:
        buf = io.StringIO()
        n = self.x.shape[1]
        buf.write(",".join(["t"] + [f"x{i + 1}" for i in range(n)]) + "\n")
        for ti, xi in zip(self.t, self.x):
            buf.write(",".join(f"{v:.17g}" for v in (ti, *xi)) + "\n")
        return buf.getvalue()


def _field(spec):
    A, B, K, M = spec.A, spec.B, spec.K, spec.M
    if spec.m == 1:
        b, k = B[:, 0], K[0]

        def f(x):
            s = k @ x
            return A @ x + b * (M if s > M else -M if s < -M else s)

        return f
    return lambda x: A @ x + B @ np.clip(K @ x, -M, M)


@dataclass
class _Step:
    t: float
    x: np.ndarray
    fx: np.ndarray
    err: float


@dataclass
class _Stats:
    accepted: int = 0
    rejected: int = 0
    max_err: float = 0.0


def _initial_step(f, x0, f0, rtol, atol):
    scale = atol + rtol * np.abs(x0)
    d0 = np.sqrt(np.mean((x0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    x1 = x0 + h0 * f0
    d2 = np.sqrt(np.mean(((f(x1) - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dopri_steps(spec: SystemSpec, x0, t_end: float, rel_tol: float = 1e-8, abs_tol: float = 1e-10,
                stats: _Stats | None = None):
    """Yield accepted Dormand-Prince 5(4) steps of the closed loop up to ``t_end``.

    The step controller works on the error per unit step, so the global error
    scales like ``tol**(5/4)`` rather than ``tol``.
    """
    f = _field(spec)
    x = np.array(x0, dtype=float)
    fx = f(x)
    t = 0.0
    stats = stats if stats is not None else _Stats()
    if not np.any(x) and not np.any(fx):
        yield _Step(t_end, x.copy(), fx, 0.0)
        return
    h = min(_initial_step(f, x, fx, rel_tol, abs_tol), t_end)
    n = x.size
    K, M = spec.K, spec.M
    cut = False
    h_resume = h
    (a21,), (a31, a32), (a41, a42, a43), (a51, a52, a53, a54), (a61, a62, a63, a64, a65) = _A[1:6]
    b1, _, b3, b4, b5, b6, _ = _B5
    e1, _, e3, e4, e5, e6, e7 = _E
    while t < t_end:
        if h < H_MIN:
            raise StiffnessError(f"step size underflow at t={t:.6g}")
        last = t + h >= t_end
        if last:
            h = t_end - t
            cut = False
        k1 = fx
        k2 = f(x + h * (a21 * k1))
        k3 = f(x + h * (a31 * k1 + a32 * k2))
        k4 = f(x + h * (a41 * k1 + a42 * k2 + a43 * k3))
        k5 = f(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4))
        k6 = f(x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5))
        x_new = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6)
        k7 = f(x_new)  # FSAL
        err_vec = e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7
        scale = abs_tol + rel_tol * np.maximum(np.abs(x), np.abs(x_new))
        # error per unit step: the h factor of the estimate cancels
        q = err_vec / scale
        err = np.sqrt(q @ q / n)
        if err <= 1.0 and not cut:
            theta = _plane_crossing(K, M, x, x_new, h * k1, h * k7)
            if theta is not None and theta * h > 1e-12:
                # land on the switching plane so no step straddles a kink
                h_resume, h, cut = h, theta * h, True
                continue
        if err <= 1.0:
            t = t_end if last and not cut else t + h
            x, fx = x_new, k7
            stats.accepted += 1
            stats.max_err = max(stats.max_err, err)
            yield _Step(t, x, fx, err)
            if cut:
                h, cut = h_resume, False
                continue
            fac = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * err ** -0.25))
        else:
            stats.rejected += 1
            fac = max(0.2, 0.9 * err ** -0.25)
        h *= fac


def _plane_crossing(K, M, x0, x1, d0, d1):
    """Fraction of the step at which ``k_i x`` first crosses ``+-M``, if it does.

    Uses the cubic Hermite interpolant of ``k_i x(t)`` built from the end
    values ``x0, x1`` and the step-scaled derivatives ``d0, d1``.
    """
    plane_tol = 1e-12 * max(M, 1.0)
    s0, s1 = K @ x0, K @ x1
    g0s, g1s = K @ d0, K @ d1
    best = None
    for i in range(len(s0)):
        for level in (M, -M):
            g0, g1 = s0[i] - level, s1[i] - level
            if g0 * g1 >= 0 or abs(g0) <= plane_tol:
                continue
            d_0, d_1 = g0s[i], g1s[i]
            # Hermite cubic in theta, highest power first
            coeffs = [2 * g0 + d_0 - 2 * g1 + d_1, -3 * g0 - 2 * d_0 + 3 * g1 - d_1, d_0, g0]
            roots = np.roots(coeffs)
            real = roots[(np.abs(roots.imag) < 1e-12) & (roots.real > 0) & (roots.real < 1)].real
            theta = real.min() if real.size else g0 / (g0 - g1)
            best = theta if best is None else min(best, theta)
    return best


def _hermite(t0, x0, f0, t1, x1, f1, ts):
    h = t1 - t0
    s = (ts - t0) / h
    s = s[:, None]
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


def integrate_adaptive(spec: SystemSpec, x0, t_end: float, rel_tol: float = 1e-8,
                       abs_tol: float = 1e-10) -> Trajectory:
    """Integrate ``x' = A x + B sat(K x)`` from ``x0`` on ``[0, t_end]``.

    Steps longer than 0.05 time units are filled with cubic Hermite samples so
    consecutive samples are never further apart than that.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (spec.n,) or not np.all(np.isfinite(x0)):
        raise InvalidParameterError("x0 must be a finite state vector")
    if not t_end > 0:
        raise InvalidParameterError("t_end must be positive")
    f = _field(spec)
    ts, xs = [0.0], [x0.copy()]
    t_prev, x_prev, f_prev = 0.0, x0.copy(), f(x0)
    stats = _Stats()
    escaped = False
    for step in dopri_steps(spec, x0, t_end, rel_tol, abs_tol, stats):
        h = step.t - t_prev
        extra = int(np.ceil(h / DENSE_SPACING)) - 1
        if extra > 0:
            inner = t_prev + h * np.arange(1, extra + 1) / (extra + 1)
            ts.extend(inner)
            xs.extend(_hermite(t_prev, x_prev, f_prev, step.t, step.x, step.fx, inner))
        ts.append(step.t)
        xs.append(step.x)
        t_prev, x_prev, f_prev = step.t, step.x, step.fx
        if np.linalg.norm(step.x) > BLOWUP_NORM:
            escaped = True
            break
    return Trajectory(
        t=np.array(ts),
        x=np.array(xs),
        accepted_steps=stats.accepted,
        rejected_steps=stats.rejected,
        max_error_estimate=stats.max_err,
        escaped=escaped,
    )


class Verdict(enum.Enum):
    CONVERGED = "ConvergedToOrigin"
    NOT_CONVERGED = "NotConverged"
    UNDECIDED = "Undecided"


@dataclass
class FateReport:
    verdict: Verdict
    t_decided: float
    certificate: str | None
    final_state: np.ndarray
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "t_decided": self.t_decided,
            "certificate": self.certificate,
            "final_state": self.final_state.tolist(),
            "diagnostic": self.diagnostic,
        }


@dataclass
class FateClassifier:
    """Certificates computed once, reused across many initial states."""

    spec: SystemSpec
    t_max: float = 100.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    inner: LyapunovCertificate = field(init=False)
    outer: EscapeCertificate = field(init=False)

    def __post_init__(self):
        self.inner = convergence_certificate(self.spec)
        self.outer = escape_certificate(self.spec)

    def _decide(self, x):
        if x @ self.inner.P @ x <= self.inner.c:
            return Verdict.CONVERGED, "lyapunov"
        if x @ self.outer.Q @ x >= ESCAPE_FACTOR * self.outer.W_max and np.linalg.norm(x) > self.outer.R_div:
            return Verdict.NOT_CONVERGED, "escape"
        return None

    def __call__(self, x0) -> FateReport:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (self.spec.n,):
            raise InvalidParameterError(f"state must have shape ({self.spec.n},)")
        hit = self._decide(x0)
        if hit:
            return FateReport(hit[0], 0.0, hit[1], x0.copy())
        x, t = x0, 0.0
        try:
            for step in dopri_steps(self.spec, x0, self.t_max, self.rel_tol, self.abs_tol):
                x, t = step.x, step.t
                hit = self._decide(x)
                if hit:
                    return FateReport(hit[0], t, hit[1], x.copy())
        except StiffnessError as exc:
            return FateReport(Verdict.UNDECIDED, t, None, np.array(x), diagnostic=str(exc))
        return FateReport(Verdict.UNDECIDED, t, None, np.array(x), diagnostic="t_max reached")


def classify_fate(spec: SystemSpec, x0, t_max: float = 100.0, rel_tol: float = 1e-8,
                  abs_tol: float = 1e-10) -> FateReport:
    return FateClassifier(spec, t_max, rel_tol, abs_tol)(x0)
